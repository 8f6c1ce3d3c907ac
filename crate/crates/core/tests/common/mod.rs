//! Closed forms and brute-force recomputations used to check the library.
//!
//! Nothing here calls into `magflow`: derivatives are taken with local
//! difference stencils and ODEs are stepped with a fixed-step RK4, so an
//! agreement with the library is evidence rather than an echo.
#![allow(dead_code)]

use std::f64::consts::PI;

/// A named closed-form value with the tolerance it is trusted to.
#[derive(Debug, Clone)]
pub struct OracleCase {
    pub name: &'static str,
    pub inputs: Vec<f64>,
    pub expected: Vec<f64>,
    pub tol: f64,
}

impl OracleCase {
    pub fn check(&self, got: &[f64]) -> Result<(), String> {
        let gap = self
            .expected
            .iter()
            .zip(got)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if got.len() == self.expected.len() && gap <= self.tol {
            Ok(())
        } else {
            Err(format!(
                "{} {:?}: expected {:?}, got {:?} (gap {gap:.3e}, tol {:.1e})",
                self.name, self.inputs, self.expected, got, self.tol
            ))
        }
    }
}

/// Flat plane, constant field `b`, start at the origin moving along `e₁`
/// with speed `s`. The orbit turns left on a circle of radius `s/b`.
pub fn constant_field_orbit(b: f64, s: f64, t: f64) -> ([f64; 2], [f64; 2]) {
    if b == 0.0 {
        return ([s * t, 0.0], [s, 0.0]);
    }
    let (sn, cs) = (b * t).sin_cos();
    ([s / b * sn, s / b * (1.0 - cs)], [s * cs, s * sn])
}

/// `y'' = −K y`, `y(0) = y0`, `y'(0) = yd0`.
pub fn scalar_jacobi(k: f64, y0: f64, yd0: f64, t: f64) -> (f64, f64) {
    if k > 0.0 {
        let w = k.sqrt();
        let (sn, cs) = (w * t).sin_cos();
        (y0 * cs + yd0 * sn / w, -y0 * w * sn + yd0 * cs)
    } else if k < 0.0 {
        let w = (-k).sqrt();
        let (sh, ch) = ((w * t).sinh(), (w * t).cosh());
        (y0 * ch + yd0 * sh / w, y0 * w * sh + yd0 * ch)
    } else {
        (y0 + yd0 * t, yd0)
    }
}

/// First positive zero of the solution with `y(0) = 0`.
pub fn first_conjugate_time(k: f64) -> Option<f64> {
    (k > 0.0).then(|| PI / k.sqrt())
}

/// Stable and unstable constant solutions `(−a, +a)` of `u' = −u² − K`, `a = √−K`.
pub fn riccati_fixed_points(k: f64) -> Option<(f64, f64)> {
    (k < 0.0).then(|| {
        let a = (-k).sqrt();
        (-a, a)
    })
}

/// Solution of `u' = −u² − K` through `u(0) = u0`, from `u = y'/y`.
pub fn scalar_riccati(k: f64, u0: f64, t: f64) -> f64 {
    let (y, yd) = scalar_jacobi(k, 1.0, u0, t);
    yd / y
}

/// Gaussian curvature of `λ(x, y)(dx² + dy²)`, `K = −Δ(log λ)/(2λ)`, with a
/// fourth-order Laplacian stencil.
pub fn conformal_curvature(lambda: impl Fn(f64, f64) -> f64, x: f64, y: f64) -> f64 {
    let h = 1e-3;
    let l = |x: f64, y: f64| lambda(x, y).ln();
    let d2 = |f: &dyn Fn(f64) -> f64| {
        (-f(2.0 * h) + 16.0 * f(h) - 30.0 * f(0.0) + 16.0 * f(-h) - f(-2.0 * h)) / (12.0 * h * h)
    };
    let lap = d2(&|d| l(x + d, y)) + d2(&|d| l(x, y + d));
    -lap / (2.0 * lambda(x, y))
}

fn rot(a: [f64; 2]) -> [f64; 2] {
    [-a[1], a[0]]
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// `A^Ω_v(w)` on a Euclidean plane with `Ω = b·i`, term by term.
pub fn a_omega_2d(b: f64, v: [f64; 2], w: [f64; 2]) -> [f64; 2] {
    let om = |a: [f64; 2]| {
        let r = rot(a);
        [b * r[0], b * r[1]]
    };
    let ov = om(v);
    let oow = om(om(w));
    let c1 = 0.75 * dot(w, ov);
    let c3 = 0.25 * dot(om(w), ov);
    [
        c1 * ov[0] - 0.25 * oow[0] - c3 * v[0],
        c1 * ov[1] - 0.25 * oow[1] - c3 * v[1],
    ]
}

/// Fixed-step classical RK4.
pub fn rk4(f: impl Fn(f64, &[f64]) -> Vec<f64>, y0: &[f64], t_end: f64, steps: usize) -> Vec<f64> {
    let h = t_end / steps as f64;
    let mut y = y0.to_vec();
    let axpy = |y: &[f64], a: f64, k: &[f64]| y.iter().zip(k).map(|(p, q)| p + a * q).collect::<Vec<_>>();
    for i in 0..steps {
        let t = i as f64 * h;
        let k1 = f(t, &y);
        let k2 = f(t + h / 2.0, &axpy(&y, h / 2.0, &k1));
        let k3 = f(t + h / 2.0, &axpy(&y, h / 2.0, &k2));
        let k4 = f(t + h, &axpy(&y, h, &k3));
        for j in 0..y.len() {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    y
}

/// Landau–Hall motion `ẍ = b(x)·iẋ` in the Euclidean plane by RK4.
pub fn planar_orbit(b: impl Fn(f64, f64) -> f64, x0: [f64; 2], v0: [f64; 2], t_end: f64, steps: usize) -> Vec<f64> {
    rk4(
        |_, y| {
            let bb = b(y[0], y[1]);
            vec![y[2], y[3], -bb * y[3], bb * y[2]]
        },
        &[x0[0], x0[1], v0[0], v0[1]],
        t_end,
        steps,
    )
}

/// Unit sphere in `(θ, φ)`: position after time `t` on the unit-speed great
/// circle leaving `(π/2, 0)` at angle `α` from `∂θ` towards `∂φ`.
pub fn sphere_great_circle(alpha: f64, t: f64) -> [f64; 2] {
    // embed: p = (1,0,0), u = (0, sin α, −cos α) since ∂θ = −e_z, ∂φ = e_y at p
    let (st, ct) = t.sin_cos();
    let q = [ct, st * alpha.sin(), -st * alpha.cos()];
    [q[2].clamp(-1.0, 1.0).acos(), q[1].atan2(q[0])]
}

/// `A_s(γ_r) = 2π(s sinh r − cosh r + 1)` for `k = −1`, `λ = 1`.
pub fn circle_action(r: f64, s: f64) -> f64 {
    2.0 * PI * (s * r.sinh() - r.cosh() + 1.0)
}

/// Constant sectional curvature of the Kähler system.
pub fn kahler_sec(k: f64, lambda: f64, s: f64, c: f64) -> f64 {
    (s * s * k + lambda * lambda) / 4.0 * (1.0 + 3.0 * c * c)
}

/// Composite Simpson rule.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// `∫∫ f dx dy` over `[0, 2π)²` by a tensor Simpson rule.
pub fn torus_integral(f: impl Fn(f64, f64) -> f64, n: usize) -> f64 {
    let tau = 2.0 * PI;
    simpson(|x| simpson(|y| f(x, y), 0.0, tau, n), 0.0, tau, n)
}
