//! Mañé critical value of the Kähler magnetic system `(g, λ·ω)` on the
//! complex hyperbolic ball of holomorphic curvature `k`.
//!
//! Chart coordinates are `(x_1, y_1, …, x_m, y_m)` with `z_j = x_j + i y_j`.
//! The primitive used throughout is
//!
//! ```text
//! θ_z = (2λ/k) / (1 − |z|²) · Σ_j (x_j dy_j − y_j dx_j),
//! ```
//!
//! normalized so that `dθ = σ = λ⟨·, J·⟩` exactly, and its dual norm is
//! `|λ|·|z| / √(−k)`.

use num_dual::Dual2SVec64;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{contract, MagflowError, Result};
use crate::expr::Expr;
use crate::linalg::{Matrix, Vector};

/// The ball model's metric `(−4/k)[(1 − |z|²)Id + zzᵀ + (Jz)(Jz)ᵀ] / (1 − |z|²)²`.
pub fn ball_metric(k: f64, z: &[f64]) -> Result<Matrix> {
    let n = z.len();
    let r2: f64 = z.iter().map(|c| c * c).sum();
    if r2 >= 1.0 || n % 2 != 0 {
        return Err(MagflowError::Domain { point: z.to_vec() });
    }
    let q = 1.0 - r2;
    let u = Vector::from_column_slice(z);
    let ju = Vector::from_fn(n, |i, _| if i % 2 == 0 { -z[i + 1] } else { z[i - 1] });
    let m = Matrix::identity(n, n) * q + &u * u.transpose() + &ju * ju.transpose();
    Ok(m * (-4.0 / k) / (q * q))
}

/// Gauge term `df` added to the primitive; it does not change the action of
/// closed loops.
#[derive(Debug, Clone)]
struct Gauge {
    f: Expr,
}

impl Gauge {
    fn differential(&self, z: &[f64]) -> Vec<f64> {
        match z.len() {
            2 => grad::<2>(&self.f, z),
            4 => grad::<4>(&self.f, z),
            n => {
                // central differences for the remaining dimensions
                let h = f64::EPSILON.cbrt();
                let mut y = z.to_vec();
                (0..n)
                    .map(|i| {
                        y[i] = z[i] + h;
                        let a = self.f.eval(&y);
                        y[i] = z[i] - h;
                        let b = self.f.eval(&y);
                        y[i] = z[i];
                        (a - b) / (2.0 * h)
                    })
                    .collect()
            }
        }
    }
}

fn grad<const N: usize>(f: &Expr, z: &[f64]) -> Vec<f64> {
    let xd: Vec<Dual2SVec64<N>> = (0..N).map(|i| Dual2SVec64::<N>::from_re(z[i]).derivative(i)).collect();
    let v = f.eval(&xd);
    let d = v.v1.unwrap_generic(nalgebra::U1, nalgebra::Const::<N>);
    (0..N).map(|i| d[i]).collect()
}

/// The primitive `θ` of `σ` on the ball, optionally shifted by `df`.
#[derive(Debug, Clone)]
pub struct PrimitiveForm {
    pub k: f64,
    pub lambda: f64,
    /// Real chart dimension `2m`.
    pub dim: usize,
    gauge: Option<Gauge>,
}

impl PrimitiveForm {
    pub fn new(k: f64, lambda: f64, complex_dim: usize) -> Result<Self> {
        if !(k < 0.0) {
            return Err(contract("k must be negative"));
        }
        if complex_dim == 0 {
            return Err(contract("complex dimension must be positive"));
        }
        Ok(PrimitiveForm {
            k,
            lambda,
            dim: 2 * complex_dim,
            gauge: None,
        })
    }

    /// Adds `df` for an expression `f` in `x1, …, x2m`.
    pub fn with_gauge(mut self, f: &str) -> Result<Self> {
        let names: Vec<String> = (1..=self.dim).map(|i| format!("x{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        self.gauge = Some(Gauge {
            f: Expr::parse(f, &refs)?,
        });
        Ok(self)
    }

    /// Chart components of `θ_z`.
    pub fn theta_at(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim {
            return Err(contract(format!("expected {} coordinates", self.dim)));
        }
        let r2: f64 = z.iter().map(|c| c * c).sum();
        if !(r2 < 1.0) {
            return Err(MagflowError::Domain { point: z.to_vec() });
        }
        let c = 2.0 * self.lambda / self.k / (1.0 - r2);
        let mut th = vec![0.0; self.dim];
        for j in 0..self.dim / 2 {
            let (x, y) = (z[2 * j], z[2 * j + 1]);
            th[2 * j] = -c * y;
            th[2 * j + 1] = c * x;
        }
        if let Some(g) = &self.gauge {
            for (t, d) in th.iter_mut().zip(g.differential(z)) {
                *t += d;
            }
        }
        Ok(th)
    }

    /// Dual norm `‖θ_z‖ = √(θ g⁻¹ θ)`.
    pub fn dual_norm(&self, z: &[f64]) -> Result<f64> {
        let th = Vector::from_vec(self.theta_at(z)?);
        let ginv = ball_metric(self.k, z)?
            .try_inverse()
            .ok_or(MagflowError::SingularMetric { condition: f64::INFINITY })?;
        Ok(th.dot(&(ginv * &th)).sqrt())
    }
}

/// `‖θ_z‖` for the ball of curvature `−1` in complex dimension `|z|/2`.
pub fn dual_norm_theta(z: &[f64], lambda: f64) -> Result<f64> {
    if z.is_empty() || z.len() % 2 != 0 {
        return Err(contract("z needs an even number of real coordinates"));
    }
    PrimitiveForm::new(-1.0, lambda, z.len() / 2)?.dual_norm(z)
}

/// A closed curve `t ↦ (γ(t), γ̇(t))` on `[0, period]`.
pub trait Loop {
    fn period(&self) -> f64;
    fn point(&self, t: f64) -> (Vec<f64>, Vec<f64>);
}

/// The circle of radius `r` about the origin of the first complex line,
/// traversed at speed `s` in the sense that encloses positive `σ`-flux.
#[derive(Debug, Clone, Copy)]
pub struct HyperbolicCircle {
    pub k: f64,
    pub lambda: f64,
    pub r: f64,
    pub s: f64,
    pub complex_dim: usize,
}

impl HyperbolicCircle {
    /// Euclidean radius in the chart.
    pub fn chart_radius(&self) -> f64 {
        (0.5 * self.r * (-self.k).sqrt()).tanh()
    }

    pub fn length(&self) -> f64 {
        let a = (-self.k).sqrt();
        TAU * (a * self.r).sinh() / a
    }

    pub fn enclosed_area(&self) -> f64 {
        TAU * (((-self.k).sqrt() * self.r).cosh() - 1.0) / (-self.k)
    }

    fn angular_rate(&self) -> f64 {
        let rho = self.chart_radius();
        let conf = (-4.0 / self.k).sqrt() / (1.0 - rho * rho);
        // σ = λ⟨·,J·⟩ is negative on counter-clockwise pairs when λ > 0
        let sense = if self.lambda >= 0.0 { -1.0 } else { 1.0 };
        sense * self.s / (conf * rho)
    }
}

impl Loop for HyperbolicCircle {
    fn period(&self) -> f64 {
        self.length() / self.s
    }

    fn point(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let rho = self.chart_radius();
        let w = self.angular_rate();
        let (sn, cs) = (w * t).sin_cos();
        let mut x = vec![0.0; 2 * self.complex_dim];
        let mut v = vec![0.0; 2 * self.complex_dim];
        x[0] = rho * cs;
        x[1] = rho * sn;
        v[0] = -rho * w * sn;
        v[1] = rho * w * cs;
        (x, v)
    }
}

/// A loop given by samples of a periodic curve, interpolated by
/// trigonometric (Fourier) series.
#[derive(Debug, Clone)]
pub struct SampledLoop {
    period: f64,
    coeffs: Vec<Vec<(f64, f64)>>,
    mean: Vec<f64>,
}

impl SampledLoop {
    /// `samples[i]` is `γ(i·T/N)`, without the repeated end point.
    pub fn new(period: f64, samples: &[Vec<f64>]) -> Result<Self> {
        let n = samples.len();
        if n < 4 || !(period > 0.0) {
            return Err(contract("need at least four samples and a positive period"));
        }
        let dim = samples[0].len();
        let mut coeffs = vec![Vec::new(); dim];
        let mut mean = vec![0.0; dim];
        let modes = (n - 1) / 2;
        for d in 0..dim {
            mean[d] = samples.iter().map(|p| p[d]).sum::<f64>() / n as f64;
            for m in 1..=modes {
                let (mut a, mut b) = (0.0, 0.0);
                for (i, p) in samples.iter().enumerate() {
                    let ph = TAU * (m * i) as f64 / n as f64;
                    a += p[d] * ph.cos();
                    b += p[d] * ph.sin();
                }
                coeffs[d].push((2.0 * a / n as f64, 2.0 * b / n as f64));
            }
        }
        Ok(SampledLoop { period, coeffs, mean })
    }

    /// Checks closure of an explicitly closed sample list (last = first).
    pub fn from_closed(period: f64, samples: &[Vec<f64>]) -> Result<Self> {
        let (first, last) = (&samples[0], &samples[samples.len() - 1]);
        let gap = first.iter().zip(last).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if gap > 1e-8 {
            return Err(contract(format!("loop is not closed (gap {gap:.3e})")));
        }
        Self::new(period, &samples[..samples.len() - 1])
    }
}

impl Loop for SampledLoop {
    fn period(&self) -> f64 {
        self.period
    }

    fn point(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let w = TAU / self.period;
        let mut x = self.mean.clone();
        let mut v = vec![0.0; x.len()];
        for d in 0..x.len() {
            for (m, (a, b)) in self.coeffs[d].iter().enumerate() {
                let f = (m + 1) as f64 * w;
                let (sn, cs) = (f * t).sin_cos();
                x[d] += a * cs + b * sn;
                v[d] += f * (b * cs - a * sn);
            }
        }
        (x, v)
    }
}

/// Gauss–Legendre nodes and weights on `[−1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Nodes per Gauss–Legendre panel.
pub const PANEL_NODES: usize = 8;
/// Default total node count for loop quadrature.
pub const LOOP_NODES: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionValue {
    pub value: f64,
    /// Difference to the same rule on half as many panels.
    pub error_estimate: f64,
}

fn action_panels(theta: &PrimitiveForm, lp: &dyn Loop, s: f64, panels: usize) -> Result<f64> {
    let (xs, ws) = gauss_legendre(PANEL_NODES);
    let t_end = lp.period();
    let h = t_end / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let a = p as f64 * h;
        let mut part = 0.0;
        for (xi, wi) in xs.iter().zip(&ws) {
            let t = a + 0.5 * h * (xi + 1.0);
            let (x, v) = lp.point(t);
            let gm = ball_metric(theta.k, &x)?;
            let vv = Vector::from_column_slice(&v);
            let speed2 = vv.dot(&(gm * &vv));
            let th = theta.theta_at(&x)?;
            let flux: f64 = th.iter().zip(&v).map(|(a, b)| a * b).sum();
            part += wi * (0.5 * (speed2 + s * s) - flux);
        }
        total += 0.5 * h * part;
    }
    Ok(total)
}

/// `A_s(γ) = ∫₀ᵀ ½(‖γ̇‖² + s²) − θ(γ̇) dt` by composite Gauss–Legendre
/// quadrature with `nodes` points in total.
pub fn action(theta: &PrimitiveForm, lp: &dyn Loop, s: f64, nodes: usize) -> Result<ActionValue> {
    if !(s > 0.0) {
        return Err(contract("s must be positive"));
    }
    let (x0, _) = lp.point(0.0);
    let (x1, _) = lp.point(lp.period());
    let gap = x0.iter().zip(&x1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if gap > 1e-8 {
        return Err(contract(format!("loop is not closed (gap {gap:.3e})")));
    }
    let panels = (nodes / PANEL_NODES).max(2);
    let fine = action_panels(theta, lp, s, panels)?;
    let coarse = action_panels(theta, lp, s, panels / 2)?;
    Ok(ActionValue {
        value: fine,
        error_estimate: (fine - coarse).abs(),
    })
}

/// `s·ℓ(γ_r) − |λ|·area(D_r)`, which is `2π(s sinh r − cosh r + 1)` for
/// `k = −1`, `λ = 1`.
pub fn circle_action_closed_form(k: f64, lambda: f64, r: f64, s: f64) -> f64 {
    let c = HyperbolicCircle {
        k,
        lambda,
        r,
        s,
        complex_dim: 1,
    };
    s * c.length() - lambda.abs() * c.enclosed_area()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManeResult {
    pub s0: f64,
    /// Radius of the circle certifying negativity just below `s0`.
    pub lower_witness_r: Option<f64>,
    /// `sup ‖θ_z‖` over the radial grid.
    pub upper_bound_sup_theta: f64,
    pub iterations: usize,
}

/// Radial grid size for the circle family and the dual-norm sup.
const RADIAL_GRID: usize = 400;

/// Bisects for `s₀` between the circle-family lower bound and the
/// dual-norm upper bound.
///
/// Negativity of a circle's action is decided on the action per unit
/// length, `s − |λ|·area/ℓ`, which stays well scaled for large `r`.
pub fn mane_critical_value(k: f64, lambda: f64, r_max: f64, tol_s: f64) -> Result<ManeResult> {
    if !(k < 0.0) || !(r_max >= 10.0) || !(tol_s > 0.0) {
        return Err(contract("need k < 0, r_max ≥ 10 and tol_s > 0"));
    }
    let theta = PrimitiveForm::new(k, lambda, 1)?;
    let radii: Vec<f64> = (1..=RADIAL_GRID).map(|i| r_max * i as f64 / RADIAL_GRID as f64).collect();
    let mut sup = 0.0f64;
    for &r in &radii {
        let rho = (0.5 * r * (-k).sqrt()).tanh();
        if rho < 1.0 {
            sup = sup.max(theta.dual_norm(&[rho, 0.0])?);
        }
    }
    if lambda == 0.0 {
        return Ok(ManeResult {
            s0: 0.0,
            lower_witness_r: None,
            upper_bound_sup_theta: 0.0,
            iterations: 0,
        });
    }
    // action per unit length of γ_r at speed s
    let per_length = |r: f64, s: f64| {
        let c = HyperbolicCircle {
            k,
            lambda,
            r,
            s,
            complex_dim: 1,
        };
        s - lambda.abs() * c.enclosed_area() / c.length()
    };
    let witness = |s: f64| radii.iter().copied().find(|&r| per_length(r, s) < 0.0);
    let (mut lo, mut hi) = (0.0, sup);
    let mut lo_r = None;
    let mut it = 0;
    while hi - lo > 0.25 * tol_s {
        let mid = 0.5 * (lo + hi);
        match witness(mid) {
            Some(r) => {
                lo = mid;
                lo_r = Some(r);
            }
            None => hi = mid,
        }
        it += 1;
        if it > 200 {
            return Err(MagflowError::NonConvergence("Mañé bisection".into()));
        }
    }
    Ok(ManeResult {
        s0: 0.5 * (lo + hi),
        lower_witness_r: lo_r,
        upper_bound_sup_theta: sup,
        iterations: it,
    })
}
