//! Magnetic Jacobi fields, their reduction to `v^⊥` in the transported
//! frame, and conjugate points.
//!
//! A Jacobi field along a magnetic geodesic solves
//! `D²J/dt² + R(J, γ̇)γ̇ = (∇_JΩ)(γ̇) + Ω(DJ/dt)`. Writing the normal part in
//! the `D̃`-parallel frame, `J^⊥ = Σ c_a e_a`, turns this into
//! `c̈ + A(t)c = 0` with `A_ab = ⟨M^Ω_s(e_b), e_a⟩`.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::flow::{integrate_with, Attachment, BlockKind, Context, OrbitSolution, PhasePoint};
use crate::geometry::{GeometryModel, PointGeometry};
use crate::linalg::{self, Matrix, Vector};
use crate::magcurv;

/// Full Jacobi system: `J` and `K = DJ/dt` in chart components.
struct FullJacobi {
    n: usize,
}

impl Attachment for FullJacobi {
    fn len(&self) -> usize {
        2 * self.n
    }
    fn needs_curvature(&self) -> bool {
        true
    }
    fn rhs(&self, ctx: &Context<'_>, y: &[f64], dy: &mut [f64]) {
        let n = self.n;
        let pg = ctx.pg;
        let j = Vector::from_column_slice(&y[..n]);
        let k = Vector::from_column_slice(&y[n..]);
        let dj = &k - pg.gamma_contract(ctx.v.as_slice(), j.as_slice());
        let force = -pg.riemann(&j, &ctx.v, &ctx.v) + pg.nabla_omega_dir(&j) * &ctx.v + &pg.omega * &k;
        let dk = force - pg.gamma_contract(ctx.v.as_slice(), k.as_slice());
        dy[..n].copy_from_slice(dj.as_slice());
        dy[n..].copy_from_slice(dk.as_slice());
    }
    fn blocks(&self) -> Vec<(usize, BlockKind)> {
        vec![(self.n, BlockKind::Block), (self.n, BlockKind::Block)]
    }
}

/// A Jacobi field integrated jointly with its orbit and frame.
#[derive(Debug, Clone)]
pub struct JacobiField {
    pub orbit: OrbitSolution,
}

impl JacobiField {
    /// `(J(t), DJ/dt(t))`.
    pub fn at(&self, t: f64) -> (Vector, Vector) {
        let a = self.orbit.attachment(t);
        let n = self.orbit.n;
        (Vector::from_column_slice(&a[..n]), Vector::from_column_slice(&a[n..]))
    }

    /// Components `c_a = ⟨J, e_a⟩` of `J^⊥` in the transported frame.
    pub fn frame_components(&self, model: &GeometryModel, t: f64) -> Result<Vector> {
        let n = self.orbit.n;
        let y = self.orbit.state(t);
        let g = model.metric_at(&y[..n])?;
        let frame = crate::flow::frame_from_state(&y, n);
        let off = 2 * n + n * (n - 1);
        let j = Vector::from_column_slice(&y[off..off + n]);
        Ok(Vector::from_iterator(n - 1, frame.iter().map(|e| linalg::inner(&g, &j, e))))
    }

    /// `⟨DJ/dt, γ̇⟩ / s`, which vanishes for normal fields.
    pub fn normality(&self, model: &GeometryModel, t: f64) -> Result<f64> {
        let n = self.orbit.n;
        let y = self.orbit.state(t);
        let g = model.metric_at(&y[..n])?;
        let v = Vector::from_column_slice(&y[n..2 * n]);
        let (_, k) = self.at(t);
        Ok(linalg::inner(&g, &k, &v) / self.orbit.s)
    }
}

/// Integrates the full Jacobi equation with `J(0) = j0`, `DJ/dt(0) = jdot0`.
pub fn integrate_jacobi_full(
    model: &GeometryModel,
    p0: &PhasePoint,
    j0: &[f64],
    jdot0: &[f64],
    t_end: f64,
    tol: f64,
) -> Result<JacobiField> {
    let n = model.dim();
    if j0.len() != n || jdot0.len() != n {
        return Err(contract("Jacobi data must match the model dimension"));
    }
    let mut init = j0.to_vec();
    init.extend_from_slice(jdot0);
    let orbit = integrate_with(model, p0, None, &FullJacobi { n }, &init, t_end, tol)?;
    Ok(JacobiField { orbit })
}

/// Random initial data `(J(0), DJ/dt(0))` of a normal Jacobi field: `J(0)`
/// is a uniform unit vector and `DJ/dt(0)` a uniform unit vector orthogonal
/// to `γ̇(0)`.
pub fn random_normal_data<R: rand::Rng>(model: &GeometryModel, p0: &PhasePoint, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
    let pg = model.at_first_order(&p0.x)?;
    let u = Vector::from_column_slice(&p0.v) / p0.s;
    let j0 = magcurv::random_unit(&pg, rng);
    let k0 = magcurv::random_unit_perp(&pg, &u, rng);
    Ok((j0.iter().copied().collect(), k0.iter().copied().collect()))
}

/// Residual of `D̃²J^⊥ + M^Ω_s(J^⊥) = 0` along a normal Jacobi field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReductionResidual {
    /// `max_t ‖c̈ + A c‖` with `c̈` evaluated from the state.
    pub max_residual: f64,
    /// The same with `c̈` from a seven-point stencil on the continuous
    /// output; limited by interpolation noise of order `tol·‖J‖/h²`.
    pub stencil_residual: f64,
    /// `max_t ‖J^⊥‖` over the same window.
    pub max_perp_norm: f64,
    /// `max_residual / max(1, max_perp_norm)`.
    pub relative: f64,
    pub t_end: f64,
}

/// Step of the finite-difference stencil for `D̃²J^⊥`.
pub const STENCIL_STEP: f64 = 0.1;

/// Spacing of the points at which the reduced equation is evaluated.
const RESIDUAL_SPACING: f64 = 0.05;

/// `c̈_a` at one state. With `De_a = Ω̃_u(e_a)` for the transported frame,
/// `c̈_a = ⟨D²J, e_a⟩ + 2⟨DJ, De_a⟩ + ⟨J, D(De_a)⟩`, where `D²J` comes from
/// the Jacobi equation and `D(De_a)` from differentiating `Ω̃` along the
/// orbit (`Du = Ωu`, `∇_tΩ = ∇_γ̇Ω`).
fn reduced_acceleration(pg: &PointGeometry, v: &Vector, s: f64, frame: &[Vector], j: &Vector, k: &Vector) -> Vector {
    let u = v / s;
    let om = &pg.omega;
    let dom = pg.nabla_omega_dir(v);
    let du = om * &u;
    let ddj = -pg.riemann(j, v, v) + pg.nabla_omega_dir(j) * v + om * k;
    let c = frame.iter().map(|e| {
        let de = crate::flow::anisotropic_lorentz_unchecked(pg, &u, e);
        let oe = om * e;
        let ou = om * &u;
        let dde = (&u * (pg.inner(&(&dom * e), &u) + pg.inner(&(om * &de), &u) + pg.inner(&oe, &du))
            + &du * pg.inner(&oe, &u)
            + &ou * (pg.inner(&de, &u) + pg.inner(e, &du))
            + (&dom * &u + om * &du) * pg.inner(e, &u)
            + &dom * e
            + om * &de)
            * 0.5;
        pg.inner(&ddj, e) + 2.0 * pg.inner(k, &de) + pg.inner(j, &dde)
    });
    Vector::from_iterator(frame.len(), c)
}

/// Evaluates the reduced Jacobi equation on a normal field, comparing the
/// second derivative of its frame components with the magnetic curvature
/// operator.
pub fn proposition31_residual(
    model: &GeometryModel,
    p0: &PhasePoint,
    j0: &[f64],
    jdot0: &[f64],
    t_end: f64,
    tol: f64,
) -> Result<ReductionResidual> {
    let pg = model.at_first_order(&p0.x)?;
    let v = Vector::from_column_slice(&p0.v);
    let k0 = Vector::from_column_slice(jdot0);
    let normal = pg.inner(&k0, &v) / p0.s;
    if normal.abs() > 1e-8 * (1.0 + pg.norm(&k0)) {
        return Err(contract(format!(
            "initial data are not normal (⟨DJ/dt, γ̇⟩/s = {normal:.3e})"
        )));
    }
    let field = integrate_jacobi_full(model, p0, j0, jdot0, t_end, tol)?;
    let t_stop = field.orbit.t_end();
    let n = field.orbit.n;
    let curvature_at = |t: f64| -> Result<(Vector, Vector)> {
        let y = field.orbit.state(t);
        let pgt = model.at(&y[..n])?;
        let v = Vector::from_column_slice(&y[n..2 * n]);
        let frame = crate::flow::frame_from_state(&y, n);
        let a = magcurv::curvature_matrix(&pgt, &(&v / p0.s), p0.s, &frame);
        let (j, k) = field.at(t);
        let c = Vector::from_iterator(n - 1, frame.iter().map(|e| pgt.inner(&j, e)));
        let cdd = reduced_acceleration(&pgt, &v, p0.s, &frame, &j, &k);
        Ok((a * &c, cdd))
    };

    let mut max_residual: f64 = 0.0;
    let mut max_perp: f64 = 0.0;
    let points = (t_stop / RESIDUAL_SPACING).floor() as usize;
    for i in 0..=points {
        let t = (i as f64 * RESIDUAL_SPACING).min(t_stop);
        let (ac, cdd) = curvature_at(t)?;
        max_residual = max_residual.max((cdd + ac).norm());
        max_perp = max_perp.max(field.frame_components(model, t)?.norm());
    }

    let h = STENCIL_STEP;
    let w = [2.0, -27.0, 270.0, -490.0, 270.0, -27.0, 2.0];
    let total = ((t_stop - 6.0 * h) / h).floor().max(0.0) as usize + 7;
    let comps = (0..total)
        .map(|i| field.frame_components(model, i as f64 * h))
        .collect::<Result<Vec<_>>>()?;
    let mut stencil_residual: f64 = 0.0;
    for i in 3..total - 3 {
        let mut dd = Vector::zeros(n - 1);
        for (o, wt) in w.iter().enumerate() {
            dd += &comps[i + o - 3] * *wt;
        }
        dd /= 180.0 * h * h;
        let (ac, _) = curvature_at(i as f64 * h)?;
        stencil_residual = stencil_residual.max((dd + ac).norm());
    }
    Ok(ReductionResidual {
        max_residual,
        stencil_residual,
        max_perp_norm: max_perp,
        relative: max_residual / max_perp.max(1.0),
        t_end: t_stop,
    })
}

/// Matrix Jacobi system `Ÿ = −A(t)Y` for several `(Y, Ẏ)` pairs.
pub(crate) struct MatrixJacobiSystem {
    pub m: usize,
    pub pairs: usize,
}

impl Attachment for MatrixJacobiSystem {
    fn len(&self) -> usize {
        2 * self.m * self.m * self.pairs
    }
    fn needs_curvature(&self) -> bool {
        true
    }
    fn rhs(&self, ctx: &Context<'_>, y: &[f64], dy: &mut [f64]) {
        let m = self.m;
        let mm = m * m;
        let a = magcurv::curvature_matrix(ctx.pg, &ctx.u, ctx.s, &ctx.frame);
        for p in 0..self.pairs {
            let base = 2 * mm * p;
            let yy = Matrix::from_row_slice(m, m, &y[base..base + mm]);
            dy[base..base + mm].copy_from_slice(&y[base + mm..base + 2 * mm]);
            let acc = -(&a * yy);
            for r in 0..m {
                for c in 0..m {
                    dy[base + mm + r * m + c] = acc[(r, c)];
                }
            }
        }
    }
    fn blocks(&self) -> Vec<(usize, BlockKind)> {
        let mm = self.m * self.m;
        (0..2 * self.pairs).map(|_| (mm, BlockKind::Block)).collect()
    }
}

pub(crate) fn pack_rows(ms: &[&Matrix]) -> Vec<f64> {
    let mut out = Vec::new();
    for m in ms {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                out.push(m[(r, c)]);
            }
        }
    }
    out
}

/// `(Y, Ẏ)` along an orbit in the transported frame.
#[derive(Debug, Clone)]
pub struct MatrixJacobi {
    pub orbit: OrbitSolution,
    pub m: usize,
    pub y0: Matrix,
    pub ydot0: Matrix,
}

impl MatrixJacobi {
    pub fn y(&self, t: f64) -> Matrix {
        let a = self.orbit.attachment(t);
        Matrix::from_row_slice(self.m, self.m, &a[..self.m * self.m])
    }

    pub fn ydot(&self, t: f64) -> Matrix {
        let a = self.orbit.attachment(t);
        let mm = self.m * self.m;
        Matrix::from_row_slice(self.m, self.m, &a[mm..2 * mm])
    }

    /// `ẎᵀY − YᵀẎ`, constant along solutions.
    pub fn wronskian(&self, t: f64) -> Matrix {
        let (y, yd) = (self.y(t), self.ydot(t));
        yd.transpose() * &y - y.transpose() * yd
    }

    /// Largest `‖Ÿ + A(t)Y‖ / max(1, ‖Y‖)` at step midpoints.
    pub fn residual(&self, model: &GeometryModel) -> Result<f64> {
        let n = self.orbit.n;
        let mm = self.m * self.m;
        let off = 2 * n + n * (n - 1);
        let mut worst: f64 = 0.0;
        for w in self.orbit.times().windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            let y = self.orbit.state(t);
            let dy = self.orbit.sol.eval_derivative(t);
            let pg = model.at(&y[..n])?;
            let u = Vector::from_column_slice(&y[n..2 * n]) / self.orbit.s;
            let a = magcurv::curvature_matrix(&pg, &u, self.orbit.s, &crate::flow::frame_from_state(&y, n));
            let ym = Matrix::from_row_slice(self.m, self.m, &y[off..off + mm]);
            let ydd = Matrix::from_row_slice(self.m, self.m, &dy[off + mm..off + 2 * mm]);
            worst = worst.max((ydd + a * &ym).norm() / ym.norm().max(1.0));
        }
        Ok(worst)
    }
}

/// Solves `Ÿ + A(t)Y = 0` with the given initial data.
pub fn integrate_matrix_jacobi(
    model: &GeometryModel,
    p0: &PhasePoint,
    y0: &Matrix,
    ydot0: &Matrix,
    t_end: f64,
    tol: f64,
) -> Result<MatrixJacobi> {
    let m = model.dim() - 1;
    if y0.shape() != (m, m) || ydot0.shape() != (m, m) {
        return Err(contract(format!("Y0 and Ydot0 must be {m}×{m}")));
    }
    let init = pack_rows(&[y0, ydot0]);
    let orbit = integrate_with(model, p0, None, &MatrixJacobiSystem { m, pairs: 1 }, &init, t_end, tol)?;
    Ok(MatrixJacobi {
        orbit,
        m,
        y0: y0.clone(),
        ydot0: ydot0.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugatePoint {
    pub t: f64,
    pub multiplicity: usize,
    /// `det Y` touches zero without changing sign.
    pub grazing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugateReport {
    pub points: Vec<ConjugatePoint>,
    /// End of the window actually searched (shorter if the orbit left the chart).
    pub searched_until: f64,
    pub truncated: bool,
}

impl ConjugateReport {
    pub fn first(&self) -> Option<f64> {
        self.points.first().map(|p| p.t)
    }
}

/// Relative threshold for the numerical kernel of `Y(τ)`.
pub const KERNEL_TOL: f64 = 1e-6;

fn smallest_singular_ratio(y: &Matrix) -> (f64, Vec<f64>) {
    let sv: Vec<f64> = y.clone().singular_values().iter().copied().collect();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    (if max > 0.0 { min / max } else { 0.0 }, sv)
}

fn multiplicity(y: &Matrix) -> usize {
    let sv: Vec<f64> = y.clone().singular_values().iter().copied().collect();
    let scale = sv.iter().cloned().fold(0.0, f64::max).max(1e-300);
    sv.iter().filter(|&&s| s < KERNEL_TOL * scale).count().max(1)
}

/// Conjugate times of `γ(0)` along the orbit of `p0` in `(0, t_max]`: zeros
/// of `det Y(t)` for `Y(0) = 0`, `Ẏ(0) = Id`.
pub fn detect_conjugate_points(model: &GeometryModel, p0: &PhasePoint, t_max: f64, tol: f64) -> Result<ConjugateReport> {
    if !(t_max > 0.0) {
        return Err(contract("t_max must be positive"));
    }
    let m = model.dim() - 1;
    let mj = integrate_matrix_jacobi(model, p0, &Matrix::zeros(m, m), &Matrix::identity(m, m), t_max, tol)?;
    Ok(conjugate_points_of(&mj, t_max))
}

/// Conjugate points of an already integrated `Y(0) = 0, Ẏ(0) = Id` solution.
pub fn conjugate_points_of(mj: &MatrixJacobi, t_max: f64) -> ConjugateReport {
    let s = mj.orbit.s;
    let t_end = mj.orbit.t_end().min(t_max);
    let dt = 0.01 / s;
    let steps = (t_end / dt).ceil().max(1.0) as usize;
    let dt = t_end / steps as f64;
    let det = |t: f64| mj.y(t).determinant();
    // skip the trivial zero at t = 0: det Y ~ t^m there
    let start = dt.min(0.5 * t_end);
    let mut points: Vec<ConjugatePoint> = Vec::new();
    let mut prev_t = start;
    let mut prev = det(prev_t);
    let mut ratios: Vec<(f64, f64)> = vec![(prev_t, smallest_singular_ratio(&mj.y(prev_t)).0)];
    for i in 2..=steps {
        let t = i as f64 * dt;
        let d = det(t);
        if prev == 0.0 || d == 0.0 || prev.signum() != d.signum() {
            let (mut a, mut b, mut fa) = (prev_t, t, prev);
            if d == 0.0 {
                a = t;
                b = t;
            } else if prev == 0.0 {
                b = prev_t;
            }
            while b - a > 1e-9 {
                let c = 0.5 * (a + b);
                let fc = det(c);
                if fc == 0.0 {
                    a = c;
                    b = c;
                    break;
                }
                if fc.signum() == fa.signum() {
                    a = c;
                    fa = fc;
                } else {
                    b = c;
                }
            }
            let tau = 0.5 * (a + b);
            if points.last().is_none_or(|p| (tau - p.t).abs() > 1e-6) {
                points.push(ConjugatePoint {
                    t: tau,
                    multiplicity: multiplicity(&mj.y(tau)),
                    grazing: false,
                });
            }
        }
        ratios.push((t, smallest_singular_ratio(&mj.y(t)).0));
        prev_t = t;
        prev = d;
    }
    // grazing zeros: local minima of σ_min/σ_max without a sign change nearby
    for w in ratios.windows(3) {
        let (t0, r0) = w[0];
        let (t1, r1) = w[1];
        let (t2, r2) = w[2];
        if !(r1 <= r0 && r1 <= r2 && r1 < 1e-2) {
            continue;
        }
        if points.iter().any(|p| (p.t - t1).abs() <= 2.0 * dt) {
            continue;
        }
        let _ = (t0, t2);
        let (mut a, mut b) = (t0, t2);
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let f = |t: f64| smallest_singular_ratio(&mj.y(t)).0;
        let mut c = b - phi * (b - a);
        let mut d = a + phi * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        while b - a > 1e-10 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - phi * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + phi * (b - a);
                fd = f(d);
            }
        }
        let tau = 0.5 * (a + b);
        if f(tau) < KERNEL_TOL {
            points.push(ConjugatePoint {
                t: tau,
                multiplicity: multiplicity(&mj.y(tau)),
                grazing: true,
            });
        }
    }
    points.sort_by(|a, b| a.t.total_cmp(&b.t));
    ConjugateReport {
        points,
        searched_until: t_end,
        truncated: t_end < t_max * (1.0 - 1e-12),
    }
}

/// `‖J^⊥(t)‖` on a regular grid for the field with `J(0) = 0`, `Ẏ(0)w = w`.
pub fn perp_norm_profile(mj: &MatrixJacobi, column: &Vector, count: usize) -> Vec<(f64, f64)> {
    mj.orbit
        .grid(count)
        .into_iter()
        .map(|t| (t, (mj.y(t) * column).norm()))
        .collect()
}
