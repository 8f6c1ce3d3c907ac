//! Riccati dynamics `U̇ + U² + A(t) = 0`, Green bundles and Anosov bounds.
//!
//! `U = ẎY⁻¹` for a Lagrangian family of matrix Jacobi solutions. The Green
//! operators are limits of `S_v(t) = −Y₂(t)⁻¹Y₁(t)` where `Y₁, Y₂` are the
//! fundamental solutions with `(Y₁, Ẏ₁)(0) = (Id, 0)` and
//! `(Y₂, Ẏ₂)(0) = (0, Id)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, MagflowError, Result};
use crate::flow::{integrate_with, Attachment, Bare, BlockKind, Context, OrbitSolution, PhasePoint, DEFAULT_TOL};
use crate::geometry::GeometryModel;
use crate::jacobi::{pack_rows, MatrixJacobiSystem, KERNEL_TOL};
use crate::linalg::{self, Matrix, Vector};
use crate::magcurv;

/// `‖U‖` above which the solution is declared to have blown up.
pub const BLOW_UP: f64 = 1e8;

fn unpack(m: usize, y: &[f64]) -> Matrix {
    Matrix::from_row_slice(m, m, &y[..m * m])
}

fn write(m: &Matrix, out: &mut [f64]) {
    let k = m.nrows();
    for r in 0..k {
        for c in 0..k {
            out[r * k + c] = m[(r, c)];
        }
    }
}

/// `U` alone, or `U` together with `Y` solving `Ẏ = UY`.
struct Riccati {
    m: usize,
    with_y: bool,
}

impl Attachment for Riccati {
    fn len(&self) -> usize {
        self.m * self.m * if self.with_y { 2 } else { 1 }
    }
    fn needs_curvature(&self) -> bool {
        true
    }
    fn rhs(&self, ctx: &Context<'_>, y: &[f64], dy: &mut [f64]) {
        let m = self.m;
        let mm = m * m;
        let a = magcurv::curvature_matrix(ctx.pg, &ctx.u, ctx.s, &ctx.frame);
        let u = unpack(m, y);
        write(&(-(&u * &u) - a), &mut dy[..mm]);
        if self.with_y {
            let yy = unpack(m, &y[mm..]);
            write(&(&u * yy), &mut dy[mm..]);
        }
    }
    fn blocks(&self) -> Vec<(usize, BlockKind)> {
        let mm = self.m * self.m;
        let mut b = vec![(mm, BlockKind::Block)];
        if self.with_y {
            b.push((mm, BlockKind::Block));
        }
        b
    }
    fn stop(&self, y: &[f64]) -> bool {
        y[..self.m * self.m].iter().any(|c| !(c.abs() <= BLOW_UP))
    }
}

/// A solution of the Riccati equation along an orbit.
#[derive(Debug, Clone)]
pub struct RiccatiState {
    pub orbit: OrbitSolution,
    pub m: usize,
    /// Time at which `‖U‖` exceeded [`BLOW_UP`], if it did.
    pub blow_up: Option<f64>,
}

impl RiccatiState {
    pub fn u(&self, t: f64) -> Matrix {
        unpack(self.m, &self.orbit.attachment(t))
    }

    /// Window on which `U` stayed finite.
    pub fn window(&self) -> (f64, f64) {
        let (a, b) = (self.orbit.t_start(), self.orbit.t_end());
        (a.min(b), a.max(b))
    }

    /// Largest `‖U − Uᵀ‖` at the stored nodes.
    pub fn symmetry_drift(&self) -> f64 {
        self.orbit
            .attachment_nodes()
            .map(|(_, a)| {
                let u = unpack(self.m, a);
                (&u - u.transpose()).norm()
            })
            .fold(0.0, f64::max)
    }

    /// Largest `‖U̇ + U² + A‖ / max(1, ‖U‖²)` at step midpoints.
    pub fn residual(&self, model: &GeometryModel) -> Result<f64> {
        let n = self.orbit.n;
        let off = 2 * n + n * (n - 1);
        let mut worst: f64 = 0.0;
        for w in self.orbit.times().windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            let y = self.orbit.state(t);
            let dy = self.orbit.sol.eval_derivative(t);
            let a = curvature_matrix_at(model, &y, n, self.orbit.s)?;
            let u = unpack(self.m, &y[off..]);
            let du = unpack(self.m, &dy[off..]);
            let r = (du + &u * &u + a).norm() / u.norm_squared().max(1.0);
            worst = worst.max(r);
        }
        Ok(worst)
    }

    /// Largest `|tr U̇ + tr U² + Ric^Ω_s(γ̇/s)|` at step midpoints.
    pub fn trace_identity_residual(&self, model: &GeometryModel) -> Result<f64> {
        let n = self.orbit.n;
        let off = 2 * n + n * (n - 1);
        let mut worst: f64 = 0.0;
        for w in self.orbit.times().windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            let y = self.orbit.state(t);
            let dy = self.orbit.sol.eval_derivative(t);
            let pg = model.at(&y[..n])?;
            let u_dir = Vector::from_column_slice(&y[n..2 * n]) / self.orbit.s;
            let ric = magcurv::trace_in_basis(&pg, &u_dir, self.orbit.s, &pg.perp_basis(&u_dir));
            let u = unpack(self.m, &y[off..]);
            let du = unpack(self.m, &dy[off..]);
            worst = worst.max((du.trace() + (&u * &u).trace() + ric).abs());
        }
        Ok(worst)
    }
}

fn curvature_matrix_at(model: &GeometryModel, y: &[f64], n: usize, s: f64) -> Result<Matrix> {
    let pg = model.at(&y[..n])?;
    let u = Vector::from_column_slice(&y[n..2 * n]) / s;
    Ok(magcurv::curvature_matrix(&pg, &u, s, &crate::flow::frame_from_state(y, n)))
}

fn check_symmetric(u: &Matrix, m: usize) -> Result<()> {
    if u.shape() != (m, m) {
        return Err(contract(format!("U0 must be {m}×{m}")));
    }
    let defect = (u - u.transpose()).norm();
    if defect > 1e-10 * u.norm().max(1.0) {
        return Err(contract(format!("U0 is not symmetric (defect {defect:.3e})")));
    }
    Ok(())
}

/// Evolves `U̇ = −U² − A(t)` from `U(0) = u0` to `t_end` (either sign).
pub fn riccati_evolve(
    model: &GeometryModel,
    p0: &PhasePoint,
    frame0: Option<&[Vector]>,
    u0: &Matrix,
    t_end: f64,
    tol: f64,
) -> Result<RiccatiState> {
    let m = model.dim() - 1;
    check_symmetric(u0, m)?;
    let att = Riccati { m, with_y: false };
    let orbit = integrate_with(model, p0, frame0, &att, &pack_rows(&[u0]), t_end, tol)?;
    let blow_up = match orbit.termination() {
        crate::ode::Termination::Stopped { t } => Some(t),
        _ => None,
    };
    Ok(RiccatiState { orbit, m, blow_up })
}

/// Options for [`green_bundle`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreenOptions {
    /// Largest `|t|` of the doubling schedule.
    pub t_max: f64,
    pub tol_conv: f64,
    /// First time of the schedule `t_k = t_first·2^k`.
    pub t_first: f64,
    pub tol: f64,
}

impl Default for GreenOptions {
    fn default() -> Self {
        GreenOptions {
            t_max: 16.0,
            tol_conv: 1e-6,
            t_first: 0.125,
            tol: DEFAULT_TOL,
        }
    }
}

/// One entry of the convergence history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenSample {
    pub t: f64,
    pub s: Vec<Vec<f64>>,
}

/// How a one-sided limit was accepted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    /// Schedule time at which the limit was accepted.
    pub t: f64,
    /// Estimated distance from `S_v(t)` to the limit.
    pub error_estimate: f64,
    /// Whether the value is an Aitken extrapolation rather than `S_v(t)`.
    pub extrapolated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenData {
    pub s_plus: Vec<Vec<f64>>,
    pub s_minus: Vec<Vec<f64>>,
    pub plus: Convergence,
    pub minus: Convergence,
    pub history_plus: Vec<GreenSample>,
    pub history_minus: Vec<GreenSample>,
    /// Smallest eigenvalue of `S(t_{k+1}) − S(t_k)` over both histories.
    pub monotonicity_margin: f64,
    pub monotone: bool,
    /// Smallest eigenvalue of `S(−1) − S(t_k)` over the forward history.
    pub boundedness_margin: f64,
    pub bounded: bool,
    /// `‖t·S(t) + Id‖` at the first schedule time.
    pub small_t_defect: f64,
    pub symmetry_defect: f64,
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Matrix {
    let n = rows.len();
    Matrix::from_fn(n, n, |r, c| rows[r][c])
}

impl GreenData {
    pub fn s_plus(&self) -> Matrix {
        from_rows(&self.s_plus)
    }

    pub fn s_minus(&self) -> Matrix {
        from_rows(&self.s_minus)
    }
}

/// Monotonicity tolerance for the Loewner certificates.
pub const LOEWNER_TOL: f64 = 1e-8;

/// Integrates both fundamental solutions; `Y₂` is stored first.
fn fundamental_pair(model: &GeometryModel, p0: &PhasePoint, t_end: f64, tol: f64) -> Result<OrbitSolution> {
    let m = model.dim() - 1;
    let id = Matrix::identity(m, m);
    let zero = Matrix::zeros(m, m);
    let init = pack_rows(&[&zero, &id, &id, &zero]);
    integrate_with(model, p0, None, &MatrixJacobiSystem { m, pairs: 2 }, &init, t_end, tol)
}

fn y1_y2(orbit: &OrbitSolution, m: usize, t: f64) -> (Matrix, Matrix) {
    let a = orbit.attachment(t);
    let mm = m * m;
    (unpack(m, &a[2 * mm..]), unpack(m, &a[..mm]))
}

/// First time in `(0, |t_end|]` (in the direction of `t_end`) at which
/// `Y₂` becomes singular.
fn first_singular_time(orbit: &OrbitSolution, m: usize) -> Option<f64> {
    let t_end = orbit.t_end();
    let dir = t_end.signum();
    let dt = 0.01 / orbit.s;
    let steps = (t_end.abs() / dt).ceil().max(1.0) as usize;
    let dt = t_end.abs() / steps as f64;
    let mut prev: Option<f64> = None;
    for i in 1..=steps {
        let t = dir * i as f64 * dt;
        let y2 = y1_y2(orbit, m, t).1;
        let d = y2.determinant();
        let sv = y2.singular_values();
        let (lo, hi) = (sv.min(), sv.max());
        if let Some(p) = prev.filter(|p| p.signum() != d.signum()) {
            let det = |t: f64| y1_y2(orbit, m, t).1.determinant();
            let (mut a, mut b, mut fa) = (t - dir * dt, t, p);
            while (b - a).abs() > 1e-9 {
                let c = 0.5 * (a + b);
                let fc = det(c);
                if fc.signum() == fa.signum() {
                    a = c;
                    fa = fc;
                } else {
                    b = c;
                }
            }
            return Some(0.5 * (a + b));
        }
        if i > 1 && lo < KERNEL_TOL * hi {
            return Some(t);
        }
        prev = Some(d);
    }
    None
}

fn boundary_operator(orbit: &OrbitSolution, m: usize, t: f64) -> Result<Matrix> {
    let (y1, y2) = y1_y2(orbit, m, t);
    let inv = y2
        .try_inverse()
        .ok_or_else(|| MagflowError::NonConvergence(format!("Y₂({t}) is singular")))?;
    Ok(-(inv * y1))
}

/// Accepts a limit from the history `S(t_k)`.
///
/// Algebraic and geometric tails (steady ratio of increments) are
/// accelerated with Aitken's formula; faster tails are accepted once the
/// estimated remaining distance `d_k·ρ_k/(1 − ρ_k)` is below `tol_conv`.
fn accept_limit(history: &[(f64, Matrix)], tol_conv: f64) -> Option<(Matrix, Convergence)> {
    let incr: Vec<f64> = history.windows(2).map(|w| linalg::op_norm(&(&w[1].1 - &w[0].1))).collect();
    let mut accel: Vec<Option<Matrix>> = vec![None; history.len()];
    for k in 1..history.len() {
        let (t, s) = (&history[k].0, &history[k].1);
        let d = incr[k - 1];
        if d <= tol_conv {
            return Some((
                s.clone(),
                Convergence {
                    t: *t,
                    error_estimate: d,
                    extrapolated: false,
                },
            ));
        }
        if k < 2 || incr[k - 2] == 0.0 {
            continue;
        }
        let rho = d / incr[k - 2];
        if rho >= 1.0 {
            continue;
        }
        let steady = k >= 3 && incr[k - 3] > 0.0 && {
            let prev = incr[k - 2] / incr[k - 3];
            (rho - prev).abs() <= 0.1 * rho.max(prev)
        };
        let tail = d * rho / (1.0 - rho);
        if steady {
            let sk = s + (s - &history[k - 1].1) * (rho / (1.0 - rho));
            if let Some(prev) = &accel[k - 1] {
                let change = linalg::op_norm(&(&sk - prev));
                if change <= tol_conv {
                    return Some((
                        sk,
                        Convergence {
                            t: *t,
                            error_estimate: change,
                            extrapolated: true,
                        },
                    ));
                }
            }
            accel[k] = Some(sk);
        } else if rho < 0.1 && tail <= tol_conv {
            return Some((
                s.clone(),
                Convergence {
                    t: *t,
                    error_estimate: tail,
                    extrapolated: false,
                },
            ));
        }
    }
    None
}

fn min_eig(m: &Matrix) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    linalg::sym_eigenvalues(&sym)[0]
}

fn check_reach(orbit: &OrbitSolution) -> Result<()> {
    match orbit.termination() {
        crate::ode::Termination::DomainExit { t } => Err(MagflowError::Refused(format!(
            "orbit leaves the chart at t = {t:.6}, before the Green window closes"
        ))),
        _ => Ok(()),
    }
}

/// Green operators `S_v^±` at `p0`.
pub fn green_bundle(model: &GeometryModel, p0: &PhasePoint, opts: &GreenOptions) -> Result<GreenData> {
    if !(opts.t_max >= 10.0) {
        return Err(contract("t_max must be at least 10"));
    }
    if !(opts.t_first > 0.0 && opts.t_first < 1.0) {
        return Err(contract("t_first must lie in (0, 1)"));
    }
    let m = model.dim() - 1;
    let fwd = fundamental_pair(model, p0, opts.t_max, opts.tol)?;
    if let Some(t) = first_singular_time(&fwd, m) {
        return Err(MagflowError::Refused(format!("conjugate point at t = {t:.9}")));
    }
    check_reach(&fwd)?;
    let bwd = fundamental_pair(model, p0, -opts.t_max, opts.tol)?;
    if let Some(t) = first_singular_time(&bwd, m) {
        return Err(MagflowError::Refused(format!("conjugate point at t = {t:.9}")));
    }
    check_reach(&bwd)?;
    let schedule = |orbit: &OrbitSolution, sign: f64| -> Result<Vec<(f64, Matrix)>> {
        let reach = orbit.t_end().abs();
        let mut out = Vec::new();
        let mut t = opts.t_first;
        while t <= reach * (1.0 + 1e-12) {
            out.push((sign * t, boundary_operator(orbit, m, sign * t)?));
            t *= 2.0;
        }
        Ok(out)
    };
    let hist_p = schedule(&fwd, 1.0)?;
    let hist_m = schedule(&bwd, -1.0)?;
    let limit = |hist: &[(f64, Matrix)], side: &str| {
        accept_limit(hist, opts.tol_conv).ok_or_else(|| {
            let last = hist
                .windows(2)
                .last()
                .map_or(f64::NAN, |w| linalg::op_norm(&(&w[1].1 - &w[0].1)));
            MagflowError::NonConvergence(format!(
                "S_{side} did not settle by |t| = {:.3}; last increment {last:.3e}",
                hist.last().map_or(0.0, |h| h.0.abs())
            ))
        })
    };
    let (s_plus, plus) = limit(&hist_p, "+")?;
    let (s_minus, minus) = limit(&hist_m, "-")?;

    // S(t) increases with t on both sides of 0
    let mut mono = f64::INFINITY;
    for w in hist_p.windows(2) {
        mono = mono.min(min_eig(&(&w[1].1 - &w[0].1)));
    }
    for w in hist_m.windows(2) {
        mono = mono.min(min_eig(&(&w[0].1 - &w[1].1)));
    }
    let s_back_one = boundary_operator(&bwd, m, -1.0)?;
    let mut bound = f64::INFINITY;
    for (_, s) in &hist_p {
        bound = bound.min(min_eig(&(&s_back_one - s)));
    }
    let symmetry = hist_p
        .iter()
        .chain(&hist_m)
        .map(|(_, s)| (s - s.transpose()).norm())
        .fold(0.0, f64::max);
    let (t0, s0) = &hist_p[0];
    let small_t = (s0 * *t0 + Matrix::identity(m, m)).norm();
    let rows = |h: &[(f64, Matrix)]| {
        h.iter()
            .map(|(t, s)| GreenSample { t: *t, s: to_rows(s) })
            .collect()
    };
    Ok(GreenData {
        s_plus: to_rows(&s_plus),
        s_minus: to_rows(&s_minus),
        plus,
        minus,
        history_plus: rows(&hist_p),
        history_minus: rows(&hist_m),
        monotonicity_margin: mono,
        monotone: mono >= -LOEWNER_TOL,
        boundedness_margin: bound,
        bounded: bound >= -LOEWNER_TOL,
        small_t_defect: small_t,
        symmetry_defect: symmetry,
    })
}

/// Options for [`anosov_certificate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnosovOptions {
    /// Length of the certified window.
    pub t: f64,
    /// Relaxation time before and after the window.
    pub pad: f64,
    /// Random curvature samples used for `a` and `ã`.
    pub samples: usize,
    pub seed: u64,
    pub tol: f64,
    /// Bounds count as satisfied when their margin is at least `−slack`.
    pub slack: f64,
}

impl Default for AnosovOptions {
    fn default() -> Self {
        AnosovOptions {
            t: 20.0,
            pad: 10.0,
            samples: 2000,
            seed: 0,
            tol: DEFAULT_TOL,
            slack: 1e-6,
        }
    }
}

/// Margins of the Riccati and growth bounds (positive means satisfied).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundMargins {
    /// `ã − max ‖U^±‖`.
    pub u_norm: f64,
    /// `−a − max ⟨U^+w, w⟩`.
    pub u_plus: f64,
    /// `min ⟨U^−w, w⟩ − a`.
    pub u_minus: f64,
    /// `min (e^{−at} − ‖Y^+(t)‖) e^{at}`.
    pub y_plus: f64,
    /// `min (σ_min Y^−(t) − e^{at}) e^{−at}`.
    pub y_minus: f64,
}

impl BoundMargins {
    pub fn min(&self) -> f64 {
        [self.u_norm, self.u_plus, self.u_minus, self.y_plus, self.y_minus]
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitCertificate {
    pub orbit_id: usize,
    /// Slope of `log‖Y^+‖` over `[T/2, T]`.
    pub rate_plus: f64,
    /// Slope of `log‖Y^−‖` over `[T/2, T]`.
    pub rate_minus: f64,
    /// `U^±` at the start of the window.
    pub u_plus: Vec<Vec<f64>>,
    pub u_minus: Vec<Vec<f64>>,
    pub margins: BoundMargins,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnosovReport {
    pub s: f64,
    pub a: f64,
    pub a_tilde: f64,
    pub rate_plus: f64,
    pub rate_minus: f64,
    pub orbits: Vec<OrbitCertificate>,
    pub all_pass: bool,
}

fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Certifies the Riccati comparison bounds along orbits whose window
/// `[0, T]` is centred on the given phase points.
///
/// `U^−` is obtained by relaxing the forward Riccati flow from `U = 0` over
/// the leading pad and `U^+` by relaxing the backward flow over the trailing
/// pad: both Green solutions attract in their direction of integration, so
/// after a pad of length `p` the error is of order `e^{−2ap}`.
pub fn anosov_certificate(
    model: &GeometryModel,
    s: f64,
    centres: &[PhasePoint],
    opts: &AnosovOptions,
) -> Result<AnosovReport> {
    if !(opts.t > 0.0 && opts.pad >= 0.0) {
        return Err(contract("T must be positive and the pad non-negative"));
    }
    if centres.iter().any(|p| (p.s - s).abs() > 1e-12 * s) {
        return Err(contract("orbit sample has a different speed"));
    }
    let m = model.dim() - 1;
    let mut sec_max = f64::NEG_INFINITY;
    let mut sec_min = f64::INFINITY;
    let mut offending = None;
    for c in magcurv::sample_curvature(model, s, opts.samples, opts.seed)? {
        if c.sec >= 0.0 && offending.is_none() {
            offending = Some(c.clone());
        }
        sec_max = sec_max.max(c.sec);
        sec_min = sec_min.min(c.sec);
    }

    let mut runs = Vec::with_capacity(centres.len());
    for c in centres {
        let half = 0.5 * opts.t + opts.pad;
        let lead = integrate_orbit_strict(model, c, -half, opts.tol)?;
        let start = lead.phase_point(-half);
        let frame = lead.frame(-half);
        let total = opts.t + 2.0 * opts.pad;
        let init = pack_rows(&[&Matrix::zeros(m, m), &Matrix::identity(m, m)]);
        let fwd = integrate_with(model, &start, Some(&frame), &Riccati { m, with_y: true }, &init, total, opts.tol)?;
        ensure_complete(&fwd)?;
        let end = fwd.phase_point(total);
        let end_frame = fwd.frame(total);
        let bwd = integrate_with(model, &end, Some(&end_frame), &Riccati { m, with_y: true }, &init, -total, opts.tol)?;
        ensure_complete(&bwd)?;
        // sectional curvatures seen along the window itself
        for t in fwd.grid(400) {
            let a = curvature_matrix_at(model, &fwd.state(t), model.dim(), s)?;
            let ev = linalg::sym_eigenvalues(&((&a + a.transpose()) * 0.5));
            sec_min = sec_min.min(ev[0]);
            sec_max = sec_max.max(ev[m - 1]);
        }
        runs.push((fwd, bwd, total));
    }
    if let Some(c) = offending {
        return Err(MagflowError::Refused(format!(
            "sec^Ω_s = {:.6e} ≥ 0 at x = {:?}, v = {:?}, w = {:?}",
            c.sec, c.x, c.v, c.w
        )));
    }
    if sec_max >= 0.0 {
        return Err(MagflowError::Refused(format!(
            "sec^Ω_s reaches {sec_max:.6e} along the sampled orbits"
        )));
    }
    let a = (-sec_max).sqrt();
    let a_tilde = (-sec_min).sqrt();

    let mm = m * m;
    let mut orbits = Vec::with_capacity(runs.len());
    for (id, (fwd, bwd, total)) in runs.into_iter().enumerate() {
        let t0 = opts.pad;
        // bwd uses local time τ = t − total
        let at_b = |t: f64| bwd.attachment(t - total);
        let yp0_inv = unpack(m, &at_b(t0)[mm..])
            .try_inverse()
            .ok_or_else(|| MagflowError::NonConvergence("Y^+ became singular".into()))?;
        let ym0_inv = unpack(m, &fwd.attachment(t0)[mm..])
            .try_inverse()
            .ok_or_else(|| MagflowError::NonConvergence("Y^- became singular".into()))?;
        let mut margins = BoundMargins {
            u_norm: f64::INFINITY,
            u_plus: f64::INFINITY,
            u_minus: f64::INFINITY,
            y_plus: f64::INFINITY,
            y_minus: f64::INFINITY,
        };
        let mut log_p = Vec::new();
        let mut log_m = Vec::new();
        let steps = (40.0 * opts.t).ceil() as usize;
        for i in 0..=steps {
            let tau = opts.t * i as f64 / steps as f64;
            let t = t0 + tau;
            let bp = at_b(t);
            let fm = fwd.attachment(t);
            let up = unpack(m, &bp);
            let um = unpack(m, &fm);
            let yp = unpack(m, &bp[mm..]) * &yp0_inv;
            let ym = unpack(m, &fm[mm..]) * &ym0_inv;
            margins.u_norm = margins.u_norm.min(a_tilde - linalg::op_norm(&up).max(linalg::op_norm(&um)));
            let ep = linalg::sym_eigenvalues(&((&up + up.transpose()) * 0.5));
            let em = linalg::sym_eigenvalues(&((&um + um.transpose()) * 0.5));
            margins.u_plus = margins.u_plus.min(-a - ep[m - 1]);
            margins.u_minus = margins.u_minus.min(em[0] - a);
            let np = linalg::op_norm(&yp);
            let sm = ym.singular_values().min();
            margins.y_plus = margins.y_plus.min(1.0 - np * (a * tau).exp());
            margins.y_minus = margins.y_minus.min(sm * (-a * tau).exp() - 1.0);
            if tau >= 0.5 * opts.t {
                log_p.push((tau, np.ln()));
                log_m.push((tau, linalg::op_norm(&ym).ln()));
            }
        }
        let pass = margins.min() >= -opts.slack;
        orbits.push(OrbitCertificate {
            orbit_id: id,
            rate_plus: least_squares_slope(&log_p),
            rate_minus: least_squares_slope(&log_m),
            u_plus: to_rows(&unpack(m, &at_b(t0))),
            u_minus: to_rows(&unpack(m, &fwd.attachment(t0))),
            margins,
            pass,
        });
    }
    let k = orbits.len().max(1) as f64;
    Ok(AnosovReport {
        s,
        a,
        a_tilde,
        rate_plus: orbits.iter().map(|o| o.rate_plus).sum::<f64>() / k,
        rate_minus: orbits.iter().map(|o| o.rate_minus).sum::<f64>() / k,
        all_pass: orbits.iter().all(|o| o.pass),
        orbits,
    })
}

fn integrate_orbit_strict(model: &GeometryModel, p: &PhasePoint, t_end: f64, tol: f64) -> Result<OrbitSolution> {
    let o = integrate_with(model, p, None, &Bare, &[], t_end, tol)?;
    ensure_complete(&o)?;
    Ok(o)
}

fn ensure_complete(o: &OrbitSolution) -> Result<()> {
    match o.termination() {
        crate::ode::Termination::Completed => Ok(()),
        crate::ode::Termination::DomainExit { t } => Err(MagflowError::Domain {
            point: o.position(t),
        }),
        crate::ode::Termination::Stopped { t } => Err(MagflowError::NonConvergence(format!(
            "Riccati solution blew up at t = {t}"
        ))),
    }
}

/// Phase points near the centre of the chart with random directions.
pub fn sample_centres(model: &GeometryModel, s: f64, count: usize, seed: u64) -> Result<Vec<PhasePoint>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let x: Vec<f64> = match model.metric_kind() {
            crate::geometry::Metric::Disk { .. } | crate::geometry::Metric::Ball { .. } => {
                magcurv::sample_point(model, &mut rng).iter().map(|c| 0.3 * c).collect()
            }
            _ => magcurv::sample_point(model, &mut rng),
        };
        let pg = model.at_first_order(&x)?;
        let u = magcurv::random_unit(&pg, &mut rng);
        out.push(PhasePoint::new(model, &x, u.as_slice(), s)?);
    }
    Ok(out)
}
