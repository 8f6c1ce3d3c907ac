//! Magnetic geodesics `Dγ̇/dt = Ω(γ̇)` and transport by the twisted
//! connection `D̃V = DV/dt − Ω̃_{γ̇/s}(V)`.
//!
//! Orbits are integrated in chart coordinates together with an orthonormal
//! frame of `γ̇^⊥` solving `D̃e_a = 0`. Further linear systems along the orbit
//! (Jacobi fields, Riccati equations) are attached to the same ODE so that
//! they share step control with the orbit.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::geometry::{GeometryModel, PointGeometry};
use crate::linalg::{Matrix, Vector};
use crate::ode::{self, DenseSolution, OdeSystem, Options, Termination};

/// Default integration tolerance.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Point-and-velocity pair on the level `‖v‖ = s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub s: f64,
}

impl PhasePoint {
    /// Rescales `dir` to speed `s` at `x`.
    pub fn new(model: &GeometryModel, x: &[f64], dir: &[f64], s: f64) -> Result<Self> {
        if s <= 0.0 || !s.is_finite() {
            return Err(contract(format!("speed must be positive, got {s}")));
        }
        if dir.len() != model.dim() || x.len() != model.dim() {
            return Err(contract("point and direction must match the model dimension"));
        }
        let g = model.metric_at(x)?;
        let d = Vector::from_column_slice(dir);
        let n = crate::linalg::norm(&g, &d);
        if n == 0.0 {
            return Err(contract("direction must be nonzero"));
        }
        Ok(PhasePoint {
            x: x.to_vec(),
            v: d.iter().map(|c| c * s / n).collect(),
            s,
        })
    }
}

/// Random phase point at speed `s`: base point from
/// [`magcurv::sample_point`](crate::magcurv::sample_point), uniform direction.
pub fn random_phase_point<R: rand::Rng>(model: &GeometryModel, s: f64, rng: &mut R) -> Result<PhasePoint> {
    let x = crate::magcurv::sample_point(model, rng);
    let pg = model.at_first_order(&x)?;
    let u = crate::magcurv::random_unit(&pg, rng);
    PhasePoint::new(model, &x, u.as_slice(), s)
}

/// `Ω̃_u(w) = ½(⟨Ωw, u⟩u + ⟨w, u⟩Ωu + Ωw)` for a unit vector `u`.
pub fn anisotropic_lorentz_unchecked(pg: &PointGeometry, u: &Vector, w: &Vector) -> Vector {
    let ow = &pg.omega * w;
    let ou = &pg.omega * u;
    (u * pg.inner(&ow, u) + ou * pg.inner(w, u) + ow) * 0.5
}

pub fn anisotropic_lorentz(pg: &PointGeometry, u: &Vector, w: &Vector) -> Result<Vector> {
    let n = pg.norm(u);
    if (n - 1.0).abs() > 1e-8 {
        return Err(contract(format!("expected a unit vector, got norm {n}")));
    }
    Ok(anisotropic_lorentz_unchecked(pg, u, w))
}

/// Data available to attached systems at one evaluation.
pub struct Context<'a> {
    pub pg: &'a PointGeometry,
    pub s: f64,
    pub v: Vector,
    /// Unit tangent `v / s`.
    pub u: Vector,
    pub frame: Vec<Vector>,
}

/// Error-control class of a block of attached components.
#[derive(Debug, Clone, Copy)]
pub enum BlockKind {
    /// Each component relative to its own magnitude.
    Componentwise,
    /// Relative to the block's largest component.
    Block,
}

/// A linear system carried along the orbit.
pub trait Attachment {
    fn len(&self) -> usize;
    fn needs_curvature(&self) -> bool;
    fn rhs(&self, ctx: &Context<'_>, y: &[f64], dy: &mut [f64]);
    fn blocks(&self) -> Vec<(usize, BlockKind)>;
    fn stop(&self, _y: &[f64]) -> bool {
        false
    }
}

/// No attached system.
pub struct Bare;

impl Attachment for Bare {
    fn len(&self) -> usize {
        0
    }
    fn needs_curvature(&self) -> bool {
        false
    }
    fn rhs(&self, _: &Context<'_>, _: &[f64], _: &mut [f64]) {}
    fn blocks(&self) -> Vec<(usize, BlockKind)> {
        Vec::new()
    }
}

struct MagneticSystem<'a, A: Attachment> {
    model: &'a GeometryModel,
    s: f64,
    n: usize,
    att: &'a A,
    blocks: Vec<(usize, BlockKind)>,
    drift: Cell<f64>,
}

impl<A: Attachment> MagneticSystem<'_, A> {
    fn frame_len(&self) -> usize {
        self.n * (self.n - 1)
    }

    fn att_offset(&self) -> usize {
        2 * self.n + self.frame_len()
    }
}

fn vec_of(y: &[f64]) -> Vector {
    Vector::from_column_slice(y)
}

impl<A: Attachment> OdeSystem for MagneticSystem<'_, A> {
    fn len(&self) -> usize {
        self.att_offset() + self.att.len()
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let n = self.n;
        let x = &y[..n];
        let pg = if self.att.needs_curvature() {
            self.model.at(x)?
        } else {
            self.model.at_first_order(x)?
        };
        let v = vec_of(&y[n..2 * n]);
        let u = &v / self.s;
        dy[..n].copy_from_slice(&y[n..2 * n]);
        let acc = &pg.omega * &v - pg.gamma_contract(&y[n..2 * n], &y[n..2 * n]);
        dy[n..2 * n].copy_from_slice(acc.as_slice());
        let mut frame = Vec::with_capacity(n - 1);
        for a in 0..n - 1 {
            let off = 2 * n + a * n;
            let e = vec_of(&y[off..off + n]);
            let de = anisotropic_lorentz_unchecked(&pg, &u, &e) - pg.gamma_contract(v.as_slice(), e.as_slice());
            dy[off..off + n].copy_from_slice(de.as_slice());
            frame.push(e);
        }
        if self.att.len() > 0 {
            let ctx = Context {
                pg: &pg,
                s: self.s,
                v,
                u,
                frame,
            };
            let off = self.att_offset();
            self.att.rhs(&ctx, &y[off..], &mut dy[off..]);
        }
        Ok(())
    }

    fn project(&self, y: &mut [f64]) {
        let n = self.n;
        let Ok(g) = self.model.metric_at(&y[..n]) else {
            return;
        };
        let v = vec_of(&y[n..2 * n]);
        let speed = crate::linalg::norm(&g, &v);
        self.drift.set(self.drift.get().max((speed - self.s).abs()));
        if speed > 0.0 {
            let f = self.s / speed;
            for c in &mut y[n..2 * n] {
                *c *= f;
            }
        }
    }

    fn error_scale(&self, y0: &[f64], y1: &[f64], atol: f64, rtol: f64, scale: &mut [f64]) {
        let n = self.n;
        let inf = |y: &[f64], r: std::ops::Range<usize>| y[r].iter().fold(0.0f64, |a, c| a.max(c.abs()));
        let vmax = inf(y0, n..2 * n).max(inf(y1, n..2 * n));
        // positional error measured in the metric's length scale
        let metric_scale = (vmax / self.s).min(1.0);
        for i in 0..n {
            let mag = y0[i].abs().max(y1[i].abs());
            // never ask for more than the chart coordinates can represent
            scale[i] = ((atol + rtol * mag) * metric_scale).max(64.0 * f64::EPSILON * mag);
        }
        let mut set_block = |r: std::ops::Range<usize>| {
            let m = inf(y0, r.clone()).max(inf(y1, r.clone()));
            for c in &mut scale[r] {
                *c = atol * metric_scale.max(1e-300) + rtol * m;
            }
        };
        set_block(n..2 * n);
        for a in 0..n - 1 {
            set_block(2 * n + a * n..2 * n + (a + 1) * n);
        }
        let mut off = self.att_offset();
        for (len, kind) in &self.blocks {
            match kind {
                BlockKind::Block => {
                    let r = off..off + len;
                    let m = inf(y0, r.clone()).max(inf(y1, r.clone()));
                    for c in &mut scale[r] {
                        *c = atol + rtol * m;
                    }
                }
                BlockKind::Componentwise => {
                    for i in off..off + len {
                        scale[i] = atol + rtol * y0[i].abs().max(y1[i].abs());
                    }
                }
            }
            off += len;
        }
    }

    fn admissible(&self, y: &[f64]) -> bool {
        self.model.contains(&y[..self.n])
    }

    fn stop(&self, _t: f64, y: &[f64]) -> bool {
        self.att.stop(&y[self.att_offset()..])
    }
}

/// A magnetic geodesic with a `D̃`-parallel orthonormal frame of `γ̇^⊥`.
#[derive(Debug, Clone)]
pub struct OrbitSolution {
    pub n: usize,
    pub s: f64,
    pub sol: DenseSolution,
    /// Largest `|‖γ̇‖ − s|` observed before renormalization.
    pub speed_drift: f64,
}

impl OrbitSolution {
    pub fn termination(&self) -> Termination {
        self.sol.termination
    }

    pub fn completed(&self) -> bool {
        self.sol.termination == Termination::Completed
    }

    pub fn t_start(&self) -> f64 {
        self.sol.t_start()
    }

    pub fn t_end(&self) -> f64 {
        self.sol.t_end()
    }

    pub fn times(&self) -> &[f64] {
        &self.sol.times
    }

    pub fn state(&self, t: f64) -> Vec<f64> {
        self.sol.eval(t)
    }

    pub fn position(&self, t: f64) -> Vec<f64> {
        self.sol.eval(t)[..self.n].to_vec()
    }

    pub fn phase_point(&self, t: f64) -> PhasePoint {
        let y = self.sol.eval(t);
        PhasePoint {
            x: y[..self.n].to_vec(),
            v: y[self.n..2 * self.n].to_vec(),
            s: self.s,
        }
    }

    /// Frame vectors `e_1 … e_{n−1}` at `t`.
    pub fn frame(&self, t: f64) -> Vec<Vector> {
        frame_from_state(&self.sol.eval(t), self.n)
    }

    /// Attached components at `t`.
    pub fn attachment(&self, t: f64) -> Vec<f64> {
        let off = 2 * self.n + self.n * (self.n - 1);
        self.sol.eval(t)[off..].to_vec()
    }

    /// Attached components at the stored nodes.
    pub fn attachment_nodes(&self) -> impl Iterator<Item = (f64, &[f64])> {
        let off = 2 * self.n + self.n * (self.n - 1);
        self.sol.times.iter().copied().zip(self.sol.states.iter().map(move |y| &y[off..]))
    }

    /// Regular grid of `count + 1` times over the integrated window.
    pub fn grid(&self, count: usize) -> Vec<f64> {
        let (a, b) = (self.t_start(), self.t_end());
        (0..=count).map(|i| a + (b - a) * i as f64 / count as f64).collect()
    }
}

pub(crate) fn frame_from_state(y: &[f64], n: usize) -> Vec<Vector> {
    (0..n - 1)
        .map(|a| Vector::from_column_slice(&y[2 * n + a * n..2 * n + (a + 1) * n]))
        .collect()
}

/// Integrates the orbit of `p0` with frames and an attached system from
/// `t = 0` to `t_end` (negative for backward integration).
pub fn integrate_with<A: Attachment>(
    model: &GeometryModel,
    p0: &PhasePoint,
    frame0: Option<&[Vector]>,
    att: &A,
    att0: &[f64],
    t_end: f64,
    tol: f64,
) -> Result<OrbitSolution> {
    let n = model.dim();
    if att0.len() != att.len() {
        return Err(contract("attachment initial data has wrong length"));
    }
    if !(tol > 0.0) {
        return Err(contract("tolerance must be positive"));
    }
    let pg = model.at_first_order(&p0.x)?;
    let v = Vector::from_column_slice(&p0.v);
    let speed = pg.norm(&v);
    if (speed - p0.s).abs() > 1e-8 * p0.s {
        return Err(contract(format!("|v| = {speed} differs from s = {}", p0.s)));
    }
    let frame: Vec<Vector> = match frame0 {
        Some(f) => f.to_vec(),
        None => pg.perp_basis(&v),
    };
    let mut y0 = Vec::with_capacity(2 * n + n * (n - 1) + att.len());
    y0.extend_from_slice(&p0.x);
    y0.extend_from_slice(&p0.v);
    for e in &frame {
        y0.extend_from_slice(e.as_slice());
    }
    y0.extend_from_slice(att0);
    let sys = MagneticSystem {
        model,
        s: p0.s,
        n,
        att,
        blocks: att.blocks(),
        drift: Cell::new(0.0),
    };
    let sol = ode::integrate(&sys, 0.0, &y0, t_end, &Options::new(tol))?;
    Ok(OrbitSolution {
        n,
        s: p0.s,
        sol,
        speed_drift: sys.drift.get(),
    })
}

/// Magnetic geodesic of `p0` over `[0, t_end]` (or `[t_end, 0]`).
pub fn integrate_orbit(model: &GeometryModel, p0: &PhasePoint, t_end: f64, tol: f64) -> Result<OrbitSolution> {
    integrate_with(model, p0, None, &Bare, &[], t_end, tol)
}

/// Solves `D̃V = 0` along the orbit of `p0` with `V(0) = w0 ⊥ γ̇(0)`.
///
/// The transported field is carried as the first frame vector, so the
/// result's `frame(t)[0]` is `V(t)`.
pub fn transport_frame(model: &GeometryModel, p0: &PhasePoint, w0: &[f64], t_end: f64, tol: f64) -> Result<OrbitSolution> {
    let pg = model.at_first_order(&p0.x)?;
    let v = Vector::from_column_slice(&p0.v);
    let w = Vector::from_column_slice(w0);
    let d = pg.inner(&v, &w);
    if d.abs() > 1e-8 * pg.norm(&v) * pg.norm(&w).max(1e-300) {
        return Err(contract(format!("w0 is not orthogonal to the velocity (⟨v,w⟩ = {d:.3e})")));
    }
    let wn = pg.norm(&w);
    // complete w/|w| to an orthonormal frame, then rescale the first vector
    let u = &w / wn;
    let mut frame = vec![u.clone()];
    for e in pg.perp_basis(&v) {
        let mut r = crate::linalg::project_perp(&pg.g, &u, &e);
        for f in frame.iter().skip(1) {
            r -= f * pg.inner(f, &r);
        }
        let rn = pg.norm(&r);
        if rn > 1e-6 && frame.len() < model.dim() - 1 {
            frame.push(r / rn);
        }
    }
    frame[0] = w;
    integrate_with(model, p0, Some(&frame), &Bare, &[], t_end, tol)
}

/// Largest `‖Dγ̇/dt − Ω(γ̇)‖` at step midpoints, using the continuous
/// extension's derivative.
pub fn orbit_residual(model: &GeometryModel, orbit: &OrbitSolution) -> Result<f64> {
    let n = orbit.n;
    let times = orbit.times();
    let mut worst: f64 = 0.0;
    for w in times.windows(2) {
        let t = 0.5 * (w[0] + w[1]);
        let y = orbit.sol.eval(t);
        let dy = orbit.sol.eval_derivative(t);
        let pg = model.at_first_order(&y[..n])?;
        let v = &y[n..2 * n];
        let r = Vector::from_column_slice(&dy[n..2 * n]) + pg.gamma_contract(v, v) - &pg.omega * Vector::from_column_slice(v);
        worst = worst.max(pg.norm(&r));
    }
    Ok(worst)
}

/// Frame quality along the orbit at the stored nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameQuality {
    /// `max |⟨e_a, e_b⟩ − δ_ab|`.
    pub orthonormality: f64,
    /// `max |⟨e_a, γ̇⟩| / s`.
    pub tangency: f64,
}

pub fn frame_quality(model: &GeometryModel, orbit: &OrbitSolution) -> Result<FrameQuality> {
    let n = orbit.n;
    let mut q = FrameQuality {
        orthonormality: 0.0,
        tangency: 0.0,
    };
    for y in &orbit.sol.states {
        let g = model.metric_at(&y[..n])?;
        let v = Vector::from_column_slice(&y[n..2 * n]);
        let f = frame_from_state(y, n);
        for a in 0..n - 1 {
            q.tangency = q.tangency.max(crate::linalg::inner(&g, &f[a], &v).abs() / orbit.s);
            for b in 0..n - 1 {
                let target = if a == b { 1.0 } else { 0.0 };
                q.orthonormality = q.orthonormality.max((crate::linalg::inner(&g, &f[a], &f[b]) - target).abs());
            }
        }
    }
    Ok(q)
}

/// Matrix whose columns are the frame vectors.
pub fn frame_matrix(frame: &[Vector]) -> Matrix {
    Matrix::from_columns(frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn unit_field_circle_on_the_plane() {
        let m = GeometryModel::torus().with_constant_b(1.0);
        let p0 = PhasePoint::new(&m, &[0.0, 0.0], &[1.0, 0.0], 1.0).unwrap();
        let orbit = integrate_orbit(&m, &p0, PI, 1e-11).unwrap();
        let x = orbit.position(PI);
        assert!((x[0]).abs() < 1e-8 && (x[1] - 2.0).abs() < 1e-8, "{x:?}");
        assert!(orbit.speed_drift < 1e-9);
    }

    #[test]
    fn transported_vector_rotates_at_half_rate() {
        // Ω̃_u(w) = ½Ω(w) for w ⊥ u on the plane, so V turns at rate b/2.
        let m = GeometryModel::torus().with_constant_b(1.0);
        let p0 = PhasePoint::new(&m, &[0.0, 0.0], &[1.0, 0.0], 1.0).unwrap();
        let orbit = transport_frame(&m, &p0, &[0.0, 1.0], 2.0, 1e-11).unwrap();
        let t: f64 = 1.3;
        let e = &orbit.frame(t)[0];
        // γ̇ turns by t; a D̃-parallel field keeps its angle to γ̇ fixed
        let expect = [-(t).sin(), t.cos()];
        assert!((e[0] - expect[0]).abs() < 1e-8 && (e[1] - expect[1]).abs() < 1e-8);
    }

    #[test]
    fn eq11_matches_projector_form() {
        let m = GeometryModel::ball(-1.0, 2).with_kahler(0.7).unwrap();
        let pg = m.at_first_order(&[0.1, 0.2, -0.3, 0.05]).unwrap();
        let u = Vector::from_column_slice(&[0.3, -0.2, 0.5, 1.0]);
        let u = &u / pg.norm(&u);
        let w = Vector::from_column_slice(&[1.0, 0.4, -0.2, 0.3]);
        let tan = |z: &Vector| &u * pg.inner(z, &u);
        let perp = |z: &Vector| z - tan(z);
        let ow = &pg.omega * &w;
        // Ω(w)^⊤ + Ω(w^⊤) + ½Ω(w^⊥)^⊥
        let expected = tan(&ow) + &pg.omega * tan(&w) + perp(&(&pg.omega * perp(&w))) * 0.5;
        let got = anisotropic_lorentz(&pg, &u, &w).unwrap();
        assert!((got - expected).norm() < 1e-12);
    }

    #[test]
    fn forward_then_backward_returns() {
        let m = GeometryModel::disk(-1.0).with_b("0.5 + 0.2*x").unwrap();
        let p0 = PhasePoint::new(&m, &[0.1, 0.1], &[0.3, 1.0], 1.0).unwrap();
        let fwd = integrate_orbit(&m, &p0, 3.0, 1e-11).unwrap();
        let end = fwd.phase_point(3.0);
        let back = integrate_orbit(&m, &end, -3.0, 1e-11).unwrap();
        let x = back.position(-3.0);
        assert!((x[0] - 0.1).abs() < 1e-8 && (x[1] - 0.1).abs() < 1e-8);
    }
}
