//! Monte Carlo averages over the unit sphere bundle with respect to the
//! Liouville measure, normalized to total mass one.
//!
//! Base points are drawn stratified on a 16×16 grid of the chart. The flat
//! torus and the sphere (sampled in `cos θ`) are drawn with density exactly
//! proportional to `√det g`; other compact models are drawn uniformly in the
//! chart and reweighted by `√det g` (self-normalized). Fiber directions are
//! uniform on the unit circle of `(T_xM, g_x)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

use crate::error::{contract, MagflowError, Result};
use crate::geometry::{GeometryModel, Metric, PointGeometry, POLE_GUARD};
use crate::linalg::Vector;
use crate::magcurv;

/// Strata per chart axis.
pub const STRATA: usize = 16;
const CHUNK: usize = 4096;
/// Samples closer than this to a pole are redrawn; the excluded area is
/// a fraction `~1e−6` of the sphere.
const SPHERE_GUARD: f64 = 2.0 * POLE_GUARD;

/// A Monte Carlo estimate of a measure-average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    /// Average of `|f|`, used to scale relative gaps.
    pub mean_abs: f64,
    pub n: usize,
}

/// Seeded sampler of `SM` with the normalized Liouville measure.
#[derive(Debug, Clone)]
pub struct LiouvilleSampler<'a> {
    model: &'a GeometryModel,
    seed: u64,
}

/// One draw: point, unit vector and importance weight.
pub struct Draw {
    pub x: Vec<f64>,
    pub v: Vector,
    pub weight: f64,
    pub stratum: usize,
}

impl<'a> LiouvilleSampler<'a> {
    pub fn new(model: &'a GeometryModel, seed: u64) -> Result<Self> {
        if !model.is_compact() {
            return Err(MagflowError::Refused(format!(
                "Liouville averages need a compact model, '{}' is not",
                model.name()
            )));
        }
        Ok(LiouvilleSampler { model, seed })
    }

    fn chunk_rng(&self, chunk: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(chunk as u64);
        rng
    }

    /// Base point for global sample index `i` and its stratum.
    fn base_point<R: Rng>(&self, i: usize, rng: &mut R) -> (Vec<f64>, usize) {
        let stratum = i % (STRATA * STRATA);
        let (sa, sb) = ((stratum / STRATA) as f64, (stratum % STRATA) as f64);
        let h = 1.0 / STRATA as f64;
        match self.model.metric_kind() {
            Metric::Sphere => loop {
                let c = -1.0 + 2.0 * (sa + rng.gen::<f64>()) * h;
                let theta = c.clamp(-1.0, 1.0).acos();
                if theta > SPHERE_GUARD && theta < PI - SPHERE_GUARD {
                    break (vec![theta, TAU * (sb + rng.gen::<f64>()) * h], stratum);
                }
            },
            _ => (
                vec![TAU * (sa + rng.gen::<f64>()) * h, TAU * (sb + rng.gen::<f64>()) * h],
                stratum,
            ),
        }
    }

    fn weight(&self, pg: &PointGeometry) -> f64 {
        match self.model.metric_kind() {
            Metric::Conformal { .. } => pg.g.determinant().sqrt(),
            _ => 1.0,
        }
    }

    /// The `i`-th draw, taken from its chunk's generator.
    fn draw<R: Rng>(&self, i: usize, rng: &mut R, with_curvature: bool) -> Result<(Draw, PointGeometry)> {
        let (x, stratum) = self.base_point(i, rng);
        let pg = if with_curvature {
            self.model.at(&x)?
        } else {
            self.model.at_first_order(&x)?
        };
        let v = magcurv::random_unit(&pg, rng);
        let weight = self.weight(&pg);
        Ok((Draw { x, v, weight, stratum }, pg))
    }

    /// First `n` draws in order (without curvature), for inspection.
    pub fn draws(&self, n: usize) -> Result<Vec<Draw>> {
        let mut out = Vec::with_capacity(n);
        for c in 0..n.div_ceil(CHUNK) {
            let mut rng = self.chunk_rng(c);
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                out.push(self.draw(i, &mut rng, false)?.0);
            }
        }
        Ok(out)
    }

    /// Measure-averages of the `K` components of `f` over `n` draws.
    ///
    /// Chunks may be evaluated in parallel; they are always combined in
    /// chunk order, so the result depends only on the seed.
    pub fn average<const K: usize, F>(&self, n: usize, f: F) -> Result<[Estimate; K]>
    where
        F: Fn(&PointGeometry, &Draw) -> Result<[f64; K]> + Sync,
    {
        if n < 2 {
            return Err(contract("need at least two samples"));
        }
        let chunks = n.div_ceil(CHUNK);
        let run = |c: usize| -> Result<Vec<Samples<K>>> {
            let mut rng = self.chunk_rng(c);
            let mut out = Vec::with_capacity(CHUNK);
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let (d, pg) = self.draw(i, &mut rng, true)?;
                out.push(Samples {
                    stratum: d.stratum,
                    w: d.weight,
                    f: f(&pg, &d)?,
                });
            }
            Ok(out)
        };
        #[cfg(feature = "parallel")]
        let parts: Vec<Result<Vec<Samples<K>>>> = {
            use rayon::prelude::*;
            (0..chunks).into_par_iter().map(run).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let parts: Vec<Result<Vec<Samples<K>>>> = (0..chunks).map(run).collect();
        let mut all = Vec::with_capacity(n);
        for p in parts {
            all.extend(p?);
        }
        Ok(std::array::from_fn(|k| estimate(&all, k)))
    }
}

struct Samples<const K: usize> {
    stratum: usize,
    w: f64,
    f: [f64; K],
}

/// Self-normalized stratified estimate of component `k`.
fn estimate<const K: usize>(all: &[Samples<K>], k: usize) -> Estimate {
    let h = STRATA * STRATA;
    let sw: f64 = all.iter().map(|s| s.w).sum();
    let mean = all.iter().map(|s| s.w * s.f[k]).sum::<f64>() / sw;
    let mean_abs = all.iter().map(|s| s.w * s.f[k].abs()).sum::<f64>() / sw;
    let wbar = sw / all.len() as f64;
    // linearized ratio estimator, z = w (f − mean) / w̄, stratum by stratum
    let mut cnt = vec![0usize; h];
    let mut sum = vec![0.0; h];
    let mut sum2 = vec![0.0; h];
    for s in all {
        let z = s.w * (s.f[k] - mean) / wbar;
        cnt[s.stratum] += 1;
        sum[s.stratum] += z;
        sum2[s.stratum] += z * z;
    }
    let mut var = 0.0;
    let mut used = 0usize;
    for j in 0..h {
        if cnt[j] >= 2 {
            let nj = cnt[j] as f64;
            let m = sum[j] / nj;
            let vj = (sum2[j] / nj - m * m).max(0.0) * nj / (nj - 1.0);
            var += vj / nj;
            used += 1;
        }
    }
    let stderr = if used == h {
        var.sqrt() / h as f64
    } else {
        // too few samples per stratum: fall back to the unstratified formula
        let nn = all.len() as f64;
        let v = all.iter().map(|s| (s.w * (s.f[k] - mean) / wbar).powi(2)).sum::<f64>() / (nn - 1.0);
        (v / nn).sqrt()
    };
    Estimate {
        mean,
        stderr,
        mean_abs,
        n: all.len(),
    }
}

/// Base-manifold integrals by tensor quadrature on the chart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseIntegrals {
    pub area: f64,
    pub scal: f64,
    pub b_squared: f64,
}

/// Quadrature nodes per axis.
pub const QUADRATURE_NODES: usize = 256;

/// `∫ dν`, `∫ scal dν` and `∫ b² dν`: trapezoid rule on the periodic torus
/// (spectrally accurate) and midpoint rule in `θ` on the sphere.
pub fn base_integrals(model: &GeometryModel) -> Result<BaseIntegrals> {
    if !model.is_compact() {
        return Err(MagflowError::Refused("base integrals need a compact model".into()));
    }
    let m = QUADRATURE_NODES;
    let has_b = model.dim() == 2;
    let (mut area, mut scal, mut b2) = (0.0, 0.0, 0.0);
    for i in 0..m {
        for j in 0..m {
            let (x, cell) = match model.metric_kind() {
                Metric::Sphere => (
                    vec![PI * (i as f64 + 0.5) / m as f64, TAU * j as f64 / m as f64],
                    (PI / m as f64) * (TAU / m as f64),
                ),
                _ => (
                    vec![TAU * i as f64 / m as f64, TAU * j as f64 / m as f64],
                    (TAU / m as f64).powi(2),
                ),
            };
            if matches!(model.metric_kind(), Metric::Sphere) && x[0] < POLE_GUARD {
                continue;
            }
            let pg = model.at(&x)?;
            let dv = pg.g.determinant().sqrt() * cell;
            area += dv;
            scal += pg.scalar_curvature() * dv;
            if has_b {
                let (b, _) = model.b_and_db(&x)?;
                b2 += b * b * dv;
            }
        }
    }
    Ok(BaseIntegrals {
        area,
        scal,
        b_squared: b2,
    })
}

/// Measure-average of `Ric^Ω_s`.
pub fn integrate_ric(model: &GeometryModel, s: f64, n: usize, seed: u64) -> Result<Estimate> {
    check_samples(n, s)?;
    let sampler = LiouvilleSampler::new(model, seed)?;
    let [e] = sampler.average(n, |pg, d| Ok([magcurv::trace_in_basis(pg, &d.v, s, &pg.perp_basis(&d.v))]))?;
    Ok(e)
}

fn check_samples(n: usize, s: f64) -> Result<()> {
    if n < 1000 {
        return Err(contract(format!("need at least 1000 samples, got {n}")));
    }
    if !(s > 0.0) {
        return Err(contract("s must be positive"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eq9Report {
    /// Measure-average of `tr (R^Ω_s)_v`.
    pub lhs: Estimate,
    /// `s² ∫ scal dν / (n · area)` by quadrature.
    pub rhs: f64,
    pub gap: f64,
    /// `gap / lhs.stderr`.
    pub gap_in_stderr: f64,
    /// `gap / max(|rhs|, mean |tr R^Ω_s|)`.
    pub relative_gap: f64,
}

/// Fiber average of `tr R^Ω_s` against `s²·scal/n`: the field terms are odd
/// in `v` and average out.
pub fn verify_eq9(model: &GeometryModel, s: f64, n: usize, seed: u64) -> Result<Eq9Report> {
    check_samples(n, s)?;
    let sampler = LiouvilleSampler::new(model, seed)?;
    let [lhs] = sampler.average(n, |pg, d| Ok([magcurv::trace_r_omega(pg, &d.v, s)]))?;
    let base = base_integrals(model)?;
    let rhs = s * s * base.scal / (model.dim() as f64 * base.area);
    let gap = (lhs.mean - rhs).abs();
    Ok(Eq9Report {
        lhs,
        rhs,
        gap,
        gap_in_stderr: gap / lhs.stderr.max(f64::MIN_POSITIVE),
        relative_gap: gap / rhs.abs().max(lhs.mean_abs).max(f64::MIN_POSITIVE),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussBonnetReport {
    /// Measure-average of `K^{g,b}_s`.
    pub integral: Estimate,
    /// `(2π χ s² + ∫ b² dν) / area`.
    pub closed_form: f64,
    pub euler_characteristic: i32,
    pub area: f64,
    pub gap_in_stderr: f64,
}

/// Magnetic Gauss–Bonnet: the average of `s²K − s·db(iv) + b²` over `SM`.
pub fn gauss_bonnet_magnetic(model: &GeometryModel, s: f64, n: usize, seed: u64) -> Result<GaussBonnetReport> {
    if model.dim() != 2 {
        return Err(MagflowError::Unsupported("Gauss–Bonnet needs a surface".into()));
    }
    check_samples(n, s)?;
    let chi = model
        .euler_characteristic()
        .ok_or_else(|| MagflowError::Refused("Euler characteristic unknown for this model".into()))?;
    let sampler = LiouvilleSampler::new(model, seed)?;
    let [integral] = sampler.average(n, |pg, d| {
        let iv = pg.rotation() * &d.v;
        let (b, db) = model.b_and_db(&d.x)?;
        Ok([s * s * pg.sectional(&d.v, &iv) - s * db.dot(&iv) + b * b])
    })?;
    let base = base_integrals(model)?;
    let closed_form = (TAU * chi as f64 * s * s + base.b_squared) / base.area;
    Ok(GaussBonnetReport {
        integral,
        closed_form,
        euler_characteristic: chi,
        area: base.area,
        gap_in_stderr: (integral.mean - closed_form).abs() / integral.stderr.max(f64::MIN_POSITIVE),
    })
}
