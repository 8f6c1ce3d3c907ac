//! Magnetic curvature operators `R^Ω_s`, `A^Ω`, `M^Ω_s = R^Ω_s + A^Ω` and
//! the derived sectional and Ricci curvatures.
//!
//! All operators act on `v^⊥` for a unit vector `v`:
//!
//! ```text
//! R^Ω_s(w) = s² R(w,v)v − s (∇_wΩ)(v) + (s/2)((∇_vΩ)(w) − ⟨(∇_vΩ)(w), v⟩ v)
//! A^Ω(w)   = ¾⟨w, Ωv⟩ Ωv − ¼ Ω²w − ¼⟨Ωw, Ωv⟩ v
//! ```

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{contract, MagflowError, Result};
use crate::geometry::{GeometryModel, Metric, PointGeometry};
use crate::linalg::{self, Matrix, Vector};

/// Tolerance on the unit-length and orthogonality preconditions.
const CONTRACT_TOL: f64 = 1e-8;

fn check_unit(pg: &PointGeometry, v: &Vector) -> Result<()> {
    let n = pg.norm(v);
    if (n - 1.0).abs() > CONTRACT_TOL {
        return Err(contract(format!("expected a unit vector, got norm {n}")));
    }
    Ok(())
}

fn check_pair(pg: &PointGeometry, v: &Vector, w: &Vector) -> Result<()> {
    check_unit(pg, v)?;
    let d = pg.inner(v, w);
    if d.abs() > CONTRACT_TOL * pg.norm(w).max(1.0) {
        return Err(contract(format!("w is not orthogonal to v (⟨v,w⟩ = {d:.3e})")));
    }
    Ok(())
}

/// `(R^Ω_s)_v(w)` without precondition checks.
pub fn r_omega_unchecked(pg: &PointGeometry, v: &Vector, w: &Vector, s: f64) -> Vector {
    let riem = pg.riemann(w, v, v);
    let nw = pg.nabla_omega_dir(w) * v;
    let nv = pg.nabla_omega_dir(v) * w;
    let nv_t = pg.inner(&nv, v);
    riem * (s * s) - nw * s + (nv - v * nv_t) * (0.5 * s)
}

/// `(A^Ω)_v(w)` without precondition checks.
pub fn a_omega_unchecked(pg: &PointGeometry, v: &Vector, w: &Vector) -> Vector {
    let om = &pg.omega;
    let ov = om * v;
    let ow = om * w;
    let oow = om * &ow;
    &ov * (0.75 * pg.inner(w, &ov)) - oow * 0.25 - v * (0.25 * pg.inner(&ow, &ov))
}

/// `(M^Ω_s)_v(w)` without precondition checks.
pub fn m_omega_unchecked(pg: &PointGeometry, v: &Vector, w: &Vector, s: f64) -> Vector {
    r_omega_unchecked(pg, v, w, s) + a_omega_unchecked(pg, v, w)
}

pub fn r_omega_s(pg: &PointGeometry, v: &Vector, w: &Vector, s: f64) -> Result<Vector> {
    check_pair(pg, v, w)?;
    Ok(r_omega_unchecked(pg, v, w, s))
}

pub fn a_omega(pg: &PointGeometry, v: &Vector, w: &Vector) -> Result<Vector> {
    check_pair(pg, v, w)?;
    Ok(a_omega_unchecked(pg, v, w))
}

pub fn m_omega_s(pg: &PointGeometry, v: &Vector, w: &Vector, s: f64) -> Result<Vector> {
    check_pair(pg, v, w)?;
    Ok(m_omega_unchecked(pg, v, w, s))
}

/// Magnetic sectional curvature `⟨M_v(w), w⟩` for orthonormal `v, w`.
pub fn sec_omega_s(pg: &PointGeometry, v: &Vector, w: &Vector, s: f64) -> Result<f64> {
    check_pair(pg, v, w)?;
    check_unit(pg, w)?;
    Ok(pg.inner(&m_omega_unchecked(pg, v, w, s), w))
}

/// Magnetic Ricci curvature: trace of `M_v` on `v^⊥`.
pub fn ric_omega_s(pg: &PointGeometry, v: &Vector, s: f64) -> Result<f64> {
    check_unit(pg, v)?;
    let basis = pg.perp_basis(v);
    Ok(trace_in_basis(pg, v, s, &basis))
}

/// Trace of `M_v` in a caller-supplied orthonormal basis of `v^⊥`.
pub fn trace_in_basis(pg: &PointGeometry, v: &Vector, s: f64, basis: &[Vector]) -> f64 {
    basis
        .iter()
        .map(|e| pg.inner(&m_omega_unchecked(pg, v, e, s), e))
        .sum()
}

/// Trace of `(R^Ω_s)_v` on `v^⊥`.
pub fn trace_r_omega(pg: &PointGeometry, v: &Vector, s: f64) -> f64 {
    pg.perp_basis(v)
        .iter()
        .map(|e| pg.inner(&r_omega_unchecked(pg, v, e, s), e))
        .sum()
}

/// Trace of `(A^Ω)_v` on `v^⊥`.
pub fn trace_a_omega(pg: &PointGeometry, v: &Vector) -> f64 {
    pg.perp_basis(v)
        .iter()
        .map(|e| pg.inner(&a_omega_unchecked(pg, v, e), e))
        .sum()
}

/// Matrix `A_ab = ⟨M_v(e_b), e_a⟩` of the curvature operator in an
/// orthonormal frame of `v^⊥`.
pub fn curvature_matrix(pg: &PointGeometry, v: &Vector, s: f64, frame: &[Vector]) -> Matrix {
    let m = frame.len();
    let images: Vec<Vector> = frame.iter().map(|e| m_omega_unchecked(pg, v, e, s)).collect();
    Matrix::from_fn(m, m, |a, b| pg.inner(&images[b], &frame[a]))
}

/// Gaussian magnetic curvature `s²K(x) − s·db(iv) + b(x)²` of a surface.
pub fn gaussian_magnetic_curvature(model: &GeometryModel, x: &[f64], v: &Vector, s: f64) -> Result<f64> {
    if model.dim() != 2 {
        return Err(MagflowError::Unsupported(
            "Gaussian magnetic curvature needs a surface".into(),
        ));
    }
    let pg = model.at(x)?;
    check_unit(&pg, v)?;
    let iv = pg.rotation() * v;
    let k = pg.sectional(v, &iv);
    let (b, db) = model.b_and_db(x)?;
    Ok(s * s * k - s * db.dot(&iv) + b * b)
}

/// Closed form `(s²k + λ²)/4 · (1 + 3c²)` on Kähler models, `c = ⟨v, Jw⟩`.
pub fn kahler_sec_closed_form(k: f64, lambda: f64, s: f64, c: f64) -> f64 {
    (s * s * k + lambda * lambda) / 4.0 * (1.0 + 3.0 * c * c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureSample {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub s: f64,
    pub sec: f64,
    pub ric: f64,
}

/// Samples a chart point away from the chart boundary.
pub fn sample_point<R: Rng>(model: &GeometryModel, rng: &mut R) -> Vec<f64> {
    let n = model.dim();
    match model.metric_kind() {
        Metric::Flat { .. } | Metric::Conformal { .. } => {
            (0..n).map(|_| rng.gen::<f64>() * std::f64::consts::TAU).collect()
        }
        Metric::Sphere => {
            let band = 0.05f64;
            let (lo, hi) = (band.cos(), -band.cos());
            let c: f64 = lo + (hi - lo) * rng.gen::<f64>();
            vec![c.acos(), rng.gen::<f64>() * std::f64::consts::TAU]
        }
        Metric::Disk { .. } | Metric::Ball { .. } => loop {
            let p: Vec<f64> = (0..n).map(|_| 1.6 * rng.gen::<f64>() - 0.8).collect();
            if p.iter().map(|c| c * c).sum::<f64>() < 0.64 {
                break p;
            }
        },
        Metric::Custom { .. } => (0..n).map(|_| rng.gen::<f64>() - 0.5).collect(),
    }
}

/// Uniform random unit vector of `(T_xM, g)`.
pub fn random_unit<R: Rng>(pg: &PointGeometry, rng: &mut R) -> Vector {
    let n = pg.dim();
    let frame = linalg::orthonormal_frame(&pg.g).expect("metric positive-definite");
    loop {
        let u = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let un = u.norm();
        if un > 1e-8 {
            return frame * (u / un);
        }
    }
}

/// Uniform random unit vector orthogonal to `v`.
pub fn random_unit_perp<R: Rng>(pg: &PointGeometry, v: &Vector, rng: &mut R) -> Vector {
    loop {
        let w = linalg::project_perp(&pg.g, v, &random_unit(pg, rng));
        let wn = pg.norm(&w);
        if wn > 1e-6 {
            return w / wn;
        }
    }
}

/// Pointwise defects of the magnetic-flatness conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatnessReport {
    pub s: f64,
    pub samples: usize,
    /// Sample mean of `sec^Ω_s`.
    pub mean_sec: f64,
    /// `max |sec^Ω_s − mean_sec|`.
    pub sec_spread: f64,
    /// `max ‖(∇_wΩ)(w)‖` over unit `w`.
    pub nabla_omega_defect: f64,
    /// `max ‖Ω²v + νv‖` with `ν` the mean of `‖Ωv‖²`.
    pub conformality_defect: f64,
    /// Mean of `‖Ωv‖`, the conformal factor.
    pub mean_omega_norm: f64,
}

impl FlatnessReport {
    pub fn max_defect(&self) -> f64 {
        self.sec_spread
            .max(self.nabla_omega_defect)
            .max(self.conformality_defect)
    }
}

/// Measures how far `(g, σ)` is from having constant magnetic sectional
/// curvature at level `s`, parallel `Ω` and conformal `Ω`.
pub fn flatness_defect(model: &GeometryModel, s: f64, sample_count: usize, seed: u64) -> Result<FlatnessReport> {
    if sample_count == 0 {
        return Err(contract("sample_count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut secs = Vec::with_capacity(sample_count);
    let mut nabla = 0.0f64;
    let mut conf = Vec::with_capacity(sample_count);
    for _ in 0..sample_count {
        let x = sample_point(model, &mut rng);
        let pg = model.at(&x)?;
        let v = random_unit(&pg, &mut rng);
        let w = random_unit_perp(&pg, &v, &mut rng);
        secs.push(pg.inner(&m_omega_unchecked(&pg, &v, &w, s), &w));
        let u = random_unit(&pg, &mut rng);
        nabla = nabla.max(pg.norm(&(pg.nabla_omega_dir(&u) * &u)));
        let ov = &pg.omega * &v;
        let oov = &pg.omega * &ov;
        conf.push((pg.inner(&ov, &ov), oov, v, pg));
    }
    let mean_sec = secs.iter().sum::<f64>() / secs.len() as f64;
    let sec_spread = secs.iter().fold(0.0f64, |a, x| a.max((x - mean_sec).abs()));
    let nu = conf.iter().map(|c| c.0).sum::<f64>() / conf.len() as f64;
    let conformality_defect = conf
        .iter()
        .fold(0.0f64, |a, (_, oov, v, pg)| a.max(pg.norm(&(oov + v * nu))));
    let mean_omega_norm = conf.iter().map(|c| c.0.sqrt()).sum::<f64>() / conf.len() as f64;
    Ok(FlatnessReport {
        s,
        samples: sample_count,
        mean_sec,
        sec_spread,
        nabla_omega_defect: nabla,
        conformality_defect,
        mean_omega_norm,
    })
}

/// Random curvature samples `(x, v, w, s, sec, ric)`.
pub fn sample_curvature(model: &GeometryModel, s: f64, count: usize, seed: u64) -> Result<Vec<CurvatureSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let x = sample_point(model, &mut rng);
        let pg = model.at(&x)?;
        let v = random_unit(&pg, &mut rng);
        let w = random_unit_perp(&pg, &v, &mut rng);
        let sec = pg.inner(&m_omega_unchecked(&pg, &v, &w, s), &w);
        let ric = trace_in_basis(&pg, &v, s, &pg.perp_basis(&v));
        out.push(CurvatureSample {
            x,
            v: v.iter().copied().collect(),
            w: w.iter().copied().collect(),
            s,
            sec,
            ric,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec(v: &[f64]) -> Vector {
        Vector::from_column_slice(v)
    }

    #[test]
    fn a_omega_constant_field_on_plane() {
        let pg = GeometryModel::torus().with_constant_b(2.0).at(&[0.0, 0.0]).unwrap();
        let (v, w) = (vec(&[1.0, 0.0]), vec(&[0.0, 1.0]));
        let a = a_omega(&pg, &v, &w).unwrap();
        assert!((a - &w * 4.0).norm() < 1e-14);
    }

    #[test]
    fn horocycle_level_is_flat() {
        let m = GeometryModel::disk(-1.0).with_constant_b(1.0);
        let pg = m.at(&[0.3, -0.5]).unwrap();
        let (v, w) = pg.orthonormal_pair(&[0.4, 1.0]);
        assert!(sec_omega_s(&pg, &v, &w, 1.0).unwrap().abs() < 1e-10);
        assert!(gaussian_magnetic_curvature(&m, &[0.3, -0.5], &v, 1.0).unwrap().abs() < 1e-10);
    }

    #[test]
    fn gaussian_formula_matches_operator() {
        let m = GeometryModel::conformal_torus("0.1*sin(x)*sin(y)")
            .unwrap()
            .with_b("0.4 + 0.1*cos(y) + 0.2*sin(x)")
            .unwrap();
        let x = [0.7, 2.1];
        let pg = m.at(&x).unwrap();
        let (v, _) = pg.orthonormal_pair(&[0.3, -0.8]);
        let iv = pg.rotation() * &v;
        for s in [0.3, 1.0, 2.5] {
            let a = sec_omega_s(&pg, &v, &iv, s).unwrap();
            let b = gaussian_magnetic_curvature(&m, &x, &v, s).unwrap();
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn preconditions_are_enforced() {
        let pg = GeometryModel::torus().at(&[0.0, 0.0]).unwrap();
        let v = vec(&[2.0, 0.0]);
        let w = vec(&[0.0, 1.0]);
        assert!(matches!(sec_omega_s(&pg, &v, &w, 1.0), Err(MagflowError::Contract(_))));
        let v = vec(&[1.0, 0.0]);
        let w = vec(&[0.5, 1.0]);
        assert!(r_omega_s(&pg, &v, &w, 1.0).is_err());
    }

    #[test]
    fn kahler_closed_form_values() {
        assert_eq!(kahler_sec_closed_form(-1.0, 1.0, 1.0, 0.3), 0.0);
        assert!((kahler_sec_closed_form(-1.0, 1.0, 0.5, 1.0) - 0.75).abs() < 1e-15);
        assert_eq!(kahler_sec_closed_form(-4.0, 2.0, 1.0, 0.0), 0.0);
    }

    #[test]
    fn nonconstant_field_has_nabla_defect() {
        let m = GeometryModel::torus().with_b("1 + 0.3*sin(x)").unwrap();
        let r = flatness_defect(&m, 1.0, 200, 3).unwrap();
        assert!(r.nabla_omega_defect >= 0.1);
        let flat = flatness_defect(&GeometryModel::torus(), 1.0, 50, 3).unwrap();
        assert!(flat.max_defect() <= 1e-10 && flat.mean_sec.abs() <= 1e-10);
    }
}
