//! Chart-based model manifolds carrying a magnetic 2-form.
//!
//! A [`GeometryModel`] evaluates, at a chart point, the metric `g_ij`, the
//! 2-form `σ_ij` and their derivatives (exactly through dual numbers or by
//! central differences), and packages the derived quantities in a
//! [`PointGeometry`]: inverse metric, Christoffel symbols, Riemann tensor,
//! Lorentz force `Ω = g⁻¹σ` and its covariant derivative.

mod config;

pub use config::{BackendName, ModelConfig, ModelName};
pub(crate) use config::{line_col, toml_error};

use nalgebra::{Const, U1};
use num_dual::Dual2SVec64;

use crate::error::{MagflowError, Result};
use crate::expr::Expr;
use crate::linalg::{self, Matrix, Vector};
use crate::Real;

/// Distance kept from the poles of the spherical chart.
pub const POLE_GUARD: f64 = 1e-3;

/// Metrics whose condition number exceeds this are rejected.
const MAX_CONDITION: f64 = 1e14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Backend {
    Analytic,
    /// Central differences; `step` overrides the default step sizes.
    FiniteDifference { step: Option<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    /// `δ_ij` on the periodic chart `[0, 2π)^n`.
    Flat { dim: usize },
    /// `e^{2φ} δ_ij` on the periodic square.
    Conformal { phi: Expr },
    /// Round unit sphere in `(θ, φ)`.
    Sphere,
    /// Poincaré disk of curvature `k < 0`.
    Disk { k: f64 },
    /// Complex hyperbolic ball of holomorphic curvature `k < 0` and complex
    /// dimension `m` (real dimension `2m`).
    Ball { k: f64, m: usize },
    /// Upper-triangular entries, row-major.
    Custom { dim: usize, entries: Vec<Expr> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Zero,
    /// `σ = b·ν_g` on a surface.
    Surface { b: Expr },
    /// `σ(v, w) = λ⟨v, Jw⟩`.
    Kahler { lambda: f64 },
    /// `σ_ij` for `i < j`, row-major.
    Custom { entries: Vec<Expr> },
}

/// Riemannian metric with a closed 2-form on a single chart.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryModel {
    name: String,
    dim: usize,
    metric: Metric,
    field: Field,
    backend: Backend,
}

/// Raw values and coordinate derivatives at a point.
struct Jet {
    g: Vec<f64>,
    dg: Vec<f64>,
    ddg: Option<Vec<f64>>,
    sigma: Vec<f64>,
    dsigma: Vec<f64>,
}

/// Variable names accepted in expressions: `x1 … xn`, plus `x, y` and
/// `theta, phi` on surfaces.
fn var_names(dim: usize) -> Vec<String> {
    let mut v: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
    if dim == 2 {
        v.extend(["x", "y", "theta", "phi"].iter().map(|s| s.to_string()));
    }
    v
}

fn parse_in(dim: usize, src: &str) -> Result<Expr> {
    let names = var_names(dim);
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    Expr::parse(src, &refs)
}

impl GeometryModel {
    fn new(name: &str, dim: usize, metric: Metric) -> Self {
        GeometryModel {
            name: name.to_string(),
            dim,
            metric,
            field: Field::Zero,
            backend: Backend::Analytic,
        }
    }

    /// Flat torus `ℝ²/2πℤ²` (also serves as the flat plane for local tests).
    pub fn torus() -> Self {
        Self::new("torus", 2, Metric::Flat { dim: 2 })
    }

    /// Torus with metric `e^{2φ}(dx² + dy²)`; `phi` is an expression in `x, y`.
    pub fn conformal_torus(phi: &str) -> Result<Self> {
        let phi = parse_in(2, phi)?;
        Ok(Self::new("torus", 2, Metric::Conformal { phi }))
    }

    pub fn sphere() -> Self {
        Self::new("sphere", 2, Metric::Sphere)
    }

    pub fn disk(k: f64) -> Self {
        assert!(k < 0.0, "disk curvature must be negative");
        Self::new("disk", 2, Metric::Disk { k })
    }

    /// Complex hyperbolic ball `CH^m` in real coordinates `(x1, y1, …)`.
    pub fn ball(k: f64, m: usize) -> Self {
        assert!(k < 0.0, "ball curvature must be negative");
        assert!((1..=2).contains(&m), "complex dimension must be 1 or 2");
        Self::new("chn", 2 * m, Metric::Ball { k, m })
    }

    /// Metric given by upper-triangular entries in variables `x1 … xn`
    /// (`x, y` are accepted in dimension 2).
    pub fn custom(dim: usize, entries: &[&str]) -> Result<Self> {
        if !(2..=4).contains(&dim) {
            return Err(MagflowError::Unsupported(format!("dimension {dim}")));
        }
        if entries.len() != dim * (dim + 1) / 2 {
            return Err(crate::error::contract(format!(
                "custom metric needs {} entries, got {}",
                dim * (dim + 1) / 2,
                entries.len()
            )));
        }
        let entries = entries
            .iter()
            .map(|e| parse_in(dim, e))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new("custom", dim, Metric::Custom { dim, entries }))
    }

    fn expr_args<T: Real>(&self, x: &[T]) -> Vec<T> {
        let mut args = x.to_vec();
        if self.dim == 2 {
            args.extend_from_slice(&[x[0], x[1], x[0], x[1]]);
        }
        args
    }

    /// Surface field `σ = b·ν_g` with `b` an expression in the chart
    /// coordinates (`x, y`, or `theta, phi` on the sphere).
    pub fn with_b(mut self, b: &str) -> Result<Self> {
        if self.dim != 2 {
            return Err(MagflowError::Unsupported("b-fields need a surface model".into()));
        }
        let b = parse_in(2, b)?;
        self.field = match b.as_constant() {
            Some(0.0) => Field::Zero,
            _ => Field::Surface { b },
        };
        Ok(self)
    }

    pub fn with_constant_b(mut self, b: f64) -> Self {
        assert_eq!(self.dim, 2, "b-fields need a surface model");
        self.field = if b == 0.0 {
            Field::Zero
        } else {
            Field::Surface {
                b: Expr::constant(b),
            }
        };
        self
    }

    /// Kähler field `σ = λ⟨·, J·⟩`; available on the disk and the ball.
    pub fn with_kahler(mut self, lambda: f64) -> Result<Self> {
        if self.standard_complex_structure().is_none() {
            return Err(MagflowError::Unsupported(format!(
                "model '{}' has no complex structure",
                self.name
            )));
        }
        self.field = if lambda == 0.0 {
            Field::Zero
        } else {
            Field::Kahler { lambda }
        };
        Ok(self)
    }

    /// Custom 2-form, entries `σ_ij` for `i < j` row-major.
    pub fn with_sigma(mut self, entries: &[&str]) -> Result<Self> {
        let n = self.dim;
        if entries.len() != n * (n - 1) / 2 {
            return Err(crate::error::contract(format!(
                "2-form needs {} entries, got {}",
                n * (n - 1) / 2,
                entries.len()
            )));
        }
        let entries = entries
            .iter()
            .map(|e| parse_in(n, e))
            .collect::<Result<Vec<_>>>()?;
        self.field = Field::Custom { entries };
        Ok(self)
    }

    pub fn with_backend(mut self, backend: Backend) -> Self {
        self.backend = backend;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric_kind(&self) -> &Metric {
        &self.metric
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn has_field(&self) -> bool {
        !matches!(self.field, Field::Zero)
    }

    /// Closed manifolds on which Liouville averages are defined.
    pub fn is_compact(&self) -> bool {
        matches!(self.metric, Metric::Flat { .. } | Metric::Conformal { .. } | Metric::Sphere)
    }

    /// Euler characteristic for the compact surface models.
    pub fn euler_characteristic(&self) -> Option<i32> {
        match self.metric {
            Metric::Flat { dim: 2 } | Metric::Conformal { .. } => Some(0),
            Metric::Sphere => Some(2),
            _ => None,
        }
    }

    /// Constant curvature `k` of the disk and ball models.
    pub fn curvature_k(&self) -> Option<f64> {
        match self.metric {
            Metric::Disk { k } | Metric::Ball { k, .. } => Some(k),
            Metric::Sphere => Some(1.0),
            Metric::Flat { .. } => Some(0.0),
            _ => None,
        }
    }

    pub fn kahler_lambda(&self) -> Option<f64> {
        match (&self.field, &self.metric) {
            (Field::Kahler { lambda }, _) => Some(*lambda),
            (Field::Zero, Metric::Ball { .. } | Metric::Disk { .. }) => Some(0.0),
            (Field::Surface { b }, Metric::Disk { .. }) => b.as_constant(),
            _ => None,
        }
    }

    /// Chart validity.
    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.dim || x.iter().any(|c| !c.is_finite()) {
            return false;
        }
        match self.metric {
            Metric::Sphere => x[0] > POLE_GUARD && x[0] < std::f64::consts::PI - POLE_GUARD,
            Metric::Disk { .. } | Metric::Ball { .. } => x.iter().map(|c| c * c).sum::<f64>() < 1.0,
            _ => true,
        }
    }

    fn check_domain(&self, x: &[f64]) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(MagflowError::Domain { point: x.to_vec() })
        }
    }

    /// Constant complex structure `J` with `J∂x = ∂y` in each complex pair;
    /// present where the chart coordinates are holomorphic.
    fn standard_complex_structure(&self) -> Option<Matrix> {
        match self.metric {
            Metric::Ball { .. } | Metric::Disk { .. } | Metric::Flat { dim: 2 } | Metric::Conformal { .. } => {
                Some(standard_j(self.dim))
            }
            _ => None,
        }
    }

    /// Complex structure at `x`: the constant `J` for holomorphic charts and
    /// the rotation by `+π/2` on any oriented surface.
    pub fn complex_structure(&self, x: &[f64]) -> Result<Option<Matrix>> {
        self.check_domain(x)?;
        if let Some(j) = self.standard_complex_structure() {
            return Ok(Some(j));
        }
        if self.dim == 2 {
            let g = self.metric_at(x)?;
            return Ok(Some(surface_rotation(&g)));
        }
        Ok(None)
    }

    // ---- generic evaluation -------------------------------------------------

    fn metric_generic<T: Real>(&self, x: &[T]) -> Vec<T> {
        let n = self.dim;
        let zero = T::from(0.0);
        let one = T::from(1.0);
        let mut g = vec![zero; n * n];
        match &self.metric {
            Metric::Flat { .. } => {
                for i in 0..n {
                    g[i * n + i] = one;
                }
            }
            Metric::Conformal { phi } => {
                let f = (phi.eval(&self.expr_args(x)) * T::from(2.0)).exp();
                for i in 0..n {
                    g[i * n + i] = f;
                }
            }
            Metric::Sphere => {
                g[0] = one;
                g[3] = x[0].sin().powi(2);
            }
            Metric::Disk { k } => {
                let q = one - (x[0] * x[0] + x[1] * x[1]);
                let f = T::from(-4.0 / k) / (q * q);
                g[0] = f;
                g[3] = f;
            }
            Metric::Ball { k, .. } => {
                let r2 = x.iter().fold(zero, |a, &c| a + c * c);
                let q = one - r2;
                let c = T::from(-4.0 / k) / (q * q);
                let ju = apply_j(x);
                for i in 0..n {
                    for j in 0..n {
                        let mut e = x[i] * x[j] + ju[i] * ju[j];
                        if i == j {
                            e += q;
                        }
                        g[i * n + j] = c * e;
                    }
                }
            }
            Metric::Custom { entries, .. } => {
                let args = self.expr_args(x);
                let mut idx = 0;
                for i in 0..n {
                    for j in i..n {
                        let e = entries[idx].eval(&args);
                        g[i * n + j] = e;
                        g[j * n + i] = e;
                        idx += 1;
                    }
                }
            }
        }
        g
    }

    fn sigma_generic<T: Real>(&self, x: &[T], g: &[T]) -> Vec<T> {
        let n = self.dim;
        let zero = T::from(0.0);
        let mut s = vec![zero; n * n];
        match &self.field {
            Field::Zero => {}
            Field::Surface { b } => {
                let det = g[0] * g[3] - g[1] * g[2];
                let f = b.eval(&self.expr_args(x)) * det.sqrt();
                s[1] = -f;
                s[2] = f;
            }
            Field::Kahler { lambda } => {
                // Σ = λ G J, with J e_{2a} = e_{2a+1}
                let l = T::from(*lambda);
                for i in 0..n {
                    for a in 0..n / 2 {
                        let (p, q) = (2 * a, 2 * a + 1);
                        // column p of GJ is G e_q, column q is -G e_p
                        s[i * n + p] = l * g[i * n + q];
                        s[i * n + q] = -(l * g[i * n + p]);
                    }
                }
            }
            Field::Custom { entries } => {
                let args = self.expr_args(x);
                let mut idx = 0;
                for i in 0..n {
                    for j in i + 1..n {
                        let e = entries[idx].eval(&args);
                        s[i * n + j] = e;
                        s[j * n + i] = -e;
                        idx += 1;
                    }
                }
            }
        }
        s
    }

    /// Field strength `b = σ_21 / √det g` on a surface.
    fn b_generic<T: Real>(&self, x: &[T]) -> T {
        let g = self.metric_generic(x);
        let s = self.sigma_generic(x, &g);
        let det = g[0] * g[3] - g[1] * g[2];
        s[2] / det.sqrt()
    }

    // ---- jets -----------------------------------------------------------------

    fn jet(&self, x: &[f64], second: bool) -> Jet {
        match self.backend {
            Backend::Analytic => match self.dim {
                2 => self.jet_dual::<2>(x),
                3 => self.jet_dual::<3>(x),
                4 => self.jet_dual::<4>(x),
                d => unreachable!("unsupported dimension {d}"),
            },
            Backend::FiniteDifference { step } => self.jet_fd(x, step, second),
        }
    }

    fn jet_dual<const N: usize>(&self, x: &[f64]) -> Jet {
        let xd: Vec<Dual2SVec64<N>> = (0..N)
            .map(|i| Dual2SVec64::<N>::from_re(x[i]).derivative(i))
            .collect();
        let g = self.metric_generic(&xd);
        let s = self.sigma_generic(&xd, &g);
        let nn = N * N;
        let mut jet = Jet {
            g: vec![0.0; nn],
            dg: vec![0.0; N * nn],
            ddg: Some(vec![0.0; N * N * nn]),
            sigma: vec![0.0; nn],
            dsigma: vec![0.0; N * nn],
        };
        let ddg = jet.ddg.as_mut().unwrap();
        for e in 0..nn {
            jet.g[e] = g[e].re;
            let d1 = g[e].v1.unwrap_generic(U1, Const::<N>);
            let d2 = g[e].v2.unwrap_generic(Const::<N>, Const::<N>);
            for k in 0..N {
                jet.dg[k * nn + e] = d1[k];
                for l in 0..N {
                    ddg[(k * N + l) * nn + e] = d2[(k, l)];
                }
            }
            jet.sigma[e] = s[e].re;
            let ds = s[e].v1.unwrap_generic(U1, Const::<N>);
            for k in 0..N {
                jet.dsigma[k * nn + e] = ds[k];
            }
        }
        jet
    }

    fn eval_f64(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let g = self.metric_generic(x);
        let s = self.sigma_generic(x, &g);
        (g, s)
    }

    fn jet_fd(&self, x: &[f64], step: Option<f64>, second: bool) -> Jet {
        let n = self.dim;
        let nn = n * n;
        let eps = f64::EPSILON;
        let (g, sigma) = self.eval_f64(x);
        let mut dg = vec![0.0; n * nn];
        let mut dsigma = vec![0.0; n * nn];
        let mut xp = x.to_vec();
        for k in 0..n {
            let h = step.unwrap_or(eps.cbrt()) * x[k].abs().max(1.0);
            xp[k] = x[k] + h;
            let (gp, sp) = self.eval_f64(&xp);
            xp[k] = x[k] - h;
            let (gm, sm) = self.eval_f64(&xp);
            xp[k] = x[k];
            for e in 0..nn {
                dg[k * nn + e] = (gp[e] - gm[e]) / (2.0 * h);
                dsigma[k * nn + e] = (sp[e] - sm[e]) / (2.0 * h);
            }
        }
        let ddg = second.then(|| {
            let mut ddg = vec![0.0; n * n * nn];
            let hs: Vec<f64> = (0..n)
                .map(|k| step.unwrap_or(eps.powf(0.25)) * x[k].abs().max(1.0))
                .collect();
            for k in 0..n {
                for l in k..n {
                    let mut acc = vec![0.0; nn];
                    for (sk, sl, w) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                        let mut y = x.to_vec();
                        y[k] += sk * hs[k];
                        y[l] += sl * hs[l];
                        let gy = self.metric_generic(&y);
                        for e in 0..nn {
                            acc[e] += w * gy[e];
                        }
                    }
                    for e in 0..nn {
                        let v = acc[e] / (4.0 * hs[k] * hs[l]);
                        ddg[(k * n + l) * nn + e] = v;
                        ddg[(l * n + k) * nn + e] = v;
                    }
                }
            }
            ddg
        });
        Jet {
            g,
            dg,
            ddg,
            sigma,
            dsigma,
        }
    }

    // ---- public evaluation ----------------------------------------------------

    /// Metric matrix `g_ij(x)`.
    pub fn metric_at(&self, x: &[f64]) -> Result<Matrix> {
        self.check_domain(x)?;
        let n = self.dim;
        Ok(Matrix::from_row_slice(n, n, &self.metric_generic(x)))
    }

    /// 2-form components `σ_ij(x)`.
    pub fn sigma_at(&self, x: &[f64]) -> Result<Matrix> {
        self.check_domain(x)?;
        let n = self.dim;
        let (g, s) = self.eval_f64(x);
        let _ = g;
        Ok(Matrix::from_row_slice(n, n, &s))
    }

    /// Field strength `b(x)` and its differential on a surface.
    pub fn b_and_db(&self, x: &[f64]) -> Result<(f64, Vector)> {
        if self.dim != 2 {
            return Err(MagflowError::Unsupported("field strength b needs a surface".into()));
        }
        self.check_domain(x)?;
        match self.backend {
            Backend::Analytic => {
                let xd: Vec<Dual2SVec64<2>> = (0..2)
                    .map(|i| Dual2SVec64::<2>::from_re(x[i]).derivative(i))
                    .collect();
                let b = self.b_generic(&xd);
                let d = b.v1.unwrap_generic(U1, Const::<2>);
                Ok((b.re, Vector::from_vec(vec![d[0], d[1]])))
            }
            Backend::FiniteDifference { step } => {
                let b = self.b_generic(x);
                let mut db = Vector::zeros(2);
                let mut y = x.to_vec();
                for k in 0..2 {
                    let h = step.unwrap_or(f64::EPSILON.cbrt()) * x[k].abs().max(1.0);
                    y[k] = x[k] + h;
                    let bp = self.b_generic(&y);
                    y[k] = x[k] - h;
                    let bm = self.b_generic(&y);
                    y[k] = x[k];
                    db[k] = (bp - bm) / (2.0 * h);
                }
                Ok((b, db))
            }
        }
    }

    /// Full pointwise geometry including the curvature tensor.
    pub fn at(&self, x: &[f64]) -> Result<PointGeometry> {
        self.point(x, true)
    }

    /// Pointwise geometry without curvature (cheaper with finite differences).
    pub fn at_first_order(&self, x: &[f64]) -> Result<PointGeometry> {
        self.point(x, false)
    }

    fn point(&self, x: &[f64], curvature: bool) -> Result<PointGeometry> {
        self.check_domain(x)?;
        let n = self.dim;
        let nn = n * n;
        let jet = self.jet(x, curvature);
        let g = Matrix::from_row_slice(n, n, &jet.g);
        let ev = linalg::sym_eigenvalues(&g);
        let (lo, hi) = (ev[0], ev[n - 1]);
        if lo <= 0.0 || hi / lo > MAX_CONDITION {
            return Err(MagflowError::SingularMetric {
                condition: if lo <= 0.0 { f64::INFINITY } else { hi / lo },
            });
        }
        let ginv = g.clone().try_inverse().ok_or(MagflowError::SingularMetric {
            condition: f64::INFINITY,
        })?;
        let dg_k = |k: usize| Matrix::from_row_slice(n, n, &jet.dg[k * nn..(k + 1) * nn]);

        // Γ^m_ij = ½ g^{ml}(∂_i g_lj + ∂_j g_li − ∂_l g_ij)
        let mut gamma = vec![0.0; n * nn];
        let first_kind = |i: usize, j: usize, l: usize| -> f64 {
            jet.dg[i * nn + l * n + j] + jet.dg[j * nn + l * n + i] - jet.dg[l * nn + i * n + j]
        };
        for i in 0..n {
            for j in 0..n {
                for m in 0..n {
                    let mut acc = 0.0;
                    for l in 0..n {
                        acc += ginv[(m, l)] * first_kind(i, j, l);
                    }
                    gamma[m * nn + i * n + j] = 0.5 * acc;
                }
            }
        }

        let sigma = Matrix::from_row_slice(n, n, &jet.sigma);
        let omega = &ginv * &sigma;
        let dginv: Vec<Matrix> = (0..n).map(|k| -(&ginv * dg_k(k) * &ginv)).collect();
        let mut nabla_omega = Vec::with_capacity(n);
        for k in 0..n {
            let dsig = Matrix::from_row_slice(n, n, &jet.dsigma[k * nn..(k + 1) * nn]);
            let d_omega = &dginv[k] * &sigma + &ginv * dsig;
            let mut m = d_omega;
            for i in 0..n {
                for j in 0..n {
                    let mut acc = 0.0;
                    for l in 0..n {
                        acc += gamma[i * nn + k * n + l] * omega[(l, j)];
                        acc -= gamma[l * nn + k * n + j] * omega[(i, l)];
                    }
                    m[(i, j)] += acc;
                }
            }
            nabla_omega.push(m);
        }

        let riemann = jet.ddg.as_ref().filter(|_| curvature).map(|ddg| {
            // ∂_k Γ^m_ij
            let mut dgamma = vec![0.0; n * n * nn];
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        for m in 0..n {
                            let mut acc = 0.0;
                            for l in 0..n {
                                let second = ddg[(k * n + i) * nn + l * n + j] + ddg[(k * n + j) * nn + l * n + i]
                                    - ddg[(k * n + l) * nn + i * n + j];
                                acc += dginv[k][(m, l)] * first_kind(i, j, l) + ginv[(m, l)] * second;
                            }
                            dgamma[k * n * nn + m * nn + i * n + j] = 0.5 * acc;
                        }
                    }
                }
            }
            let dg_at = |k: usize, m: usize, i: usize, j: usize| dgamma[k * n * nn + m * nn + i * n + j];
            let gm = |m: usize, i: usize, j: usize| gamma[m * nn + i * n + j];
            // R^l_kij = ∂_iΓ^l_jk − ∂_jΓ^l_ik + Γ^l_im Γ^m_jk − Γ^l_jm Γ^m_ik
            let mut r = vec![0.0; nn * nn];
            for l in 0..n {
                for k in 0..n {
                    for i in 0..n {
                        for j in 0..n {
                            let mut acc = dg_at(i, l, j, k) - dg_at(j, l, i, k);
                            for m in 0..n {
                                acc += gm(l, i, m) * gm(m, j, k) - gm(l, j, m) * gm(m, i, k);
                            }
                            r[((l * n + k) * n + i) * n + j] = acc;
                        }
                    }
                }
            }
            r
        });

        let closedness = {
            let ds = |k: usize, i: usize, j: usize| jet.dsigma[k * nn + i * n + j];
            let mut worst: f64 = 0.0;
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        worst = worst.max((ds(i, j, k) + ds(j, k, i) + ds(k, i, j)).abs());
                    }
                }
            }
            worst
        };

        Ok(PointGeometry {
            n,
            x: Vector::from_column_slice(x),
            g,
            ginv,
            gamma,
            sigma,
            omega,
            nabla_omega,
            riemann,
            closedness,
        })
    }

    // ---- spec-level operations ------------------------------------------------

    /// Lorentz force `Ω` with `σ(v, w) = ⟨v, Ωw⟩`.
    pub fn lorentz_force(&self, x: &[f64]) -> Result<Matrix> {
        Ok(self.at_first_order(x)?.omega)
    }

    /// Christoffel symbols, indexed `[k][i][j]` for `Γ^k_ij`.
    pub fn christoffels(&self, x: &[f64]) -> Result<Vec<Vec<Vec<f64>>>> {
        let pg = self.at_first_order(x)?;
        let n = self.dim;
        Ok((0..n)
            .map(|k| (0..n).map(|i| (0..n).map(|j| pg.christoffel(k, i, j)).collect()).collect())
            .collect())
    }

    /// `R(u, v)w`.
    pub fn riemann(&self, x: &[f64], u: &Vector, v: &Vector, w: &Vector) -> Result<Vector> {
        Ok(self.at(x)?.riemann(u, v, w))
    }

    /// `∇_u Ω`.
    pub fn nabla_omega(&self, x: &[f64], u: &Vector) -> Result<Matrix> {
        Ok(self.at_first_order(x)?.nabla_omega_dir(u))
    }

    /// Largest entry of `∇_k J` over `k`, for models with a complex structure.
    pub fn nabla_j_defect(&self, x: &[f64]) -> Result<Option<f64>> {
        let Some(j) = self.standard_complex_structure() else {
            return Ok(None);
        };
        let pg = self.at_first_order(x)?;
        let n = self.dim;
        let mut worst: f64 = 0.0;
        for k in 0..n {
            for a in 0..n {
                for b in 0..n {
                    let mut acc = 0.0;
                    for l in 0..n {
                        acc += pg.christoffel(a, k, l) * j[(l, b)] - pg.christoffel(l, k, b) * j[(a, l)];
                    }
                    worst = worst.max(acc.abs());
                }
            }
        }
        Ok(Some(worst))
    }
}

fn apply_j<T: Real>(u: &[T]) -> Vec<T> {
    let mut out = u.to_vec();
    for a in 0..u.len() / 2 {
        out[2 * a] = -u[2 * a + 1];
        out[2 * a + 1] = u[2 * a];
    }
    out
}

fn standard_j(n: usize) -> Matrix {
    let mut j = Matrix::zeros(n, n);
    for a in 0..n / 2 {
        j[(2 * a + 1, 2 * a)] = 1.0;
        j[(2 * a, 2 * a + 1)] = -1.0;
    }
    j
}

/// Rotation by `+π/2` on an oriented surface: `i = g⁻¹ √det g [[0, −1], [1, 0]]`.
fn surface_rotation(g: &Matrix) -> Matrix {
    let det = g.determinant();
    let ginv = g.clone().try_inverse().expect("metric invertible");
    ginv * Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]) * det.sqrt()
}

/// Geometry of a model at a single chart point.
#[derive(Debug, Clone)]
pub struct PointGeometry {
    pub n: usize,
    pub x: Vector,
    pub g: Matrix,
    pub ginv: Matrix,
    gamma: Vec<f64>,
    pub sigma: Matrix,
    pub omega: Matrix,
    nabla_omega: Vec<Matrix>,
    riemann: Option<Vec<f64>>,
    closedness: f64,
}

impl PointGeometry {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn inner(&self, a: &Vector, b: &Vector) -> f64 {
        linalg::inner(&self.g, a, b)
    }

    pub fn norm(&self, a: &Vector) -> f64 {
        linalg::norm(&self.g, a)
    }

    /// `Γ^k_ij`.
    pub fn christoffel(&self, k: usize, i: usize, j: usize) -> f64 {
        let n = self.n;
        self.gamma[k * n * n + i * n + j]
    }

    /// `Γ(u, w)^k = Γ^k_ij u^i w^j`.
    pub fn gamma_contract(&self, u: &[f64], w: &[f64]) -> Vector {
        let n = self.n;
        let mut out = Vector::zeros(n);
        for k in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                if u[i] == 0.0 {
                    continue;
                }
                for j in 0..n {
                    acc += self.gamma[k * n * n + i * n + j] * u[i] * w[j];
                }
            }
            out[k] = acc;
        }
        out
    }

    pub fn has_curvature(&self) -> bool {
        self.riemann.is_some()
    }

    /// `R(u, v)w`; panics if the point was evaluated without curvature.
    pub fn riemann(&self, u: &Vector, v: &Vector, w: &Vector) -> Vector {
        let r = self.riemann.as_ref().expect("curvature not evaluated at this point");
        let n = self.n;
        let mut out = Vector::zeros(n);
        for l in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        acc += r[((l * n + k) * n + i) * n + j] * w[k] * u[i] * v[j];
                    }
                }
            }
            out[l] = acc;
        }
        out
    }

    /// Sectional curvature of the plane spanned by `v, w`.
    pub fn sectional(&self, v: &Vector, w: &Vector) -> f64 {
        let num = self.inner(&self.riemann(w, v, v), w);
        let den = self.inner(v, v) * self.inner(w, w) - self.inner(v, w).powi(2);
        num / den
    }

    /// Scalar curvature.
    pub fn scalar_curvature(&self) -> f64 {
        let n = self.n;
        let r = self.riemann.as_ref().expect("curvature not evaluated at this point");
        // Ric_kj = R^i_kij, scal = g^{kj} Ric_kj
        let mut scal = 0.0;
        for k in 0..n {
            for j in 0..n {
                let mut ric = 0.0;
                for i in 0..n {
                    ric += r[((i * n + k) * n + i) * n + j];
                }
                scal += self.ginv[(k, j)] * ric;
            }
        }
        scal
    }

    /// `∇_u Ω`.
    pub fn nabla_omega_dir(&self, u: &Vector) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for (k, nk) in self.nabla_omega.iter().enumerate() {
            if u[k] != 0.0 {
                m += nk * u[k];
            }
        }
        m
    }

    /// Cyclic-sum residual of `dσ`.
    pub fn closedness_residual(&self) -> f64 {
        self.closedness
    }

    /// Largest entry of `gΩ + Ωᵀg`.
    pub fn skew_defect(&self) -> f64 {
        linalg::max_abs(&(&self.g * &self.omega + self.omega.transpose() * &self.g))
    }

    /// Unit vector along `dir` and the first vector of the deterministic
    /// orthonormal basis of its complement.
    pub fn orthonormal_pair(&self, dir: &[f64]) -> (Vector, Vector) {
        let v = Vector::from_column_slice(dir);
        let v = &v / self.norm(&v);
        let w = linalg::perp_basis(&self.g, &v).remove(0);
        (v, w)
    }

    /// Orthonormal basis of `v^⊥`.
    pub fn perp_basis(&self, v: &Vector) -> Vec<Vector> {
        linalg::perp_basis(&self.g, v)
    }

    /// Rotation by `+π/2` (surfaces only).
    pub fn rotation(&self) -> Matrix {
        assert_eq!(self.n, 2, "rotation needs a surface");
        surface_rotation(&self.g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn vec(v: &[f64]) -> Vector {
        Vector::from_column_slice(v)
    }

    #[test]
    fn flat_unit_field_is_ccw_rotation() {
        let m = GeometryModel::torus().with_constant_b(1.0);
        let om = m.lorentz_force(&[0.3, 1.0]).unwrap();
        let e2 = &om * vec(&[1.0, 0.0]);
        assert!((e2 - vec(&[0.0, 1.0])).norm() < 1e-15);
    }

    #[test]
    fn defining_identity_of_lorentz_force() {
        let m = GeometryModel::disk(-1.0).with_b("1 + 0.3*x*y").unwrap();
        let x = [0.2, -0.4];
        let pg = m.at(&x).unwrap();
        let (v, w) = (vec(&[0.3, -1.1]), vec(&[2.0, 0.7]));
        let lhs = (v.transpose() * &pg.sigma * &w)[0];
        assert!((lhs - pg.inner(&v, &(&pg.omega * &w))).abs() < 1e-12);
        assert!(pg.skew_defect() < 1e-10);
    }

    #[test]
    fn sphere_christoffel_closed_form() {
        let m = GeometryModel::sphere();
        let c = m.christoffels(&[PI / 3.0, 0.5]).unwrap();
        assert!((c[0][1][1] + 3f64.sqrt() / 4.0).abs() < 1e-14);
    }

    #[test]
    fn sphere_and_disk_sectional_curvature() {
        let s = GeometryModel::sphere().at(&[1.0, 2.0]).unwrap();
        assert!((s.sectional(&vec(&[1.0, 0.0]), &vec(&[0.0, 1.0])) - 1.0).abs() < 1e-12);
        let d = GeometryModel::disk(-1.0).at(&[0.3, 0.1]).unwrap();
        assert!((d.sectional(&vec(&[1.0, 0.0]), &vec(&[0.0, 1.0])) + 1.0).abs() < 1e-10);
        assert!((d.scalar_curvature() + 2.0).abs() < 1e-10);
    }

    #[test]
    fn backends_agree_on_disk() {
        let a = GeometryModel::disk(-1.0).with_constant_b(0.7);
        let f = a.clone().with_backend(Backend::FiniteDifference { step: None });
        let x = [0.3, 0.0];
        let (pa, pf) = (a.at(&x).unwrap(), f.at(&x).unwrap());
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    assert!((pa.christoffel(k, i, j) - pf.christoffel(k, i, j)).abs() < 1e-6);
                }
            }
        }
        let (u, v) = (vec(&[1.0, 0.2]), vec(&[-0.3, 1.0]));
        let ra = pa.riemann(&u, &v, &v);
        let rf = pf.riemann(&u, &v, &v);
        assert!((ra - rf).norm() < 1e-5);
    }

    #[test]
    fn area_form_is_parallel() {
        let m = GeometryModel::disk(-1.0).with_constant_b(1.0);
        let pg = m.at(&[0.4, -0.2]).unwrap();
        for k in 0..2 {
            let mut u = Vector::zeros(2);
            u[k] = 1.0;
            assert!(linalg::max_abs(&pg.nabla_omega_dir(&u)) < 1e-8);
        }
    }

    #[test]
    fn ball_is_kahler_and_closed() {
        let m = GeometryModel::ball(-1.0, 2).with_kahler(0.5).unwrap();
        let x = [0.1, -0.2, 0.3, 0.05];
        let pg = m.at(&x).unwrap();
        assert!(pg.closedness_residual() < 1e-12);
        assert!(m.nabla_j_defect(&x).unwrap().unwrap() < 1e-8);
        let j = m.complex_structure(&x).unwrap().unwrap();
        let gj = j.transpose() * &pg.g * &j;
        assert!((gj - &pg.g).norm() < 1e-12);
        // Ω = λJ
        assert!((&pg.omega - &j * 0.5).norm() < 1e-12);
    }

    #[test]
    fn outside_domain_is_an_error() {
        let m = GeometryModel::disk(-1.0);
        assert!(matches!(m.at(&[0.8, 0.8]), Err(MagflowError::Domain { .. })));
        let s = GeometryModel::sphere();
        assert!(s.at(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn custom_model_matches_builtin() {
        let c = GeometryModel::custom(2, &["4/(1-x^2-y^2)^2", "0", "4/(1-x^2-y^2)^2"])
            .unwrap()
            .with_b("0.5")
            .unwrap();
        let d = GeometryModel::disk(-1.0).with_constant_b(0.5);
        let x = [0.1, 0.25];
        let (pc, pd) = (c.at(&x).unwrap(), d.at(&x).unwrap());
        assert!((&pc.omega - &pd.omega).norm() < 1e-13);
        let u = vec(&[1.0, 0.0]);
        let v = vec(&[0.0, 1.0]);
        assert!((pc.sectional(&u, &v) - pd.sectional(&u, &v)).abs() < 1e-12);
    }
}
