//! Experiment records, TOML suites and CSV output.
//!
//! A suite lists experiments by kind with their parameters:
//!
//! ```toml
//! seed = 7
//!
//! [[experiment]]
//! id = "critical-speed"
//! kind = "mane"
//! k = -1.0
//! lambda = 1.0
//!
//! [[experiment]]
//! id = "green-disk"
//! kind = "green"
//! model = { model = "disk", b_expr = "0.6" }
//! s = 1.0
//! ```
//!
//! The JSON payload of a record depends only on its inputs; wall time is
//! kept in a separate metadata field that [`ExperimentRecord::payload_json`]
//! leaves out.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{contract, MagflowError, Result};
use crate::flow::{self, PhasePoint, DEFAULT_TOL};
use crate::geometry::{line_col, toml_error, ModelConfig};
use crate::geometry::{GeometryModel, Metric};
use crate::integrals;
use crate::jacobi;
use crate::linalg::Vector;
use crate::magcurv;
use crate::mane;
use crate::riccati::{self, AnosovOptions, GreenOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Curvature,
    Flow,
    Jacobi,
    Conjugate,
    Green,
    Anosov,
    HopfIntegral,
    Mane,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Curvature => "curvature",
            ExperimentKind::Flow => "flow",
            ExperimentKind::Jacobi => "jacobi",
            ExperimentKind::Conjugate => "conjugate",
            ExperimentKind::Green => "green",
            ExperimentKind::Anosov => "anosov",
            ExperimentKind::HopfIntegral => "hopf-integral",
            ExperimentKind::Mane => "mane",
        }
    }
}

/// One entry of a suite. `model` and the parameters are interpreted only
/// when the experiment runs, so a bad entry fails alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub id: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<toml::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(flatten)]
    pub params: toml::Table,
}

impl Experiment {
    pub fn new(id: &str, kind: ExperimentKind) -> Self {
        Experiment {
            id: id.to_string(),
            kind: kind.name().to_string(),
            model: None,
            seed: None,
            params: toml::Table::new(),
        }
    }

    pub fn with_model(mut self, cfg: &ModelConfig) -> Self {
        self.model = toml::Value::try_from(cfg).ok();
        self
    }

    pub fn with_param<V: Into<toml::Value>>(mut self, key: &str, value: V) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Suite {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub experiment: Vec<Experiment>,
}

impl Suite {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| toml_error(text, &e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub kind: String,
    pub message: String,
    pub usage: bool,
}

impl From<&MagflowError> for ErrorInfo {
    fn from(e: &MagflowError) -> Self {
        ErrorInfo {
            kind: e.kind().to_string(),
            message: e.to_string(),
            usage: e.is_usage(),
        }
    }
}

/// Rows of numbers for CSV output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub id: String,
    pub kind: String,
    pub version: String,
    pub model: Option<ModelConfig>,
    pub params: Value,
    pub seed: u64,
    pub status: Status,
    pub outputs: Value,
    pub error: Option<ErrorInfo>,
    pub table: Option<Table>,
    pub metadata: Metadata,
}

impl ExperimentRecord {
    /// Deterministic JSON of everything except the metadata.
    pub fn payload_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("records serialize");
        if let Value::Object(m) = &mut v {
            m.remove("metadata");
        }
        serde_json::to_string_pretty(&v).expect("records serialize")
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }
}

fn params_of<T: DeserializeOwned>(table: &toml::Table) -> Result<T> {
    toml::Value::Table(table.clone())
        .try_into()
        .map_err(|e: toml::de::Error| contract(format!("bad parameters: {}", e.message())))
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("outputs serialize")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrbitParams {
    pub s: f64,
    pub x: Option<Vec<f64>>,
    pub dir: Option<Vec<f64>>,
    pub t_end: f64,
    pub tol: f64,
    /// Rows of the CSV trajectory.
    pub samples: usize,
}

impl Default for OrbitParams {
    fn default() -> Self {
        OrbitParams {
            s: 1.0,
            x: None,
            dir: None,
            t_end: 10.0,
            tol: DEFAULT_TOL,
            samples: 200,
        }
    }
}

/// Canonical interior starting point of a model's chart.
pub fn default_point(model: &GeometryModel) -> Vec<f64> {
    match model.metric_kind() {
        Metric::Sphere => vec![std::f64::consts::FRAC_PI_2, 0.0],
        _ => vec![0.0; model.dim()],
    }
}

/// `e₁`, except on the sphere where `∂φ` keeps the orbit on the equator,
/// away from the singular poles of the chart.
pub fn default_direction(model: &GeometryModel) -> Vec<f64> {
    let mut d = vec![0.0; model.dim()];
    match model.metric_kind() {
        Metric::Sphere => d[1] = 1.0,
        _ => d[0] = 1.0,
    }
    d
}

fn start(model: &GeometryModel, x: &Option<Vec<f64>>, dir: &Option<Vec<f64>>, s: f64) -> Result<PhasePoint> {
    let x = x.clone().unwrap_or_else(|| default_point(model));
    let dir = dir.clone().unwrap_or_else(|| default_direction(model));
    PhasePoint::new(model, &x, &dir, s)
}

fn run_flow(model: &GeometryModel, table: &toml::Table) -> Result<(Value, Option<Table>)> {
    let p: OrbitParams = params_of(table)?;
    let p0 = start(model, &p.x, &p.dir, p.s)?;
    let orbit = flow::integrate_orbit(model, &p0, p.t_end, p.tol)?;
    let n = model.dim();
    let mut columns = vec!["t".to_string()];
    columns.extend((1..=n).map(|i| format!("x{i}")));
    columns.extend((1..=n).map(|i| format!("v{i}")));
    columns.push("speed_drift".into());
    let mut rows = Vec::new();
    for t in orbit.grid(p.samples.max(1)) {
        let y = orbit.state(t);
        let g = model.metric_at(&y[..n])?;
        let speed = crate::linalg::norm(&g, &Vector::from_column_slice(&y[n..2 * n]));
        let mut row = vec![t];
        row.extend_from_slice(&y[..2 * n]);
        row.push((speed - p.s).abs());
        rows.push(row);
    }
    let quality = flow::frame_quality(model, &orbit)?;
    let out = json!({
        "start": p0,
        "end": orbit.phase_point(orbit.t_end()),
        "t_end": orbit.t_end(),
        "termination": orbit.termination(),
        "speed_drift": orbit.speed_drift,
        "equation_residual": flow::orbit_residual(model, &orbit)?,
        "frame": quality,
        "steps": orbit.sol.stats,
    });
    Ok((out, Some(Table { columns, rows })))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurvatureParams {
    pub s: f64,
    pub samples: usize,
}

impl Default for CurvatureParams {
    fn default() -> Self {
        CurvatureParams { s: 1.0, samples: 1000 }
    }
}

fn run_curvature(model: &GeometryModel, table: &toml::Table, seed: u64) -> Result<(Value, Option<Table>)> {
    let p: CurvatureParams = params_of(table)?;
    let flat = magcurv::flatness_defect(model, p.s, p.samples, seed)?;
    let samples = magcurv::sample_curvature(model, p.s, p.samples, seed)?;
    let mut out = json!({ "flatness": flat });
    // closed forms where the model has one
    if let (Some(k), Some(lambda)) = (model.curvature_k(), model.kahler_lambda()) {
        let mut worst: f64 = 0.0;
        for c in &samples {
            let pg = model.at_first_order(&c.x)?;
            let j = model.complex_structure(&c.x)?.expect("Kähler models carry J");
            let (v, w) = (Vector::from_vec(c.v.clone()), Vector::from_vec(c.w.clone()));
            let cc = pg.inner(&v, &(&j * &w));
            worst = worst.max((c.sec - magcurv::kahler_sec_closed_form(k, lambda, p.s, cc)).abs());
        }
        out["kahler_closed_form_gap"] = json!(worst);
    } else if model.dim() == 2 {
        let mut worst: f64 = 0.0;
        for c in &samples {
            let v = Vector::from_vec(c.v.clone());
            let k = magcurv::gaussian_magnetic_curvature(model, &c.x, &v, p.s)?;
            worst = worst.max((c.sec - k).abs());
        }
        out["gaussian_formula_gap"] = json!(worst);
    }
    let rows = samples.iter().map(|c| vec![c.s, c.sec, c.ric]).collect();
    Ok((
        out,
        Some(Table {
            columns: vec!["s".into(), "sec".into(), "ric".into()],
            rows,
        }),
    ))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JacobiParams {
    pub s: f64,
    pub fields: usize,
    pub t_end: f64,
    pub tol: f64,
}

impl Default for JacobiParams {
    fn default() -> Self {
        JacobiParams {
            s: 1.0,
            fields: 20,
            t_end: 10.0,
            tol: DEFAULT_TOL,
        }
    }
}

/// Reduction residuals of random normal Jacobi fields on random orbits.
pub fn jacobi_residuals(model: &GeometryModel, p: &JacobiParams, seed: u64) -> Result<Vec<jacobi::ReductionResidual>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jobs = Vec::with_capacity(p.fields);
    for _ in 0..p.fields {
        let p0 = flow::random_phase_point(model, p.s, &mut rng)?;
        let (j0, k0) = jacobi::random_normal_data(model, &p0, &mut rng)?;
        jobs.push((p0, j0, k0));
    }
    let run = |(p0, j0, k0): &(PhasePoint, Vec<f64>, Vec<f64>)| {
        jacobi::proposition31_residual(model, p0, j0, k0, p.t_end, p.tol)
    };
    #[cfg(feature = "parallel")]
    let out: Vec<Result<_>> = {
        use rayon::prelude::*;
        jobs.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let out: Vec<Result<_>> = jobs.iter().map(run).collect();
    out.into_iter().collect()
}

fn run_jacobi(model: &GeometryModel, table: &toml::Table, seed: u64) -> Result<(Value, Option<Table>)> {
    let p: JacobiParams = params_of(table)?;
    let res = jacobi_residuals(model, &p, seed)?;
    let worst = res.iter().map(|r| r.relative).fold(0.0, f64::max);
    let rows = res
        .iter()
        .enumerate()
        .map(|(i, r)| vec![i as f64, r.t_end, r.max_residual, r.stencil_residual, r.max_perp_norm, r.relative])
        .collect();
    Ok((
        json!({ "max_relative_residual": worst, "fields": res }),
        Some(Table {
            columns: ["field", "t_end", "max_residual", "stencil_residual", "max_perp_norm", "relative"]
                .map(String::from)
                .to_vec(),
            rows,
        }),
    ))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConjugateParams {
    pub s: f64,
    pub x: Option<Vec<f64>>,
    pub dir: Option<Vec<f64>>,
    /// Random orbits to search instead of the single given one.
    pub orbits: Option<usize>,
    pub t_max: f64,
    pub tol: f64,
}

impl Default for ConjugateParams {
    fn default() -> Self {
        ConjugateParams {
            s: 1.0,
            x: None,
            dir: None,
            orbits: None,
            t_max: 10.0,
            tol: DEFAULT_TOL,
        }
    }
}

fn run_conjugate(model: &GeometryModel, table: &toml::Table, seed: u64) -> Result<(Value, Option<Table>)> {
    let p: ConjugateParams = params_of(table)?;
    let starts = match p.orbits {
        Some(k) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..k)
                .map(|_| flow::random_phase_point(model, p.s, &mut rng))
                .collect::<Result<Vec<_>>>()?
        }
        None => vec![start(model, &p.x, &p.dir, p.s)?],
    };
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for (i, p0) in starts.iter().enumerate() {
        let r = jacobi::detect_conjugate_points(model, p0, p.t_max, p.tol)?;
        for c in &r.points {
            rows.push(vec![i as f64, c.t, c.multiplicity as f64, c.grazing as u8 as f64]);
        }
        reports.push(json!({ "orbit_id": i, "start": p0, "report": r }));
    }
    Ok((
        json!({ "orbits": reports }),
        Some(Table {
            columns: ["orbit", "t", "multiplicity", "grazing"].map(String::from).to_vec(),
            rows,
        }),
    ))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GreenParams {
    pub s: f64,
    pub x: Option<Vec<f64>>,
    pub dir: Option<Vec<f64>>,
    pub t_max: f64,
    pub tol_conv: f64,
    pub tol: f64,
}

impl Default for GreenParams {
    fn default() -> Self {
        let d = GreenOptions::default();
        GreenParams {
            s: 1.0,
            x: None,
            dir: None,
            t_max: d.t_max,
            tol_conv: d.tol_conv,
            tol: d.tol,
        }
    }
}

fn flatten(prefix: &str, rows: &[Vec<f64>], columns: &mut Vec<String>, row: &mut Vec<f64>) {
    for (i, r) in rows.iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            columns.push(format!("{prefix}_{}{}", i + 1, j + 1));
            row.push(*v);
        }
    }
}

fn run_green(model: &GeometryModel, table: &toml::Table) -> Result<(Value, Option<Table>)> {
    let p: GreenParams = params_of(table)?;
    let p0 = start(model, &p.x, &p.dir, p.s)?;
    let opts = GreenOptions {
        t_max: p.t_max,
        tol_conv: p.tol_conv,
        t_first: GreenOptions::default().t_first,
        tol: p.tol,
    };
    let g = riccati::green_bundle(model, &p0, &opts)?;
    let mut columns = Vec::new();
    let mut row = Vec::new();
    flatten("S_plus", &g.s_plus, &mut columns, &mut row);
    flatten("S_minus", &g.s_minus, &mut columns, &mut row);
    let out = json!({
        "orbit_id": 0,
        "start": p0,
        "S_plus": g.s_plus,
        "S_minus": g.s_minus,
        "monotone": g.monotone,
        "bounded": g.bounded,
        "margins": {
            "monotonicity": g.monotonicity_margin,
            "boundedness": g.boundedness_margin,
        },
        "convergence": { "plus": g.plus, "minus": g.minus },
        "small_t_defect": g.small_t_defect,
        "symmetry_defect": g.symmetry_defect,
        "history_plus": g.history_plus,
        "history_minus": g.history_minus,
    });
    Ok((out, Some(Table { columns, rows: vec![row] })))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnosovParams {
    pub s: f64,
    pub orbits: usize,
    pub t: f64,
    pub pad: f64,
    pub samples: usize,
    pub tol: f64,
}

impl Default for AnosovParams {
    fn default() -> Self {
        let d = AnosovOptions::default();
        AnosovParams {
            s: 1.0,
            orbits: 20,
            t: d.t,
            pad: d.pad,
            samples: d.samples,
            tol: d.tol,
        }
    }
}

/// Anosov certificate on `orbits` sampled orbits.
pub fn anosov_for(model: &GeometryModel, p: &AnosovParams, seed: u64) -> Result<riccati::AnosovReport> {
    let centres = riccati::sample_centres(model, p.s, p.orbits, seed)?;
    let opts = AnosovOptions {
        t: p.t,
        pad: p.pad,
        samples: p.samples,
        seed,
        tol: p.tol,
        ..AnosovOptions::default()
    };
    riccati::anosov_certificate(model, p.s, &centres, &opts)
}

fn run_anosov(model: &GeometryModel, table: &toml::Table, seed: u64) -> Result<(Value, Option<Table>)> {
    let p: AnosovParams = params_of(table)?;
    let r = anosov_for(model, &p, seed)?;
    let rows = r
        .orbits
        .iter()
        .map(|o| {
            let m = &o.margins;
            vec![
                o.orbit_id as f64,
                o.rate_plus,
                o.rate_minus,
                m.u_norm,
                m.u_plus,
                m.u_minus,
                m.y_plus,
                m.y_minus,
            ]
        })
        .collect();
    Ok((
        to_json(&r),
        Some(Table {
            columns: [
                "orbit_id",
                "rate_plus",
                "rate_minus",
                "margin_u_norm",
                "margin_u_plus",
                "margin_u_minus",
                "margin_y_plus",
                "margin_y_minus",
            ]
            .map(String::from)
            .to_vec(),
            rows,
        }),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Quantity {
    #[default]
    Ric,
    TraceR,
    GaussBonnet,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HopfParams {
    pub s: f64,
    pub samples: usize,
    pub quantity: Quantity,
}

impl Default for HopfParams {
    fn default() -> Self {
        HopfParams {
            s: 1.0,
            samples: 100_000,
            quantity: Quantity::Ric,
        }
    }
}

fn run_hopf(model: &GeometryModel, table: &toml::Table, seed: u64) -> Result<(Value, Option<Table>)> {
    let p: HopfParams = params_of(table)?;
    let mut out = match p.quantity {
        Quantity::Ric => to_json(&integrals::integrate_ric(model, p.s, p.samples, seed)?),
        Quantity::TraceR => to_json(&integrals::verify_eq9(model, p.s, p.samples, seed)?),
        Quantity::GaussBonnet => to_json(&integrals::gauss_bonnet_magnetic(model, p.s, p.samples, seed)?),
    };
    out["normalization"] = json!("probability");
    Ok((out, None))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ManeParams {
    pub k: f64,
    pub lambda: f64,
    pub r_max: f64,
    pub tol: f64,
    /// Radii and speeds at which quadrature and closed-form actions are compared.
    pub radii: Vec<f64>,
    pub speeds: Vec<f64>,
}

impl Default for ManeParams {
    fn default() -> Self {
        ManeParams {
            k: -1.0,
            lambda: 1.0,
            r_max: 20.0,
            tol: 1e-4,
            radii: vec![0.5, 1.0, 2.0, 3.0],
            speeds: vec![0.5, 1.0, 1.5],
        }
    }
}

fn run_mane(table: &toml::Table) -> Result<(Value, Option<Table>)> {
    let p: ManeParams = params_of(table)?;
    let m = mane::mane_critical_value(p.k, p.lambda, p.r_max, p.tol)?;
    let theta = mane::PrimitiveForm::new(p.k, p.lambda, 1)?;
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for &r in &p.radii {
        for &s in &p.speeds {
            let c = mane::HyperbolicCircle {
                k: p.k,
                lambda: p.lambda,
                r,
                s,
                complex_dim: 1,
            };
            let a = mane::action(&theta, &c, s, mane::LOOP_NODES)?;
            let closed = mane::circle_action_closed_form(p.k, p.lambda, r, s);
            worst = worst.max((a.value - closed).abs());
            rows.push(vec![r, s, a.value, closed, a.error_estimate]);
        }
    }
    let mut out = to_json(&m);
    out["expected_s0"] = json!(p.lambda.abs() / (-p.k).sqrt());
    out["action_gap"] = json!(worst);
    Ok((
        out,
        Some(Table {
            columns: ["r", "s", "action", "closed_form", "quadrature_error"].map(String::from).to_vec(),
            rows,
        }),
    ))
}

fn execute(exp: &Experiment, seed: u64) -> Result<(Option<ModelConfig>, Value, Option<Table>)> {
    let kind: ExperimentKind = toml::Value::String(exp.kind.clone())
        .try_into()
        .map_err(|_| MagflowError::Unsupported(format!("unknown experiment kind '{}'", exp.kind)))?;
    let cfg = match &exp.model {
        Some(v) => Some(
            ModelConfig::deserialize(v.clone())
                .map_err(|e| contract(format!("model: {}", e.message())))?,
        ),
        None => None,
    };
    if kind == ExperimentKind::Mane {
        let (v, t) = run_mane(&exp.params)?;
        return Ok((cfg, v, t));
    }
    let model = cfg
        .as_ref()
        .ok_or_else(|| contract(format!("experiment '{}' needs a model", exp.id)))?
        .build()?;
    let (v, t) = match kind {
        ExperimentKind::Curvature => run_curvature(&model, &exp.params, seed)?,
        ExperimentKind::Flow => run_flow(&model, &exp.params)?,
        ExperimentKind::Jacobi => run_jacobi(&model, &exp.params, seed)?,
        ExperimentKind::Conjugate => run_conjugate(&model, &exp.params, seed)?,
        ExperimentKind::Green => run_green(&model, &exp.params)?,
        ExperimentKind::Anosov => run_anosov(&model, &exp.params, seed)?,
        ExperimentKind::HopfIntegral => run_hopf(&model, &exp.params, seed)?,
        ExperimentKind::Mane => unreachable!(),
    };
    Ok((cfg, v, t))
}

/// Runs one experiment; failures become error records.
pub fn run_experiment(exp: &Experiment, default_seed: u64) -> ExperimentRecord {
    let seed = exp.seed.unwrap_or(default_seed);
    let clock = Instant::now();
    let result = execute(exp, seed);
    let wall = clock.elapsed().as_secs_f64();
    let params = serde_json::to_value(&exp.params).unwrap_or(Value::Null);
    let snapshot = exp
        .model
        .as_ref()
        .and_then(|v| ModelConfig::deserialize(v.clone()).ok());
    let (status, outputs, error, table, model) = match result {
        Ok((cfg, v, t)) => (Status::Ok, v, None, t, cfg),
        Err(e) => (Status::Error, Value::Null, Some(ErrorInfo::from(&e)), None, snapshot),
    };
    ExperimentRecord {
        id: exp.id.clone(),
        kind: exp.kind.clone(),
        version: crate::VERSION.to_string(),
        model,
        params,
        seed,
        status,
        outputs,
        error,
        table,
        metadata: Metadata { wall_time_s: wall },
    }
}

/// Runs every experiment of a suite, in order.
pub fn run_suite(suite: &Suite) -> Vec<ExperimentRecord> {
    let run = |e: &Experiment| run_experiment(e, suite.seed);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        suite.experiment.par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        suite.experiment.iter().map(run).collect()
    }
}

/// Reads and runs a suite file.
pub fn run_suite_file(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let text = std::fs::read_to_string(path)?;
    Ok(run_suite(&Suite::parse(&text)?))
}

/// Writes the record's table as CSV with 17 significant digits.
pub fn emit_csv(record: &ExperimentRecord, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(record, file)
}

/// [`emit_csv`] into any writer.
pub fn write_csv<W: std::io::Write>(record: &ExperimentRecord, out: W) -> Result<()> {
    let table = record
        .table
        .as_ref()
        .ok_or_else(|| contract(format!("record '{}' has no tabular output", record.id)))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&table.columns).map_err(csv_error)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|v| format!("{v:.16e}"))).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> MagflowError {
    MagflowError::Io(e.to_string())
}

/// Writes `<id>.json` (payload), `<id>.meta.json` and, when the record
/// has a table, `<id>.csv` into `dir`.
pub fn write_record(record: &ExperimentRecord, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{}.json", record.id)), record.payload_json() + "\n")?;
    let meta = serde_json::to_string_pretty(&record.metadata).expect("metadata serializes");
    std::fs::write(dir.join(format!("{}.meta.json", record.id)), meta + "\n")?;
    if record.table.is_some() {
        emit_csv(record, &dir.join(format!("{}.csv", record.id)))?;
    }
    Ok(())
}

/// Line and column of a byte offset, for callers reporting their own
/// parse errors.
pub fn position(text: &str, offset: usize) -> (usize, usize) {
    line_col(text, offset)
}
