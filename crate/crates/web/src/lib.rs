//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Three operations, all returning JSON strings: an orbit of a model given
//! as TOML, a curvature summary at one speed, and the Mañé critical value.

use magflow::flow::{integrate_orbit, PhasePoint, DEFAULT_TOL};
use magflow::geometry::ModelConfig;
use magflow::magcurv::flatness_defect;
use magflow::mane::mane_critical_value;
use magflow::MagflowError;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn js(e: MagflowError) -> JsError {
    JsError::new(&e.to_string())
}

/// Samples of `(t, x, v)` along the orbit through `x` in direction `dir`.
pub fn orbit_json(model_toml: &str, x: &[f64], dir: &[f64], s: f64, t_end: f64, samples: usize) -> Result<String, MagflowError> {
    let model = ModelConfig::from_toml(model_toml)?.build()?;
    let p0 = PhasePoint::new(&model, x, dir, s)?;
    let orbit = integrate_orbit(&model, &p0, t_end, DEFAULT_TOL)?;
    let n = model.dim();
    let points: Vec<_> = orbit
        .grid(samples.clamp(2, 20_000) - 1)
        .into_iter()
        .map(|t| {
            let y = orbit.state(t);
            json!({ "t": t, "x": &y[..n], "v": &y[n..2 * n] })
        })
        .collect();
    Ok(json!({
        "points": points,
        "t_end": orbit.t_end(),
        "speed_drift": orbit.speed_drift,
        "termination": orbit.termination(),
    })
    .to_string())
}

/// Mean magnetic sectional curvature at speed `s` and how far it is from
/// constant.
pub fn curvature_json(model_toml: &str, s: f64, samples: usize, seed: u64) -> Result<String, MagflowError> {
    let model = ModelConfig::from_toml(model_toml)?.build()?;
    let report = flatness_defect(&model, s, samples.clamp(1, 100_000), seed)?;
    Ok(serde_json::to_string(&report).expect("reports serialize"))
}

pub fn mane_json(k: f64, lambda: f64) -> Result<String, MagflowError> {
    let m = mane_critical_value(k, lambda, 20.0, 1e-6)?;
    Ok(serde_json::to_string(&m).expect("results serialize"))
}

#[wasm_bindgen]
pub fn orbit(model_toml: &str, x: Vec<f64>, dir: Vec<f64>, s: f64, t_end: f64, samples: usize) -> Result<String, JsError> {
    orbit_json(model_toml, &x, &dir, s, t_end, samples).map_err(js)
}

#[wasm_bindgen]
pub fn curvature(model_toml: &str, s: f64, samples: usize, seed: u64) -> Result<String, JsError> {
    curvature_json(model_toml, s, samples, seed).map_err(js)
}

#[wasm_bindgen]
pub fn mane(k: f64, lambda: f64) -> Result<String, JsError> {
    mane_json(k, lambda).map_err(js)
}
