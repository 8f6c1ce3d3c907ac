//! Model definitions read from TOML.
//!
//! ```toml
//! model = "torus"
//! conformal_expr = "0.1*sin(x)*sin(y)"
//! b_expr = "0.4 + 0.1*cos(y)"
//! backend = "analytic"
//! ```

use serde::{Deserialize, Serialize};

use super::{Backend, GeometryModel};
use crate::error::{contract, MagflowError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelName {
    #[serde(alias = "plane")]
    Torus,
    Sphere,
    Disk,
    Chn,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendName {
    #[default]
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub model: ModelName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curvature_k: Option<f64>,
    /// Surface field strength, `σ = b·ν_g`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_expr: Option<String>,
    /// Kähler coupling, `σ = λ⟨·, J·⟩`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// `φ` in the torus metric `e^{2φ}(dx² + dy²)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conformal_expr: Option<String>,
    /// Complex dimension of the ball (1 or 2).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complex_dim: Option<usize>,
    #[serde(default)]
    pub backend: BackendName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd_step: Option<f64>,
    /// Custom models: dimension, upper-triangular metric entries and
    /// 2-form entries `σ_ij` (`i < j`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<String>>,
}

impl ModelConfig {
    pub fn new(model: ModelName) -> Self {
        ModelConfig {
            model,
            curvature_k: None,
            b_expr: None,
            lambda: None,
            conformal_expr: None,
            complex_dim: None,
            backend: BackendName::Analytic,
            fd_step: None,
            dim: None,
            metric: None,
            sigma: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| toml_error(text, &e))
    }

    pub fn build(&self) -> Result<GeometryModel> {
        let k = self.curvature_k;
        let neg_k = |default: f64| -> Result<f64> {
            let k = k.unwrap_or(default);
            if k < 0.0 {
                Ok(k)
            } else {
                Err(contract(format!("curvature_k must be negative, got {k}")))
            }
        };
        let mut model = match self.model {
            ModelName::Torus => match &self.conformal_expr {
                Some(phi) => GeometryModel::conformal_torus(phi)?,
                None => GeometryModel::torus(),
            },
            ModelName::Sphere => GeometryModel::sphere(),
            ModelName::Disk => GeometryModel::disk(neg_k(-1.0)?),
            ModelName::Chn => {
                let m = self.complex_dim.unwrap_or(2);
                if !(1..=2).contains(&m) {
                    return Err(MagflowError::Unsupported(format!("complex dimension {m}")));
                }
                GeometryModel::ball(neg_k(-1.0)?, m)
            }
            ModelName::Custom => {
                let dim = self.dim.ok_or_else(|| contract("custom model needs 'dim'"))?;
                let entries = self
                    .metric
                    .as_ref()
                    .ok_or_else(|| contract("custom model needs 'metric'"))?;
                let refs: Vec<&str> = entries.iter().map(String::as_str).collect();
                GeometryModel::custom(dim, &refs)?
            }
        };
        if let Some(b) = &self.b_expr {
            model = model.with_b(b)?;
        }
        if let Some(l) = self.lambda {
            model = model.with_kahler(l)?;
        }
        if let Some(s) = &self.sigma {
            let refs: Vec<&str> = s.iter().map(String::as_str).collect();
            model = model.with_sigma(&refs)?;
        }
        if self.backend == BackendName::FiniteDifference {
            model = model.with_backend(Backend::FiniteDifference { step: self.fd_step });
        }
        Ok(model)
    }
}

/// Converts a TOML error into a parse error with line and column.
pub(crate) fn toml_error(text: &str, e: &toml::de::Error) -> MagflowError {
    let (line, column) = match e.span() {
        Some(span) => line_col(text, span.start),
        None => (1, 1),
    };
    MagflowError::Parse {
        line,
        column,
        message: e.message().to_string(),
    }
}

pub(crate) fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_conformal_torus() {
        let cfg = ModelConfig::from_toml(
            "model = \"torus\"\nconformal_expr = \"0.1*sin(x)*sin(y)\"\nb_expr = \"0.4 + 0.1*cos(y)\"\n",
        )
        .unwrap();
        let m = cfg.build().unwrap();
        let g = m.metric_at(&[1.0, 2.0]).unwrap();
        assert!((g[(0, 0)] - (0.2 * 1f64.sin() * 2f64.sin()).exp()).abs() < 1e-14);
    }

    #[test]
    fn reports_position_of_errors() {
        match ModelConfig::from_toml("model = \"torus\"\nbogus = 3\n") {
            Err(MagflowError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn finite_difference_backend_and_chn() {
        let mut cfg = ModelConfig::new(ModelName::Chn);
        cfg.lambda = Some(0.5);
        cfg.backend = BackendName::FiniteDifference;
        cfg.fd_step = Some(1e-4);
        let m = cfg.build().unwrap();
        assert_eq!(m.dim(), 4);
        assert_eq!(m.backend(), Backend::FiniteDifference { step: Some(1e-4) });
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ModelConfig::from_toml(&text).unwrap(), cfg);
    }
}
