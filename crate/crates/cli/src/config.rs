//! Scenario configuration: one JSON file describes a whole experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use snrlab_core::conventions::{FD_FIRST_STEP, FD_SECOND_STEP};
use snrlab_core::drift::{DriftKind, DriftModel, DriftProfile, Parametrization, ScalarFn};
use snrlab_core::filtering::Engine;
use snrlab_core::montecarlo::SamplePlan;
use snrlab_core::wiener::TimeGrid;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Zero,
    Deterministic,
    GaussChannel,
    Markov,
    PathFunctional,
}

/// Kind-specific parameters; which ones are required depends on `kind`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub variance: Option<f64>,
    pub truncate: Option<bool>,
    pub profile: Option<DriftProfile>,
    pub function: Option<ScalarFn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default)]
    pub params: ModelParams,
    #[serde(default)]
    pub parametrization: Parametrization,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_steps: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaGrid {
    pub start: f64,
    pub stop: f64,
    pub count: i64,
}

impl LambdaGrid {
    pub fn points(&self) -> Vec<f64> {
        let n = self.count.max(1) as usize;
        if n == 1 {
            return vec![self.start];
        }
        let h = (self.stop - self.start) / (n - 1) as f64;
        (0..n)
            .map(|k| if k + 1 == n { self.stop } else { self.start + k as f64 * h })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub lambda_grid: LambdaGrid,
    pub engine: Engine,
    pub n_paths: i64,
    pub seed: u64,
    #[serde(default)]
    pub antithetic: bool,
    #[serde(default = "default_fd_first")]
    pub fd_first_step: f64,
    #[serde(default = "default_fd_second")]
    pub fd_second_step: f64,
    pub outputs: Outputs,
}

fn default_fd_first() -> f64 {
    FD_FIRST_STEP
}

fn default_fd_second() -> f64 {
    FD_SECOND_STEP
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.n_paths <= 0 {
            return Err(invalid("n_paths must be positive"));
        }
        if self.grid.n_steps <= 0 {
            return Err(invalid("grid.n_steps must be positive"));
        }
        let g = &self.lambda_grid;
        if g.count <= 0 {
            return Err(invalid("lambda_grid.count must be positive"));
        }
        if !g.start.is_finite() || !g.stop.is_finite() || (g.count > 1 && g.stop <= g.start) {
            return Err(invalid("lambda_grid must be finite and increasing"));
        }
        match self.engine {
            Engine::Particle { particles: 0 } | Engine::Quadrature { nodes: 0 } => {
                return Err(invalid("engine size must be positive"))
            }
            _ => {}
        }
        if self.outputs.formats.is_empty() {
            return Err(invalid("outputs.formats must not be empty"));
        }
        for h in [self.fd_first_step, self.fd_second_step] {
            if !(h.is_finite() && h > 0.0) {
                return Err(invalid("finite-difference steps must be positive"));
            }
        }
        self.drift_model()?;
        Ok(())
    }

    pub fn drift_model(&self) -> Result<DriftModel, CliError> {
        let p = &self.model.params;
        let need_fn = || p.function.ok_or_else(|| invalid("model.params.function is required"));
        let kind = match self.model.kind {
            ModelKind::Zero => return Ok(DriftModel::zero()),
            ModelKind::Deterministic => DriftKind::Deterministic {
                profile: p.profile.ok_or_else(|| invalid("model.params.profile is required"))?,
            },
            ModelKind::GaussChannel => DriftKind::GaussChannel {
                variance: p.variance.ok_or_else(|| invalid("model.params.variance is required"))?,
                truncate: p.truncate.unwrap_or(false),
            },
            ModelKind::Markov => DriftKind::Markov { f: need_fn()? },
            ModelKind::PathFunctional => DriftKind::PathFunctional { g: need_fn()? },
        };
        DriftModel::new(kind, self.model.parametrization).map_err(|e| invalid(e.to_string()))
    }

    pub fn time_grid(&self) -> TimeGrid {
        TimeGrid::new(self.grid.n_steps as usize).expect("validated")
    }

    pub fn plan(&self) -> SamplePlan {
        SamplePlan::new(self.n_paths as usize, self.seed).antithetic(self.antithetic)
    }
}
