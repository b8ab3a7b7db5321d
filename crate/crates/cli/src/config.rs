//! Run configuration files.
//!
//! A config is a flat TOML table. Only `model`, `payoff`, `x0` and `horizon`
//! (alias `T`) are required:
//!
//! ```toml
//! model = "tanh-drift"
//! payoff = "expm"
//! x0 = 0.5
//! T = 1.0
//!
//! [model_params]
//! beta = 0.5
//! ```
//!
//! | key                    | default                 |
//! |------------------------|-------------------------|
//! | `steps`                | 256                     |
//! | `paths`                | 100000                  |
//! | `seed`                 | 0                       |
//! | `engine`               | `engine1`               |
//! | `estimator`            | `all`                   |
//! | `survival`             | `conditional`           |
//! | `oracle`               | `analytic`              |
//! | `fd_step`              | `0.05 max(1, x0 - L)`   |
//! | `bel_entry_correction` | `true`                  |
//! | `convergence_steps`    | `[64, 128, 256, 512]`   |
//! | `strict`               | `false`                 |
//! | `threads`              | all cores               |
//! | `out`                  | `out`                   |
//! | `[pde]`                | `nx = 2000, nt = 2000`  |
//! | `[gate]`               | `sds = 3, rel = 0.02, order = [0.35, 0.75]` |

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use killsens::estimators::{estimator_by_id, DERIVATIVE_IDS};
use killsens::sampling::{engine_by_id, SurvivalMode};
use killsens::model::ModelError;
use killsens::{build_model, build_payoff, ParamTable, RunSpec, TimeGrid};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid `{key}`: {message}")]
    Invalid { key: &'static str, message: String },
}

impl ConfigError {
    pub fn from_model(e: ModelError) -> Self {
        invalid("model", e.to_string())
    }
}

fn invalid(key: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key, message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    #[default]
    Analytic,
    Pde,
    None,
}

impl OracleKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "analytic" => Some(Self::Analytic),
            "pde" => Some(Self::Pde),
            "none" => Some(Self::None),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeSettings {
    #[serde(default = "default_pde_nodes")]
    pub nx: usize,
    #[serde(default = "default_pde_nodes")]
    pub nt: usize,
}

impl Default for PdeSettings {
    fn default() -> Self {
        Self { nx: default_pde_nodes(), nt: default_pde_nodes() }
    }
}

/// Pass/fail thresholds applied under `--assert`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gate {
    /// Allowed error in standard errors.
    #[serde(default = "default_gate_sds")]
    pub sds: f64,
    /// Allowed error relative to `|oracle|`, added to the statistical part.
    #[serde(default = "default_gate_rel")]
    pub rel: f64,
    /// Admissible range of the fitted convergence order.
    #[serde(default = "default_order_range")]
    pub order: [f64; 2],
}

impl Default for Gate {
    fn default() -> Self {
        Self { sds: default_gate_sds(), rel: default_gate_rel(), order: default_order_range() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: String,
    pub payoff: String,
    pub x0: f64,
    #[serde(alias = "T")]
    pub horizon: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_paths")]
    pub paths: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_engine")]
    pub engine: String,
    #[serde(default = "default_estimator")]
    pub estimator: String,
    #[serde(default = "default_survival")]
    pub survival: String,
    #[serde(default)]
    pub oracle: OracleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd_step: Option<f64>,
    #[serde(default = "default_true")]
    pub bel_entry_correction: bool,
    #[serde(default = "default_sweep")]
    pub convergence_steps: Vec<usize>,
    #[serde(default)]
    pub strict: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub model_params: ParamTable,
    #[serde(default)]
    pub payoff_params: ParamTable,
    #[serde(default)]
    pub pde: PdeSettings,
    #[serde(default)]
    pub gate: Gate,
}

fn default_steps() -> usize {
    256
}
fn default_paths() -> u64 {
    100_000
}
fn default_engine() -> String {
    "engine1".into()
}
fn default_estimator() -> String {
    "all".into()
}
fn default_survival() -> String {
    "conditional".into()
}
fn default_true() -> bool {
    true
}
fn default_sweep() -> Vec<usize> {
    vec![64, 128, 256, 512]
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_pde_nodes() -> usize {
    2000
}
fn default_gate_sds() -> f64 {
    3.0
}
fn default_gate_rel() -> f64 {
    0.02
}
fn default_order_range() -> [f64; 2] {
    [0.35, 0.75]
}

impl RunConfig {
    /// A config with every optional key at its default.
    pub fn minimal(model: &str, payoff: &str, x0: f64, horizon: f64) -> Self {
        Self {
            model: model.into(),
            payoff: payoff.into(),
            x0,
            horizon,
            steps: default_steps(),
            paths: default_paths(),
            seed: 0,
            engine: default_engine(),
            estimator: default_estimator(),
            survival: default_survival(),
            oracle: OracleKind::default(),
            fd_step: None,
            bel_entry_correction: true,
            convergence_steps: default_sweep(),
            strict: false,
            threads: None,
            out: default_out(),
            model_params: ParamTable::new(),
            payoff_params: ParamTable::new(),
            pde: PdeSettings::default(),
            gate: Gate::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.message().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    /// The estimation inputs with the step count replaced by `steps`.
    pub fn spec_with_steps(&self, steps: usize) -> RunSpec {
        RunSpec {
            model: self.model.clone(),
            model_params: self.model_params.clone(),
            payoff: self.payoff.clone(),
            payoff_params: self.payoff_params.clone(),
            x0: self.x0,
            horizon: self.horizon,
            steps,
            paths: self.paths,
            seed: self.seed,
            engine: self.engine.clone(),
            survival: self.survival.clone(),
            fd_step: self.fd_step,
            bel_entry_correction: self.bel_entry_correction,
        }
    }

    pub fn spec(&self) -> RunSpec {
        self.spec_with_steps(self.steps)
    }

    /// Check registry ids, the domain and the numeric settings.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let model = build_model(&self.model, &self.model_params).map_err(|e| invalid("model", e.to_string()))?;
        let level = model.boundary();
        build_payoff(&self.payoff, &self.payoff_params, level).map_err(|e| invalid("payoff", e.to_string()))?;
        if !self.x0.is_finite() || self.x0 < level {
            return Err(invalid("x0", format!("x0 = {} violates the domain constraint x0 >= L = {level}", self.x0)));
        }
        TimeGrid::new(self.horizon, self.steps).map_err(|e| invalid("steps", e.to_string()))?;
        if self.paths == 0 {
            return Err(invalid("paths", "need at least one path"));
        }
        if engine_by_id(&self.engine).is_none() {
            return Err(invalid("engine", format!("unknown engine `{}`", self.engine)));
        }
        if SurvivalMode::from_id(&self.survival).is_none() {
            return Err(invalid("survival", format!("expected bernoulli, conditional or discrete, got `{}`", self.survival)));
        }
        if self.estimator != "all" {
            estimator_by_id(&self.estimator).map_err(|e| invalid("estimator", e.to_string()))?;
        }
        if let Some(h) = self.fd_step {
            if !(h > 0.0 && h.is_finite()) {
                return Err(invalid("fd_step", format!("must be positive, got {h}")));
            }
        }
        if self.convergence_steps.is_empty() || self.convergence_steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("convergence_steps", "n values must be nonempty and strictly increasing"));
        }
        for &n in &self.convergence_steps {
            TimeGrid::new(self.horizon, n).map_err(|e| invalid("convergence_steps", e.to_string()))?;
        }
        if self.threads == Some(0) {
            return Err(invalid("threads", "need at least one worker"));
        }
        if self.pde.nx < 8 || self.pde.nt < 1 {
            return Err(invalid("pde", "need nx >= 8 and nt >= 1"));
        }
        if self.oracle == OracleKind::Analytic && model.constant_coefficients().is_none() {
            return Err(invalid(
                "oracle",
                format!("the analytic oracle needs constant coefficients, use `pde` for `{}`", self.model),
            ));
        }
        if !(self.gate.sds >= 0.0 && self.gate.rel >= 0.0 && self.gate.order[0] <= self.gate.order[1]) {
            return Err(invalid("gate", "thresholds must be nonnegative with order[0] <= order[1]"));
        }
        Ok(())
    }

    /// Estimators a `deriv` run covers.
    pub fn derivative_selection(&self) -> Vec<&str> {
        if self.estimator == "all" {
            DERIVATIVE_IDS.to_vec()
        } else {
            vec![self.estimator.as_str()]
        }
    }
}

/// Read and validate a TOML config.
pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let cfg = RunConfig::from_toml(&text).map_err(|message| ConfigError::Parse { path: path.to_path_buf(), message })?;
    cfg.validate()?;
    Ok(cfg)
}
