use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::admm::{AdmmParams, DEFAULT_EPSILON, DEFAULT_GAMMA, DEFAULT_LAMBDA_BOUND, DEFAULT_RHO0, DEFAULT_TAU};
use crate::opf::{SolverOptions, LOCAL_TOL, MAX_ITER};
use crate::partition::{DEFAULT_BETA_MINUS, DEFAULT_BETA_PLUS};

use super::SimError;

/// Link delay in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelayModel {
    Uniform { lo: f64, hi: f64 },
    Constant { value: f64 },
}

impl DelayModel {
    pub fn scaled(&self, factor: f64) -> Self {
        match *self {
            DelayModel::Uniform { lo, hi } => DelayModel::Uniform { lo: lo * factor, hi: hi * factor },
            DelayModel::Constant { value } => DelayModel::Constant { value: value * factor },
        }
    }

    pub fn upper_bound(&self) -> f64 {
        match *self {
            DelayModel::Uniform { hi, .. } => hi,
            DelayModel::Constant { value } => value,
        }
    }
}

/// Whether a delay is drawn once per pair of neighboring regions or afresh
/// for every message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DelaySampling {
    #[default]
    Link,
    Message,
}

/// Duration of one local solve in virtual seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
pub enum ComputeModel {
    Constant { seconds: f64 },
    PerRegion { seconds: Vec<f64> },
    /// Log-normal with the given mean and log-space standard deviation.
    Lognormal { mean: f64, sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub p: f64,
    pub delay: DelayModel,
    pub delay_sampling: DelaySampling,
    pub compute: ComputeModel,
    pub seed: u64,
    pub max_time: f64,
    pub max_iterations: usize,
    pub epsilon: f64,
    pub gamma: f64,
    pub tau: f64,
    pub rho0: f64,
    pub beta_minus: f64,
    pub beta_plus: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub local_tol: f64,
    pub local_max_iter: usize,
    /// Keep every committed state in memory (for equivalence checks).
    pub record_iterates: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            p: 1.0,
            delay: DelayModel::Uniform { lo: 0.003, hi: 0.005 },
            delay_sampling: DelaySampling::Link,
            compute: ComputeModel::Constant { seconds: 0.1 },
            seed: 0,
            max_time: 1e6,
            max_iterations: 500,
            epsilon: DEFAULT_EPSILON,
            gamma: DEFAULT_GAMMA,
            tau: DEFAULT_TAU,
            rho0: DEFAULT_RHO0,
            beta_minus: DEFAULT_BETA_MINUS,
            beta_plus: DEFAULT_BETA_PLUS,
            lambda_min: -DEFAULT_LAMBDA_BOUND,
            lambda_max: DEFAULT_LAMBDA_BOUND,
            local_tol: LOCAL_TOL,
            local_max_iter: MAX_ITER,
            record_iterates: false,
        }
    }
}

impl SimConfig {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let config: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?
        };
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn admm_params(&self) -> AdmmParams {
        AdmmParams {
            rho0: self.rho0,
            gamma: self.gamma,
            tau: self.tau,
            lambda_min: self.lambda_min,
            lambda_max: self.lambda_max,
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions { tol: self.local_tol, max_iter: self.local_max_iter }
    }

    pub fn validate(&self, n_regions: usize) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if !(self.p > 0.0 && self.p <= 1.0) {
            return bad(format!("p = {} must lie in (0, 1]", self.p));
        }
        match self.delay {
            DelayModel::Uniform { lo, hi } if !(lo >= 0.0 && lo <= hi && hi.is_finite()) => {
                return bad(format!("delay bounds must satisfy 0 ≤ lo ≤ hi, got [{lo}, {hi}]"));
            }
            DelayModel::Constant { value } if !(value >= 0.0 && value.is_finite()) => {
                return bad(format!("delay must be finite and nonnegative, got {value}"));
            }
            _ => {}
        }
        match &self.compute {
            ComputeModel::Constant { seconds } if !(*seconds >= 0.0 && seconds.is_finite()) => {
                return bad(format!("compute time must be finite and nonnegative, got {seconds}"));
            }
            ComputeModel::PerRegion { seconds } => {
                if seconds.len() != n_regions {
                    return bad(format!("{} compute times given for {n_regions} regions", seconds.len()));
                }
                if seconds.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
                    return bad("compute times must be finite and nonnegative".into());
                }
            }
            ComputeModel::Lognormal { mean, sigma } if !(*mean > 0.0 && *sigma >= 0.0) => {
                return bad(format!("lognormal compute model needs mean > 0, sigma ≥ 0, got {mean}, {sigma}"));
            }
            _ => {}
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive".into());
        }
        if !(self.max_time > 0.0) {
            return bad("max_time must be positive".into());
        }
        if !(self.beta_minus > 0.0 && self.beta_plus > 0.0 && self.beta_minus.is_finite() && self.beta_plus.is_finite()) {
            return bad("beta scaling factors must be positive and finite".into());
        }
        self.admm_params().validate().map_err(|e| SimError::Config(e.to_string()))
    }
}
