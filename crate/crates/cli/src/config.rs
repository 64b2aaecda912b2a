use std::path::Path;

use serde::{Deserialize, Serialize};
use tigload::extraneous::ScorerConfig;
use tigload::fit::FitOptions;
use tigload::taskgen::SweepSpec;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaMode {
    /// One omega_e per agent.
    #[default]
    PerAgent,
    /// A single omega_e from all agents' trials together.
    Pooled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OmegaConfig {
    pub mode: OmegaMode,
    /// Used when no calibration file is given.
    pub value: f64,
}

impl Default for OmegaConfig {
    fn default() -> Self {
        Self {
            mode: OmegaMode::PerAgent,
            value: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub agent_id: String,
    pub k: f64,
    /// Task-level baseline.
    pub b: f64,
    /// Per-call baseline for node-level simulation.
    pub b_node: f64,
    pub trials_per_task: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            agent_id: "sim".into(),
            k: 0.067,
            b: 1.0,
            b_node: 0.1,
            trials_per_task: 1,
        }
    }
}

/// Everything that influences a command's output. It is embedded in every
/// artifact; file paths are not part of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub lambda: f64,
    pub seed: u64,
    pub hl_groups: usize,
    pub calibration_bins: usize,
    pub fit: FitOptions,
    pub omega: OmegaConfig,
    pub scorer: ScorerConfig,
    pub simulate: SimulateConfig,
    pub gen: SweepSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            seed: 0,
            hl_groups: 10,
            calibration_bins: 10,
            fit: FitOptions::default(),
            omega: OmegaConfig::default(),
            scorer: ScorerConfig::default(),
            simulate: SimulateConfig::default(),
            gen: SweepSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn check(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if self.hl_groups < 3 {
            return bad(format!("hl_groups must be >= 3, got {}", self.hl_groups));
        }
        if self.calibration_bins == 0 || self.fit.n_bins == 0 {
            return bad("bin counts must be positive".into());
        }
        if !(self.omega.value.is_finite() && self.omega.value >= 0.0) {
            return bad(format!("omega.value must be >= 0, got {}", self.omega.value));
        }
        Ok(())
    }
}
