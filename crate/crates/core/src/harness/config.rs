// Copyright 2026 The QMLA Authors
// SPDX-License-Identifier: Apache-2.0

//! Run configuration: one strict JSON document per run.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::bath::{CleConfig, MhaConfig};
use crate::error::{QmlaError, Result};
use crate::pauli::ModelExpression;
use crate::qhl::{initialize_cloud, ParamPrior, PriorSpec, ProbeKind, QhlConfig};
use crate::rng::{derive_seed_for, QmlaRng};
use crate::search::{GrowthRule, SearchConfig};
use crate::system::NoiseConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Simulate,
    Replay,
    Bath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BathConfig {
    pub cle: CleConfig,
    pub mha: MhaConfig,
    /// Envelope exponent `p` in `exp(−(τ/T2)^p)`.
    pub t2_exponent: f64,
    /// Revival frequency for the T2 windows; the fitted ω0 when unset.
    pub revival_omega0: Option<f64>,
}

impl Default for BathConfig {
    fn default() -> Self {
        BathConfig {
            cle: CleConfig::default(),
            mha: MhaConfig::default(),
            t2_exponent: 3.0,
            revival_omega0: None,
        }
    }
}

fn default_particles() -> usize {
    3000
}
fn default_epochs() -> usize {
    1000
}
fn default_parallelism() -> usize {
    6
}
fn default_instances() -> usize {
    1
}
fn default_window() -> f64 {
    10.0
}
fn default_cap_factor() -> f64 {
    10.0
}
fn default_resample_a() -> f64 {
    0.98
}
fn default_boost_fraction() -> f64 {
    0.1
}
fn default_boost_factor() -> f64 {
    10.0
}
fn default_eval_points() -> usize {
    200
}

/// Default credible set: the true-model family plus its common
/// over-parameterised neighbours.
pub fn default_credible_models() -> Vec<ModelExpression> {
    ["SxyzAz", "SxyzAyz", "SxyzAxz", "SxyzAxyz"]
        .iter()
        .map(|s| ModelExpression::parse(s).expect("valid literal"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_model: Option<ModelExpression>,
    /// True parameters; drawn from the prior per instance when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_params: Option<Vec<f64>>,
    #[serde(default)]
    pub growth: GrowthRule,
    #[serde(default = "default_particles")]
    pub num_particles: usize,
    #[serde(default = "default_epochs")]
    pub num_epochs: usize,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub prior: ParamPrior,
    #[serde(default)]
    pub probe: ProbeKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_instances")]
    pub instances: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Allowed experiment time; heuristic times are capped at
    /// `time_cap_factor` times this.
    #[serde(default = "default_window")]
    pub time_window_us: f64,
    #[serde(default = "default_cap_factor")]
    pub time_cap_factor: f64,
    #[serde(default = "default_resample_a")]
    pub resample_a: f64,
    #[serde(default = "default_boost_fraction")]
    pub late_boost_fraction: f64,
    #[serde(default = "default_boost_factor")]
    pub late_boost_factor: f64,
    #[serde(default = "default_eval_points")]
    pub eval_points: usize,
    /// Fixed end of the R² grid; the champion's training window when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_time_max_us: Option<f64>,
    #[serde(default = "default_credible_models")]
    pub credible_models: Vec<ModelExpression>,
    #[serde(default)]
    pub bath: BathConfig,
}

impl RunConfig {
    /// A simulate-mode config with every other field at its default.
    pub fn simulate(true_model: ModelExpression) -> Self {
        let mut config: RunConfig =
            serde_json::from_value(serde_json::json!({ "mode": "simulate" })).expect("defaults deserialize");
        config.true_model = Some(true_model);
        config
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| QmlaError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, why: &str| Err(QmlaError::Config(format!("{name}: {why}")));
        match self.mode {
            Mode::Simulate => {
                let Some(model) = &self.true_model else {
                    return field("true_model", "required in simulate mode");
                };
                if let Some(p) = &self.true_params {
                    if p.len() != model.num_params() {
                        return field(
                            "true_params",
                            &format!("{} values for {} terms", p.len(), model.num_params()),
                        );
                    }
                }
            }
            Mode::Replay | Mode::Bath => {
                if self.dataset.is_none() && self.mode == Mode::Replay {
                    return field("dataset", "required in replay mode");
                }
            }
        }
        if self.num_particles < 2 {
            return field("num_particles", "must be at least 2");
        }
        if self.num_epochs == 0 {
            return field("num_epochs", "must be positive");
        }
        if self.parallelism == 0 {
            return field("parallelism", "must be positive");
        }
        if self.instances == 0 {
            return field("instances", "must be positive");
        }
        if !(self.time_window_us > 0.0) || !(self.time_cap_factor > 0.0) {
            return field("time_window_us", "window and cap factor must be positive");
        }
        self.noise.validate()?;
        self.search_config().validate()?;
        if self.mode == Mode::Bath {
            self.bath.cle.validate()?;
        }
        Ok(())
    }

    pub fn qhl_config(&self) -> QhlConfig {
        QhlConfig {
            num_particles: self.num_particles,
            num_epochs: self.num_epochs,
            resample_a: self.resample_a,
            time_cap: self.time_cap_factor * self.time_window_us,
            late_boost_fraction: self.late_boost_fraction,
            late_boost_factor: self.late_boost_factor,
        }
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            growth: self.growth.clone(),
            qhl: self.qhl_config(),
            prior: self.prior,
            probe: self.probe,
            probe_offset_sigma: self.noise.probe_offset_sigma,
            eval_time_max: self.eval_time_max_us,
            eval_points: self.eval_points,
        }
    }

    /// True parameters for the instance with `seed`: the configured ones, or
    /// a prior draw.
    pub fn true_params_for(&self, seed: u64) -> Result<Vec<f64>> {
        let model = self
            .true_model
            .as_ref()
            .ok_or_else(|| QmlaError::Config("true_model: required in simulate mode".into()))?;
        if let Some(p) = &self.true_params {
            return Ok(p.clone());
        }
        let prior = PriorSpec::repeated(self.prior, model.num_params())?;
        let mut rng = QmlaRng::seed_from_u64(derive_seed_for(seed, "truth"));
        Ok(initialize_cloud(&prior, 2, &mut rng)?.particle(0).to_vec())
    }

    pub fn to_pretty_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Reads and validates a config; a relative dataset path is resolved
/// against the config file's directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| QmlaError::io(path, e))?;
    let mut config: RunConfig =
        serde_json::from_str(&text).map_err(|e| QmlaError::Config(format!("{}: {e}", path.display())))?;
    if let (Some(data), Some(dir)) = (&config.dataset, path.parent()) {
        if data.is_relative() {
            config.dataset = Some(dir.join(data));
        }
    }
    config.validate()?;
    Ok(config)
}
