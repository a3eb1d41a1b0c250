//! Run and sweep configuration: a plain TOML key/value tree with defaults
//! for everything, so a minimal file (or none) describes a sane run.
//!
//! Validation is collect-all: every offending key is reported in a single
//! error message instead of failing on the first one.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::LevelSpec;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::net::ArchPreset;
use crate::optim::RmsPropConfig;

/// Which auxiliary objectives are trained alongside the base actor-critic.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureFlags {
    pub pixel_control: bool,
    pub value_replay: bool,
    pub reward_prediction: bool,
    /// Off by default; trains a control head over hidden-feature activations.
    pub feature_control: bool,
}

impl Default for FeatureFlags {
    fn default() -> Self {
        FeatureFlags {
            pixel_control: true,
            value_replay: true,
            reward_prediction: true,
            feature_control: false,
        }
    }
}

impl FeatureFlags {
    pub fn a3c_only() -> Self {
        FeatureFlags {
            pixel_control: false,
            value_replay: false,
            reward_prediction: false,
            feature_control: false,
        }
    }

    pub fn any_replay_user(&self) -> bool {
        self.pixel_control || self.value_replay || self.reward_prediction || self.feature_control
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Architecture preset name: "paper", "desk", or "tiny".
    pub preset: String,
    pub seed: u64,
    pub total_env_steps: u64,
    pub workers: usize,
    /// Environment steps between evaluation/metrics rows.
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Stop early once the evaluation mean return reaches this value.
    pub target_return: Option<f64>,
    /// Derive the wall-time metrics column from the step counter so two
    /// identical runs produce byte-identical metrics files.
    pub fake_clock: bool,
    pub replay_capacity: usize,
    pub level: LevelSpec,
    pub loss: LossWeights,
    pub optimizer: RmsPropConfig,
    pub features: FeatureFlags,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: "desk".into(),
            seed: 0,
            total_env_steps: 100_000,
            workers: 2,
            eval_interval: 2_000,
            eval_episodes: 2,
            target_return: None,
            fake_clock: false,
            replay_capacity: 2_000,
            level: LevelSpec::default(),
            loss: LossWeights::default(),
            optimizer: RmsPropConfig::default(),
            features: FeatureFlags::default(),
        }
    }
}

fn push_problems(problems: &mut Vec<String>, r: Result<()>) {
    if let Err(Error::ConfigInvalid(msg)) = r {
        problems.push(msg);
    } else if let Err(e) = r {
        problems.push(e.to_string());
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigInvalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Resolved architecture preset with the level's action count.
    pub fn arch(&self) -> Result<ArchPreset> {
        ArchPreset::by_name(&self.preset, self.level.n_act)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        match ArchPreset::by_name(&self.preset, self.level.n_act) {
            Ok(arch) => {
                push_problems(&mut problems, arch.validate());
                // the network consumes frames at its preset resolution
                if self.level.render_size != arch.input_size {
                    problems.push(format!(
                        "level.render_size {} must equal the {} preset input size {}",
                        self.level.render_size, self.preset, arch.input_size
                    ));
                }
            }
            Err(e) => problems.push(e.to_string()),
        }
        push_problems(&mut problems, self.level.validate());
        push_problems(&mut problems, self.loss.validate());
        push_problems(&mut problems, self.optimizer.validate());
        if self.workers == 0 {
            problems.push("workers must be >= 1".into());
        }
        if self.total_env_steps == 0 {
            problems.push("total_env_steps must be >= 1".into());
        }
        if self.eval_interval == 0 {
            problems.push("eval_interval must be >= 1".into());
        }
        if self.eval_episodes == 0 {
            problems.push("eval_episodes must be >= 1".into());
        }
        if self.replay_capacity < 4 * self.loss.unroll_n {
            problems.push(format!(
                "replay_capacity {} too small for unroll_n {} (need at least 4x)",
                self.replay_capacity, self.loss.unroll_n
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(problems.join("; ")))
        }
    }
}

/// Hyperparameter search space; samples are drawn log-uniformly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub samples: usize,
    pub seeds_per_sample: usize,
    /// Seed of the sampling stream only; run seeds are 0..seeds_per_sample.
    pub sweep_seed: u64,
    pub learning_rate_range: [f64; 2],
    pub lambda_pc_range: [f64; 2],
    pub base: RunConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            samples: 6,
            seeds_per_sample: 3,
            sweep_seed: 7,
            learning_rate_range: [1e-4, 5e-3],
            lambda_pc_range: [0.01, 0.1],
            base: RunConfig::default(),
        }
    }
}

impl SweepConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: SweepConfig = toml::from_str(s).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigInvalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.samples == 0 {
            problems.push("sweep.samples must be >= 1".into());
        }
        if self.seeds_per_sample == 0 {
            problems.push("sweep.seeds_per_sample must be >= 1".into());
        }
        for (name, range) in [
            ("sweep.learning_rate_range", self.learning_rate_range),
            ("sweep.lambda_pc_range", self.lambda_pc_range),
        ] {
            if !(range[0] > 0.0 && range[1] >= range[0]) {
                problems.push(format!("{name} must satisfy 0 < lo <= hi, got {range:?}"));
            }
        }
        push_problems(&mut problems, self.base.validate());
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(problems.join("; ")))
        }
    }
}
