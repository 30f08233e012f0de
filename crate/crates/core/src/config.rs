//! Run configuration: one document covering every component, loaded from
//! TOML or JSON, with unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::EvalMode;
use crate::rewards::RewardConfig;
use crate::sampler::SamplerConfig;
use crate::toyworld::{generate_tasks, ToyTask, WorldConfig};
use crate::trainer::{BaseConfig, DapoConfig, DpoConfig, SftConfig};

/// Environment variable consulted when neither the command line nor the
/// config file sets a seed.
pub const SEED_ENV: &str = "ADA_RS_SEED";

/// A starting (or teacher) policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherKind {
    /// The SFT-fitted, think-heavy base policy.
    Base,
    /// All-zero parameters: uniform gate and lengths, evidence-driven answers.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train_tasks: usize,
    pub eval_tasks: usize,
    pub eval_mode: EvalMode,
    pub eval_samples: usize,
    /// Reasoning fraction of SFT demonstrations.
    pub sft_ratio: f64,
    /// Teacher, reference and initial student of the DPO runs.
    pub dpo_teacher: TeacherKind,
    /// Initial policy of the on-policy DAPO runs.
    pub dapo_init: TeacherKind,
    /// Evaluate on the held-out split every this many steps during training
    /// (0: only at the start and end).
    pub log_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train_tasks: 800,
            eval_tasks: 200,
            eval_mode: EvalMode::Sampled,
            eval_samples: 64,
            sft_ratio: 0.75,
            dpo_teacher: TeacherKind::Base,
            dapo_init: TeacherKind::Zero,
            log_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides every component seed when set.
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub world: WorldConfig,
    pub reward: RewardConfig,
    pub sampler: SamplerConfig,
    pub dpo: DpoConfig,
    pub dapo: DapoConfig,
    pub sft: SftConfig,
    pub base: BaseConfig,
    pub experiment: ExperimentConfig,
}

impl RunConfig {
    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        Self::parse(&text, is_json).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str, json: bool) -> Result<Self> {
        if json {
            serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| Error::config(e.to_string()))
        }
    }

    /// Seed precedence: explicit override, then the document's `seed`, then
    /// `ADA_RS_SEED`. The winner, if any, is pushed into every component.
    pub fn resolve_seed(&mut self, cli: Option<u64>) -> Result<()> {
        let env = match std::env::var(SEED_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}")))?,
            ),
            Err(_) => None,
        };
        if let Some(seed) = cli.or(self.seed).or(env) {
            self.apply_seed(seed);
        }
        Ok(())
    }

    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.world.seed = seed;
        self.sampler.seed = seed;
        self.dpo.seed = seed;
        self.dapo.seed = seed;
        self.sft.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.reward.validate()?;
        self.sampler.validate()?;
        self.dpo.validate()?;
        self.dapo.validate()?;
        self.sft.validate(&self.world)?;
        self.base.validate(&self.world)?;
        if !(0.0..=1.0).contains(&self.experiment.sft_ratio) {
            return Err(Error::config("mixture ratios must lie in [0, 1]"));
        }
        let e = &self.experiment;
        if e.train_tasks == 0 || e.eval_tasks == 0 {
            return Err(Error::config("task counts must be positive"));
        }
        if e.eval_mode == EvalMode::Sampled && e.eval_samples == 0 {
            return Err(Error::config("eval_samples must be positive in sampled mode"));
        }
        Ok(())
    }

    pub fn train_tasks(&self) -> Result<Vec<ToyTask>> {
        generate_tasks(&self.world, self.experiment.train_tasks)
    }

    /// Held-out split: same world, disjoint task ids.
    pub fn eval_tasks(&self) -> Result<Vec<ToyTask>> {
        generate_tasks(&eval_world(&self.world), self.experiment.eval_tasks)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Short, stable digest of the resolved document.
    pub fn hash(&self) -> Result<String> {
        Ok(short_hash(self.to_toml()?.as_bytes()))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }
}

/// The world used for held-out tasks.
pub fn eval_world(world: &WorldConfig) -> WorldConfig {
    world.with_seed(world.seed.wrapping_add(0x5eed_e7a1))
}

/// First 12 hex digits of SHA-256.
pub fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}
