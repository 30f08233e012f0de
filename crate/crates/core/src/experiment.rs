//! Experiment wiring shared by the command line and the acceptance suite:
//! which policy starts a run, how each training method is invoked, rollout
//! export, and the beta_rs x alpha sweep.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, TeacherKind};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport, SweepRow};
use crate::pipeline::RolloutRecord;
use crate::policy::{Checkpoint, GatedPolicy, PolicyParams, PolicyShape};
use crate::sampler::tagged_stream;
use crate::toyworld::{sample_rollouts, ThinkMode, ToyTask, WorldConfig};
use crate::trainer::{base_policy, run_dapo, train_dpo, train_sft, DpoConfig, Monitor, PairStrategy, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    AdaRsDpo,
    AdaRsDapo,
    /// DPO on correct-over-incorrect / shorter-over-longer pairs from free
    /// teacher rollouts; no NLL term, no ALP reward, no rejection sampling.
    DpoSimple,
    Sft,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::AdaRsDpo => "ada-rs-dpo",
            Method::AdaRsDapo => "ada-rs-dapo",
            Method::DpoSimple => "dpo-simple",
            Method::Sft => "sft",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub fn initial_policy(cfg: &RunConfig, kind: TeacherKind) -> Result<PolicyParams> {
    match kind {
        TeacherKind::Base => base_policy(&cfg.world, &cfg.base),
        TeacherKind::Zero => Ok(PolicyParams::zeros(&cfg.world)),
    }
}

/// Trains one method on `tasks`. `teacher` overrides the configured DPO
/// teacher (useful when several runs share one base policy).
pub fn train_method(
    cfg: &RunConfig,
    method: Method,
    tasks: &[ToyTask],
    teacher: Option<&PolicyParams>,
    monitor: Option<&Monitor<'_>>,
) -> Result<TrainOutcome> {
    let owned;
    let teacher = match teacher {
        Some(t) => t,
        None if matches!(method, Method::AdaRsDpo | Method::DpoSimple) => {
            owned = initial_policy(cfg, cfg.experiment.dpo_teacher)?;
            &owned
        }
        None => {
            owned = PolicyParams::zeros(&cfg.world);
            &owned
        }
    };
    match method {
        Method::AdaRsDpo => train_dpo(
            &cfg.world,
            &cfg.reward,
            &PairStrategy::RejectionSampled(cfg.sampler),
            ThinkMode::HalfHalf,
            &cfg.dpo,
            teacher,
            teacher,
            tasks,
            monitor,
        ),
        Method::DpoSimple => {
            let dpo = DpoConfig {
                lambda_nll: 0.0,
                ..cfg.dpo.clone()
            };
            train_dpo(&cfg.world, &cfg.reward, &PairStrategy::Simple, ThinkMode::Free, &dpo, teacher, teacher, tasks, monitor)
        }
        Method::AdaRsDapo => {
            let init = initial_policy(cfg, cfg.experiment.dapo_init)?;
            run_dapo(&cfg.world, &cfg.reward, Some(&cfg.sampler), &cfg.dapo, &init, tasks, monitor, &mut |_, _| {})
        }
        Method::Sft => {
            let policy = train_sft(&cfg.world, cfg.experiment.sft_ratio, &cfg.sft, tasks)?;
            Ok(TrainOutcome {
                policy,
                history: Default::default(),
            })
        }
    }
}

/// Restores a checkpoint. When the checkpoint records its world, that world
/// replaces `world` (keeping `world`'s seed if `keep_seed`); either way the
/// parameter shapes must match the world they will be evaluated in.
pub fn restore_checkpoint(ck: &Checkpoint, world: &mut WorldConfig, keep_seed: bool) -> Result<PolicyParams> {
    if let Some(w) = &ck.world {
        let seed = world.seed;
        *world = w.clone();
        if keep_seed {
            world.seed = seed;
        }
    }
    world.validate()?;
    let expected = PolicyShape::of(world);
    if ck.shape != expected {
        return Err(Error::config(format!("checkpoint shape {:?} does not fit the world ({expected:?})", ck.shape)));
    }
    PolicyParams::from_checkpoint(ck)
}

/// A checkpoint carrying its world and the configuration that produced it.
pub fn checkpoint_for(cfg: &RunConfig, method: Method, policy: &PolicyParams) -> Result<Checkpoint> {
    let mut ck = policy.to_checkpoint();
    ck.world = Some(cfg.world.clone());
    ck.producer = Some(serde_json::json!({
        "method": method.name(),
        "config": serde_json::to_value(cfg)?,
    }));
    Ok(ck)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn write_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(ck)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn eval_report(cfg: &RunConfig, policy: GatedPolicy<'_>, tasks: &[ToyTask]) -> Result<EvalReport> {
    let e = &cfg.experiment;
    evaluate(&cfg.world, policy, tasks, e.eval_mode, e.eval_samples, cfg.world.seed)
}

/// `reward.k` rollouts per task from `policy`, as pipeline records.
pub fn rollout_records(cfg: &RunConfig, policy: &PolicyParams, tasks: &[ToyTask], mode: ThinkMode) -> Result<Vec<RolloutRecord>> {
    let mut out = Vec::with_capacity(tasks.len() * cfg.reward.k);
    for task in tasks {
        let mut stream = tagged_stream(cfg.world.seed, "gen-rollouts", &task.task_id);
        let rollouts = sample_rollouts(&cfg.world, policy, task, cfg.reward.k, mode, cfg.dpo.temperature, &mut stream)?;
        for r in rollouts {
            let mut meta = serde_json::Map::new();
            meta.insert("family".into(), task.family.into());
            meta.insert("bucket".into(), task.bucket.into());
            meta.insert("difficulty".into(), task.difficulty.into());
            meta.insert("think_len".into(), r.response.think_len.into());
            out.push(RolloutRecord {
                context_id: task.task_id.clone(),
                context: task.describe(),
                think_text: r.raw.think_text,
                call: r.raw.call,
                gold: r.raw.gold,
                correct: None,
                meta: Some(meta),
            });
        }
    }
    Ok(out)
}

/// A beta_rs x alpha grid, per method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    pub beta_rs: Vec<f64>,
    #[serde(default = "default_alphas")]
    pub alpha: Vec<f64>,
    /// Base run configuration; the grid overrides beta_rs and alpha.
    #[serde(default)]
    pub config: RunConfig,
}

fn default_methods() -> Vec<Method> {
    vec![Method::AdaRsDpo]
}

fn default_alphas() -> Vec<f64> {
    vec![0.01]
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.beta_rs.is_empty() || self.alpha.is_empty() {
            return Err(Error::config("sweep grid must name at least one method, beta_rs and alpha"));
        }
        self.config.validate()
    }
}

/// Runs every (method, beta_rs, alpha) cell with the shared seed. A failing
/// cell is recorded in its row and the sweep moves on.
pub fn sweep(grid: &SweepGrid) -> Result<Vec<SweepRow>> {
    grid.validate()?;
    let base = &grid.config;
    let train = base.train_tasks()?;
    let eval = base.eval_tasks()?;
    let teacher = initial_policy(base, base.experiment.dpo_teacher)?;
    let mut rows = Vec::new();
    for &method in &grid.methods {
        for &alpha in &grid.alpha {
            for &beta_rs in &grid.beta_rs {
                let mut cfg = base.clone();
                cfg.sampler.beta_rs = beta_rs;
                cfg.reward.alpha = alpha;
                let cell = cfg.validate().and_then(|_| {
                    let out = train_method(&cfg, method, &train, Some(&teacher), None)?;
                    let report = eval_report(&cfg, GatedPolicy::free(&out.policy), &eval)?;
                    Ok((out, report))
                });
                rows.push(match cell {
                    Ok((out, r)) => SweepRow {
                        method: method.to_string(),
                        beta_rs,
                        alpha,
                        accuracy: Some(r.accuracy()),
                        avg_output_tokens: Some(r.avg_output_tokens()),
                        avg_reasoning_tokens: Some(r.measures.avg_reasoning_tokens),
                        thinking_rate: Some(r.thinking_rate()),
                        training_samples: Some(out.history.training_samples),
                        acceptance_rate: Some(out.history.acceptance_rate()),
                        train_fraction: Some(out.history.train_fraction()),
                        error: None,
                    },
                    Err(e) => {
                        log::warn!("sweep cell {method} beta_rs={beta_rs} alpha={alpha} failed: {e}");
                        SweepRow::failed(method.name(), beta_rs, alpha, &e)
                    }
                });
            }
        }
    }
    Ok(rows)
}
