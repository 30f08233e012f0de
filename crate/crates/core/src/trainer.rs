//! Losses and training loops for the toy policy.
//!
//! * DPO with an auxiliary winner NLL over a fixed, teacher-generated pair
//!   dataset (Ada-RS-DPO when pairs come from pair-wise rejection sampling
//!   over ALP rewards).
//! * DAPO's decoupled-clip, token-mean objective over on-policy groups,
//!   optionally filtered by group-wise rejection sampling (Ada-RS-DAPO).
//! * Supervised fine-tuning on think/no-think demonstrations.
//!
//! Every loop is deterministic given its seeds: randomness is drawn from
//! per-task streams and gradients are reduced in a fixed order.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalMode};
use crate::pipeline::build_simple_pairs;
use crate::policy::{add_factor_grad, add_log_prob_grad, factor_log_prob, log_prob, Factor, GatedPolicy, PolicyParams};
use crate::rewards::{score_group, RewardConfig, ScoredRollout};
use crate::sampler::{filter_with_draws, groupwise_accept_probs, rng_stream, sample_pairs, tagged_stream, GroupStats, SamplerConfig, ZeroSigmaPolicy};
use crate::toyworld::{sample_rollouts, ThinkMode, ToyResponse, ToyRollout, ToyTask, WorldConfig};

/// Adam with the usual defaults (0.9, 0.999, 1e-8); minimizes.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(learning_rate: f64, n: usize) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpoConfig {
    pub beta_dpo: f64,
    pub lambda_nll: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        DpoConfig {
            beta_dpo: 0.1,
            lambda_nll: 1.0,
            learning_rate: 1e-2,
            steps: 1000,
            batch_size: 64,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_dpo > 0.0) {
            return Err(Error::config(format!("beta_dpo must be > 0, got {}", self.beta_dpo)));
        }
        if !(self.lambda_nll >= 0.0) {
            return Err(Error::config(format!("lambda_nll must be >= 0, got {}", self.lambda_nll)));
        }
        check_optim(self.learning_rate, self.batch_size)
    }
}

fn check_optim(lr: f64, batch: usize) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::config(format!("learning_rate must be > 0, got {lr}")));
    }
    if batch == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageSource {
    /// Standardize over all K rollouts, before filtering.
    FullGroup,
    /// Standardize over the retained rollouts only.
    RetainedOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DapoConfig {
    pub eps_low: f64,
    pub eps_high: f64,
    pub k: usize,
    pub advantage_source: AdvantageSource,
    pub learning_rate: f64,
    pub steps: usize,
    /// Contexts per step.
    pub batch_size: usize,
    /// Optimizer updates per batch of rollouts, all against the same stale policy.
    pub updates_per_step: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for DapoConfig {
    fn default() -> Self {
        DapoConfig {
            eps_low: 0.2,
            eps_high: 0.28,
            k: 8,
            advantage_source: AdvantageSource::FullGroup,
            learning_rate: 3e-2,
            steps: 400,
            batch_size: 32,
            updates_per_step: 1,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl DapoConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, eps) in [("eps_low", self.eps_low), ("eps_high", self.eps_high)] {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(Error::config(format!("{name} must lie in (0, 1), got {eps}")));
            }
        }
        if self.k < 2 {
            return Err(Error::config(format!("K must be at least 2, got {}", self.k)));
        }
        if self.updates_per_step == 0 {
            return Err(Error::config("updates_per_step must be positive"));
        }
        check_optim(self.learning_rate, self.batch_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Demonstration think lengths are uniform over `demo_min_len..=demo_max_len`.
    pub demo_min_len: usize,
    pub demo_max_len: usize,
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        SftConfig {
            learning_rate: 0.05,
            steps: 400,
            batch_size: 64,
            demo_min_len: 2,
            demo_max_len: 5,
            seed: 0,
        }
    }
}

impl SftConfig {
    pub fn validate(&self, world: &WorldConfig) -> Result<()> {
        check_optim(self.learning_rate, self.batch_size)?;
        if self.demo_min_len == 0 || self.demo_min_len > self.demo_max_len || self.demo_max_len > world.max_think {
            return Err(Error::config(format!(
                "demo lengths must satisfy 1 <= {} <= {} <= max_think",
                self.demo_min_len, self.demo_max_len
            )));
        }
        Ok(())
    }
}

/// The stand-in for a pretrained reasoning model run with thinking enabled:
/// length and answer heads fit by a limited SFT pass on thinking
/// demonstrations, and a gate that opens with probability `sigmoid(gate_logit)`
/// on every task. It is the default teacher, reference and starting point of
/// the DPO runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaseConfig {
    pub gate_logit: f64,
    pub tasks: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub demo_min_len: usize,
    pub demo_max_len: usize,
    pub seed: u64,
}

impl Default for BaseConfig {
    fn default() -> Self {
        BaseConfig {
            gate_logit: 10.0,
            tasks: 400,
            learning_rate: 0.02,
            steps: 150,
            batch_size: 64,
            demo_min_len: 8,
            demo_max_len: 8,
            seed: 17,
        }
    }
}

impl BaseConfig {
    pub fn sft(&self) -> SftConfig {
        SftConfig {
            learning_rate: self.learning_rate,
            steps: self.steps,
            batch_size: self.batch_size,
            demo_min_len: self.demo_min_len,
            demo_max_len: self.demo_max_len,
            seed: self.seed,
        }
    }

    pub fn validate(&self, world: &WorldConfig) -> Result<()> {
        if !self.gate_logit.is_finite() {
            return Err(Error::config(format!("gate_logit must be finite, got {}", self.gate_logit)));
        }
        if self.tasks == 0 {
            return Err(Error::config("base policy needs at least one task"));
        }
        self.sft().validate(world)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub loss: f64,
    pub acceptance_rate: f64,
    pub accuracy: f64,
    pub thinking_rate: f64,
    pub avg_output_tokens: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct History {
    pub rows: Vec<HistoryRow>,
    /// Pairs or candidates actually trained on.
    pub training_samples: usize,
    /// Pairs or candidates that went through rejection sampling.
    pub considered_samples: usize,
    /// All pairs or candidates produced, ties and zero-variance groups included.
    pub produced_samples: usize,
}

impl History {
    pub fn acceptance_rate(&self) -> f64 {
        if self.considered_samples == 0 {
            0.0
        } else {
            self.training_samples as f64 / self.considered_samples as f64
        }
    }

    pub fn train_fraction(&self) -> f64 {
        if self.produced_samples == 0 {
            0.0
        } else {
            self.training_samples as f64 / self.produced_samples as f64
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Held-out tasks evaluated (in closed form) whenever a history row is logged.
#[derive(Debug, Clone, Copy)]
pub struct Monitor<'a> {
    pub tasks: &'a [ToyTask],
    /// Log every this many optimizer steps; 0 logs only at the end.
    pub every: usize,
}

fn history_row(world: &WorldConfig, policy: &PolicyParams, monitor: Option<&Monitor<'_>>, step: usize, loss: f64, acceptance: f64) -> HistoryRow {
    let mut row = HistoryRow {
        step,
        loss,
        acceptance_rate: acceptance,
        ..HistoryRow::default()
    };
    if let Some(m) = monitor {
        if let Ok(r) = evaluate(world, GatedPolicy::free(policy), m.tasks, EvalMode::Exact, 1, 0) {
            row.accuracy = r.accuracy();
            row.thinking_rate = r.thinking_rate();
            row.avg_output_tokens = r.avg_output_tokens();
        }
    }
    row
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    crate::toyworld::sigmoid(x)
}

/// DPO loss with an auxiliary winner NLL, and its gradient.
///
/// `h = beta * ((log pi(w) - log ref(w)) - (log pi(l) - log ref(l)))`,
/// `loss = -log sigmoid(h) - lambda * log pi(w)`.
pub fn dpo_nll_loss(
    world: &WorldConfig,
    theta: &PolicyParams,
    reference: &PolicyParams,
    task: &ToyTask,
    winner: &ToyResponse,
    loser: &ToyResponse,
    config: &DpoConfig,
) -> Result<(f64, PolicyParams)> {
    let ref_w = log_prob(world, reference, task, winner)?;
    let ref_l = log_prob(world, reference, task, loser)?;
    let mut grad = PolicyParams::zeros_with_shape(theta.shape);
    let loss = dpo_nll_accumulate(world, theta, task, winner, loser, ref_w, ref_l, config, 1.0, &mut grad)?;
    Ok((loss, grad))
}

#[allow(clippy::too_many_arguments)]
fn dpo_nll_accumulate(
    world: &WorldConfig,
    theta: &PolicyParams,
    task: &ToyTask,
    winner: &ToyResponse,
    loser: &ToyResponse,
    ref_w: f64,
    ref_l: f64,
    config: &DpoConfig,
    scale: f64,
    grad: &mut PolicyParams,
) -> Result<f64> {
    if winner == loser {
        return Err(Error::InvalidResponse("winner and loser are the same response".into()));
    }
    let lw = log_prob(world, theta, task, winner)?;
    let ll = log_prob(world, theta, task, loser)?;
    let h = config.beta_dpo * ((lw - ref_w) - (ll - ref_l));
    let loss = softplus(-h) - config.lambda_nll * lw;
    let coef = config.beta_dpo * sigmoid(-h);
    add_log_prob_grad(world, theta, task, winner, scale * (-coef - config.lambda_nll), grad);
    add_log_prob_grad(world, theta, task, loser, scale * coef, grad);
    Ok(loss)
}

/// One retained response with its advantage.
#[derive(Debug, Clone)]
pub struct DapoItem<'a> {
    pub task: &'a ToyTask,
    pub response: ToyResponse,
    pub advantage: f64,
}

/// DAPO's clipped surrogate, averaged over every factor token of every
/// retained response, negated; with its gradient.
pub fn dapo_loss(
    world: &WorldConfig,
    theta: &PolicyParams,
    old: &PolicyParams,
    items: &[DapoItem<'_>],
    config: &DapoConfig,
) -> (f64, PolicyParams) {
    let mut grad = PolicyParams::zeros_with_shape(theta.shape);
    let tokens: usize = items.iter().map(|it| Factor::of(&it.response).len()).sum();
    if tokens == 0 {
        log::debug!("dapo_loss: no retained responses; zero update");
        return (0.0, grad);
    }
    let inv = 1.0 / tokens as f64;
    let mut total = 0.0;
    for it in items {
        for &f in Factor::of(&it.response) {
            let lp = factor_log_prob(world, theta, it.task, &it.response, f);
            let lp_old = factor_log_prob(world, old, it.task, &it.response, f);
            let ratio = (lp - lp_old).exp();
            let clipped = ratio.clamp(1.0 - config.eps_low, 1.0 + config.eps_high);
            let unclipped_term = ratio * it.advantage;
            let clipped_term = clipped * it.advantage;
            if unclipped_term <= clipped_term {
                total += unclipped_term;
                // d(ratio * A) = ratio * A * dlogp
                add_factor_grad(world, theta, it.task, &it.response, f, -inv * unclipped_term, &mut grad);
            } else {
                total += clipped_term;
            }
        }
    }
    (-total * inv, grad)
}

/// Which preference pairs a DPO run trains on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairStrategy {
    /// Pair-wise rejection sampling over ALP rewards.
    RejectionSampled(SamplerConfig),
    /// Correct over incorrect, then shorter over longer; every such pair kept.
    Simple,
}

#[derive(Debug, Clone)]
pub struct PairExample {
    pub task: usize,
    pub winner: ToyResponse,
    pub loser: ToyResponse,
}

#[derive(Debug, Clone, Default)]
pub struct PairDataset {
    pub examples: Vec<PairExample>,
    pub considered: usize,
    pub produced: usize,
    pub mean_solve_rate: f64,
}

fn rollout_stream(seed: u64, tag: &str, id: &str) -> crate::sampler::ContextStream {
    tagged_stream(seed, tag, id)
}

fn scored_group(reward: &RewardConfig, rollouts: &[ToyRollout]) -> Result<Vec<ScoredRollout>> {
    let raws: Vec<_> = rollouts.iter().map(|r| r.raw.clone()).collect();
    score_group(&raws, reward)
}

/// Teacher rollouts (`reward.k` per task), turned into preference pairs.
pub fn build_pair_dataset(
    world: &WorldConfig,
    reward: &RewardConfig,
    strategy: &PairStrategy,
    rollout_mode: ThinkMode,
    dpo: &DpoConfig,
    teacher: &PolicyParams,
    tasks: &[ToyTask],
) -> Result<PairDataset> {
    let per_task = tasks
        .par_iter()
        .enumerate()
        .map(|(ti, task)| -> Result<(Vec<PairExample>, usize, f64)> {
            let mut stream = rollout_stream(dpo.seed, "teacher", &task.task_id);
            let rollouts = sample_rollouts(world, teacher, task, reward.k, rollout_mode, dpo.temperature, &mut stream)?;
            let scored = scored_group(reward, &rollouts)?;
            let solve = scored.iter().filter(|s| s.correct).count() as f64 / scored.len() as f64;
            let (pairs, considered) = match strategy {
                PairStrategy::RejectionSampled(sampler) => {
                    let s = sample_pairs(&scored, sampler)?;
                    (s.accepted, s.considered)
                }
                PairStrategy::Simple => {
                    let p = build_simple_pairs(&scored)?;
                    let n = p.len();
                    (p, n)
                }
            };
            let examples = pairs
                .into_iter()
                .map(|p| PairExample {
                    task: ti,
                    winner: rollouts[p.winner_index].response.clone(),
                    loser: rollouts[p.loser_index].response.clone(),
                })
                .collect();
            Ok((examples, considered, solve))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut ds = PairDataset {
        produced: tasks.len() * reward.k * (reward.k - 1) / 2,
        ..PairDataset::default()
    };
    let mut solve_sum = 0.0;
    for (ex, considered, solve) in per_task {
        ds.examples.extend(ex);
        ds.considered += considered;
        solve_sum += solve;
    }
    ds.mean_solve_rate = solve_sum / tasks.len().max(1) as f64;
    Ok(ds)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: PolicyParams,
    pub history: History,
}

/// DPO (+ NLL) over a fixed pair dataset generated once by the teacher.
/// The reference policy is the initial student.
#[allow(clippy::too_many_arguments)]
pub fn train_dpo(
    world: &WorldConfig,
    reward: &RewardConfig,
    strategy: &PairStrategy,
    rollout_mode: ThinkMode,
    dpo: &DpoConfig,
    teacher: &PolicyParams,
    init: &PolicyParams,
    tasks: &[ToyTask],
    monitor: Option<&Monitor<'_>>,
) -> Result<TrainOutcome> {
    world.validate()?;
    reward.validate()?;
    dpo.validate()?;
    if let PairStrategy::RejectionSampled(s) = strategy {
        s.validate()?;
    }
    teacher.check_world(world)?;
    init.check_world(world)?;
    if tasks.is_empty() {
        return Err(Error::config("training needs at least one task"));
    }

    let data = build_pair_dataset(world, reward, strategy, rollout_mode, dpo, teacher, tasks)?;
    if data.examples.is_empty() {
        return Err(Error::NoAcceptedPairs);
    }
    log::info!(
        "dpo: {} pairs from {} tasks ({} considered, {} produced)",
        data.examples.len(),
        tasks.len(),
        data.considered,
        data.produced
    );

    let reference = init.clone();
    let ref_lp: Vec<(f64, f64)> = data
        .examples
        .iter()
        .map(|e| {
            let t = &tasks[e.task];
            Ok((log_prob(world, &reference, t, &e.winner)?, log_prob(world, &reference, t, &e.loser)?))
        })
        .collect::<Result<_>>()?;

    let mut history = History {
        training_samples: data.examples.len(),
        considered_samples: data.considered,
        produced_samples: data.produced,
        rows: Vec::new(),
    };
    let acceptance = history.acceptance_rate();
    let mut theta = init.clone();
    let mut adam = Adam::new(dpo.learning_rate, theta.values.len());
    history.rows.push(history_row(world, &theta, monitor, 0, f64::NAN, acceptance));

    let mut order: Vec<usize> = (0..data.examples.len()).collect();
    let mut step = 0;
    let mut epoch = 0;
    let log_every = monitor.map_or(0, |m| m.every);
    while step < dpo.steps {
        order.shuffle(tagged_stream(dpo.seed, "dpo-shuffle", &epoch.to_string()).rng());
        let mut epoch_loss = 0.0;
        let mut epoch_batches = 0;
        for batch in order.chunks(dpo.batch_size) {
            if step == dpo.steps {
                break;
            }
            let mut grad = PolicyParams::zeros_with_shape(theta.shape);
            let scale = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            for &i in batch {
                let e = &data.examples[i];
                let (rw, rl) = ref_lp[i];
                loss += scale * dpo_nll_accumulate(world, &theta, &tasks[e.task], &e.winner, &e.loser, rw, rl, dpo, scale, &mut grad)?;
            }
            adam.step(&mut theta.values, &grad.values);
            step += 1;
            epoch_loss += loss;
            epoch_batches += 1;
            if log_every > 0 && step % log_every == 0 && step < dpo.steps {
                history.rows.push(history_row(world, &theta, monitor, step, loss, acceptance));
            }
        }
        epoch += 1;
        let mean = epoch_loss / epoch_batches.max(1) as f64;
        if step == dpo.steps || log_every == 0 {
            history.rows.push(history_row(world, &theta, monitor, step, mean, acceptance));
        }
    }
    Ok(TrainOutcome { policy: theta, history })
}

/// Ada-RS-DPO: half thinking-on / half thinking-off teacher rollouts, ALP
/// rewards, pair-wise rejection sampling, DPO + NLL.
#[allow(clippy::too_many_arguments)]
pub fn train_ada_rs_dpo(
    world: &WorldConfig,
    reward: &RewardConfig,
    sampler: &SamplerConfig,
    dpo: &DpoConfig,
    teacher: &PolicyParams,
    init: &PolicyParams,
    tasks: &[ToyTask],
    monitor: Option<&Monitor<'_>>,
) -> Result<TrainOutcome> {
    train_dpo(world, reward, &PairStrategy::RejectionSampled(*sampler), ThinkMode::HalfHalf, dpo, teacher, init, tasks, monitor)
}

/// Per-step summary passed to DAPO observers.
#[derive(Debug, Clone, Copy, Default)]
pub struct DapoStep {
    pub step: usize,
    pub loss: f64,
    pub groups: usize,
    pub zero_variance_groups: usize,
    pub candidates: usize,
    pub retained: usize,
}

fn standardize(rewards: &[f64]) -> Vec<f64> {
    let Ok(stats) = GroupStats::from_rewards(rewards, 0.0) else {
        return vec![];
    };
    if stats.sigma == 0.0 {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - stats.mu) / stats.sigma).collect()
}

/// Ada-RS-DAPO. With `sampler = None` every candidate of a non-degenerate
/// group is kept (plain DAPO). Zero-variance groups are always dropped.
pub fn train_ada_rs_dapo(
    world: &WorldConfig,
    reward: &RewardConfig,
    sampler: Option<&SamplerConfig>,
    dapo: &DapoConfig,
    init: &PolicyParams,
    tasks: &[ToyTask],
    monitor: Option<&Monitor<'_>>,
) -> Result<TrainOutcome> {
    run_dapo(world, reward, sampler, dapo, init, tasks, monitor, &mut |_, _| {})
}

/// DAPO loop with an observer called after every update.
#[allow(clippy::too_many_arguments)]
pub fn run_dapo(
    world: &WorldConfig,
    reward: &RewardConfig,
    sampler: Option<&SamplerConfig>,
    dapo: &DapoConfig,
    init: &PolicyParams,
    tasks: &[ToyTask],
    monitor: Option<&Monitor<'_>>,
    observer: &mut dyn FnMut(&DapoStep, &PolicyParams),
) -> Result<TrainOutcome> {
    world.validate()?;
    reward.validate()?;
    dapo.validate()?;
    if let Some(s) = sampler {
        s.validate()?;
    }
    init.check_world(world)?;
    if tasks.is_empty() {
        return Err(Error::config("training needs at least one task"));
    }
    let batch = dapo.batch_size.min(tasks.len());
    let reward = &RewardConfig { k: dapo.k, ..*reward };
    let sampler = sampler.map(|s| SamplerConfig {
        zero_sigma_policy: ZeroSigmaPolicy::DiscardGroup,
        ..*s
    });

    let mut theta = init.clone();
    let mut adam = Adam::new(dapo.learning_rate, theta.values.len());
    let mut history = History::default();
    history.rows.push(history_row(world, &theta, monitor, 0, f64::NAN, 1.0));
    let log_every = monitor.map_or(0, |m| m.every);
    let indices: Vec<usize> = (0..tasks.len()).collect();

    for step in 1..=dapo.steps {
        let picked: Vec<usize> = indices
            .choose_multiple(tagged_stream(dapo.seed, "dapo-batch", &step.to_string()).rng(), batch)
            .copied()
            .collect();
        let old = theta.clone();

        // (task, responses, rewards, retained, advantages) per context
        let groups = picked
            .par_iter()
            .map(|&ti| -> Result<(usize, Vec<ToyResponse>, Vec<f64>, Vec<usize>, Vec<f64>)> {
                let task = &tasks[ti];
                let context_id = format!("{}@{}", task.task_id, step);
                let mut stream = rollout_stream(dapo.seed, "dapo-rollout", &context_id);
                let mut rollouts = sample_rollouts(world, &old, task, dapo.k, ThinkMode::Free, dapo.temperature, &mut stream)?;
                for r in &mut rollouts {
                    r.raw.context_id.clone_from(&context_id);
                }
                let scored = scored_group(reward, &rollouts)?;
                let rewards: Vec<f64> = scored.iter().map(|s| s.reward).collect();
                let full_adv = standardize(&rewards);
                let zero_var = full_adv.iter().all(|&a| a == 0.0);
                let retained = if zero_var {
                    vec![]
                } else if let Some(s) = &sampler {
                    let probs = groupwise_accept_probs(&rewards, s.beta_rs, s.zero_sigma_policy)?;
                    filter_with_draws(&probs, &mut rng_stream(s.seed, &context_id))
                } else {
                    (0..rewards.len()).collect()
                };
                let adv = match dapo.advantage_source {
                    AdvantageSource::FullGroup => retained.iter().map(|&i| full_adv[i]).collect(),
                    AdvantageSource::RetainedOnly => {
                        let kept: Vec<f64> = retained.iter().map(|&i| rewards[i]).collect();
                        if kept.len() < 2 {
                            vec![0.0; kept.len()]
                        } else {
                            standardize(&kept)
                        }
                    }
                };
                let responses = rollouts.into_iter().map(|r| r.response).collect();
                Ok((ti, responses, rewards, retained, adv))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut info = DapoStep {
            step,
            groups: groups.len(),
            ..DapoStep::default()
        };
        let mut items = Vec::new();
        for (ti, responses, rewards, retained, adv) in &groups {
            if !rewards.is_empty() && standardize(rewards).iter().all(|&a| a == 0.0) {
                info.zero_variance_groups += 1;
                continue;
            }
            info.candidates += rewards.len();
            info.retained += retained.len();
            for (&i, &a) in retained.iter().zip(adv) {
                items.push(DapoItem {
                    task: &tasks[*ti],
                    response: responses[i].clone(),
                    advantage: a,
                });
            }
        }
        history.considered_samples += info.candidates;
        history.training_samples += info.retained;
        history.produced_samples += groups.len() * dapo.k;

        for _ in 0..dapo.updates_per_step {
            let (loss, grad) = dapo_loss(world, &theta, &old, &items, dapo);
            info.loss = loss;
            if !items.is_empty() {
                adam.step(&mut theta.values, &grad.values);
            }
        }
        observer(&info, &theta);

        let acceptance = if info.candidates == 0 {
            0.0
        } else {
            info.retained as f64 / info.candidates as f64
        };
        if (log_every > 0 && step % log_every == 0) || step == dapo.steps {
            history.rows.push(history_row(world, &theta, monitor, step, info.loss, acceptance));
        }
    }
    Ok(TrainOutcome { policy: theta, history })
}

/// A demonstration: gold answer, thinking with probability `ratio`.
pub fn sft_demos(world: &WorldConfig, ratio: f64, config: &SftConfig, tasks: &[ToyTask]) -> Vec<ToyResponse> {
    tasks
        .iter()
        .map(|t| {
            let mut s = tagged_stream(config.seed, "sft-demo", &t.task_id);
            let rng = s.rng();
            let think = rng.gen::<f64>() < ratio;
            let len = if think {
                rng.gen_range(config.demo_min_len..=config.demo_max_len)
            } else {
                0
            };
            let _ = world;
            ToyResponse::new(think, len, t.gold_index)
        })
        .collect()
}

/// Maximum-likelihood fit to demonstrations, starting from zero parameters.
pub fn train_sft(world: &WorldConfig, ratio: f64, config: &SftConfig, tasks: &[ToyTask]) -> Result<PolicyParams> {
    world.validate()?;
    config.validate(world)?;
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::config(format!("mixture ratio must lie in [0, 1], got {ratio}")));
    }
    if tasks.is_empty() {
        return Err(Error::config("SFT needs at least one task"));
    }
    let demos = sft_demos(world, ratio, config, tasks);
    let mut theta = PolicyParams::zeros(world);
    let mut adam = Adam::new(config.learning_rate, theta.values.len());
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    let mut step = 0;
    let mut epoch = 0usize;
    while step < config.steps {
        order.shuffle(tagged_stream(config.seed, "sft-shuffle", &epoch.to_string()).rng());
        for batch in order.chunks(config.batch_size) {
            if step == config.steps {
                break;
            }
            let mut grad = PolicyParams::zeros_with_shape(theta.shape);
            let scale = -1.0 / batch.len() as f64;
            for &i in batch {
                add_log_prob_grad(world, &theta, &tasks[i], &demos[i], scale, &mut grad);
            }
            adam.step(&mut theta.values, &grad.values);
            step += 1;
        }
        epoch += 1;
    }
    Ok(theta)
}

/// Builds the base policy on its own task split.
pub fn base_policy(world: &WorldConfig, config: &BaseConfig) -> Result<PolicyParams> {
    config.validate(world)?;
    let split = world.with_seed(world.seed ^ 0xba5e_ba5e);
    let tasks = crate::toyworld::generate_tasks(&split, config.tasks)?;
    let mut policy = train_sft(&split, 1.0, &config.sft(), &tasks)?;
    // Every task activates exactly one family and one bucket feature.
    policy.gate_mut().fill(config.gate_logit / 2.0);
    Ok(policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toyworld::generate_tasks;

    fn setup() -> (WorldConfig, Vec<ToyTask>) {
        let w = WorldConfig::default();
        let t = generate_tasks(&w, 12).unwrap();
        (w, t)
    }

    #[test]
    fn dpo_at_reference_is_ln2() {
        let (w, tasks) = setup();
        let mut p = PolicyParams::zeros(&w);
        p.values.iter_mut().enumerate().for_each(|(i, v)| *v = ((i % 7) as f64 - 3.0) * 0.2);
        let task = &tasks[5];
        let yw = ToyResponse::new(true, 3, task.gold_index);
        let yl = ToyResponse::new(false, 0, (task.gold_index + 1) % 6);
        for beta in [0.05, 0.1, 1.0, 7.0] {
            let cfg = DpoConfig {
                beta_dpo: beta,
                lambda_nll: 0.0,
                ..DpoConfig::default()
            };
            let (loss, grad) = dpo_nll_loss(&w, &p, &p, task, &yw, &yl, &cfg).unwrap();
            assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
            let gw = crate::policy::grad_log_prob(&w, &p, task, &yw).unwrap();
            let gl = crate::policy::grad_log_prob(&w, &p, task, &yl).unwrap();
            for i in 0..grad.values.len() {
                let expected = -(beta / 2.0) * (gw.values[i] - gl.values[i]);
                assert!((grad.values[i] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dpo_saturates() {
        let (w, tasks) = setup();
        let reference = PolicyParams::zeros(&w);
        let task = &tasks[0];
        let mut p = reference.clone();
        let yw = ToyResponse::new(false, 0, task.gold_index);
        let yl = ToyResponse::new(true, 8, task.gold_index);
        // strongly prefer no-think
        p.gate_mut().iter_mut().for_each(|g| *g = -400.0);
        let cfg = DpoConfig {
            lambda_nll: 0.0,
            ..DpoConfig::default()
        };
        let (loss, _) = dpo_nll_loss(&w, &p, &reference, task, &yw, &yl, &cfg).unwrap();
        assert!(loss < 1e-12, "{loss}");
        assert!(dpo_nll_loss(&w, &p, &reference, task, &yw, &yw, &cfg).is_err());
    }

    #[test]
    fn dapo_unit_ratio_and_clip() {
        let (w, tasks) = setup();
        let p = PolicyParams::zeros(&w);
        let items = vec![
            DapoItem {
                task: &tasks[0],
                response: ToyResponse::new(true, 2, 0),
                advantage: 1.5,
            },
            DapoItem {
                task: &tasks[1],
                response: ToyResponse::new(false, 0, 1),
                advantage: -0.5,
            },
        ];
        let cfg = DapoConfig::default();
        let (loss, _) = dapo_loss(&w, &p, &p, &items, &cfg);
        // 3 tokens at A=1.5, 2 tokens at A=-0.5
        assert!((loss - -(3.0 * 1.5 - 2.0 * 0.5) / 5.0).abs() < 1e-12);

        let zero: Vec<_> = items.iter().cloned().map(|mut it| {
            it.advantage = 0.0;
            it
        }).collect();
        let (loss, grad) = dapo_loss(&w, &p, &p, &zero, &cfg);
        assert_eq!(loss, 0.0);
        assert!(grad.values.iter().all(|g| *g == 0.0));

        let (loss, grad) = dapo_loss(&w, &p, &p, &[], &cfg);
        assert_eq!(loss, 0.0);
        assert!(grad.values.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn dapo_clip_blocks_gradient() {
        let (w, tasks) = setup();
        let old = PolicyParams::zeros(&w);
        let task = &tasks[0];
        let r = ToyResponse::new(true, 1, task.gold_index);
        // raise gate prob well above 1 + eps_high times old (0.5 -> ~0.88)
        let mut theta = old.clone();
        theta.gate_mut().iter_mut().for_each(|g| *g = 1.0);
        let item = DapoItem { task, response: r.clone(), advantage: 1.0 };
        let (_, grad) = dapo_loss(&w, &theta, &old, &[item], &DapoConfig::default());
        assert!(grad.gate().iter().all(|g| *g == 0.0));
        // a negative advantage is not clipped on that side
        let item = DapoItem { task, response: r, advantage: -1.0 };
        let (_, grad) = dapo_loss(&w, &theta, &old, &[item], &DapoConfig::default());
        assert!(grad.gate().iter().any(|g| *g != 0.0));
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut adam = Adam::new(0.1, 2);
        let mut p = vec![1.0, -1.0];
        adam.step(&mut p, &[2.0, -3.0]);
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn config_validation() {
        assert!(DpoConfig { beta_dpo: 0.0, ..DpoConfig::default() }.validate().is_err());
        assert!(DapoConfig { eps_high: 1.0, ..DapoConfig::default() }.validate().is_err());
        let w = WorldConfig::default();
        assert!(SftConfig { demo_max_len: 9, ..SftConfig::default() }.validate(&w).is_err());
        assert!(train_sft(&w, 1.5, &SftConfig::default(), &generate_tasks(&w, 3).unwrap()).is_err());
    }
}
