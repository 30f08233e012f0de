//! Stochastic rejection sampling over scored rollouts.
//!
//! Pair-wise: every unordered pair with a non-zero reward gap `g` is kept with
//! probability `exp((g - g_max) / beta_rs)`, so the widest-gap pairs are always
//! eligible and narrower ones fade out as `beta_rs` shrinks.
//!
//! Group-wise: candidate `i` is kept with probability
//! `min(exp(z_i / beta_rs), 1)` where `z_i` is its reward standardized within
//! the group. Above-mean candidates are always kept.
//!
//! All randomness comes from [`rng_stream`], which is keyed by
//! `(seed, context_id)`: a context's draws never depend on which other
//! contexts were processed or in what order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rewards::ScoredRollout;

/// A source of uniform draws in `[0, 1)`.
pub trait UniformSource {
    fn next_uniform(&mut self) -> f64;
}

/// Deterministic uniform stream for one context.
#[derive(Debug, Clone)]
pub struct ContextStream {
    rng: ChaCha20Rng,
}

impl ContextStream {
    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }
}

impl UniformSource for ContextStream {
    fn next_uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }
}

/// Replays a fixed list of draws; panics when exhausted.
#[derive(Debug, Clone)]
pub struct ReplayDraws {
    draws: Vec<f64>,
    pos: usize,
}

impl ReplayDraws {
    pub fn new(draws: impl Into<Vec<f64>>) -> Self {
        ReplayDraws {
            draws: draws.into(),
            pos: 0,
        }
    }

    pub fn consumed(&self) -> usize {
        self.pos
    }
}

impl UniformSource for ReplayDraws {
    fn next_uniform(&mut self) -> f64 {
        let u = self.draws[self.pos];
        self.pos += 1;
        u
    }
}

/// Stream derived from `(seed, context_id)` via SHA-256.
pub fn rng_stream(seed: u64, context_id: &str) -> ContextStream {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((context_id.len() as u64).to_le_bytes());
    hasher.update(context_id.as_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    ContextStream {
        rng: ChaCha20Rng::from_seed(key),
    }
}

/// A stream for a named purpose (rollouts, evaluation, ...) that is
/// independent of the acceptance stream of the same context.
pub fn tagged_stream(seed: u64, tag: &str, id: &str) -> ContextStream {
    rng_stream(seed, &format!("{tag}\u{1f}{id}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroSigmaPolicy {
    AcceptAll,
    DiscardGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub beta_rs: f64,
    pub seed: u64,
    pub zero_sigma_policy: ZeroSigmaPolicy,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            beta_rs: 0.1,
            seed: 0,
            zero_sigma_policy: ZeroSigmaPolicy::AcceptAll,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_rs > 0.0) || self.beta_rs.is_nan() {
            return Err(Error::config(format!("beta_rs must be > 0, got {}", self.beta_rs)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub mu: f64,
    /// Population standard deviation; exactly 0 when all rewards are equal.
    pub sigma: f64,
    pub delta_max: f64,
    pub solve_rate: f64,
}

impl GroupStats {
    pub fn from_rewards(rewards: &[f64], solve_rate: f64) -> Result<Self> {
        if rewards.is_empty() {
            return Err(Error::EmptyGroup);
        }
        let n = rewards.len() as f64;
        let mu = rewards.iter().sum::<f64>() / n;
        let max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = rewards.iter().copied().fold(f64::INFINITY, f64::min);
        let delta_max = max - min;
        let sigma = if delta_max == 0.0 {
            0.0
        } else {
            (rewards.iter().map(|r| (r - mu).powi(2)).sum::<f64>() / n).sqrt()
        };
        Ok(GroupStats {
            mu,
            sigma,
            delta_max,
            solve_rate,
        })
    }

    pub fn from_scored(scored: &[ScoredRollout]) -> Result<Self> {
        let rewards: Vec<f64> = scored.iter().map(|s| s.reward).collect();
        let correct: Vec<bool> = scored.iter().map(|s| s.correct).collect();
        Self::from_rewards(&rewards, crate::rewards::solve_rate(&correct)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub context_id: String,
    pub winner_index: usize,
    pub loser_index: usize,
    pub reward_gap: f64,
    pub acceptance_prob: f64,
}

/// Result of pair-wise sampling for one context, with the bookkeeping the
/// pipeline reports.
#[derive(Debug, Clone, Default)]
pub struct PairSampling {
    pub accepted: Vec<PreferencePair>,
    /// Pairs with a positive gap, i.e. the ones that went through the
    /// stochastic acceptance step.
    pub considered: usize,
    pub ties: usize,
}

/// `exp((gap - delta_max) / beta_rs)`.
pub fn pairwise_accept_prob(gap: f64, delta_max: f64, beta_rs: f64) -> Result<f64> {
    if !(beta_rs > 0.0) {
        return Err(Error::config(format!("beta_rs must be > 0, got {beta_rs}")));
    }
    if gap < 0.0 {
        return Err(Error::config(format!("reward gap must be non-negative, got {gap}")));
    }
    if gap > delta_max {
        return Err(Error::GapExceedsMax { gap, delta_max });
    }
    Ok(((gap - delta_max) / beta_rs).exp())
}

fn check_pair_input(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::GroupTooSmall(n));
    }
    Ok(())
}

/// Pair-wise rejection sampling with an explicit draw source: one draw per
/// non-tied pair, pairs visited as (0,1), (0,2), ..., (1,2), ...
pub fn sample_pairs_with(
    context_id: &str,
    rewards: &[f64],
    beta_rs: f64,
    draws: &mut impl UniformSource,
) -> Result<PairSampling> {
    check_pair_input(rewards.len())?;
    let mut candidates = Vec::new();
    let mut ties = 0;
    for i in 0..rewards.len() {
        for j in i + 1..rewards.len() {
            let gap = (rewards[i] - rewards[j]).abs();
            if gap > 0.0 {
                candidates.push((i, j, gap));
            } else {
                ties += 1;
            }
        }
    }
    let delta_max = candidates.iter().map(|c| c.2).fold(0.0, f64::max);

    let mut accepted = Vec::new();
    for &(i, j, gap) in &candidates {
        let p = pairwise_accept_prob(gap, delta_max, beta_rs)?;
        let u = draws.next_uniform();
        if u < p {
            let (winner_index, loser_index) = if rewards[i] > rewards[j] { (i, j) } else { (j, i) };
            accepted.push(PreferencePair {
                context_id: context_id.to_string(),
                winner_index,
                loser_index,
                reward_gap: gap,
                acceptance_prob: p,
            });
        }
    }
    Ok(PairSampling {
        accepted,
        considered: candidates.len(),
        ties,
    })
}

/// Pair-wise sampling for a scored group using the context's own stream.
pub fn sample_pairs(scored: &[ScoredRollout], config: &SamplerConfig) -> Result<PairSampling> {
    config.validate()?;
    check_pair_input(scored.len())?;
    let context_id = &scored[0].raw.context_id;
    let rewards: Vec<f64> = scored.iter().map(|s| s.reward).collect();
    let mut stream = rng_stream(config.seed, context_id);
    sample_pairs_with(context_id, &rewards, config.beta_rs, &mut stream)
}

pub fn build_preference_pairs(scored: &[ScoredRollout], config: &SamplerConfig) -> Result<Vec<PreferencePair>> {
    Ok(sample_pairs(scored, config)?.accepted)
}

/// Per-candidate acceptance probabilities `min(exp(z_i / beta_rs), 1)`.
pub fn groupwise_accept_probs(rewards: &[f64], beta_rs: f64, zero_sigma: ZeroSigmaPolicy) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::GroupTooSmall(rewards.len()));
    }
    if !(beta_rs > 0.0) {
        return Err(Error::config(format!("beta_rs must be > 0, got {beta_rs}")));
    }
    let stats = GroupStats::from_rewards(rewards, 0.0)?;
    if stats.sigma == 0.0 {
        let p = match zero_sigma {
            ZeroSigmaPolicy::AcceptAll => 1.0,
            ZeroSigmaPolicy::DiscardGroup => 0.0,
        };
        return Ok(vec![p; rewards.len()]);
    }
    Ok(rewards
        .iter()
        .map(|r| {
            let z = (r - stats.mu) / stats.sigma;
            if z >= 0.0 {
                1.0
            } else {
                (z / beta_rs).exp().min(1.0)
            }
        })
        .collect())
}

/// Keeps candidate `i` iff `u_i < p_i`; one draw per candidate in order.
pub fn filter_with_draws(probs: &[f64], draws: &mut impl UniformSource) -> Vec<usize> {
    probs
        .iter()
        .enumerate()
        .filter_map(|(i, &p)| {
            let u = draws.next_uniform();
            (u < p).then_some(i)
        })
        .collect()
}

/// Group-wise rejection sampling; returns retained indices.
pub fn filter_group(scored: &[ScoredRollout], config: &SamplerConfig) -> Result<Vec<usize>> {
    config.validate()?;
    let rewards: Vec<f64> = scored.iter().map(|s| s.reward).collect();
    let probs = groupwise_accept_probs(&rewards, config.beta_rs, config.zero_sigma_policy)?;
    let mut stream = rng_stream(config.seed, &scored[0].raw.context_id);
    Ok(filter_with_draws(&probs, &mut stream))
}
