//! JSONL dataset pipeline: load rollouts, group by context, score, sample,
//! and write preference pairs or filtered groups.
//!
//! Output records are ordered by `context_id`, and within a context by pair
//! (or candidate) index, so a run is byte-reproducible for a given seed.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::rewards::{score_group, RawRollout, RewardConfig, ScoredRollout, ToolCall};
use crate::sampler::{groupwise_accept_probs, filter_with_draws, rng_stream, sample_pairs, GroupStats, PreferencePair, SamplerConfig};

fn de_bit<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<bool>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Bit {
        Bool(bool),
        Int(i64),
    }
    match Option::<Bit>::deserialize(d)? {
        None => Ok(None),
        Some(Bit::Bool(b)) => Ok(Some(b)),
        Some(Bit::Int(0)) => Ok(Some(false)),
        Some(Bit::Int(1)) => Ok(Some(true)),
        Some(Bit::Int(other)) => Err(serde::de::Error::custom(format!("correct must be 0 or 1, got {other}"))),
    }
}

fn ser_bit<S: Serializer>(v: &Option<bool>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(b) => s.serialize_u8(u8::from(*b)),
        None => s.serialize_none(),
    }
}

/// Wire form of one rollout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub context_id: String,
    #[serde(default)]
    pub context: String,
    #[serde(default)]
    pub think_text: String,
    pub call: ToolCall,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<ToolCall>,
    #[serde(default, deserialize_with = "de_bit", serialize_with = "ser_bit", skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Map<String, serde_json::Value>>,
}

impl RolloutRecord {
    pub fn to_raw(&self) -> RawRollout {
        RawRollout {
            context_id: self.context_id.clone(),
            think_text: self.think_text.clone(),
            call: self.call.clone(),
            gold: self.gold.clone(),
            correct_override: self.correct,
        }
    }
}

pub type RolloutGroups = BTreeMap<String, Vec<RolloutRecord>>;

/// Parses a rollout JSONL file and groups it by context, keeping file order
/// within each group. Blank lines are skipped.
pub fn load_rollouts(path: impl AsRef<Path>) -> Result<RolloutGroups> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut groups = RolloutGroups::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let record: RolloutRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if record.context_id.is_empty() {
            return Err(parse_err("context_id is empty".into()));
        }
        if record.gold.is_none() && record.correct.is_none() {
            return Err(parse_err("record has neither `gold` nor `correct`".into()));
        }
        record.call.validate().map_err(|e| parse_err(e.to_string()))?;
        groups.entry(record.context_id.clone()).or_default().push(record);
    }
    Ok(groups)
}

/// Writes records as JSONL.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: impl IntoIterator<Item = T>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    Pairs,
    Group,
}

/// Aggregate counts for a pipeline run.
///
/// In pair mode `considered` counts pairs that survived tie removal and
/// `accepted` the emitted pairs; in group mode they count candidates in
/// sampled groups and retained candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub mode: PipelineMode,
    pub contexts: usize,
    pub candidates: usize,
    pub considered: usize,
    pub accepted: usize,
    pub ties_discarded: usize,
    pub acceptance_rate: f64,
    /// Set when nothing reached the acceptance step, in which case
    /// `acceptance_rate` is reported as 0.
    pub empty_denominator: bool,
    pub mean_solve_rate: f64,
}

impl PipelineStats {
    fn new(mode: PipelineMode) -> Self {
        PipelineStats {
            mode,
            contexts: 0,
            candidates: 0,
            considered: 0,
            accepted: 0,
            ties_discarded: 0,
            acceptance_rate: 0.0,
            empty_denominator: true,
            mean_solve_rate: 0.0,
        }
    }

    fn finish(mut self, solve_rate_sum: f64) -> Self {
        self.empty_denominator = self.considered == 0;
        self.acceptance_rate = if self.considered > 0 {
            self.accepted as f64 / self.considered as f64
        } else {
            0.0
        };
        self.mean_solve_rate = if self.contexts > 0 {
            solve_rate_sum / self.contexts as f64
        } else {
            0.0
        };
        self
    }

    pub fn summary_line(&self) -> String {
        let unit = match self.mode {
            PipelineMode::Pairs => "pairs",
            PipelineMode::Group => "candidates",
        };
        let mut line = format!(
            "{} contexts, {} candidates: accepted {}/{} {} ({:.2}%), {} ties discarded, mean solve rate {:.4}",
            self.contexts,
            self.candidates,
            self.accepted,
            self.considered,
            unit,
            100.0 * self.acceptance_rate,
            self.ties_discarded,
            self.mean_solve_rate,
        );
        if self.empty_denominator {
            line.push_str(" [nothing reached the acceptance step]");
        }
        line
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// `<dir>/<stem>.stats.json` beside an output file.
pub fn stats_path_for(output: &Path) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "output".into());
    output.with_file_name(format!("{stem}.stats.json"))
}

#[derive(Debug, Clone, Serialize)]
pub struct PairSide {
    pub index: usize,
    #[serde(flatten)]
    pub rollout: RolloutRecord,
    pub reward: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairRecord {
    pub context_id: String,
    pub context: String,
    pub winner: PairSide,
    pub loser: PairSide,
    pub gap: f64,
    pub accept_prob: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupRecord {
    pub context_id: String,
    pub retained: Vec<usize>,
    pub rewards: Vec<f64>,
    pub accept_probs: Vec<f64>,
    pub mu: f64,
    pub sigma: f64,
    pub solve_rate: f64,
}

fn score_records(records: &[RolloutRecord], reward: &RewardConfig) -> Result<Vec<ScoredRollout>> {
    let raws: Vec<RawRollout> = records.iter().map(RolloutRecord::to_raw).collect();
    score_group(&raws, reward)
}

fn side(records: &[RolloutRecord], scored: &[ScoredRollout], index: usize) -> PairSide {
    PairSide {
        index,
        rollout: records[index].clone(),
        reward: scored[index].reward,
    }
}

/// Runs `f` on every group, optionally on a dedicated thread pool, and
/// returns results in context order.
fn map_groups<T: Send>(
    groups: &RolloutGroups,
    workers: Option<usize>,
    f: impl Fn(&str, &[RolloutRecord]) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    let items: Vec<(&String, &Vec<RolloutRecord>)> = groups.iter().collect();
    let run = || items.par_iter().map(|(id, recs)| f(id, recs)).collect::<Result<Vec<T>>>();
    match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::config(e.to_string()))?
            .install(run),
        None => run(),
    }
}

struct PairOutcome {
    records: Vec<PairRecord>,
    considered: usize,
    ties: usize,
    candidates: usize,
    solve_rate: f64,
}

/// Pair-wise pipeline over already-loaded groups.
pub fn pair_pipeline(
    groups: &RolloutGroups,
    reward: &RewardConfig,
    sampler: &SamplerConfig,
    workers: Option<usize>,
) -> Result<(Vec<PairRecord>, PipelineStats)> {
    reward.validate()?;
    sampler.validate()?;
    let outcomes = map_groups(groups, workers, |context_id, records| {
        let scored = score_records(records, reward)?;
        let sampling = sample_pairs(&scored, sampler)?;
        let stats = GroupStats::from_scored(&scored)?;
        let context = records[0].context.clone();
        let out = sampling
            .accepted
            .iter()
            .map(|p| PairRecord {
                context_id: context_id.to_string(),
                context: context.clone(),
                winner: side(records, &scored, p.winner_index),
                loser: side(records, &scored, p.loser_index),
                gap: p.reward_gap,
                accept_prob: p.acceptance_prob,
            })
            .collect();
        Ok(PairOutcome {
            records: out,
            considered: sampling.considered,
            ties: sampling.ties,
            candidates: records.len(),
            solve_rate: stats.solve_rate,
        })
    })?;

    let mut stats = PipelineStats::new(PipelineMode::Pairs);
    let mut solve_sum = 0.0;
    let mut all = Vec::new();
    for o in outcomes {
        stats.contexts += 1;
        stats.candidates += o.candidates;
        stats.considered += o.considered;
        stats.ties_discarded += o.ties;
        stats.accepted += o.records.len();
        solve_sum += o.solve_rate;
        all.extend(o.records);
    }
    Ok((all, stats.finish(solve_sum)))
}

/// Group-wise pipeline over already-loaded groups.
pub fn group_pipeline(
    groups: &RolloutGroups,
    reward: &RewardConfig,
    sampler: &SamplerConfig,
    workers: Option<usize>,
) -> Result<(Vec<GroupRecord>, PipelineStats)> {
    reward.validate()?;
    sampler.validate()?;
    let records = map_groups(groups, workers, |context_id, records| {
        let scored = score_records(records, reward)?;
        let stats = GroupStats::from_scored(&scored)?;
        let rewards: Vec<f64> = scored.iter().map(|s| s.reward).collect();
        let probs = groupwise_accept_probs(&rewards, sampler.beta_rs, sampler.zero_sigma_policy)?;
        let retained = filter_with_draws(&probs, &mut rng_stream(sampler.seed, context_id));
        Ok(GroupRecord {
            context_id: context_id.to_string(),
            retained,
            rewards,
            accept_probs: probs,
            mu: stats.mu,
            sigma: stats.sigma,
            solve_rate: stats.solve_rate,
        })
    })?;

    let mut stats = PipelineStats::new(PipelineMode::Group);
    let mut solve_sum = 0.0;
    for r in &records {
        stats.contexts += 1;
        stats.candidates += r.rewards.len();
        stats.considered += r.rewards.len();
        stats.accepted += r.retained.len();
        solve_sum += r.solve_rate;
    }
    Ok((records, stats.finish(solve_sum)))
}

pub fn run_pair_pipeline(
    input: impl AsRef<Path>,
    output: impl AsRef<Path>,
    reward: &RewardConfig,
    sampler: &SamplerConfig,
) -> Result<PipelineStats> {
    let groups = load_rollouts(input)?;
    let (records, stats) = pair_pipeline(&groups, reward, sampler, None)?;
    write_jsonl(output, &records)?;
    Ok(stats)
}

pub fn run_group_pipeline(
    input: impl AsRef<Path>,
    output: impl AsRef<Path>,
    reward: &RewardConfig,
    sampler: &SamplerConfig,
) -> Result<PipelineStats> {
    let groups = load_rollouts(input)?;
    let (records, stats) = group_pipeline(&groups, reward, sampler, None)?;
    write_jsonl(output, &records)?;
    Ok(stats)
}

/// Baseline pairs without ALP or rejection sampling: a correct rollout beats
/// an incorrect one, and between two correct rollouts the shorter think trace
/// wins. Pairs of incorrect rollouts and equal-length correct pairs carry no
/// preference.
///
/// The reported gap is the difference of the lexicographic score
/// `c - l / (1 + l_max)`, which orders rollouts exactly as the rule does;
/// the acceptance probability is 1.
pub fn build_simple_pairs(scored: &[ScoredRollout]) -> Result<Vec<PreferencePair>> {
    if scored.len() < 2 {
        return Err(Error::GroupTooSmall(scored.len()));
    }
    let l_max = scored.iter().map(|s| s.think_sentences).max().unwrap_or(0) as f64;
    let score = |s: &ScoredRollout| f64::from(u8::from(s.correct)) - s.think_sentences as f64 / (1.0 + l_max);
    let mut pairs = Vec::new();
    for i in 0..scored.len() {
        for j in i + 1..scored.len() {
            let (a, b) = (&scored[i], &scored[j]);
            let winner = match (a.correct, b.correct) {
                (true, false) => Some((i, j)),
                (false, true) => Some((j, i)),
                (true, true) if a.think_sentences < b.think_sentences => Some((i, j)),
                (true, true) if b.think_sentences < a.think_sentences => Some((j, i)),
                _ => None,
            };
            if let Some((w, l)) = winner {
                pairs.push(PreferencePair {
                    context_id: scored[w].raw.context_id.clone(),
                    winner_index: w,
                    loser_index: l,
                    reward_gap: score(&scored[w]) - score(&scored[l]),
                    acceptance_prob: 1.0,
                });
            }
        }
    }
    Ok(pairs)
}
