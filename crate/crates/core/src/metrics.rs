//! Policy evaluation on held-out toy tasks, plus sweep and frontier reports.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{marginals, GatedPolicy};
use crate::rewards::match_tool_call;
use crate::sampler::tagged_stream;
use crate::toyworld::{reasoning_tokens, sample_response, token_count, ToyTask, WorldConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Greedy decoding of gate, length and answer.
    Argmax,
    /// `n_samples` draws per task at temperature 1.
    Sampled,
    /// Closed-form expectations under the policy at temperature 1.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Measures {
    pub accuracy: f64,
    pub thinking_rate: f64,
    pub avg_output_tokens: f64,
    pub avg_reasoning_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub bucket: usize,
    pub difficulty: f64,
    pub tasks: usize,
    #[serde(flatten)]
    pub measures: Measures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tasks: usize,
    #[serde(flatten)]
    pub measures: Measures,
    pub per_bucket: Vec<BucketReport>,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        self.measures.accuracy
    }

    pub fn thinking_rate(&self) -> f64 {
        self.measures.thinking_rate
    }

    pub fn avg_output_tokens(&self) -> f64 {
        self.measures.avg_output_tokens
    }

    pub fn bucket(&self, bucket: usize) -> Option<&BucketReport> {
        self.per_bucket.iter().find(|b| b.bucket == bucket)
    }
}

fn task_measures(world: &WorldConfig, policy: GatedPolicy<'_>, task: &ToyTask, mode: EvalMode, n_samples: usize, seed: u64) -> Measures {
    let tok = &world.tokens;
    match mode {
        EvalMode::Exact => {
            let m = marginals(world, policy.params, task, policy.forcing);
            let reasoning = m.p_think * (tok.think_open as f64 + tok.per_sentence as f64 * m.expected_think_len());
            Measures {
                accuracy: m.accuracy(),
                thinking_rate: m.p_think,
                avg_output_tokens: tok.answer as f64 + reasoning,
                avg_reasoning_tokens: reasoning,
            }
        }
        EvalMode::Argmax | EvalMode::Sampled => {
            let (temperature, draws) = if mode == EvalMode::Argmax { (0.0, 1) } else { (1.0, n_samples) };
            let mut stream = tagged_stream(seed, "eval", &task.task_id);
            let mut acc = Measures::default();
            for _ in 0..draws {
                let r = sample_response(world, policy.params, task, policy.forcing, temperature, stream.rng());
                if match_tool_call(&task.candidates[r.answer_index], task.gold()) {
                    acc.accuracy += 1.0;
                }
                if r.gate {
                    acc.thinking_rate += 1.0;
                }
                acc.avg_output_tokens += token_count(&r, world) as f64;
                acc.avg_reasoning_tokens += reasoning_tokens(&r, world) as f64;
            }
            scale(acc, 1.0 / draws as f64)
        }
    }
}

fn scale(m: Measures, s: f64) -> Measures {
    Measures {
        accuracy: m.accuracy * s,
        thinking_rate: m.thinking_rate * s,
        avg_output_tokens: m.avg_output_tokens * s,
        avg_reasoning_tokens: m.avg_reasoning_tokens * s,
    }
}

fn add(a: Measures, b: Measures) -> Measures {
    Measures {
        accuracy: a.accuracy + b.accuracy,
        thinking_rate: a.thinking_rate + b.thinking_rate,
        avg_output_tokens: a.avg_output_tokens + b.avg_output_tokens,
        avg_reasoning_tokens: a.avg_reasoning_tokens + b.avg_reasoning_tokens,
    }
}

/// Evaluates a (possibly gate-forced) policy. Sampled mode draws from a
/// per-task stream keyed by `seed`, so results do not depend on task order.
pub fn evaluate(
    world: &WorldConfig,
    policy: GatedPolicy<'_>,
    tasks: &[ToyTask],
    mode: EvalMode,
    n_samples: usize,
    seed: u64,
) -> Result<EvalReport> {
    if tasks.is_empty() {
        return Err(Error::config("evaluation needs at least one task"));
    }
    if mode == EvalMode::Sampled && n_samples == 0 {
        return Err(Error::config("sampled evaluation needs n_samples > 0"));
    }
    policy.params.check_world(world)?;

    let per_task: Vec<Measures> = tasks.iter().map(|t| task_measures(world, policy, t, mode, n_samples, seed)).collect();

    let mut per_bucket: Vec<BucketReport> = Vec::new();
    let mut total = Measures::default();
    for (task, m) in tasks.iter().zip(&per_task) {
        total = add(total, *m);
        match per_bucket.iter_mut().find(|b| b.bucket == task.bucket) {
            Some(b) => {
                b.tasks += 1;
                b.measures = add(b.measures, *m);
            }
            None => per_bucket.push(BucketReport {
                bucket: task.bucket,
                difficulty: task.difficulty,
                tasks: 1,
                measures: *m,
            }),
        }
    }
    per_bucket.sort_by_key(|b| b.bucket);
    for b in &mut per_bucket {
        b.measures = scale(b.measures, 1.0 / b.tasks as f64);
    }
    Ok(EvalReport {
        tasks: tasks.len(),
        measures: scale(total, 1.0 / tasks.len() as f64),
        per_bucket,
    })
}

/// One method's position relative to a baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierRow {
    pub method: String,
    pub accuracy: f64,
    pub thinking_rate: f64,
    pub avg_output_tokens: f64,
    /// Percentage decrease in average output tokens versus the baseline.
    pub token_reduction_pct: f64,
    pub accuracy_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierReport {
    pub baseline: String,
    pub rows: Vec<FrontierRow>,
}

pub fn frontier_report(reports: &[(String, EvalReport)], baseline: &str) -> Result<FrontierReport> {
    let base = reports
        .iter()
        .find(|(name, _)| name == baseline)
        .map(|(_, r)| r)
        .ok_or_else(|| Error::config(format!("baseline {baseline:?} is not among the reports")))?;
    let rows = reports
        .iter()
        .map(|(name, r)| FrontierRow {
            method: name.clone(),
            accuracy: r.accuracy(),
            thinking_rate: r.thinking_rate(),
            avg_output_tokens: r.avg_output_tokens(),
            token_reduction_pct: 100.0 * (1.0 - r.avg_output_tokens() / base.avg_output_tokens()),
            accuracy_delta: r.accuracy() - base.accuracy(),
        })
        .collect();
    Ok(FrontierReport {
        baseline: baseline.to_string(),
        rows,
    })
}

impl FrontierReport {
    pub fn render(&self) -> String {
        let mut out = format!("relative to {}\n", self.baseline);
        let _ = writeln!(out, "{:<16} {:>8} {:>9} {:>10} {:>11} {:>9}", "method", "acc", "think%", "tokens", "reduction%", "acc_delta");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<16} {:>8.4} {:>9.2} {:>10.2} {:>11.1} {:>+9.4}",
                r.method,
                r.accuracy,
                100.0 * r.thinking_rate,
                r.avg_output_tokens,
                r.token_reduction_pct,
                r.accuracy_delta
            );
        }
        out
    }
}

/// One cell of a hyperparameter sweep, with the same columns as a
/// beta_rs/alpha sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub beta_rs: f64,
    pub alpha: f64,
    pub accuracy: Option<f64>,
    pub avg_output_tokens: Option<f64>,
    pub avg_reasoning_tokens: Option<f64>,
    pub thinking_rate: Option<f64>,
    pub training_samples: Option<usize>,
    pub acceptance_rate: Option<f64>,
    /// Training samples as a fraction of all produced candidates/pairs.
    pub train_fraction: Option<f64>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn failed(method: &str, beta_rs: f64, alpha: f64, err: &Error) -> Self {
        SweepRow {
            method: method.to_string(),
            beta_rs,
            alpha,
            accuracy: None,
            avg_output_tokens: None,
            avg_reasoning_tokens: None,
            thinking_rate: None,
            training_samples: None,
            acceptance_rate: None,
            train_fraction: None,
            error: Some(err.to_string()),
        }
    }
}

pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

pub fn render_sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:>8} {:>7} {:>8} {:>11} {:>11} {:>9} {:>9} {:>10} {:>9}",
        "method", "beta_rs", "alpha", "acc%", "out_tokens", "reason_tok", "think%", "samples", "accept%", "fraction"
    );
    for r in rows {
        let pct = |v: Option<f64>| opt(v.map(|x| 100.0 * x), 2);
        let _ = write!(
            out,
            "{:<12} {:>8} {:>7} {:>8} {:>11} {:>11} {:>9} {:>9} {:>10} {:>9}",
            r.method,
            format!("{:e}", r.beta_rs),
            r.alpha,
            pct(r.accuracy),
            opt(r.avg_output_tokens, 2),
            opt(r.avg_reasoning_tokens, 2),
            pct(r.thinking_rate),
            r.training_samples.map_or_else(|| "-".into(), |n| n.to_string()),
            pct(r.acceptance_rate),
            opt(r.train_fraction, 2),
        );
        if let Some(e) = &r.error {
            let _ = write!(out, "  error: {e}");
        }
        out.push('\n');
    }
    out
}
