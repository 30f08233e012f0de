//! Synthetic single-step tool-calling world.
//!
//! Each task belongs to a persona family and a difficulty bucket. The gold
//! call is usually the family's canonical tool, so an answer head can learn
//! it from the features; with probability `gold_noise * d` it is another tool
//! from the family's vocabulary. Independently of what the policy has
//! learned, the environment adds evidence to the gold candidate's logit:
//! `no_think_bonus * (1 - d)` always and `think_bonus * d` when the response
//! thinks. Easy tasks are answerable without thinking; hard ones need it.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::rewards::{RawRollout, ToolCall};
use crate::sampler::{tagged_stream, ContextStream};

const TOOL_NAMES: &[&str] = &[
    "get_order_details",
    "get_user_details",
    "get_product_details",
    "find_user_id_by_email",
    "find_user_id_by_name_zip",
    "cancel_pending_order",
    "modify_pending_order_items",
    "modify_pending_order_address",
    "modify_user_address",
    "return_delivered_order_items",
    "exchange_delivered_order_items",
    "list_all_product_types",
    "transfer_to_human_agents",
];

const FILLER: &[&str] = &[
    "The user wants help with an order.",
    "Check which tool fits the request.",
    "Compare the candidate calls against the details given.",
    "The order identifier is in the message.",
    "Make sure the arguments are complete.",
    "Rule out the tools that do not apply.",
    "Confirm the persona's usual intent.",
    "Settle on the best matching call.",
];

pub fn tool_name(index: usize) -> String {
    TOOL_NAMES.get(index).map_or_else(|| format!("tool_{index}"), |s| s.to_string())
}

/// Output-token model: `answer + g * (think_open + L * per_sentence)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenModel {
    pub answer: usize,
    pub think_open: usize,
    pub per_sentence: usize,
}

impl Default for TokenModel {
    fn default() -> Self {
        TokenModel {
            answer: 12,
            think_open: 4,
            per_sentence: 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub families: usize,
    /// Difficulty of each bucket, in `[0, 1]`.
    pub difficulties: Vec<f64>,
    /// Candidates per task.
    pub candidates: usize,
    /// Size of the shared tool vocabulary.
    pub tools: usize,
    /// Tools available to each family; a window of the shared vocabulary.
    pub family_tools: usize,
    /// Longest think trace, in sentences.
    pub max_think: usize,
    pub no_think_bonus: f64,
    pub think_bonus: f64,
    /// Probability scale (times difficulty) that the gold call is not the
    /// family's canonical tool.
    pub gold_noise: f64,
    pub tokens: TokenModel,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            families: 8,
            difficulties: vec![0.1, 0.5, 0.9],
            candidates: 6,
            tools: 12,
            family_tools: 8,
            max_think: 8,
            no_think_bonus: 4.0,
            think_bonus: 6.0,
            gold_noise: 0.01,
            tokens: TokenModel::default(),
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn buckets(&self) -> usize {
        self.difficulties.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.families + self.buckets()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.families == 0 || self.difficulties.is_empty() {
            return fail("world needs at least one family and one difficulty bucket".into());
        }
        if self.difficulties.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return fail(format!("difficulties must lie in [0, 1], got {:?}", self.difficulties));
        }
        if self.candidates < 2 {
            return fail(format!("need at least 2 candidates per task, got {}", self.candidates));
        }
        if self.family_tools < self.candidates || self.tools < self.family_tools {
            return fail(format!(
                "need candidates <= family_tools <= tools, got {} / {} / {}",
                self.candidates, self.family_tools, self.tools
            ));
        }
        if self.max_think == 0 {
            return fail("max_think must be positive".into());
        }
        if !(self.no_think_bonus >= 0.0 && self.think_bonus >= 0.0) {
            return fail("evidence bonuses must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.gold_noise) {
            return fail(format!("gold_noise must lie in [0, 1], got {}", self.gold_noise));
        }
        Ok(())
    }

    /// Vocabulary indices available to a family; the first is canonical.
    pub fn family_vocabulary(&self, family: usize) -> Vec<usize> {
        (0..self.family_tools).map(|j| (family + j) % self.tools).collect()
    }

    /// Same world with a different task seed (e.g. a held-out split).
    pub fn with_seed(&self, seed: u64) -> Self {
        WorldConfig { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTask {
    pub task_id: String,
    pub family: usize,
    pub bucket: usize,
    pub difficulty: f64,
    /// One-hot family followed by one-hot bucket.
    pub features: Vec<f64>,
    pub candidates: Vec<ToolCall>,
    /// Vocabulary row of each candidate.
    pub tools: Vec<usize>,
    pub gold_index: usize,
}

impl ToyTask {
    pub fn gold(&self) -> &ToolCall {
        &self.candidates[self.gold_index]
    }

    pub fn describe(&self) -> String {
        let order = self.candidates[0].args.0.get("order_id");
        format!(
            "persona {} | difficulty {:.2} | order {}",
            self.family,
            self.difficulty,
            order.map_or_else(String::new, |v| serde_json::to_string(v).unwrap_or_default())
        )
    }
}

/// `n` tasks; task `i` has family `i mod F` and bucket `i mod B`.
pub fn generate_tasks(config: &WorldConfig, n: usize) -> Result<Vec<ToyTask>> {
    config.validate()?;
    if n == 0 {
        return Err(Error::config("number of tasks must be positive"));
    }
    Ok((0..n).map(|i| make_task(config, i)).collect())
}

fn make_task(config: &WorldConfig, i: usize) -> ToyTask {
    let task_id = format!("task-{}-{:05}", config.seed, i);
    let family = i % config.families;
    let bucket = i % config.buckets();
    let difficulty = config.difficulties[bucket];
    let mut stream = tagged_stream(config.seed, "task", &task_id);
    let rng = stream.rng();

    let vocab = config.family_vocabulary(family);
    let canonical = vocab[0];
    let gold_tool = if rng.gen::<f64>() < config.gold_noise * difficulty {
        vocab[rng.gen_range(1..vocab.len())]
    } else {
        canonical
    };
    let mut pool: Vec<usize> = vocab.iter().copied().filter(|&t| t != gold_tool && t != canonical).collect();
    pool.shuffle(rng);
    let mut tools = vec![gold_tool];
    if canonical != gold_tool {
        tools.push(canonical);
    }
    tools.extend(pool.into_iter().take(config.candidates - tools.len()));
    tools.shuffle(rng);
    let gold_index = tools.iter().position(|&t| t == gold_tool).expect("gold is a candidate");

    let order_id = format!("#W{}", rng.gen_range(1_000_000..10_000_000));
    let candidates = tools
        .iter()
        .map(|&t| ToolCall::new(tool_name(t)).with_arg("order_id", order_id.as_str()))
        .collect();

    let mut features = vec![0.0; config.feature_dim()];
    features[family] = 1.0;
    features[config.families + bucket] = 1.0;

    ToyTask {
        task_id,
        family,
        bucket,
        difficulty,
        features,
        candidates,
        tools,
        gold_index,
    }
}

/// Answer logits for each candidate: learned score plus environment evidence
/// on the gold candidate.
pub fn answer_logits(config: &WorldConfig, task: &ToyTask, gate: bool, policy: &PolicyParams) -> Vec<f64> {
    let d = task.difficulty;
    let evidence = config.no_think_bonus * (1.0 - d) + if gate { config.think_bonus * d } else { 0.0 };
    task.tools
        .iter()
        .enumerate()
        .map(|(a, &tool)| {
            let learned = dot(policy.answer_row(tool), &task.features);
            if a == task.gold_index {
                learned + evidence
            } else {
                learned
            }
        })
        .collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyResponse {
    pub gate: bool,
    pub think_len: usize,
    pub answer_index: usize,
    pub think_text: String,
}

impl ToyResponse {
    pub fn new(gate: bool, think_len: usize, answer_index: usize) -> Self {
        ToyResponse {
            gate,
            think_len,
            answer_index,
            think_text: render_think(think_len),
        }
    }

    pub fn validate(&self, config: &WorldConfig, task: &ToyTask) -> Result<()> {
        if self.gate != (self.think_len > 0) {
            return Err(Error::InvalidResponse(format!(
                "gate {} inconsistent with think length {}",
                self.gate, self.think_len
            )));
        }
        if self.think_len > config.max_think {
            return Err(Error::InvalidResponse(format!(
                "think length {} exceeds max {}",
                self.think_len, config.max_think
            )));
        }
        if self.answer_index >= task.candidates.len() {
            return Err(Error::InvalidResponse(format!("answer index {} out of range", self.answer_index)));
        }
        Ok(())
    }
}

pub fn render_think(sentences: usize) -> String {
    (0..sentences).map(|i| FILLER[i % FILLER.len()]).collect::<Vec<_>>().join(" ")
}

/// How the gate is chosen when sampling a group of rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThinkMode {
    Free,
    ForcedOn,
    ForcedOff,
    /// First half thinking-on, second half thinking-off.
    HalfHalf,
}

/// Gate override applied to a single response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateForcing {
    Free,
    On,
    Off,
}

#[derive(Debug, Clone)]
pub struct ToyRollout {
    pub response: ToyResponse,
    pub raw: RawRollout,
}

fn sample_index(logits: &[f64], temperature: f64, rng: &mut impl Rng) -> usize {
    if temperature == 0.0 {
        let mut best = 0;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = i;
            }
        }
        return best;
    }
    let probs = softmax_scaled(logits, 1.0 / temperature);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

pub(crate) fn softmax_scaled(logits: &[f64], scale: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| ((l - max) * scale).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Samples one response. A temperature of 0 decodes greedily (the gate
/// opens only for a strictly positive gate logit; ties go to the lowest
/// index).
pub fn sample_response(
    config: &WorldConfig,
    policy: &PolicyParams,
    task: &ToyTask,
    forcing: GateForcing,
    temperature: f64,
    rng: &mut impl Rng,
) -> ToyResponse {
    let gate = match forcing {
        GateForcing::On => true,
        GateForcing::Off => false,
        GateForcing::Free => {
            let z = policy.gate_logit(&task.features);
            if temperature == 0.0 {
                z > 0.0
            } else {
                rng.gen::<f64>() < sigmoid(z / temperature)
            }
        }
    };
    let think_len = if gate {
        1 + sample_index(&policy.length_logits(&task.features), temperature, rng)
    } else {
        0
    };
    let answer_index = sample_index(&answer_logits(config, task, gate, policy), temperature, rng);
    ToyResponse::new(gate, think_len, answer_index)
}

pub fn to_raw(task: &ToyTask, response: &ToyResponse) -> RawRollout {
    RawRollout {
        context_id: task.task_id.clone(),
        think_text: response.think_text.clone(),
        call: task.candidates[response.answer_index].clone(),
        gold: Some(task.gold().clone()),
        correct_override: None,
    }
}

/// Samples `k` rollouts for one task.
pub fn sample_rollouts(
    config: &WorldConfig,
    policy: &PolicyParams,
    task: &ToyTask,
    k: usize,
    mode: ThinkMode,
    temperature: f64,
    stream: &mut ContextStream,
) -> Result<Vec<ToyRollout>> {
    if k < 2 {
        return Err(Error::config(format!("need at least 2 rollouts per task, got {k}")));
    }
    if mode == ThinkMode::HalfHalf && k % 2 == 1 {
        return Err(Error::config(format!("half_half sampling needs an even K, got {k}")));
    }
    if !(temperature >= 0.0) {
        return Err(Error::config(format!("temperature must be >= 0, got {temperature}")));
    }
    let rng = stream.rng();
    Ok((0..k)
        .map(|i| {
            let forcing = match mode {
                ThinkMode::Free => GateForcing::Free,
                ThinkMode::ForcedOn => GateForcing::On,
                ThinkMode::ForcedOff => GateForcing::Off,
                ThinkMode::HalfHalf if i < k / 2 => GateForcing::On,
                ThinkMode::HalfHalf => GateForcing::Off,
            };
            let response = sample_response(config, policy, task, forcing, temperature, rng);
            let raw = to_raw(task, &response);
            ToyRollout { response, raw }
        })
        .collect())
}

/// Output tokens of a response, reasoning included.
pub fn token_count(response: &ToyResponse, config: &WorldConfig) -> usize {
    config.tokens.answer + reasoning_tokens(response, config)
}

pub fn reasoning_tokens(response: &ToyResponse, config: &WorldConfig) -> usize {
    if response.gate {
        config.tokens.think_open + response.think_len * config.tokens.per_sentence
    } else {
        0
    }
}
