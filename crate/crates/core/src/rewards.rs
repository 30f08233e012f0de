//! Correctness, think-trace length, solve rate and the adaptive
//! length-penalized (ALP) reward.
//!
//! A rollout earns `c - alpha * s_K * l`, where `c` is the correctness bit,
//! `l` the number of sentences in its think block and `s_K` the fraction of
//! the rollouts for the same context that were correct. Easy contexts (high
//! solve rate) pay more for every sentence of reasoning; contexts nobody
//! solves pay nothing.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

/// A scalar tool-call argument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArgValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl ArgValue {
    fn as_number(&self) -> Option<f64> {
        match self {
            ArgValue::Int(i) => Some(*i as f64),
            ArgValue::Float(f) => Some(*f),
            _ => None,
        }
    }

    /// Equality after canonicalization: integer-valued reals equal their
    /// integer forms, strings and booleans compare exactly.
    pub fn canonical_eq(&self, other: &ArgValue) -> bool {
        match (self, other) {
            (ArgValue::Bool(a), ArgValue::Bool(b)) => a == b,
            (ArgValue::Text(a), ArgValue::Text(b)) => a == b,
            (ArgValue::Int(a), ArgValue::Int(b)) => a == b,
            _ => match (self.as_number(), other.as_number()) {
                (Some(a), Some(b)) => a == b,
                _ => false,
            },
        }
    }
}

impl From<i64> for ArgValue {
    fn from(v: i64) -> Self {
        ArgValue::Int(v)
    }
}

impl From<f64> for ArgValue {
    fn from(v: f64) -> Self {
        ArgValue::Float(v)
    }
}

impl From<&str> for ArgValue {
    fn from(v: &str) -> Self {
        ArgValue::Text(v.to_string())
    }
}

impl From<bool> for ArgValue {
    fn from(v: bool) -> Self {
        ArgValue::Bool(v)
    }
}

/// Tool-call arguments. Keys are unique; duplicate keys are rejected when
/// parsing.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
#[serde(transparent)]
pub struct ToolArgs(pub BTreeMap<String, ArgValue>);

impl<'de> Deserialize<'de> for ToolArgs {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct ArgsVisitor;

        impl<'de> Visitor<'de> for ArgsVisitor {
            type Value = ToolArgs;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map of scalar arguments")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<ToolArgs, A::Error> {
                let mut out = BTreeMap::new();
                while let Some((key, value)) = map.next_entry::<String, ArgValue>()? {
                    if out.contains_key(&key) {
                        return Err(serde::de::Error::custom(format!("duplicate argument key {key:?}")));
                    }
                    out.insert(key, value);
                }
                Ok(ToolArgs(out))
            }
        }

        deserializer.deserialize_map(ArgsVisitor)
    }
}

/// The answer component of a response: which tool to call and with what.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    #[serde(default)]
    pub args: ToolArgs,
}

impl ToolCall {
    pub fn new(name: impl Into<String>) -> Self {
        ToolCall {
            name: name.into(),
            args: ToolArgs::default(),
        }
    }

    pub fn with_arg(mut self, key: impl Into<String>, value: impl Into<ArgValue>) -> Self {
        self.args.0.insert(key.into(), value.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::InvalidResponse("tool call name is empty".into()));
        }
        Ok(())
    }
}

/// One unscored completion for a context.
#[derive(Debug, Clone)]
pub struct RawRollout {
    pub context_id: String,
    /// Contents of the `<think>` block; empty when the model did not think.
    pub think_text: String,
    pub call: ToolCall,
    pub gold: Option<ToolCall>,
    /// Precomputed correctness; takes precedence over `gold` when both are set.
    pub correct_override: Option<bool>,
}

impl RawRollout {
    /// Resolves the correctness bit, or `None` when neither a label nor a
    /// gold call is available.
    pub fn correctness(&self) -> Option<bool> {
        if let Some(c) = self.correct_override {
            return Some(c);
        }
        self.gold.as_ref().map(|g| match_tool_call(&self.call, g))
    }
}

#[derive(Debug, Clone)]
pub struct ScoredRollout {
    pub raw: RawRollout,
    pub correct: bool,
    pub think_sentences: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Length-penalty weight.
    pub alpha: f64,
    /// Expected rollouts per context.
    pub k: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { alpha: 0.01, k: 6 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!("alpha must be a finite value >= 0, got {}", self.alpha)));
        }
        if self.k < 2 {
            return Err(Error::config(format!("K must be at least 2, got {}", self.k)));
        }
        Ok(())
    }
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Counts sentences in a think trace.
///
/// A sentence ends at `.`, `!` or `?` followed by whitespace or the end of
/// the text; an unterminated trailing segment counts as one more sentence.
/// Segments with no content besides whitespace and terminators are ignored.
pub fn count_think_sentences(think_text: &str) -> usize {
    let mut count = 0;
    let mut has_content = false;
    let mut chars = think_text.chars().peekable();
    while let Some(c) = chars.next() {
        if is_terminator(c) {
            let boundary = chars.peek().map_or(true, |n| n.is_whitespace());
            if boundary {
                if has_content {
                    count += 1;
                }
                has_content = false;
            }
        } else if !c.is_whitespace() {
            has_content = true;
        }
    }
    if has_content {
        count += 1;
    }
    count
}

/// Exact-match correctness: same tool name and canonically equal arguments.
pub fn match_tool_call(pred: &ToolCall, gold: &ToolCall) -> bool {
    pred.name == gold.name
        && pred.args.0.len() == gold.args.0.len()
        && pred
            .args
            .0
            .iter()
            .all(|(k, v)| gold.args.0.get(k).is_some_and(|g| v.canonical_eq(g)))
}

/// Fraction of rollouts that were correct.
pub fn solve_rate(correctness: &[bool]) -> Result<f64> {
    if correctness.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let solved = correctness.iter().filter(|&&c| c).count();
    Ok(solved as f64 / correctness.len() as f64)
}

/// `correct - alpha * solve_rate * think_sentences`.
pub fn alp_reward(correct: bool, think_sentences: usize, solve_rate: f64, alpha: f64) -> f64 {
    let c = if correct { 1.0 } else { 0.0 };
    c - alpha * solve_rate * think_sentences as f64
}

/// Scores every rollout of one context.
///
/// Groups whose size differs from `config.k` are scored over their actual
/// size with a warning; fewer than two rollouts is an error.
pub fn score_group(rollouts: &[RawRollout], config: &RewardConfig) -> Result<Vec<ScoredRollout>> {
    config.validate()?;
    let first = rollouts.first().ok_or(Error::EmptyGroup)?;
    if rollouts.len() < 2 {
        return Err(Error::GroupTooSmall(rollouts.len()));
    }
    if let Some(other) = rollouts.iter().find(|r| r.context_id != first.context_id) {
        return Err(Error::MixedContexts {
            first: first.context_id.clone(),
            other: other.context_id.clone(),
        });
    }
    if rollouts.len() != config.k {
        log::warn!(
            "context {:?}: expected K={} rollouts, got {}; solve rate uses the actual count",
            first.context_id,
            config.k,
            rollouts.len()
        );
    }

    let correctness = rollouts
        .iter()
        .enumerate()
        .map(|(index, r)| {
            r.correctness().ok_or_else(|| Error::UnresolvedCorrectness {
                context_id: r.context_id.clone(),
                index,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let s_k = solve_rate(&correctness)?;

    Ok(rollouts
        .iter()
        .zip(correctness)
        .map(|(raw, correct)| {
            let think_sentences = count_think_sentences(&raw.think_text);
            ScoredRollout {
                raw: raw.clone(),
                correct,
                think_sentences,
                reward: alp_reward(correct, think_sentences, s_k, config.alpha),
            }
        })
        .collect())
}
