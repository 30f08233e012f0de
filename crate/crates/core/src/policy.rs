//! Factored toy policy: a logistic think gate, a softmax over think lengths
//! `1..=max_think`, and a softmax over the task's candidate calls.
//!
//! `log pi(y|x) = log P(g|x) + g * log P(L|x) + log P(a|x, g)`.
//!
//! Parameters live in one flat vector (gate, then length rows, then answer
//! rows over the shared tool vocabulary) so optimizers and finite-difference
//! checks can treat them uniformly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::toyworld::{answer_logits, dot, sigmoid, softmax_scaled, GateForcing, ToyResponse, ToyTask, WorldConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub features: usize,
    pub max_think: usize,
    pub tools: usize,
}

impl PolicyShape {
    pub fn of(world: &WorldConfig) -> Self {
        PolicyShape {
            features: world.feature_dim(),
            max_think: world.max_think,
            tools: world.tools,
        }
    }

    pub fn len(&self) -> usize {
        self.features * (1 + self.max_think + self.tools)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub shape: PolicyShape,
    pub values: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(world: &WorldConfig) -> Self {
        Self::zeros_with_shape(PolicyShape::of(world))
    }

    pub fn zeros_with_shape(shape: PolicyShape) -> Self {
        PolicyParams {
            shape,
            values: vec![0.0; shape.len()],
        }
    }

    fn length_offset(&self) -> usize {
        self.shape.features
    }

    fn answer_offset(&self) -> usize {
        self.shape.features * (1 + self.shape.max_think)
    }

    pub fn gate(&self) -> &[f64] {
        &self.values[..self.shape.features]
    }

    pub fn gate_mut(&mut self) -> &mut [f64] {
        let d = self.shape.features;
        &mut self.values[..d]
    }

    /// Row for think length `len` (1-based).
    pub fn length_row(&self, len: usize) -> &[f64] {
        let d = self.shape.features;
        let start = self.length_offset() + (len - 1) * d;
        &self.values[start..start + d]
    }

    pub fn length_row_mut(&mut self, len: usize) -> &mut [f64] {
        let d = self.shape.features;
        let start = self.length_offset() + (len - 1) * d;
        &mut self.values[start..start + d]
    }

    pub fn answer_row(&self, tool: usize) -> &[f64] {
        let d = self.shape.features;
        let start = self.answer_offset() + tool * d;
        &self.values[start..start + d]
    }

    pub fn answer_row_mut(&mut self, tool: usize) -> &mut [f64] {
        let d = self.shape.features;
        let start = self.answer_offset() + tool * d;
        &mut self.values[start..start + d]
    }

    pub fn gate_logit(&self, features: &[f64]) -> f64 {
        dot(self.gate(), features)
    }

    pub fn length_logits(&self, features: &[f64]) -> Vec<f64> {
        (1..=self.shape.max_think).map(|l| dot(self.length_row(l), features)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn check_world(&self, world: &WorldConfig) -> Result<()> {
        if self.shape != PolicyShape::of(world) {
            return Err(Error::config(format!(
                "policy shape {:?} does not match world shape {:?}",
                self.shape,
                PolicyShape::of(world)
            )));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            shape: self.shape,
            gate: self.gate().to_vec(),
            length: (1..=self.shape.max_think).map(|l| self.length_row(l).to_vec()).collect(),
            answer: (0..self.shape.tools).map(|t| self.answer_row(t).to_vec()).collect(),
            world: None,
            producer: None,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let s = ck.shape;
        let bad = |what: &str| Error::config(format!("checkpoint {what} does not match its declared shape"));
        if ck.gate.len() != s.features {
            return Err(bad("gate"));
        }
        if ck.length.len() != s.max_think || ck.length.iter().any(|r| r.len() != s.features) {
            return Err(bad("length matrix"));
        }
        if ck.answer.len() != s.tools || ck.answer.iter().any(|r| r.len() != s.features) {
            return Err(bad("answer matrix"));
        }
        let mut values = Vec::with_capacity(s.len());
        values.extend_from_slice(&ck.gate);
        ck.length.iter().for_each(|r| values.extend_from_slice(r));
        ck.answer.iter().for_each(|r| values.extend_from_slice(r));
        let p = PolicyParams { shape: s, values };
        if !p.is_finite() {
            return Err(Error::config("checkpoint has non-finite parameters"));
        }
        Ok(p)
    }
}

/// On-disk policy: explicit shapes plus the configuration that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub shape: PolicyShape,
    pub gate: Vec<f64>,
    pub length: Vec<Vec<f64>>,
    pub answer: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world: Option<WorldConfig>,
    /// Free-form description of the run that produced the parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub producer: Option<serde_json::Value>,
}

/// One factor of the response likelihood (a "token" of the toy response).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    Gate,
    Length,
    Answer,
}

impl Factor {
    /// Factors present in a response: the length factor only when thinking.
    pub fn of(response: &ToyResponse) -> &'static [Factor] {
        if response.gate {
            &[Factor::Gate, Factor::Length, Factor::Answer]
        } else {
            &[Factor::Gate, Factor::Answer]
        }
    }
}

fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

fn log_softmax_at(logits: &[f64], idx: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits[idx] - lse
}

/// Log-probability of one factor at temperature 1.
pub fn factor_log_prob(world: &WorldConfig, policy: &PolicyParams, task: &ToyTask, r: &ToyResponse, factor: Factor) -> f64 {
    match factor {
        Factor::Gate => {
            let z = policy.gate_logit(&task.features);
            log_sigmoid(if r.gate { z } else { -z })
        }
        Factor::Length => log_softmax_at(&policy.length_logits(&task.features), r.think_len - 1),
        Factor::Answer => log_softmax_at(&answer_logits(world, task, r.gate, policy), r.answer_index),
    }
}

/// Adds `scale * d/dtheta log P(factor)` into `grad`.
pub fn add_factor_grad(
    world: &WorldConfig,
    policy: &PolicyParams,
    task: &ToyTask,
    r: &ToyResponse,
    factor: Factor,
    scale: f64,
    grad: &mut PolicyParams,
) {
    let phi = &task.features;
    let axpy = |row: &mut [f64], coef: f64| {
        for (g, x) in row.iter_mut().zip(phi) {
            *g += scale * coef * x;
        }
    };
    match factor {
        Factor::Gate => {
            let p = sigmoid(policy.gate_logit(phi));
            let g = if r.gate { 1.0 } else { 0.0 };
            axpy(grad.gate_mut(), g - p);
        }
        Factor::Length => {
            let probs = softmax_scaled(&policy.length_logits(phi), 1.0);
            for (i, p) in probs.iter().enumerate() {
                let len = i + 1;
                let hit = if len == r.think_len { 1.0 } else { 0.0 };
                axpy(grad.length_row_mut(len), hit - p);
            }
        }
        Factor::Answer => {
            let probs = softmax_scaled(&answer_logits(world, task, r.gate, policy), 1.0);
            for (a, p) in probs.iter().enumerate() {
                let hit = if a == r.answer_index { 1.0 } else { 0.0 };
                axpy(grad.answer_row_mut(task.tools[a]), hit - p);
            }
        }
    }
}

pub fn log_prob(world: &WorldConfig, policy: &PolicyParams, task: &ToyTask, response: &ToyResponse) -> Result<f64> {
    response.validate(world, task)?;
    Ok(Factor::of(response)
        .iter()
        .map(|&f| factor_log_prob(world, policy, task, response, f))
        .sum())
}

/// Adds `scale * grad log pi(response)` into `grad`.
pub fn add_log_prob_grad(
    world: &WorldConfig,
    policy: &PolicyParams,
    task: &ToyTask,
    response: &ToyResponse,
    scale: f64,
    grad: &mut PolicyParams,
) {
    for &f in Factor::of(response) {
        add_factor_grad(world, policy, task, response, f, scale, grad);
    }
}

pub fn grad_log_prob(world: &WorldConfig, policy: &PolicyParams, task: &ToyTask, response: &ToyResponse) -> Result<PolicyParams> {
    response.validate(world, task)?;
    let mut grad = PolicyParams::zeros_with_shape(policy.shape);
    add_log_prob_grad(world, policy, task, response, 1.0, &mut grad);
    Ok(grad)
}

/// Every valid response for a task: `M * (max_think + 1)` of them.
pub fn enumerate_responses(world: &WorldConfig, task: &ToyTask) -> Vec<ToyResponse> {
    let m = task.candidates.len();
    let mut out = Vec::with_capacity(m * (world.max_think + 1));
    for len in 0..=world.max_think {
        for a in 0..m {
            out.push(ToyResponse::new(len > 0, len, a));
        }
    }
    out
}

/// Closed-form marginals of a (possibly gate-forced) policy on one task.
#[derive(Debug, Clone)]
pub struct ResponseMarginals {
    pub p_think: f64,
    /// P(L = l | think) for l = 1..=max_think.
    pub length_probs: Vec<f64>,
    pub p_gold_think: f64,
    pub p_gold_no_think: f64,
}

impl ResponseMarginals {
    pub fn accuracy(&self) -> f64 {
        self.p_think * self.p_gold_think + (1.0 - self.p_think) * self.p_gold_no_think
    }

    pub fn expected_think_len(&self) -> f64 {
        self.length_probs.iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum()
    }
}

pub fn marginals(world: &WorldConfig, policy: &PolicyParams, task: &ToyTask, forcing: GateForcing) -> ResponseMarginals {
    let p_think = match forcing {
        GateForcing::On => 1.0,
        GateForcing::Off => 0.0,
        GateForcing::Free => sigmoid(policy.gate_logit(&task.features)),
    };
    let gold = |gate| softmax_scaled(&answer_logits(world, task, gate, policy), 1.0)[task.gold_index];
    ResponseMarginals {
        p_think,
        length_probs: softmax_scaled(&policy.length_logits(&task.features), 1.0),
        p_gold_think: gold(true),
        p_gold_no_think: gold(false),
    }
}

/// A policy evaluated under a gate override, e.g. the always-think and
/// never-think baselines. The wrapped parameters are left untouched.
#[derive(Debug, Clone, Copy)]
pub struct GatedPolicy<'a> {
    pub params: &'a PolicyParams,
    pub forcing: GateForcing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    ThinkOn,
    ThinkOff,
}

pub fn baseline_policy(params: &PolicyParams, mode: BaselineMode) -> GatedPolicy<'_> {
    GatedPolicy {
        params,
        forcing: match mode {
            BaselineMode::ThinkOn => GateForcing::On,
            BaselineMode::ThinkOff => GateForcing::Off,
        },
    }
}

impl<'a> GatedPolicy<'a> {
    pub fn free(params: &'a PolicyParams) -> Self {
        GatedPolicy {
            params,
            forcing: GateForcing::Free,
        }
    }
}
