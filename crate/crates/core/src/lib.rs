//! Adaptive rejection sampling (Ada-RS) for selective-thinking training.
//!
//! The crate has two halves:
//!
//! * a data pipeline usable on real rollouts — [`rewards`] scores groups of
//!   rollouts with an adaptive length penalty, [`sampler`] applies pair-wise
//!   or group-wise stochastic rejection sampling, and [`pipeline`] runs both
//!   over JSONL files;
//! * a synthetic tool-calling world ([`toyworld`]) with an analytic-gradient
//!   policy ([`policy`]), on which [`trainer`] runs DPO- and DAPO-style
//!   fine-tuning and [`metrics`] measures accuracy, thinking rate and output
//!   length.
//!
//! ```
//! use adars::rewards::{score_group, RawRollout, RewardConfig, ToolCall};
//! use adars::sampler::{build_preference_pairs, SamplerConfig};
//!
//! let gold = ToolCall::new("get_order_details").with_arg("order_id", "#W1");
//! let rollouts: Vec<RawRollout> = [("", true), ("Check it. Then answer.", true), ("Hmm.", false)]
//!     .iter()
//!     .map(|(think, _)| RawRollout {
//!         context_id: "ctx".into(),
//!         think_text: think.to_string(),
//!         call: gold.clone(),
//!         gold: Some(gold.clone()),
//!         correct_override: None,
//!     })
//!     .collect();
//! let scored = score_group(&rollouts, &RewardConfig { alpha: 0.01, k: 3 }).unwrap();
//! let pairs = build_preference_pairs(&scored, &SamplerConfig::default()).unwrap();
//! assert!(pairs.iter().all(|p| p.reward_gap > 0.0));
//! ```

pub mod config;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod pipeline;
pub mod policy;
pub mod rewards;
pub mod sampler;
pub mod toyworld;
pub mod trainer;

pub use error::{Error, Result};
