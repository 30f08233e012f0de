//! C ABI over `adars`.
//!
//! Every fallible function returns an [`AdarsStatus`]; on failure the message
//! is available from [`adars_last_error_message`] on the same thread. Outputs
//! are written through caller-provided pointers only on success. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use adars::config::{eval_world, RunConfig, TeacherKind};
use adars::experiment::{
    checkpoint_for, eval_report, initial_policy, read_checkpoint, restore_checkpoint, train_method, write_checkpoint, Method,
};
use adars::pipeline::{group_pipeline, load_rollouts, pair_pipeline, stats_path_for, write_jsonl, PipelineStats};
use adars::policy::{baseline_policy, BaselineMode, GatedPolicy, PolicyParams};
use adars::rewards::{alp_reward, count_think_sentences};
use adars::sampler::{groupwise_accept_probs, pairwise_accept_prob, ZeroSigmaPolicy};
use adars::toyworld::generate_tasks;
use adars::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdarsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    NoAcceptedPairs = 6,
    InvalidData = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdarsZeroSigma {
    AcceptAll = 0,
    DiscardGroup = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdarsFilterMode {
    Pairs = 0,
    Group = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdarsGate {
    /// The policy decides whether to think.
    Free = 0,
    ThinkOn = 1,
    ThinkOff = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdarsMethod {
    AdaRsDpo = 0,
    AdaRsDapo = 1,
    DpoSimple = 2,
    Sft = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AdarsPipelineStats {
    pub contexts: usize,
    pub candidates: usize,
    pub considered: usize,
    pub accepted: usize,
    pub ties_discarded: usize,
    pub acceptance_rate: f64,
    pub mean_solve_rate: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AdarsEvalSummary {
    pub tasks: usize,
    pub accuracy: f64,
    pub thinking_rate: f64,
    pub avg_output_tokens: f64,
    pub avg_reasoning_tokens: f64,
}

/// A run configuration plus the reward/sampler settings used by filtering.
pub struct AdarsPipeline {
    config: RunConfig,
}

/// A policy together with the configuration (world, evaluation) it runs in.
pub struct AdarsPolicy {
    config: RunConfig,
    params: PolicyParams,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> AdarsStatus {
    match err {
        Error::Config(_) => AdarsStatus::InvalidArgument,
        Error::Io { .. } => AdarsStatus::Io,
        Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => AdarsStatus::Parse,
        Error::NoAcceptedPairs => AdarsStatus::NoAcceptedPairs,
        _ => AdarsStatus::InvalidData,
    }
}

struct Failure(AdarsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

type FfiResult<T> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> AdarsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AdarsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            AdarsStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(AdarsStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(AdarsStatus::InvalidArgument, msg.into())
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(AdarsStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &str) -> FfiResult<Option<&'a str>> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Parses a TOML run configuration (NULL or empty: defaults) and resolves
/// the seed the same way the command line does.
fn parse_config(text: Option<&str>) -> FfiResult<RunConfig> {
    let mut cfg = match text {
        Some(t) if !t.trim().is_empty() => RunConfig::parse(t, false)?,
        _ => RunConfig::default(),
    };
    cfg.resolve_seed(None)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn adars_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn adars_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Counts reasoning sentences in a NUL-terminated UTF-8 think trace.
///
/// # Safety
/// `think_text` must be NULL or a valid NUL-terminated string; `out` must be
/// NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn adars_count_think_sentences(think_text: *const c_char, out: *mut usize) -> AdarsStatus {
    guard(|| {
        let text = str_arg(think_text, "think_text")?;
        *out_ref(out, "out")? = count_think_sentences(text);
        Ok(())
    })
}

/// Length-penalized reward of one rollout.
///
/// # Safety
/// `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn adars_alp_reward(
    correct: bool,
    think_sentences: usize,
    solve_rate: f64,
    alpha: f64,
    out: *mut f64,
) -> AdarsStatus {
    guard(|| {
        if !(0.0..=1.0).contains(&solve_rate) {
            return Err(invalid(format!("solve_rate must lie in [0, 1], got {solve_rate}")));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(invalid(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        *out_ref(out, "out")? = alp_reward(correct, think_sentences, solve_rate, alpha);
        Ok(())
    })
}

/// Acceptance probability of a preference pair with reward gap `gap`.
///
/// # Safety
/// `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn adars_pairwise_accept_prob(gap: f64, delta_max: f64, beta_rs: f64, out: *mut f64) -> AdarsStatus {
    guard(|| {
        *out_ref(out, "out")? = pairwise_accept_prob(gap, delta_max, beta_rs)?;
        Ok(())
    })
}

/// Per-candidate acceptance probabilities for one group of `n` rewards,
/// written to `out[0..n]`.
///
/// # Safety
/// `rewards` and `out` must point to `n` readable / writable doubles.
#[no_mangle]
pub unsafe extern "C" fn adars_groupwise_accept_probs(
    rewards: *const f64,
    n: usize,
    beta_rs: f64,
    zero_sigma: AdarsZeroSigma,
    out: *mut f64,
) -> AdarsStatus {
    guard(|| {
        let rewards = slice_arg(rewards, n, "rewards")?;
        if n > 0 && out.is_null() {
            return Err(null("out"));
        }
        let policy = match zero_sigma {
            AdarsZeroSigma::AcceptAll => ZeroSigmaPolicy::AcceptAll,
            AdarsZeroSigma::DiscardGroup => ZeroSigmaPolicy::DiscardGroup,
        };
        let probs = groupwise_accept_probs(rewards, beta_rs, policy)?;
        if n > 0 {
            std::slice::from_raw_parts_mut(out, n).copy_from_slice(&probs);
        }
        Ok(())
    })
}

/// Creates a filtering pipeline from a TOML run configuration (NULL:
/// defaults). Only the `[reward]`, `[sampler]` and `seed` entries matter.
///
/// # Safety
/// `config_toml` must be NULL or a valid string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn adars_pipeline_new(config_toml: *const c_char, out: *mut *mut AdarsPipeline) -> AdarsStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let config = parse_config(opt_str_arg(config_toml, "config_toml")?)?;
        *out = Box::into_raw(Box::new(AdarsPipeline { config }));
        Ok(())
    })
}

/// Overrides the length-penalty coefficient, rejection temperature and seed.
///
/// # Safety
/// `pipeline` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn adars_pipeline_set(pipeline: *mut AdarsPipeline, alpha: f64, beta_rs: f64, seed: u64) -> AdarsStatus {
    guard(|| {
        let p = out_ref(pipeline, "pipeline")?;
        let mut cfg = p.config.clone();
        cfg.reward.alpha = alpha;
        cfg.sampler.beta_rs = beta_rs;
        cfg.sampler.seed = seed;
        cfg.reward.validate()?;
        cfg.sampler.validate()?;
        p.config = cfg;
        Ok(())
    })
}

/// Reads rollout JSONL from `input_path`, filters it, and writes the result
/// to `output_path` with statistics in `<stem>.stats.json` beside it.
/// `stats` may be NULL.
///
/// # Safety
/// `pipeline` must be a live handle; paths must be valid strings.
#[no_mangle]
pub unsafe extern "C" fn adars_pipeline_run(
    pipeline: *const AdarsPipeline,
    mode: AdarsFilterMode,
    input_path: *const c_char,
    output_path: *const c_char,
    stats: *mut AdarsPipelineStats,
) -> AdarsStatus {
    guard(|| {
        let p = pipeline.as_ref().ok_or_else(|| null("pipeline"))?;
        let input = PathBuf::from(str_arg(input_path, "input_path")?);
        let output = PathBuf::from(str_arg(output_path, "output_path")?);
        let groups = load_rollouts(&input)?;
        let (reward, sampler) = (&p.config.reward, &p.config.sampler);
        let s = match mode {
            AdarsFilterMode::Pairs => {
                let (records, s) = pair_pipeline(&groups, reward, sampler, None)?;
                write_jsonl(&output, &records)?;
                s
            }
            AdarsFilterMode::Group => {
                let (records, s) = group_pipeline(&groups, reward, sampler, None)?;
                write_jsonl(&output, &records)?;
                s
            }
        };
        s.write_json(stats_path_for(&output))?;
        if let Some(out) = stats.as_mut() {
            *out = summary_of(&s);
        }
        Ok(())
    })
}

fn summary_of(s: &PipelineStats) -> AdarsPipelineStats {
    AdarsPipelineStats {
        contexts: s.contexts,
        candidates: s.candidates,
        considered: s.considered,
        accepted: s.accepted,
        ties_discarded: s.ties_discarded,
        acceptance_rate: s.acceptance_rate,
        mean_solve_rate: s.mean_solve_rate,
    }
}

/// Releases a pipeline handle. NULL is ignored.
///
/// # Safety
/// `pipeline` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn adars_pipeline_free(pipeline: *mut AdarsPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}

/// The base (think-heavy) policy of a configuration (NULL: defaults).
///
/// # Safety
/// `config_toml` must be NULL or a valid string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn adars_policy_base(config_toml: *const c_char, out: *mut *mut AdarsPolicy) -> AdarsStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let config = parse_config(opt_str_arg(config_toml, "config_toml")?)?;
        let params = initial_policy(&config, TeacherKind::Base)?;
        *out = Box::into_raw(Box::new(AdarsPolicy { config, params }));
        Ok(())
    })
}

/// Trains `method` under a configuration (NULL: defaults) on its training split.
///
/// # Safety
/// `config_toml` must be NULL or a valid string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn adars_policy_train(
    config_toml: *const c_char,
    method: AdarsMethod,
    out: *mut *mut AdarsPolicy,
) -> AdarsStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let config = parse_config(opt_str_arg(config_toml, "config_toml")?)?;
        let method = match method {
            AdarsMethod::AdaRsDpo => Method::AdaRsDpo,
            AdarsMethod::AdaRsDapo => Method::AdaRsDapo,
            AdarsMethod::DpoSimple => Method::DpoSimple,
            AdarsMethod::Sft => Method::Sft,
        };
        let tasks = config.train_tasks()?;
        let outcome = train_method(&config, method, &tasks, None, None)?;
        let params = outcome.policy;
        *out = Box::into_raw(Box::new(AdarsPolicy { config, params }));
        Ok(())
    })
}

/// Loads a checkpoint JSON file written by the `train` command or
/// [`adars_policy_save`]. Evaluation settings come from `config_toml`
/// (NULL: defaults); the world comes from the checkpoint when recorded.
///
/// # Safety
/// `path` must be a valid string, `config_toml` NULL or valid, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn adars_policy_load(
    path: *const c_char,
    config_toml: *const c_char,
    out: *mut *mut AdarsPolicy,
) -> AdarsStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let mut config = parse_config(opt_str_arg(config_toml, "config_toml")?)?;
        let ck = read_checkpoint(&path)?;
        let keep_seed = config.seed.is_some();
        let params = restore_checkpoint(&ck, &mut config.world, keep_seed)?;
        *out = Box::into_raw(Box::new(AdarsPolicy { config, params }));
        Ok(())
    })
}

/// Writes the policy as a checkpoint JSON file, including its world.
///
/// # Safety
/// `policy` must be a live handle and `path` a valid string.
#[no_mangle]
pub unsafe extern "C" fn adars_policy_save(policy: *const AdarsPolicy, path: *const c_char) -> AdarsStatus {
    guard(|| {
        let p = policy.as_ref().ok_or_else(|| null("policy"))?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let mut ck = checkpoint_for(&p.config, Method::Sft, &p.params)?;
        ck.producer = None;
        write_checkpoint(&path, &ck)?;
        Ok(())
    })
}

/// Evaluates the policy on `n_tasks` held-out tasks with the configured
/// decoding mode.
///
/// # Safety
/// `policy` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn adars_policy_evaluate(
    policy: *const AdarsPolicy,
    n_tasks: usize,
    gate: AdarsGate,
    out: *mut AdarsEvalSummary,
) -> AdarsStatus {
    guard(|| {
        let p = policy.as_ref().ok_or_else(|| null("policy"))?;
        let out = out_ref(out, "out")?;
        if n_tasks == 0 {
            return Err(invalid("n_tasks must be positive"));
        }
        let tasks = generate_tasks(&eval_world(&p.config.world), n_tasks)?;
        let gated = match gate {
            AdarsGate::Free => GatedPolicy::free(&p.params),
            AdarsGate::ThinkOn => baseline_policy(&p.params, BaselineMode::ThinkOn),
            AdarsGate::ThinkOff => baseline_policy(&p.params, BaselineMode::ThinkOff),
        };
        let r = eval_report(&p.config, gated, &tasks)?;
        *out = AdarsEvalSummary {
            tasks: r.tasks,
            accuracy: r.accuracy(),
            thinking_rate: r.thinking_rate(),
            avg_output_tokens: r.avg_output_tokens(),
            avg_reasoning_tokens: r.measures.avg_reasoning_tokens,
        };
        Ok(())
    })
}

/// Releases a policy handle. NULL is ignored.
///
/// # Safety
/// `policy` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn adars_policy_free(policy: *mut AdarsPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}
