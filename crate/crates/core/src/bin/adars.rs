use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use adars::config::{eval_world, RunConfig, TeacherKind};
use adars::experiment::{
    checkpoint_for, eval_report, initial_policy, read_checkpoint, restore_checkpoint, rollout_records, sweep, train_method,
    write_checkpoint, Method, SweepGrid,
};
use adars::metrics::{render_sweep_table, write_sweep_csv, EvalMode};
use adars::pipeline::{group_pipeline, load_rollouts, pair_pipeline, stats_path_for, write_jsonl};
use adars::policy::{baseline_policy, BaselineMode, GatedPolicy, PolicyParams};
use adars::sampler::ZeroSigmaPolicy;
use adars::toyworld::{generate_tasks, ThinkMode};
use adars::trainer::Monitor;
use adars::{Error, Result};

/// Adaptive rejection sampling for selective-thinking training.
#[derive(Parser)]
#[command(name = "adars", version, about)]
struct Cli {
    /// Worker threads for rollout generation and filtering (results do not depend on it).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Seed for every component; falls back to the config file, then ADA_RS_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample toy-world rollouts as pipeline JSONL.
    GenRollouts(GenArgs),
    /// Score rollout groups and apply pair-wise or group-wise rejection sampling.
    Filter(FilterArgs),
    /// Train a policy in the toy world.
    Train(TrainArgs),
    /// Evaluate a checkpoint on held-out toy tasks.
    Eval(EvalArgs),
    /// Run a beta_rs x alpha sweep.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Free,
    ForcedOn,
    ForcedOff,
    HalfHalf,
}

impl From<ModeArg> for ThinkMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Free => ThinkMode::Free,
            ModeArg::ForcedOn => ThinkMode::ForcedOn,
            ModeArg::ForcedOff => ThinkMode::ForcedOff,
            ModeArg::HalfHalf => ThinkMode::HalfHalf,
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    config: PathBuf,
    /// Number of tasks (contexts); each gets K rollouts.
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum, default_value = "half-half")]
    mode: ModeArg,
    /// Output directory: rollouts.jsonl and the resolved config.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long, conflicts_with = "group", required_unless_present = "group")]
    pairs: bool,
    #[arg(long)]
    group: bool,
    #[arg(long = "in")]
    input: PathBuf,
    /// Output JSONL; statistics go to <stem>.stats.json beside it.
    #[arg(long)]
    out: PathBuf,
    /// Optional config supplying reward and sampler settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long = "beta-rs")]
    beta_rs: Option<f64>,
    /// Expected rollouts per context.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long = "zero-sigma", value_enum)]
    zero_sigma: Option<ZeroSigmaArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ZeroSigmaArg {
    AcceptAll,
    DiscardGroup,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    AdaRsDpo,
    AdaRsDapo,
    DpoSimple,
    Sft,
}

impl From<AlgoArg> for Method {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::AdaRsDpo => Method::AdaRsDpo,
            AlgoArg::AdaRsDapo => Method::AdaRsDapo,
            AlgoArg::DpoSimple => Method::DpoSimple,
            AlgoArg::Sft => Method::Sft,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    algo: AlgoArg,
    #[arg(long)]
    config: PathBuf,
    /// Output directory: policy.json, history.csv, eval.json, config.resolved.toml.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    ThinkOn,
    ThinkOff,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalModeArg {
    Argmax,
    Sampled,
    Exact,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint written by `train`, or `base` / `zero` for the built-in policies.
    #[arg(long)]
    policy: String,
    /// Number of held-out tasks.
    #[arg(long)]
    tasks: usize,
    /// Config for the world and evaluation settings (defaults otherwise; a
    /// checkpoint's own world takes precedence).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Force the gate on or off.
    #[arg(long, value_enum)]
    baseline: Option<BaselineArg>,
    #[arg(long, value_enum)]
    mode: Option<EvalModeArg>,
    #[arg(long)]
    samples: Option<usize>,
    /// Write the report to <out>/eval.json instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// TOML/JSON grid: methods, beta_rs, alpha, and an optional [config] table.
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let result = match cli.command {
        Command::GenRollouts(a) => gen_rollouts(a, cli.seed),
        Command::Filter(a) => filter(a, cli.seed, cli.workers),
        Command::Train(a) => train(a, cli.seed),
        Command::Eval(a) => eval(a, cli.seed),
        Command::Sweep(a) => run_sweep(a, cli.seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.resolve_seed(seed)?;
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Writes through a temporary sibling and renames, so a failed command never
/// leaves a truncated artifact behind.
fn write_atomic(path: &Path, f: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    f(&tmp)?;
    std::fs::rename(&tmp, path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, |p| {
        std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })
    })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn gen_rollouts(a: GenArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(Some(&a.config), seed)?;
    cfg.out_dir = Some(a.out.clone());
    out_dir(&a.out)?;
    let tasks = generate_tasks(&cfg.world, a.n)?;
    let teacher = initial_policy(&cfg, cfg.experiment.dpo_teacher)?;
    let records = rollout_records(&cfg, &teacher, &tasks, a.mode.into())?;
    let path = a.out.join("rollouts.jsonl");
    write_atomic(&path, |p| write_jsonl(p, &records))?;
    write_text(&a.out.join("config.resolved.toml"), &cfg.to_toml()?)?;
    log::info!("wrote {} rollouts for {} contexts to {}", records.len(), tasks.len(), path.display());
    Ok(())
}

fn filter(a: FilterArgs, seed: Option<u64>, workers: Option<usize>) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.resolve_seed(seed)?;
    if let Some(alpha) = a.alpha {
        cfg.reward.alpha = alpha;
    }
    if let Some(b) = a.beta_rs {
        cfg.sampler.beta_rs = b;
    }
    if let Some(k) = a.k {
        cfg.reward.k = k;
    }
    if let Some(z) = a.zero_sigma {
        cfg.sampler.zero_sigma_policy = match z {
            ZeroSigmaArg::AcceptAll => ZeroSigmaPolicy::AcceptAll,
            ZeroSigmaArg::DiscardGroup => ZeroSigmaPolicy::DiscardGroup,
        };
    }
    cfg.reward.validate()?;
    cfg.sampler.validate()?;

    let groups = load_rollouts(&a.input)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        out_dir(dir)?;
    }
    let stats = if a.pairs {
        let (records, stats) = pair_pipeline(&groups, &cfg.reward, &cfg.sampler, workers)?;
        write_atomic(&a.out, |p| write_jsonl(p, &records))?;
        stats
    } else {
        let (records, stats) = group_pipeline(&groups, &cfg.reward, &cfg.sampler, workers)?;
        write_atomic(&a.out, |p| write_jsonl(p, &records))?;
        stats
    };
    write_atomic(&stats_path_for(&a.out), |p| stats.write_json(p))?;
    println!("{}", stats.summary_line());
    Ok(())
}

fn train(a: TrainArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(Some(&a.config), seed)?;
    cfg.out_dir = Some(a.out.clone());
    out_dir(&a.out)?;
    let method: Method = a.algo.into();
    let train_tasks = cfg.train_tasks()?;
    let eval_tasks = cfg.eval_tasks()?;
    let monitor = Monitor {
        tasks: &eval_tasks,
        every: cfg.experiment.log_every,
    };
    let outcome = train_method(&cfg, method, &train_tasks, None, Some(&monitor))?;
    let report = eval_report(&cfg, GatedPolicy::free(&outcome.policy), &eval_tasks)?;

    let ck = checkpoint_for(&cfg, method, &outcome.policy)?;
    write_atomic(&a.out.join("policy.json"), |p| write_checkpoint(p, &ck))?;
    write_atomic(&a.out.join("history.csv"), |p| outcome.history.write_csv(p))?;
    write_json(&a.out.join("eval.json"), &report)?;
    write_text(&a.out.join("config.resolved.toml"), &cfg.to_toml()?)?;
    println!(
        "{method}: accuracy {:.4}, thinking rate {:.4}, avg output tokens {:.2}, training samples {}",
        report.accuracy(),
        report.thinking_rate(),
        report.avg_output_tokens(),
        outcome.history.training_samples
    );
    Ok(())
}

fn eval(a: EvalArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref(), seed)?;
    let policy = match a.policy.as_str() {
        "base" => initial_policy(&cfg, TeacherKind::Base)?,
        "zero" => PolicyParams::zeros(&cfg.world),
        path => {
            let ck = read_checkpoint(path)?;
            // The checkpoint's own seed applies unless one was given explicitly.
            let explicit = cfg.seed.is_some();
            restore_checkpoint(&ck, &mut cfg.world, explicit)?
        }
    };
    if let Some(m) = a.mode {
        cfg.experiment.eval_mode = match m {
            EvalModeArg::Argmax => EvalMode::Argmax,
            EvalModeArg::Sampled => EvalMode::Sampled,
            EvalModeArg::Exact => EvalMode::Exact,
        };
    }
    if let Some(n) = a.samples {
        cfg.experiment.eval_samples = n;
    }
    cfg.validate()?;
    let tasks = generate_tasks(&eval_world(&cfg.world), a.tasks)?;
    let gated = match a.baseline {
        Some(BaselineArg::ThinkOn) => baseline_policy(&policy, BaselineMode::ThinkOn),
        Some(BaselineArg::ThinkOff) => baseline_policy(&policy, BaselineMode::ThinkOff),
        None => GatedPolicy::free(&policy),
    };
    let report = eval_report(&cfg, gated, &tasks)?;
    match a.out {
        Some(dir) => {
            out_dir(&dir)?;
            write_json(&dir.join("eval.json"), &report)?;
        }
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn run_sweep(a: SweepArgs, seed: Option<u64>) -> Result<()> {
    let text = std::fs::read_to_string(&a.grid).map_err(|e| Error::Io {
        path: a.grid.clone(),
        source: e,
    })?;
    let is_json = a.grid.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let mut grid: SweepGrid = if is_json {
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", a.grid.display())))?
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", a.grid.display())))?
    };
    grid.config.resolve_seed(seed)?;
    grid.validate()?;
    out_dir(&a.out)?;

    let resolved = toml::to_string_pretty(&grid).map_err(|e| Error::Config(e.to_string()))?;
    let hash = adars::config::short_hash(resolved.as_bytes());
    let rows = sweep(&grid)?;
    let table = render_sweep_table(&rows);
    write_atomic(&a.out.join(format!("sweep-{hash}.csv")), |p| write_sweep_csv(p, &rows))?;
    write_text(&a.out.join(format!("sweep-{hash}.txt")), &table)?;
    write_text(&a.out.join(format!("grid-{hash}.resolved.toml")), &resolved)?;
    print!("{table}");
    Ok(())
}
