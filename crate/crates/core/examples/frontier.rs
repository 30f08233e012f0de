//! Runs the default selective-thinking experiment and prints the
//! accuracy / output-length frontier relative to the always-think baseline.
//!
//! ```text
//! cargo run --release --example frontier -- [config.toml]
//! ```

use std::time::Instant;

use adars::config::{RunConfig, TeacherKind};
use adars::metrics::{evaluate, frontier_report, EvalReport};
use adars::policy::{baseline_policy, BaselineMode, GatedPolicy, PolicyParams};
use adars::toyworld::ThinkMode;
use adars::trainer::{base_policy, train_ada_rs_dapo, train_ada_rs_dpo, train_dpo, DpoConfig, PairStrategy};

fn main() -> adars::Result<()> {
    env_logger::init();
    let mut cfg = match std::env::args().nth(1) {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.resolve_seed(None)?;
    cfg.validate()?;
    let train = cfg.train_tasks()?;
    let eval = cfg.eval_tasks()?;
    let e = &cfg.experiment;
    let report = |p: GatedPolicy<'_>| -> adars::Result<EvalReport> { evaluate(&cfg.world, p, &eval, e.eval_mode, e.eval_samples, cfg.world.seed) };

    let t0 = Instant::now();
    let pick = |k: TeacherKind| -> adars::Result<PolicyParams> {
        match k {
            TeacherKind::Base => base_policy(&cfg.world, &cfg.base),
            TeacherKind::Zero => Ok(PolicyParams::zeros(&cfg.world)),
        }
    };
    let base = pick(e.dpo_teacher)?;
    let dapo_init = pick(e.dapo_init)?;
    let mut rows = vec![
        ("think_on".to_string(), report(baseline_policy(&base, BaselineMode::ThinkOn))?),
        ("think_off".to_string(), report(baseline_policy(&base, BaselineMode::ThinkOff))?),
        ("base".to_string(), report(GatedPolicy::free(&base))?),
    ];
    eprintln!("base: {:.1}s", t0.elapsed().as_secs_f64());

    let t = Instant::now();
    let dpo = train_ada_rs_dpo(&cfg.world, &cfg.reward, &cfg.sampler, &cfg.dpo, &base, &base, &train, None)?;
    eprintln!(
        "ada-rs-dpo: {:.1}s, {} pairs, acceptance {:.3}",
        t.elapsed().as_secs_f64(),
        dpo.history.training_samples,
        dpo.history.acceptance_rate()
    );
    rows.push(("ada-rs-dpo".into(), report(GatedPolicy::free(&dpo.policy))?));

    let t = Instant::now();
    let dapo = train_ada_rs_dapo(&cfg.world, &cfg.reward, Some(&cfg.sampler), &cfg.dapo, &dapo_init, &train, None)?;
    eprintln!("ada-rs-dapo: {:.1}s, retained {:.3}", t.elapsed().as_secs_f64(), dapo.history.acceptance_rate());
    rows.push(("ada-rs-dapo".into(), report(GatedPolicy::free(&dapo.policy))?));

    let t = Instant::now();
    let simple_cfg = DpoConfig {
        lambda_nll: 0.0,
        ..cfg.dpo.clone()
    };
    let simple = train_dpo(&cfg.world, &cfg.reward, &PairStrategy::Simple, ThinkMode::Free, &simple_cfg, &base, &base, &train, None)?;
    eprintln!("dpo-simple: {:.1}s, {} pairs", t.elapsed().as_secs_f64(), simple.history.training_samples);
    rows.push(("dpo-simple".into(), report(GatedPolicy::free(&simple.policy))?));

    println!("{}", frontier_report(&rows, "think_on")?.render());
    println!("{:<12} {:>6} {:>6} {:>6} {:>6}", "method", "think", "easy", "mid", "hard");
    for (name, r) in &rows {
        let b = |i: usize| r.bucket(i).map_or(f64::NAN, |b| b.measures.thinking_rate);
        println!("{:<12} {:>6.3} {:>6.3} {:>6.3} {:>6.3}", name, r.thinking_rate(), b(0), b(1), b(2));
    }
    let on = &rows[0].1;
    let mut line = format!("summary on_acc={:.4} off_acc={:.4}", on.accuracy(), rows[1].1.accuracy());
    for (name, r) in &rows[3..] {
        let b = |i: usize| r.bucket(i).map_or(f64::NAN, |b| b.measures.thinking_rate);
        line += &format!(
            " | {name} think={:.3} dacc={:+.4} red={:.1} easy={:.3} hard={:.3}",
            r.thinking_rate(),
            r.accuracy() - on.accuracy(),
            100.0 * (1.0 - r.avg_output_tokens() / on.avg_output_tokens()),
            b(0),
            b(2)
        );
    }
    println!("{line}");
    eprintln!("total: {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}
