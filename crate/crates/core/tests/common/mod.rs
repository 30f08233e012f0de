#![allow(dead_code)]

use adars::policy::PolicyParams;
use adars::toyworld::{ToyResponse, ToyTask, WorldConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Parameters with entries uniform in `[-scale, scale]`.
pub fn random_params(rng: &mut impl Rng, world: &WorldConfig, scale: f64) -> PolicyParams {
    let mut p = PolicyParams::zeros(world);
    for v in &mut p.values {
        *v = rng.gen_range(-scale..=scale);
    }
    p
}

pub fn random_response(rng: &mut impl Rng, world: &WorldConfig, task: &ToyTask) -> ToyResponse {
    let len = rng.gen_range(0..=world.max_think);
    ToyResponse::new(len > 0, len, rng.gen_range(0..task.candidates.len()))
}

/// Central finite-difference gradient of `f` at `p`.
pub fn fd_grad(p: &PolicyParams, h: f64, mut f: impl FnMut(&PolicyParams) -> f64) -> Vec<f64> {
    let mut q = p.clone();
    (0..p.values.len())
        .map(|i| {
            let x = q.values[i];
            q.values[i] = x + h;
            let up = f(&q);
            q.values[i] = x - h;
            let down = f(&q);
            q.values[i] = x;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max |a - b| / max(max |b|, 1e-8)`.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = numeric.iter().map(|b| b.abs()).fold(0.0, f64::max).max(1e-8);
    diff / scale
}

pub const FD_STEP: f64 = 1e-5;

/// Worst relative error of the analytic log-prob gradient over `points`
/// random (parameters, task, response) draws.
pub fn log_prob_grad_error(points: usize, seed: u64) -> f64 {
    use adars::policy::{grad_log_prob, log_prob};
    let world = WorldConfig::default();
    let tasks = adars::toyworld::generate_tasks(&world, 30).unwrap();
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..points {
        let p = random_params(&mut rng, &world, 1.5);
        let task = &tasks[rng.gen_range(0..tasks.len())];
        let r = random_response(&mut rng, &world, task);
        let g = grad_log_prob(&world, &p, task, &r).unwrap();
        let fd = fd_grad(&p, FD_STEP, |q| log_prob(&world, q, task, &r).unwrap());
        worst = worst.max(rel_err(&g.values, &fd));
    }
    worst
}

pub fn dpo_grad_error(points: usize, seed: u64) -> f64 {
    use adars::trainer::{dpo_nll_loss, DpoConfig};
    let world = WorldConfig::default();
    let tasks = adars::toyworld::generate_tasks(&world, 30).unwrap();
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < points {
        let theta = random_params(&mut rng, &world, 1.0);
        let reference = random_params(&mut rng, &world, 1.0);
        let task = &tasks[rng.gen_range(0..tasks.len())];
        let w = random_response(&mut rng, &world, task);
        let l = random_response(&mut rng, &world, task);
        if w == l {
            continue;
        }
        let cfg = DpoConfig {
            beta_dpo: rng.gen_range(0.05..2.0),
            lambda_nll: rng.gen_range(0.0..2.0),
            ..DpoConfig::default()
        };
        let (_, g) = dpo_nll_loss(&world, &theta, &reference, task, &w, &l, &cfg).unwrap();
        let fd = fd_grad(&theta, FD_STEP, |q| dpo_nll_loss(&world, q, &reference, task, &w, &l, &cfg).unwrap().0);
        worst = worst.max(rel_err(&g.values, &fd));
        done += 1;
    }
    worst
}

/// Points whose ratios sit within `margin` of a clip edge are redrawn: the
/// surrogate has a kink there and finite differences straddle it.
pub fn dapo_grad_error(points: usize, seed: u64) -> f64 {
    use adars::policy::{factor_log_prob, Factor};
    use adars::trainer::{dapo_loss, DapoConfig, DapoItem};
    let world = WorldConfig::default();
    let tasks = adars::toyworld::generate_tasks(&world, 30).unwrap();
    let cfg = DapoConfig::default();
    let margin = 1e-3;
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < points {
        let theta = random_params(&mut rng, &world, 1.0);
        let mut old = theta.clone();
        for v in &mut old.values {
            *v += rng.gen_range(-0.3..0.3);
        }
        let items: Vec<DapoItem<'_>> = (0..rng.gen_range(1..6))
            .map(|_| {
                let task = &tasks[rng.gen_range(0..tasks.len())];
                DapoItem {
                    task,
                    response: random_response(&mut rng, &world, task),
                    advantage: rng.gen_range(-2.0..2.0),
                }
            })
            .collect();
        let near_kink = items.iter().any(|it| {
            Factor::of(&it.response).iter().any(|&f| {
                let ratio = (factor_log_prob(&world, &theta, it.task, &it.response, f)
                    - factor_log_prob(&world, &old, it.task, &it.response, f))
                .exp();
                (ratio - (1.0 - cfg.eps_low)).abs() < margin || (ratio - (1.0 + cfg.eps_high)).abs() < margin
            })
        });
        if near_kink {
            continue;
        }
        let (_, g) = dapo_loss(&world, &theta, &old, &items, &cfg);
        let fd = fd_grad(&theta, FD_STEP, |q| dapo_loss(&world, q, &old, &items, &cfg).0);
        // Fully clipped points have a zero gradient; compare absolutely there.
        let err = if fd.iter().all(|x| x.abs() < 1e-12) {
            g.values.iter().map(|x| x.abs()).fold(0.0, f64::max)
        } else {
            rel_err(&g.values, &fd)
        };
        worst = worst.max(err);
        done += 1;
    }
    worst
}

/// Worst `|sum exp(log_prob) - 1|` over `settings` random parameter draws,
/// each checked on tasks from every bucket.
pub fn normalization_error(settings: usize, seed: u64) -> f64 {
    use adars::policy::{enumerate_responses, log_prob};
    let world = WorldConfig::default();
    let tasks = adars::toyworld::generate_tasks(&world, world.buckets()).unwrap();
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..settings {
        let p = random_params(&mut rng, &world, 3.0);
        for task in &tasks {
            let responses = enumerate_responses(&world, task);
            assert_eq!(responses.len(), task.candidates.len() * (world.max_think + 1));
            let total: f64 = responses.iter().map(|r| log_prob(&world, &p, task, r).unwrap().exp()).sum();
            worst = worst.max((total - 1.0).abs());
        }
    }
    worst
}
