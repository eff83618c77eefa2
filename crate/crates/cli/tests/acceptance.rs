//! Acceptance criteria for the whole system, one report line each.
//!
//! Runs as a plain binary so the report is always printed; the process
//! fails if any hard criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rd2::geom::{wrench_transform, Pose, Wrench};
use rd2::nn::{backward_through_time, CellKind, NetworkParams, NetworkSpec, RecurrentState};
use rd2::pbt::{explore, pbt_step, HyperSpace, MutationKind, PbtConfig, TrialState};
use rd2::replay::{
    compute_sequence_priority, importance_weight, normalize_weights, segment_episode, window_starts, Episode,
    SumTree, Transition, WeightNormalization,
};
use rd2_cli::commands::{self, CorrectionMode, EvalOptions, TrainOptions};
use rd2_cli::config::ExperimentConfig;
use rd2_cli::settings::{parse_mount_pose, parse_noise, parse_offset, NoiseSetting};
use statrs::distribution::{ChiSquared, ContinuousCDF};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

// ---------------------------------------------------------------- 1

/// Independent formulation: advance by half a window, but never past the
/// last window that still ends inside the episode.
fn reference_starts(t: usize, m: usize) -> Vec<usize> {
    if t <= m {
        return vec![0];
    }
    let mut starts = vec![0];
    loop {
        let prev = *starts.last().unwrap();
        if prev + m >= t {
            return starts;
        }
        starts.push((prev + m / 2).min(t - m));
    }
}

fn segmentation() -> Verdict {
    let started = Instant::now();
    for m in [4usize, 8, 16, 32] {
        for t in 1..=200usize {
            let starts = window_starts(t, m).unwrap();
            let want = reference_starts(t, m);
            if starts != want {
                return verdict(false, format!("T={t} m={m}: {starts:?} != {want:?}"));
            }
            if starts.len() >= 2 {
                let n = starts.len();
                let overlap = starts[n - 2] + m - starts[n - 1];
                let r = t % (m / 2);
                let expected = if r == 0 { m / 2 } else { m - r };
                if overlap != expected || !(m / 2..m).contains(&overlap) {
                    return verdict(false, format!("T={t} m={m}: last overlap {overlap}, expected {expected}"));
                }
            }
            let episode = Episode {
                id: 1,
                transitions: (0..t)
                    .map(|i| Transition {
                        obs: [i as f64; 6],
                        action: [0.0; 6],
                        reward: -(i as f64),
                        terminal: i + 1 == t,
                        valid: true,
                    })
                    .collect(),
                final_obs: [-1.0; 6],
            };
            for (seq, &s) in segment_episode(&episode, m).unwrap().iter().zip(&want) {
                let valid: Vec<f64> = seq.transitions.iter().filter(|x| x.valid).map(|x| x.obs[0]).collect();
                let expect: Vec<f64> = (s..(s + m).min(t)).map(|i| i as f64).collect();
                let succ = if s + m >= t { -1.0 } else { (s + m) as f64 };
                if seq.len() != m || valid != expect || seq.final_obs[0] != succ {
                    return verdict(false, format!("T={t} m={m}: window at {s} has wrong contents"));
                }
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(secs < 5.0, format!("800 (T, m) pairs match the reference in {secs:.2} s"))
}

// ---------------------------------------------------------------- 2

fn priority_and_weights() -> Verdict {
    let p = compute_sequence_priority(&[1.0, 2.0, 3.0], 0.9).unwrap();
    if p != 2.9 {
        return verdict(false, format!("priority {p:?} != 2.9"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let n = rng.random_range(1..100_000) as f64;
        let prob = rng.random_range(1e-9..1.0);
        let got = importance_weight(n, prob, 0.4);
        let want = (-0.4 * (n * prob).ln()).exp();
        worst = worst.max(((got - want) / want).abs());
    }
    if worst > 1e-12 {
        return verdict(false, format!("weight relative error {worst:.2e}"));
    }
    let mut rows: Vec<Vec<f64>> = (0..8)
        .map(|_| (0..16).map(|_| importance_weight(4096.0, rng.random_range(1e-6..1e-2), 0.4)).collect())
        .collect();
    normalize_weights(&mut rows, WeightNormalization::Batch);
    let max = rows.iter().flatten().copied().fold(f64::MIN, f64::max);
    verdict(
        max == 1.0,
        format!("priority 2.9 exact; weight error {worst:.1e} over 1e4 cases; normalized max {max}"),
    )
}

// ---------------------------------------------------------------- 3

fn sum_tree() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let leaves = 50;
    let critical = ChiSquared::new((leaves - 1) as f64).unwrap().inverse_cdf(0.99);
    let mut worst_stat: f64 = 0.0;
    for v in 0..20 {
        let p: Vec<f64> = (0..leaves).map(|_| rng.random_range(0.1..1.0)).collect();
        let mut tree = SumTree::new(leaves);
        for (i, &x) in p.iter().enumerate() {
            tree.set(i, x);
        }
        let total: f64 = p.iter().sum();
        let draws = 100_000;
        let mut counts = vec![0usize; leaves];
        for _ in 0..draws {
            counts[tree.find(rng.random_range(0.0..tree.total()))] += 1;
        }
        let stat: f64 = counts
            .iter()
            .zip(&p)
            .map(|(&c, &x)| {
                let e = draws as f64 * x / total;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        worst_stat = worst_stat.max(stat);
        if stat > critical {
            return verdict(false, format!("vector {v}: chi2 {stat:.1} > {critical:.1}"));
        }
    }

    let cap = 1000;
    let mut tree = SumTree::new(cap);
    let mut shadow = vec![0.0; cap];
    let mut worst_rel: f64 = 0.0;
    for op in 0..1_000_000 {
        if op % 3 == 2 && tree.total() > 0.0 {
            let i = tree.find(rng.random_range(0.0..tree.total()));
            if shadow[i] <= 0.0 {
                return verdict(false, format!("sampled empty leaf {i}"));
            }
        } else {
            let i = rng.random_range(0..cap);
            let x = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..10.0) };
            tree.set(i, x);
            shadow[i] = x;
        }
        if op % 10_000 == 0 || op == 999_999 {
            let exact: f64 = shadow.iter().sum();
            if exact > 0.0 {
                worst_rel = worst_rel.max((tree.total() - exact).abs() / exact);
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        worst_rel <= 1e-6 && secs < 60.0,
        format!(
            "max chi2 {worst_stat:.1} (critical {critical:.1}); root drift {worst_rel:.1e} after 1e6 ops; {secs:.1} s"
        ),
    )
}

// ---------------------------------------------------------------- 4

fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-7 {
        (a - n).abs()
    } else {
        (a - n).abs() / scale
    }
}

fn gradients() -> Verdict {
    let started = Instant::now();
    let h = 1e-5;
    let t_len = 6;
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let hidden = 4 + (seed as usize % 5);
        for cell in [CellKind::Lstm, CellKind::ReluRnn, CellKind::None] {
            for spec in [
                NetworkSpec::actor(hidden, hidden, cell, [1.0; 6]),
                NetworkSpec::critic(hidden, hidden, cell),
            ] {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                // Redraw until every ReLU argument is clear of its kink.
                let (mut p, x) = loop {
                    let mut p = NetworkParams::init(spec.clone(), &mut rng);
                    for v in p.data.iter_mut() {
                        *v += rng.random_range(-0.3..0.3);
                    }
                    let x: Vec<f64> = (0..t_len * spec.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let f = p.forward(&x, &RecurrentState::for_spec(&spec)).unwrap();
                    if f.relu_margin() > 1e-3 {
                        break (p, x);
                    }
                };
                let c: Vec<f64> = (0..t_len * spec.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let loss = |p: &NetworkParams| -> f64 {
                    let f = p.forward(&x, &RecurrentState::for_spec(&p.spec)).unwrap();
                    f.outputs.iter().zip(&c).map(|(y, w)| y * w).sum()
                };
                let f = p.forward(&x, &RecurrentState::for_spec(&spec)).unwrap();
                let g = backward_through_time(&p, &f, &c).unwrap();
                for i in 0..p.data.len() {
                    let orig = p.data[i];
                    p.data[i] = orig + h;
                    let up = loss(&p);
                    p.data[i] = orig - h;
                    let dn = loss(&p);
                    p.data[i] = orig;
                    worst = worst.max(rel_err(g.params[i], (up - dn) / (2.0 * h)));
                }
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-4 && secs < 60.0,
        format!("max relative error {worst:.2e} over 20 seeds x 3 cells x actor/critic; {secs:.1} s"),
    )
}

// ---------------------------------------------------------------- 5

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let t = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    Pose::from_axis_angle(axis, rng.random_range(-3.1..3.1), t)
}

fn random_wrench(rng: &mut ChaCha8Rng) -> Wrench {
    Wrench::from_array(std::array::from_fn(|_| rng.random_range(-10.0..10.0)))
}

fn wrench_err(a: &Wrench, b: &Wrench) -> f64 {
    a.to_array().iter().zip(b.to_array()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn wrench_laws() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (a, b) = (random_pose(&mut rng), random_pose(&mut rng));
        let (w, v) = (random_wrench(&mut rng), random_wrench(&mut rng));
        let s = rng.random_range(-3.0..3.0);
        let t = |p: &Pose, w: &Wrench| wrench_transform(p, w).unwrap();
        worst = worst.max(wrench_err(&t(&Pose::identity(), &w), &w));
        worst = worst.max(wrench_err(&t(&a.compose(&b), &w), &t(&a, &t(&b, &w))));
        worst = worst.max(wrench_err(&t(&a.inverse(), &t(&a, &w)), &w));
        let sum = Wrench::from_array(std::array::from_fn(|i| s * w.to_array()[i] + v.to_array()[i]));
        let lin = Wrench::from_array(std::array::from_fn(|i| s * t(&a, &w).to_array()[i] + t(&a, &v).to_array()[i]));
        worst = worst.max(wrench_err(&t(&a, &sum), &lin));
    }
    let p = Pose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 0.1)).unwrap();
    let ex = wrench_transform(&p, &Wrench::from_array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0])).unwrap();
    let exact = ex.to_array() == [1.0, 0.0, 0.0, 0.0, 0.1, 0.0];
    verdict(
        worst <= 1e-9 && exact,
        format!("max law residual {worst:.1e} over 1000 cases; worked example torque {:?}", &ex.to_array()[3..]),
    )
}

// ---------------------------------------------------------------- 6-9

const BUDGET: u64 = 300_000;

/// Desk-scale single-trial configuration.
fn learning_config(seed: u64, offset: &str, cell: &str, target: f64) -> ExperimentConfig {
    let text = format!(
        r#"
seed = {seed}

[task]
kind = "lap_joint"
clearance = 0.002
max_steps = 60

[network]
hidden = 32
recurrent_hidden = 32
cell = "{cell}"

[learner]
gamma = 0.99
n_step = 5
num_batches = 10
batch_size = 16
target_update_frequency = 100
reward_scale = 100.0
action_l2 = 0.2
warmup_sequences = 32

[actors]
num_actors = 2
sigma_base = 0.1

[replay]
capacity = 2000
sequence_length = 16

[evaluation]
episodes = 20
interval = 50

[population]
population_size = 1
enable_pbt = false

[population.stop]
max_env_steps = {BUDGET}
target_success = {target}
"#
    );
    let mut cfg = ExperimentConfig::from_toml(&text).unwrap();
    cfg.task.initial_offset = parse_offset(offset).unwrap();
    cfg
}

struct LearnRun {
    seed: u64,
    checkpoint: PathBuf,
    config: ExperimentConfig,
    success: f64,
    env_steps: u64,
    minutes: f64,
}

fn train_and_eval(root: &Path, name: &str, cfg: ExperimentConfig) -> LearnRun {
    let started = Instant::now();
    let opts = TrainOptions {
        no_pbt: true,
        deterministic: true,
        seed: None,
        run_dir: Some(root.join(name)),
    };
    let (dir, _) = commands::train(&cfg, &opts).expect("training run");
    let checkpoint = dir.join("best.ckpt");
    let eval = commands::eval(
        &cfg,
        &checkpoint,
        &EvalOptions {
            offset: cfg.task.initial_offset,
            noise: NoiseSetting::default(),
            episodes: 20,
            seed: None,
        },
    )
    .expect("evaluation");
    let env_steps = std::fs::read_to_string(dir.join("trial_0/metrics.jsonl"))
        .ok()
        .and_then(|s| s.lines().last().map(str::to_owned))
        .and_then(|l| serde_json::from_str::<serde_json::Value>(&l).ok())
        .and_then(|v| v["env_steps"].as_u64())
        .unwrap_or(0);
    LearnRun {
        seed: cfg.seed,
        checkpoint,
        success: eval.metrics.success_rate,
        env_steps,
        minutes: started.elapsed().as_secs_f64() / 60.0,
        config: cfg,
    }
}

struct LearningResults {
    zero: Vec<LearnRun>,
    offset: Vec<LearnRun>,
}

fn learning(root: &Path) -> (Verdict, LearningResults) {
    let mut zero = Vec::new();
    let mut offset = Vec::new();
    for seed in [1u64, 2, 3] {
        zero.push(train_and_eval(root, &format!("zero_{seed}"), learning_config(seed, "0", "lstm", 0.9)));
        offset.push(train_and_eval(root, &format!("offset_{seed}"), learning_config(seed, "lin=3mm", "lstm", 0.7)));
    }
    let pass = |runs: &[LearnRun], need: f64| {
        runs.iter().filter(|r| r.success >= need && r.env_steps <= BUDGET + 1000 && r.minutes <= 45.0).count()
    };
    let (pz, po) = (pass(&zero, 0.9), pass(&offset, 0.7));
    let describe = |runs: &[LearnRun]| {
        runs.iter()
            .map(|r| format!("s{}={:.2}@{}k/{:.1}min", r.seed, r.success, r.env_steps / 1000, r.minutes))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let v = verdict(
        pz >= 2 && po >= 2,
        format!("zero offset {pz}/3 [{}]; 3 mm offset {po}/3 [{}]", describe(&zero), describe(&offset)),
    );
    (v, LearningResults { zero, offset })
}

fn passing_policy(results: &LearningResults) -> Option<&LearnRun> {
    results.zero.iter().find(|r| r.success >= 0.9)
}

fn transfer(results: &LearningResults) -> Verdict {
    let Some(run) = passing_policy(results) else {
        return verdict(false, "no zero-offset policy reached 0.9, nothing to transfer");
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mounts = vec![parse_mount_pose("0,0,0.05,0,0,90").unwrap(), parse_mount_pose("0.1,0,0,90,0,0").unwrap()];
    mounts.extend((0..3).map(|_| random_pose(&mut rng)));
    let mut lines = Vec::new();
    let mut pass = true;
    for mount in &mounts {
        let r = commands::transfer_check(&run.config, &run.checkpoint, mount, CorrectionMode::Both, 20, None).unwrap();
        let (id, corr, raw) = (r.identity.success_rate, r.corrected.unwrap().success_rate, r.uncorrected.unwrap().success_rate);
        pass &= corr == id && raw < id;
        lines.push(format!("{id:.2}/{corr:.2}/{raw:.2}"));
    }
    verdict(pass, format!("identity/corrected/uncorrected per mount: {}", lines.join(" ")))
}

fn robustness(results: &LearningResults) -> Verdict {
    let Some(run) = passing_policy(results) else {
        return verdict(false, "no zero-offset policy reached 0.9 to stress");
    };
    let eval = |noise: &str| {
        commands::eval(
            &run.config,
            &run.checkpoint,
            &EvalOptions {
                offset: run.config.task.initial_offset,
                noise: parse_noise(noise).unwrap(),
                episodes: 20,
                seed: None,
            },
        )
        .unwrap()
        .metrics
        .success_rate
    };
    let (clean, ft, friction) = (eval("0"), eval("ft=0.2"), eval("friction=0.2"));
    verdict(
        clean - ft <= 0.2 + 1e-12 && clean - friction <= 0.1 + 1e-12,
        format!("clean {clean:.2}, 20% F/T noise {ft:.2}, 20% friction noise {friction:.2}"),
    )
}

fn ablation(root: &Path, results: &LearningResults) -> Verdict {
    let flat: Vec<LearnRun> = [1u64, 2, 3]
        .iter()
        .map(|&s| train_and_eval(root, &format!("flat_{s}"), learning_config(s, "lin=3mm", "none", 0.7)))
        .collect();
    let mean = |runs: &[LearnRun]| runs.iter().map(|r| r.success).sum::<f64>() / runs.len() as f64;
    let (rd2, ff) = (mean(&results.offset), mean(&flat));
    verdict(ff <= rd2, format!("3 mm offset mean success: recurrent {rd2:.2}, feed-forward {ff:.2}"))
}

// ---------------------------------------------------------------- 10

fn pbt_mechanics(root: &Path) -> Verdict {
    let space = HyperSpace::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut hp = space.sample(&mut rng);
    let mut records = Vec::new();
    while records.len() < 10_000 {
        let (next, log) = explore(&hp, &space, 0.25, &mut rng, 0, 0);
        hp = next;
        records.extend(log);
    }
    records.truncate(10_000);
    let resampled = records.iter().filter(|r| r.kind == MutationKind::Resample).count();
    let perturbed: Vec<_> = records.iter().filter(|r| r.kind == MutationKind::Perturb).collect();
    let up = perturbed.iter().filter(|r| r.factor == Some(1.2)).count();
    let resample_rate = resampled as f64 / records.len() as f64;
    let up_rate = up as f64 / perturbed.len() as f64;

    // Selection over random scores with frequent ties.
    let mut bad = 0;
    let mut exploits = 0;
    for round in 0..2000u64 {
        let n = rng.random_range(2..10);
        let mut pop: Vec<TrialState> = (0..n)
            .map(|i| TrialState {
                trial_id: i,
                hyperparams: space.sample(&mut rng),
                last_eval_score: Some(rng.random_range(0..4) as f64),
                iterations_done: 0,
                checkpoint: None,
            })
            .collect();
        let out = pbt_step(&mut pop, &space, &PbtConfig::default(), &mut rng, round).unwrap();
        exploits += out.exploits.len();
        bad += out.exploits.iter().filter(|e| e.source_score <= e.target_score).count();
    }

    // The audit log of a real (tiny) population run.
    let mut cfg = learning_config(11, "0", "lstm", 1.1);
    smoke(&mut cfg);
    cfg.population.population_size = 4;
    cfg.population.enable_pbt = true;
    cfg.population.space.min_iteration_time = vec![0.0];
    cfg.population.space.target_update_frequency = vec![50];
    cfg.population.space.num_batches = rd2::pbt::IntRange { min: 2, max: 4 };
    cfg.population.space.sequence_length = vec![8, 16];
    cfg.population.space.n_step = rd2::pbt::IntRange { min: 2, max: 4 };
    cfg.population.stop.max_rounds = Some(4);
    let opts = TrainOptions { deterministic: true, run_dir: Some(root.join("pbt")), ..TrainOptions::default() };
    let (dir, _) = commands::train(&cfg, &opts).unwrap();
    let audit = std::fs::read_to_string(dir.join("pbt_audit.jsonl")).unwrap();
    let mut logged = 0;
    for line in audit.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        if v["event"] == "exploit" {
            logged += 1;
            if v["source_score"].as_f64().unwrap() <= v["target_score"].as_f64().unwrap() {
                bad += 1;
            }
        }
    }

    verdict(
        (resample_rate - 0.25).abs() <= 0.01 && (up_rate - 0.5).abs() <= 0.01 && bad == 0,
        format!(
            "resample rate {resample_rate:.4}, x1.2 share {up_rate:.4}; {exploits} simulated + {logged} logged exploits, {bad} from lower scores"
        ),
    )
}

// ---------------------------------------------------------------- 11

/// Shrink a config to a seconds-long run.
fn smoke(cfg: &mut ExperimentConfig) {
    cfg.network.hidden = 8;
    cfg.network.recurrent_hidden = 4;
    cfg.task.max_steps = 20;
    cfg.replay.sequence_length = 8;
    cfg.learner.n_step = 3;
    cfg.learner.num_batches = 2;
    cfg.learner.batch_size = 4;
    cfg.learner.warmup_sequences = 4;
    cfg.evaluation.episodes = 2;
    cfg.evaluation.interval = 2;
    cfg.population.stop.max_env_steps = Some(2000);
    cfg.population.stop.target_success = None;
}

fn rd2(args: &[&str], run_dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_rd2"))
        .args(args)
        .env("RD2_RUN_DIR", run_dir)
        .output()
        .unwrap()
}

fn files_under(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "jsonl" || x == "csv" || x == "json") {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism(root: &Path) -> Verdict {
    let mut cfg = learning_config(7, "lin=3mm", "lstm", 1.1);
    smoke(&mut cfg);
    let mut pbt_cfg = cfg.clone();
    pbt_cfg.population.population_size = 2;
    pbt_cfg.population.enable_pbt = true;
    pbt_cfg.population.space.min_iteration_time = vec![0.0];
    pbt_cfg.population.space.target_update_frequency = vec![50];
    pbt_cfg.population.space.num_batches = rd2::pbt::IntRange { min: 2, max: 3 };
    pbt_cfg.population.space.sequence_length = vec![8];
    pbt_cfg.population.space.n_step = rd2::pbt::IntRange { min: 2, max: 4 };
    let single = root.join("det_single.toml");
    let population = root.join("det_pbt.toml");
    std::fs::write(&single, cfg.to_toml().unwrap()).unwrap();
    std::fs::write(&population, pbt_cfg.to_toml().unwrap()).unwrap();
    let (single, population) = (single.to_str().unwrap(), population.to_str().unwrap());

    let mut snapshots = Vec::new();
    for rep in 0..2 {
        let dir = root.join(format!("det_{rep}"));
        let ckpt = dir.join("single/best.ckpt");
        let ckpt = ckpt.to_str().unwrap();
        let steps: Vec<Vec<String>> = vec![
            vec!["train", "--config", single, "--no-pbt", "--deterministic", "--seed", "7", "--run-dir", "single"],
            vec!["train", "--config", population, "--deterministic", "--seed", "7", "--run-dir", "pbt"],
            vec!["eval", "--config", single, "--checkpoint", ckpt, "--offset", "lin=3mm", "--noise", "ft=0.2", "--deterministic", "--seed", "7", "--out", "eval.json"],
            vec!["transfer-check", "--config", single, "--checkpoint", ckpt, "--mount-pose", "0,0,0.1,0,0,90", "--deterministic", "--seed", "7", "--out", "transfer.json"],
            vec!["export-curves", "pbt", "--out", "curves", "--deterministic", "--seed", "7"],
        ]
        .into_iter()
        .map(|v| v.into_iter().map(String::from).collect())
        .collect();
        std::fs::create_dir_all(&dir).unwrap();
        for args in steps {
            let args: Vec<String> = args
                .into_iter()
                .map(|a| match a.as_str() {
                    "single" | "pbt" | "eval.json" | "transfer.json" | "curves" => dir.join(&a).to_string_lossy().into_owned(),
                    _ => a,
                })
                .collect();
            let refs: Vec<&str> = args.iter().map(String::as_str).collect();
            let out = rd2(&refs, &dir);
            if !out.status.success() {
                return verdict(false, format!("`rd2 {}` failed: {}", args[0], String::from_utf8_lossy(&out.stderr)));
            }
        }
        snapshots.push(files_under(&dir));
    }
    let (a, b) = (&snapshots[0], &snapshots[1]);
    let names: Vec<String> = a.iter().map(|(p, _)| p.display().to_string()).collect();
    let differing: Vec<String> = a
        .iter()
        .zip(b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    verdict(
        a.len() == b.len() && differing.is_empty() && a.len() >= 10,
        format!("{} artifacts from train/eval/transfer-check/export-curves compared; differing: {:?}", names.len(), differing),
    )
}

fn main() {
    // Optional criterion numbers select a subset, e.g. `cargo test --test acceptance -- 1 5`.
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |n: u32| selected.is_empty() || selected.contains(&n);
    let root = tempfile::tempdir().unwrap();
    let root = root.path();
    let mut hard_failures = 0;
    let mut report = |n: u32, name: &str, v: Verdict, soft: bool| {
        let status = match (v.pass, soft) {
            (true, _) => "PASS",
            (false, true) => "FAIL (soft)",
            (false, false) => "FAIL",
        };
        if !v.pass && !soft {
            hard_failures += 1;
        }
        println!("criterion {n:>2} [PRIMARY] {name}: {status} - {}", v.detail);
    };

    if run(1) {
        report(1, "segmentation oracle", segmentation(), false);
    }
    if run(2) {
        report(2, "priority and weight formulas", priority_and_weights(), false);
    }
    if run(3) {
        report(3, "sum-tree sampling", sum_tree(), false);
    }
    if run(4) {
        report(4, "gradient correctness", gradients(), false);
    }
    if run(5) {
        report(5, "wrench-transform laws", wrench_laws(), false);
    }
    if [6, 7, 8, 9].into_iter().any(run) {
        let (v, results) = learning(root);
        report(6, "learning at desk scale", v, false);
        report(7, "transfer equivariance", transfer(&results), false);
        report(8, "noise robustness", robustness(&results), false);
        report(9, "ablation direction", ablation(root, &results), true);
    }
    if run(10) {
        report(10, "PBT mechanics", pbt_mechanics(root), false);
    }
    if run(11) {
        report(11, "determinism", determinism(root), false);
    }

    // `exit` skips destructors.
    let _ = std::fs::remove_dir_all(root);
    if hard_failures > 0 {
        eprintln!("{hard_failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
