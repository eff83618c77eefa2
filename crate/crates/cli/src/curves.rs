//! Reward-versus-environment-steps curves from training metrics.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
struct MetricRow {
    iteration: u64,
    env_steps: u64,
    mean_episode_reward: Option<f64>,
    success_rate: Option<f64>,
}

/// One trial's iteration records, in order.
#[derive(Debug, Clone)]
pub struct TrialCurve {
    pub trial: usize,
    pub iterations: Vec<u64>,
    pub env_steps: Vec<u64>,
    pub reward: Vec<Option<f64>>,
    pub success: Vec<Option<f64>>,
}

/// Mean and two-sided 95% Student-t interval; one sample gives a
/// degenerate interval at the mean.
pub fn mean_ci(samples: &[f64]) -> (f64, f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, mean, mean);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0).unwrap().inverse_cdf(0.975);
    let half = t * (var / n).sqrt();
    (mean, mean - half, mean + half)
}

fn trial_dirs(run_dir: &Path) -> Result<Vec<(usize, PathBuf)>, CliError> {
    let entries = std::fs::read_dir(run_dir)
        .map_err(|e| CliError::Config(format!("cannot read run directory {}: {e}", run_dir.display())))?;
    let mut dirs = Vec::new();
    for entry in entries.flatten() {
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_prefix("trial_").and_then(|s| s.parse::<usize>().ok()) {
            let metrics = entry.path().join("metrics.jsonl");
            if metrics.is_file() {
                dirs.push((id, metrics));
            }
        }
    }
    dirs.sort();
    Ok(dirs)
}

pub fn read_run(run_dir: &Path) -> Result<Vec<TrialCurve>, CliError> {
    let mut curves = Vec::new();
    for (trial, path) in trial_dirs(run_dir)? {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Runtime(format!("reading {}: {e}", path.display())))?;
        let mut c = TrialCurve {
            trial,
            iterations: Vec::new(),
            env_steps: Vec::new(),
            reward: Vec::new(),
            success: Vec::new(),
        };
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let row: MetricRow = serde_json::from_str(line)
                .map_err(|e| CliError::Runtime(format!("{}:{}: {e}", path.display(), n + 1)))?;
            c.iterations.push(row.iteration);
            c.env_steps.push(row.env_steps);
            c.reward.push(row.mean_episode_reward);
            c.success.push(row.success_rate);
        }
        if !c.iterations.is_empty() {
            curves.push(c);
        }
    }
    if curves.is_empty() {
        return Err(CliError::Config(format!("no trial metrics found in {}", run_dir.display())));
    }
    Ok(curves)
}

/// Best-of-population curve: per iteration, the highest training reward
/// across trials against the population's mean step count. Rows whose step
/// count does not increase are dropped.
pub fn best_of_population(trials: &[TrialCurve]) -> Vec<(f64, f64)> {
    let len = trials.iter().map(|t| t.iterations.len()).min().unwrap_or(0);
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(len);
    for j in 0..len {
        let steps = trials.iter().map(|t| t.env_steps[j] as f64).sum::<f64>() / trials.len() as f64;
        let best = trials
            .iter()
            .filter_map(|t| t.reward[j])
            .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))));
        if let Some(best) = best {
            if out.last().is_none_or(|&(s, _)| steps > s) {
                out.push((steps, best));
            }
        }
    }
    out
}

fn fmt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v}"))
}

/// Write per-trial curves, per-run best curves and the cross-run
/// aggregate `best.csv` (mean with 95% interval) into `out_dir`.
pub fn export_curves(run_dirs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    if run_dirs.is_empty() {
        return Err(CliError::Config("no run directories given".into()));
    }
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Runtime(format!("creating {}: {e}", out_dir.display())))?;
    let mut written = Vec::new();
    let mut write = |name: String, body: String| -> Result<(), CliError> {
        let path = out_dir.join(name);
        std::fs::write(&path, body).map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
        written.push(path);
        Ok(())
    };

    let mut bests = Vec::new();
    for (k, dir) in run_dirs.iter().enumerate() {
        let trials = read_run(dir)?;
        for t in &trials {
            let mut s = String::from("iteration,env_steps,mean_episode_reward,success_rate\n");
            for j in 0..t.iterations.len() {
                let _ = writeln!(s, "{},{},{},{}", t.iterations[j], t.env_steps[j], fmt(t.reward[j]), fmt(t.success[j]));
            }
            write(format!("run{k}_trial{}.csv", t.trial), s)?;
        }
        let best = best_of_population(&trials);
        let mut s = String::from("env_steps,best_reward\n");
        for (steps, r) in &best {
            let _ = writeln!(s, "{steps},{r}");
        }
        write(format!("run{k}_best.csv"), s)?;
        bests.push(best);
    }

    let len = bests.iter().map(Vec::len).min().unwrap_or(0);
    let mut s = String::from("point,env_steps,mean,ci_low,ci_high,runs\n");
    let mut last = f64::NEG_INFINITY;
    for j in 0..len {
        let steps = bests.iter().map(|b| b[j].0).sum::<f64>() / bests.len() as f64;
        if steps <= last {
            continue;
        }
        last = steps;
        let rewards: Vec<f64> = bests.iter().map(|b| b[j].1).collect();
        let (mean, lo, hi) = mean_ci(&rewards);
        let _ = writeln!(s, "{j},{steps},{mean},{lo},{hi},{}", rewards.len());
    }
    write("best.csv".into(), s)?;
    Ok(written)
}
