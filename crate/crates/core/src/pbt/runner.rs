use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{pbt_step, ExploitRecord, HyperParams, HyperSpace, MutationRecord, PbtConfig, PbtError, TrialState};
use crate::agent::{load_agent, mix_seed, save_agent, AgentError, IterationMetrics, Trial, TrialConfig};

const TRIAL_STREAM: u64 = 0x7A1A_0000;
const RESTART_STREAM: u64 = 0x2E57_0000;
const PBT_STREAM: u64 = 0x9B7;
const SAMPLE_STREAM: u64 = 0x5A3F;

/// When a run ends. Unset limits never trigger.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StopCriteria {
    /// Stop once every trial has taken this many environment steps.
    pub max_env_steps: Option<u64>,
    /// Stop after this many evaluation rounds.
    pub max_rounds: Option<u64>,
    /// Stop as soon as any trial's evaluation success rate reaches this.
    pub target_success: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationConfig {
    pub population_size: usize,
    /// With exploitation off every trial trains independently.
    pub enable_pbt: bool,
    /// Single-threaded, seed-reproducible execution.
    pub deterministic: bool,
    /// Evaluation rounds between selection steps.
    pub rounds_per_pbt_step: u64,
    /// Restarts allowed per trial before the run is aborted.
    pub max_restarts: usize,
    pub space: HyperSpace,
    pub pbt: PbtConfig,
    pub stop: StopCriteria,
    /// Make trial `.0` fail once when it first attempts iteration `.1`
    /// (resilience testing).
    pub inject_faults: Vec<(usize, u64)>,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            population_size: 4,
            enable_pbt: true,
            deterministic: false,
            rounds_per_pbt_step: 1,
            max_restarts: 3,
            space: HyperSpace::default(),
            pbt: PbtConfig::default(),
            stop: StopCriteria::default(),
            inject_faults: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationResult {
    pub best_trial: usize,
    pub best_score: f64,
    pub best_success_rate: f64,
    pub best_checkpoint: PathBuf,
    pub rounds: u64,
    pub restarts: usize,
    pub trials: Vec<TrialState>,
}

#[derive(Serialize)]
struct MetricsLine<'a> {
    trial: usize,
    #[serde(flatten)]
    metrics: &'a IterationMetrics,
}

#[derive(Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum AuditLine<'a> {
    Exploit(&'a ExploitRecord),
    Mutation(&'a MutationRecord),
}

#[derive(Serialize)]
struct EventLine<'a> {
    trial: usize,
    iteration: u64,
    message: &'a str,
}

struct Slot {
    trial: Trial,
    state: TrialState,
    seed: u64,
    dir: PathBuf,
    metrics: BufWriter<File>,
    restarts: usize,
    /// Environment steps taken by earlier incarnations of this trial.
    steps_before: u64,
    last_success: f64,
    faults_fired: Vec<u64>,
}

impl Slot {
    fn env_steps(&self) -> u64 {
        self.steps_before + self.trial.env_steps()
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, PbtError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn trial_seed(seed: u64, i: usize) -> u64 {
    if i == 0 {
        seed
    } else {
        mix_seed(seed, TRIAL_STREAM + i as u64)
    }
}

/// Hyperparameters as currently set in `config`.
pub fn hyperparams_of(config: &TrialConfig) -> HyperParams {
    HyperParams {
        num_batches: config.learner.num_batches as u64,
        sequence_length: config.replay.sequence_length as u32,
        target_update_frequency: config.learner.target_update_frequency.min(u32::MAX as u64) as u32,
        n_step: config.learner.n_step as u64,
        min_iteration_time: config.learner.min_iteration_time,
    }
}

fn apply(hp: &HyperParams, config: &mut TrialConfig) {
    config.learner.num_batches = hp.num_batches as usize;
    config.replay.sequence_length = hp.sequence_length as usize;
    config.learner.target_update_frequency = hp.target_update_frequency as u64;
    config.learner.n_step = hp.n_step as usize;
    config.learner.min_iteration_time = hp.min_iteration_time;
}

/// Train a population under `run_dir`:
///
/// - `trial_<i>/metrics.jsonl`: one record per iteration
/// - `trial_<i>/agent.ckpt`: latest evaluated networks
/// - `events.jsonl`: restarts, flushes and aborted episodes
/// - `pbt_audit.jsonl`: every exploit and mutation
/// - `best.ckpt`, `summary.json`: the best trial at the end, with paths
///   relative to `run_dir`
///
/// Files left by an earlier run in the same directory are replaced.
///
/// Every trial evaluates each `eval_interval` iterations; with PBT on and at
/// least two trials, a selection step follows every `rounds_per_pbt_step`
/// rounds. A trial whose iteration fails restarts from its last checkpoint.
pub fn run_population(
    base: &TrialConfig,
    config: &PopulationConfig,
    seed: u64,
    run_dir: &Path,
) -> Result<PopulationResult, PbtError> {
    let p = config.population_size;
    if p == 0 {
        return Err(PbtError::PopulationTooSmall(0));
    }
    let pbt_on = config.enable_pbt && p >= 2;
    if pbt_on {
        config.space.validate()?;
    }
    base.validate()?;
    fs::create_dir_all(run_dir)?;
    let mut events = create(&run_dir.join("events.jsonl"))?;
    let mut audit = create(&run_dir.join("pbt_audit.jsonl"))?;
    let mut sample_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, SAMPLE_STREAM));
    let mut pbt_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, PBT_STREAM));

    let mut slots = Vec::with_capacity(p);
    for i in 0..p {
        let mut cfg = base.clone();
        if pbt_on {
            apply(&config.space.sample(&mut sample_rng), &mut cfg);
        }
        let dir = run_dir.join(format!("trial_{i}"));
        fs::create_dir_all(&dir)?;
        let s = trial_seed(seed, i);
        let trial = Trial::new(i, cfg, s)?;
        slots.push(Slot {
            state: TrialState {
                trial_id: i,
                hyperparams: hyperparams_of(trial.config()),
                last_eval_score: None,
                iterations_done: 0,
                checkpoint: None,
            },
            trial,
            seed: s,
            metrics: create(&dir.join("metrics.jsonl"))?,
            dir,
            restarts: 0,
            steps_before: 0,
            last_success: 0.0,
            faults_fired: Vec::new(),
        });
    }

    let mut round = 0u64;
    loop {
        run_round(&mut slots, config)?;
        for slot in &mut slots {
            for msg in slot.trial.drain_events() {
                log_event(&mut events, slot, &msg)?;
            }
        }
        round += 1;

        if pbt_on && round % config.rounds_per_pbt_step.max(1) == 0 {
            let mut states: Vec<TrialState> = slots.iter().map(|s| s.state.clone()).collect();
            let outcome = pbt_step(&mut states, &config.space, &config.pbt, &mut pbt_rng, round)?;
            for e in &outcome.exploits {
                serde_json::to_writer(&mut audit, &AuditLine::Exploit(e))?;
                audit.write_all(b"\n")?;
            }
            for m in &outcome.mutations {
                serde_json::to_writer(&mut audit, &AuditLine::Mutation(m))?;
                audit.write_all(b"\n")?;
            }
            audit.flush()?;
            for e in &outcome.exploits {
                let source = slots[e.source].state.checkpoint.clone().ok_or(PbtError::NotEvaluated(e.source))?;
                let nets = load_agent(&source, Some(&slots[e.target].trial.config().network))?;
                let hp = states[e.target].hyperparams.clone();
                let slot = &mut slots[e.target];
                let mut cfg = slot.trial.config().clone();
                apply(&hp, &mut cfg);
                slot.trial.adopt(nets);
                slot.trial.set_learner_config(cfg.learner, cfg.replay.sequence_length)?;
                slot.state.hyperparams = hp;
                slot.state.last_eval_score = Some(e.source_score);
                save_checkpoint(slot)?;
                for msg in slot.trial.drain_events() {
                    log_event(&mut events, slot, &msg)?;
                }
            }
        }
        events.flush()?;

        let stop = &config.stop;
        let done = stop.max_rounds.is_some_and(|r| round >= r)
            || stop.max_env_steps.is_some_and(|n| slots.iter().all(|s| s.env_steps() >= n))
            || stop.target_success.is_some_and(|t| slots.iter().any(|s| s.last_success >= t));
        if done {
            break;
        }
    }

    // Highest score wins; ties go to the lowest trial id.
    let best = slots
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            let (sa, sb) = (a.state.last_eval_score.unwrap_or(f64::NEG_INFINITY), b.state.last_eval_score.unwrap_or(f64::NEG_INFINITY));
            sa.total_cmp(&sb).then(ib.cmp(ia))
        })
        .map(|(i, _)| i)
        .unwrap();
    let best_checkpoint = run_dir.join("best.ckpt");
    save_agent(&best_checkpoint, slots[best].trial.nets())?;
    let result = PopulationResult {
        best_trial: best,
        best_score: slots[best].state.last_eval_score.unwrap_or(f64::NEG_INFINITY),
        best_success_rate: slots[best].last_success,
        best_checkpoint,
        rounds: round,
        restarts: slots.iter().map(|s| s.restarts).sum(),
        trials: slots.iter().map(|s| s.state.clone()).collect(),
    };
    // Paths in the summary are relative to the run directory.
    let mut summary = result.clone();
    summary.best_checkpoint = relative(&summary.best_checkpoint, run_dir);
    for t in &mut summary.trials {
        t.checkpoint = t.checkpoint.as_deref().map(|p| relative(p, run_dir));
    }
    fs::write(run_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(result)
}

fn relative(path: &Path, base: &Path) -> PathBuf {
    path.strip_prefix(base).map_or_else(|_| path.to_path_buf(), Path::to_path_buf)
}

fn log_event(out: &mut impl Write, slot: &Slot, message: &str) -> Result<(), PbtError> {
    let line = EventLine {
        trial: slot.state.trial_id,
        iteration: slot.state.iterations_done,
        message,
    };
    serde_json::to_writer(&mut *out, &line)?;
    out.write_all(b"\n")?;
    Ok(())
}

fn save_checkpoint(slot: &mut Slot) -> Result<(), PbtError> {
    let path = slot.dir.join("agent.ckpt");
    save_agent(&path, slot.trial.nets())?;
    slot.state.checkpoint = Some(path);
    Ok(())
}

/// Iterate every trial up to and including its next evaluation.
fn run_round(slots: &mut [Slot], config: &PopulationConfig) -> Result<(), PbtError> {
    if config.deterministic {
        for slot in slots.iter_mut() {
            run_until_eval(slot, config)?;
        }
        return Ok(());
    }
    let results: Vec<Result<(), PbtError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = slots
            .iter_mut()
            .map(|slot| scope.spawn(move || run_until_eval(slot, config)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(AgentError::Config("trial thread panicked".into()).into())))
            .collect()
    });
    results.into_iter().collect()
}

fn run_until_eval(slot: &mut Slot, config: &PopulationConfig) -> Result<(), PbtError> {
    loop {
        let next = slot.state.iterations_done + 1;
        let result = if config.inject_faults.contains(&(slot.state.trial_id, next)) && !slot.faults_fired.contains(&next) {
            slot.faults_fired.push(next);
            Err(AgentError::Config(format!("injected fault at iteration {next}")))
        } else if config.deterministic {
            slot.trial.run_iteration()
        } else {
            slot.trial.run_iteration_concurrent()
        };
        let m = match result {
            Ok(m) => m,
            Err(e) => {
                restart(slot, config, &e)?;
                continue;
            }
        };
        slot.state.iterations_done = next;
        let mut m = m;
        m.iteration = next;
        m.env_steps = slot.env_steps();
        serde_json::to_writer(&mut slot.metrics, &MetricsLine { trial: slot.state.trial_id, metrics: &m })?;
        slot.metrics.write_all(b"\n")?;
        slot.metrics.flush()?;
        if let (Some(score), Some(success)) = (m.eval_mean_reward, m.eval_success_rate) {
            slot.state.last_eval_score = Some(score);
            slot.last_success = success;
            save_checkpoint(slot)?;
            return Ok(());
        }
    }
}

/// Rebuild a failed trial from its last checkpoint (or from scratch).
fn restart(slot: &mut Slot, config: &PopulationConfig, cause: &AgentError) -> Result<(), PbtError> {
    slot.restarts += 1;
    if slot.restarts > config.max_restarts {
        return Err(AgentError::Config(format!(
            "trial {} failed {} times; last error: {cause}",
            slot.state.trial_id, slot.restarts
        ))
        .into());
    }
    let cfg = slot.trial.config().clone();
    let seed = mix_seed(slot.seed, RESTART_STREAM + slot.restarts as u64);
    slot.steps_before += slot.trial.env_steps();
    let mut trial = match &slot.state.checkpoint {
        Some(path) => Trial::with_nets(slot.state.trial_id, cfg.clone(), seed, load_agent(path, Some(&cfg.network))?)?,
        None => Trial::new(slot.state.trial_id, cfg, seed)?,
    };
    for msg in slot.trial.drain_events() {
        trial.push_event(msg);
    }
    trial.push_event(format!(
        "restarted after error ({cause}) from {}",
        slot.state.checkpoint.as_ref().map_or("scratch".into(), |p| {
            let base = slot.dir.parent().unwrap_or(&slot.dir);
            relative(p, base).display().to_string()
        })
    ));
    slot.trial = trial;
    Ok(())
}

