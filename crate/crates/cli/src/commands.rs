use std::path::{Path, PathBuf};

use rd2::agent::{evaluate_policy, load_agent, transfer_rollout, AgentError, AgentNets, EvalMetrics};
use rd2::env::{Environment, InitialOffset};
use rd2::geom::Pose;
use rd2::nn::NnError;
use rd2::pbt::{run_population, PbtError, PopulationResult};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::settings::NoiseSetting;
use crate::CliError;

impl From<PbtError> for CliError {
    fn from(e: PbtError) -> Self {
        match e {
            PbtError::Agent(a) => a.into(),
            PbtError::Space(_) | PbtError::PopulationTooSmall(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<AgentError> for CliError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Config(_) | AgentError::Env(_) | AgentError::Nn(NnError::SpecMismatch(_)) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn io<'a>(context: &'a str, path: &'a Path) -> impl FnOnce(std::io::Error) -> CliError + 'a {
    move |e| CliError::Runtime(format!("{context} {}: {e}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io("creating", dir))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(io("writing", path))
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub no_pbt: bool,
    pub deterministic: bool,
    pub seed: Option<u64>,
    pub run_dir: Option<PathBuf>,
}

/// Train into the run directory; the resolved config is saved next to the
/// metrics as `config.toml`.
pub fn train(config: &ExperimentConfig, opts: &TrainOptions) -> Result<(PathBuf, PopulationResult), CliError> {
    let mut config = config.clone();
    if let Some(seed) = opts.seed {
        config.seed = seed;
    }
    if opts.no_pbt {
        config.population.population_size = 1;
        config.population.enable_pbt = false;
    }
    if opts.deterministic {
        config.population.deterministic = true;
    }
    config.validate()?;
    let run_dir = config.output_root(opts.run_dir.as_deref());
    std::fs::create_dir_all(&run_dir).map_err(io("creating", &run_dir))?;
    let path = run_dir.join("config.toml");
    std::fs::write(&path, config.to_toml()?).map_err(io("writing", &path))?;
    let result = run_population(&config.trial_config(), &config.population, config.seed, &run_dir)?;
    Ok((run_dir, result))
}

fn load_nets(config: &ExperimentConfig, checkpoint: &Path) -> Result<AgentNets, CliError> {
    if !checkpoint.is_file() {
        return Err(CliError::Config(format!("checkpoint {} not found", checkpoint.display())));
    }
    Ok(load_agent(checkpoint, Some(&config.network))?)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub offset_linear: f64,
    pub offset_angular: f64,
    pub ft_noise: f64,
    pub friction_noise: f64,
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: EvalMetrics,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub offset: InitialOffset,
    pub noise: NoiseSetting,
    pub episodes: usize,
    pub seed: Option<u64>,
}

fn environment(config: &ExperimentConfig, offset: InitialOffset, noise: NoiseSetting) -> Result<Environment, CliError> {
    let mut task = config.task.clone();
    task.initial_offset = offset;
    let mut physics = config.physics.clone();
    physics.ft_noise_frac = noise.ft;
    physics.friction_noise_frac = noise.friction;
    Environment::new(task, physics).map_err(|e| CliError::Config(e.to_string()))
}

/// Noise-free policy rollouts under the requested offset and sensor noise.
pub fn eval(config: &ExperimentConfig, checkpoint: &Path, opts: &EvalOptions) -> Result<EvalReport, CliError> {
    if opts.episodes == 0 {
        return Err(CliError::Config("--episodes must be at least 1".into()));
    }
    let nets = load_nets(config, checkpoint)?;
    let mut env = environment(config, opts.offset, opts.noise)?;
    let seed = opts.seed.unwrap_or(config.seed);
    let metrics = evaluate_policy(&nets.actor, &mut env, opts.episodes, seed)?;
    Ok(EvalReport {
        offset_linear: opts.offset.linear,
        offset_angular: opts.offset.angular,
        ft_noise: opts.noise.ft,
        friction_noise: opts.noise.friction,
        seed,
        metrics,
    })
}

pub fn write_report(path: &Path, report: &impl Serialize) -> Result<(), CliError> {
    write_json(path, report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CorrectionMode {
    On,
    Off,
    Both,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransferReport {
    pub mount_pose: Pose,
    pub seed: u64,
    pub identity: EvalMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corrected: Option<EvalMetrics>,
    /// Negative control: the policy sees raw wrenches in the mount frame.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uncorrected: Option<EvalMetrics>,
}

/// Compare the identity mount with `mount`, with and/or without mapping
/// the measured wrench back into the training frame.
pub fn transfer_check(
    config: &ExperimentConfig,
    checkpoint: &Path,
    mount: &Pose,
    correction: CorrectionMode,
    episodes: usize,
    seed: Option<u64>,
) -> Result<TransferReport, CliError> {
    if episodes == 0 {
        return Err(CliError::Config("--episodes must be at least 1".into()));
    }
    let nets = load_nets(config, checkpoint)?;
    let seed = seed.unwrap_or(config.seed);
    let mut env = environment(config, config.task.initial_offset, NoiseSetting::default())?;
    let mut run = |pose: &Pose, corr: bool| transfer_rollout(&nets.actor, pose, &mut env, episodes, seed, corr);
    let identity = run(&Pose::identity(), true)?;
    let corrected = match correction {
        CorrectionMode::On | CorrectionMode::Both => Some(run(mount, true)?),
        CorrectionMode::Off => None,
    };
    let uncorrected = match correction {
        CorrectionMode::Off | CorrectionMode::Both => Some(run(mount, false)?),
        CorrectionMode::On => None,
    };
    Ok(TransferReport {
        mount_pose: *mount,
        seed,
        identity,
        corrected,
        uncorrected,
    })
}
