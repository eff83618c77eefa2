//! Experiment configuration files (TOML).
//!
//! A file may pull in others with `include = ["base.toml", ...]`, resolved
//! relative to the including file. Included files are merged in order and
//! the including file wins; tables merge key by key.

use std::path::{Path, PathBuf};

use rd2::agent::{ActorConfig, LearnerConfig, NetworkConfig, TrialConfig};
use rd2::env::{PhysicsParams, TaskSpec};
use rd2::pbt::PopulationConfig;
use rd2::replay::ReplayConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

/// Environment variable overriding the output root of every command.
pub const RUN_DIR_ENV: &str = "RD2_RUN_DIR";

const MAX_INCLUDE_DEPTH: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    pub episodes: usize,
    /// Iterations between evaluations during training.
    pub interval: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            episodes: 10,
            interval: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub task: TaskSpec,
    #[serde(default)]
    pub physics: PhysicsParams,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub actors: ActorConfig,
    #[serde(default)]
    pub replay: ReplayConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub population: PopulationConfig,
}

impl ExperimentConfig {
    pub fn trial_config(&self) -> TrialConfig {
        TrialConfig {
            task: self.task.clone(),
            physics: self.physics.clone(),
            network: self.network.clone(),
            learner: self.learner.clone(),
            actors: self.actors.clone(),
            replay: self.replay.clone(),
            eval_episodes: self.evaluation.episodes,
            eval_interval: self.evaluation.interval,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.trial_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.population.population_size == 0 {
            return Err(CliError::Config("population.population_size must be at least 1".into()));
        }
        if self.population.enable_pbt && self.population.population_size >= 2 {
            self.population.space.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Runtime(format!("serializing config: {e}")))
    }

    /// Parse and validate a config held in memory (no includes).
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let table: Table = text.parse().map_err(|e| CliError::Config(format!("{e}")))?;
        from_table(table)
    }

    /// Output root: the explicit override, then `RD2_RUN_DIR`, then
    /// `output_dir`, then `runs`.
    pub fn output_root(&self, explicit: Option<&Path>) -> PathBuf {
        resolve_root(explicit, self.output_dir.as_deref())
    }
}

pub fn resolve_root(explicit: Option<&Path>, configured: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(RUN_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    configured.map_or_else(|| PathBuf::from("runs"), Path::to_path_buf)
}

/// Load `path`, resolve includes, check required fields and validate.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let mut stack = Vec::new();
    let table = load_table(path, &mut stack)?;
    from_table(table)
}

fn from_table(table: Table) -> Result<ExperimentConfig, CliError> {
    for field in ["seed", "task.kind"] {
        if lookup(&table, field).is_none() {
            return Err(CliError::Config(format!("missing required field `{field}`")));
        }
    }
    let config: ExperimentConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.message().trim().to_string()))?;
    config.validate()?;
    Ok(config)
}

fn lookup<'a>(table: &'a Table, dotted: &str) -> Option<&'a Value> {
    let mut parts = dotted.split('.');
    let mut v = table.get(parts.next()?)?;
    for p in parts {
        v = v.as_table()?.get(p)?;
    }
    Some(v)
}

fn load_table(path: &Path, stack: &mut Vec<PathBuf>) -> Result<Table, CliError> {
    let canonical = path
        .canonicalize()
        .map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))?;
    if stack.contains(&canonical) {
        return Err(CliError::Config(format!("include cycle through {}", path.display())));
    }
    if stack.len() >= MAX_INCLUDE_DEPTH {
        return Err(CliError::Config("includes nested too deeply".into()));
    }
    let text = std::fs::read_to_string(&canonical)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut table: Table = text
        .parse()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;

    let includes = match table.remove("include") {
        None => Vec::new(),
        Some(Value::String(s)) => vec![s],
        Some(Value::Array(items)) => items
            .into_iter()
            .map(|v| match v {
                Value::String(s) => Ok(s),
                other => Err(CliError::Config(format!("include entries must be strings, got {other}"))),
            })
            .collect::<Result<_, _>>()?,
        Some(other) => return Err(CliError::Config(format!("include must be a string or list, got {other}"))),
    };

    stack.push(canonical.clone());
    let dir = canonical.parent().unwrap_or(Path::new("."));
    let mut merged = Table::new();
    for inc in includes {
        merge(&mut merged, load_table(&dir.join(inc), stack)?);
    }
    stack.pop();
    merge(&mut merged, table);
    Ok(merged)
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
