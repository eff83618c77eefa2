//! The learner (recurrent deterministic policy gradients over prioritized
//! sequences with n-step returns) and the actors that feed it.

mod actor;
mod checkpoint;
mod eval;
mod learner;
mod trainer;

pub use actor::{exploration_sigma, ActorWorker, EpisodeOutcome};
pub use checkpoint::{load_agent, read_agent, save_agent, write_agent};
pub use eval::{evaluate_policy, rollout_episode, transfer_rollout, EvalMetrics};
pub use learner::{compute_nstep_targets, Learner, LearnerMetrics};
pub use trainer::{IterationMetrics, Trial, TrialConfig};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvError;
use crate::geom::{GeomError, Wrench};
use crate::nn::{CellKind, NetworkParams, NetworkSpec, NnError, OptimizerKind};
use crate::replay::ReplayError;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("metrics serialization: {0}")]
    Json(#[from] serde_json::Error),
}

/// Wrench components are divided by these before entering a network
/// (newtons for force, newton-metres for torque).
pub const OBSERVATION_SCALE: [f64; 6] = [10.0, 10.0, 10.0, 1.0, 1.0, 1.0];

/// The only thing a policy ever sees: the scaled six-component wrench.
pub fn policy_input(w: &Wrench) -> [f64; 6] {
    let a = w.to_array();
    std::array::from_fn(|i| a[i] / OBSERVATION_SCALE[i])
}

/// SplitMix64 finalizer over a pair, for deriving independent seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub hidden: usize,
    pub recurrent_hidden: usize,
    pub cell: CellKind,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden: 64,
            recurrent_hidden: 64,
            cell: CellKind::Lstm,
        }
    }
}

impl NetworkConfig {
    /// Actor outputs live in `[-1, 1]` and are scaled by the task limits.
    pub fn actor_spec(&self) -> NetworkSpec {
        NetworkSpec::actor(self.hidden, self.recurrent_hidden, self.cell, [1.0; 6])
    }

    pub fn critic_spec(&self) -> NetworkSpec {
        NetworkSpec::critic(self.hidden, self.recurrent_hidden, self.cell)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub n_step: usize,
    pub num_batches: usize,
    pub batch_size: usize,
    pub target_update_frequency: u64,
    /// Wall-clock floor per iteration in seconds (concurrent mode only).
    pub min_iteration_time: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub grad_clip: f64,
    pub optimizer: OptimizerKind,
    /// Multiplies every reward before it enters a critic target.
    pub reward_scale: f64,
    /// Weight of the squared-action penalty added to the actor objective.
    pub action_l2: f64,
    /// Leading valid steps of each sequence excluded from the loss.
    pub burn_in: usize,
    /// Sequences required in the buffer before learning starts.
    pub warmup_sequences: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            gamma: 0.997,
            n_step: 5,
            num_batches: 50,
            batch_size: 32,
            target_update_frequency: 25_000,
            min_iteration_time: 2.0,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            grad_clip: 10.0,
            optimizer: OptimizerKind::Adam,
            reward_scale: 1.0,
            action_l2: 0.0,
            burn_in: 0,
            warmup_sequences: 64,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self, sequence_length: usize) -> Result<(), AgentError> {
        let bad = |msg: String| Err(AgentError::Config(msg));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if self.n_step < 1 {
            return bad("n_step must be at least 1".into());
        }
        if self.n_step > sequence_length / 2 {
            return bad(format!(
                "n_step {} exceeds half the sequence length {}",
                self.n_step, sequence_length
            ));
        }
        if self.batch_size == 0 || self.num_batches == 0 || self.target_update_frequency == 0 {
            return bad("batch_size, num_batches and target_update_frequency must be positive".into());
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad("reward_scale must be positive".into());
        }
        if self.action_l2 < 0.0 {
            return bad("action_l2 must be non-negative".into());
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0 && self.grad_clip > 0.0) {
            return bad("learning rates and grad_clip must be positive".into());
        }
        if self.burn_in >= sequence_length {
            return bad("burn_in must be shorter than the sequence".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActorConfig {
    pub num_actors: usize,
    /// Noise of the most exploratory actor, as a fraction of the action limit.
    pub sigma_base: f64,
    /// Ratio between the least and most exploratory actor's noise.
    pub sigma_decay: f64,
    /// Episodes between parameter refreshes.
    pub param_refresh_interval: u64,
    /// Episodes each actor runs per iteration in deterministic mode.
    pub episodes_per_iteration: usize,
    /// Actors pause while this many stored sequences are still unsampled.
    pub max_backlog: usize,
}

impl Default for ActorConfig {
    fn default() -> Self {
        ActorConfig {
            num_actors: 8,
            sigma_base: 0.4,
            sigma_decay: 0.1,
            param_refresh_interval: 1,
            episodes_per_iteration: 1,
            max_backlog: 2048,
        }
    }
}

impl ActorConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.num_actors == 0 {
            return Err(AgentError::Config("num_actors must be at least 1".into()));
        }
        if self.param_refresh_interval == 0 || self.episodes_per_iteration == 0 {
            return Err(AgentError::Config(
                "param_refresh_interval and episodes_per_iteration must be positive".into(),
            ));
        }
        if self.sigma_base < 0.0 || !(0.0..=1.0).contains(&self.sigma_decay) {
            return Err(AgentError::Config("exploration noise settings out of range".into()));
        }
        Ok(())
    }
}

/// Online and target actor/critic.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentNets {
    pub actor: NetworkParams,
    pub critic: NetworkParams,
    pub target_actor: NetworkParams,
    pub target_critic: NetworkParams,
}

impl AgentNets {
    pub fn new<R: Rng + ?Sized>(config: &NetworkConfig, rng: &mut R) -> Self {
        let actor = NetworkParams::init(config.actor_spec(), rng);
        let critic = NetworkParams::init(config.critic_spec(), rng);
        AgentNets {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
        }
    }
}
