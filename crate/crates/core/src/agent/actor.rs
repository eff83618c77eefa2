use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{rollout_episode, ActorConfig, AgentError};
use crate::env::Environment;
use crate::nn::NetworkParams;
use crate::replay::Episode;

/// Exploration noise of actor `i` of `n`, in normalized action units:
/// `base · decay^(i/(n−1))`, so actor 0 explores most.
pub fn exploration_sigma(i: usize, n: usize, base: f64, decay: f64) -> f64 {
    if n <= 1 {
        return base;
    }
    base * decay.powf(i as f64 / (n - 1) as f64)
}

#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub episode: Episode,
    pub total_reward: f64,
    pub success: bool,
    pub steps: usize,
}

/// One environment instance acting with a read-only parameter snapshot.
#[derive(Debug)]
pub struct ActorWorker {
    pub id: usize,
    env: Environment,
    sigma: f64,
    refresh_interval: u64,
    rng: ChaCha8Rng,
    episodes: u64,
    snapshot: Option<Arc<NetworkParams>>,
}

impl ActorWorker {
    pub fn new(id: usize, env: Environment, config: &ActorConfig, seed: u64) -> Self {
        ActorWorker {
            id,
            env,
            sigma: exploration_sigma(id, config.num_actors, config.sigma_base, config.sigma_decay),
            refresh_interval: config.param_refresh_interval,
            rng: ChaCha8Rng::seed_from_u64(seed),
            episodes: 0,
            snapshot: None,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn snapshot_version(&self) -> Option<u64> {
        self.snapshot.as_ref().map(|p| p.version)
    }

    /// True when the next episode should start from fresh parameters.
    pub fn needs_refresh(&self) -> bool {
        self.snapshot.is_none() || self.episodes % self.refresh_interval == 0
    }

    pub fn set_snapshot(&mut self, params: Arc<NetworkParams>) {
        self.snapshot = Some(params);
    }

    /// Roll out one noisy episode. The recurrent state starts at zero.
    pub fn run_episode(&mut self) -> Result<EpisodeOutcome, AgentError> {
        let actor = self
            .snapshot
            .clone()
            .ok_or_else(|| AgentError::Config("actor has no parameter snapshot".into()))?;
        let seed = self.rng.random();
        let noise = Normal::new(0.0, self.sigma.max(0.0))
            .map_err(|e| AgentError::Config(format!("exploration noise: {e}")))?;
        let rng = &mut self.rng;
        let sigma = self.sigma;
        let result = rollout_episode(
            &actor,
            &mut self.env,
            seed,
            |a| {
                if sigma > 0.0 {
                    a.iter_mut().for_each(|v| *v += noise.sample(rng));
                }
            },
            |w| Ok(*w),
        );
        let id = ((self.id as u64) << 40) | self.episodes;
        self.episodes += 1;
        let mut outcome = result?;
        outcome.episode.id = id;
        Ok(outcome)
    }
}
