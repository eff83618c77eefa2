use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Mutex, MutexGuard, RwLock};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    evaluate_policy, mix_seed, ActorConfig, ActorWorker, AgentError, AgentNets, EpisodeOutcome,
    EvalMetrics, Learner, LearnerConfig, LearnerMetrics, NetworkConfig,
};
use crate::env::{Environment, PhysicsParams, TaskSpec};
use crate::nn::NetworkParams;
use crate::replay::{segment_episode, DualPriorityBuffer, ReplayConfig};

const EVAL_STREAM: u64 = 0xE7A1;
const LEARNER_STREAM: u64 = 0x1EA2;
const INIT_STREAM: u64 = 0x1217;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
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
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    /// Iterations between evaluations.
    #[serde(default = "default_eval_interval")]
    pub eval_interval: u64,
}

fn default_eval_episodes() -> usize {
    10
}

fn default_eval_interval() -> u64 {
    5
}

impl TrialConfig {
    pub fn new(task: TaskSpec) -> Self {
        TrialConfig {
            task,
            physics: PhysicsParams::default(),
            network: NetworkConfig::default(),
            learner: LearnerConfig::default(),
            actors: ActorConfig::default(),
            replay: ReplayConfig::default(),
            eval_episodes: default_eval_episodes(),
            eval_interval: default_eval_interval(),
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        self.task.validate()?;
        self.physics.validate()?;
        self.replay.validate()?;
        self.learner.validate(self.replay.sequence_length)?;
        self.actors.validate()?;
        if self.network.hidden == 0 || self.network.recurrent_hidden == 0 {
            return Err(AgentError::Config("network sizes must be positive".into()));
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return Err(AgentError::Config("eval_interval and eval_episodes must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the per-iteration metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub env_steps: u64,
    pub learner_steps: u64,
    pub episodes: usize,
    pub mean_episode_reward: f64,
    pub success_rate: f64,
    pub buffer_fill: f64,
    pub mean_priority: f64,
    pub stale_updates: u64,
    pub critic_loss: f64,
    pub actor_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eval_success_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eval_mean_reward: Option<f64>,
}

/// A learner, its replay buffer and its actors.
pub struct Trial {
    pub id: usize,
    config: TrialConfig,
    learner: Learner,
    buffer: Arc<Mutex<DualPriorityBuffer>>,
    actors: Vec<ActorWorker>,
    eval_env: Environment,
    eval_seed: u64,
    rng: ChaCha8Rng,
    published: Arc<NetworkParams>,
    iteration: u64,
    env_steps: u64,
    last_eval: Option<EvalMetrics>,
    events: Vec<String>,
}

impl Trial {
    pub fn new(id: usize, config: TrialConfig, seed: u64) -> Result<Self, AgentError> {
        config.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, INIT_STREAM));
        let nets = AgentNets::new(&config.network, &mut init_rng);
        Trial::with_nets(id, config, seed, nets)
    }

    pub fn with_nets(id: usize, config: TrialConfig, seed: u64, nets: AgentNets) -> Result<Self, AgentError> {
        config.validate()?;
        let actors = (0..config.actors.num_actors)
            .map(|i| {
                let env = Environment::new(config.task.clone(), config.physics.clone())?;
                Ok(ActorWorker::new(i, env, &config.actors, mix_seed(seed, i as u64)))
            })
            .collect::<Result<Vec<_>, AgentError>>()?;
        let eval_env = Environment::new(config.task.clone(), config.physics.clone())?;
        let buffer = DualPriorityBuffer::new(config.replay.clone())?;
        let published = Arc::new(nets.actor.clone());
        Ok(Trial {
            id,
            learner: Learner::new(nets, config.learner.clone()),
            buffer: Arc::new(Mutex::new(buffer)),
            actors,
            eval_env,
            eval_seed: mix_seed(seed, EVAL_STREAM),
            rng: ChaCha8Rng::seed_from_u64(mix_seed(seed, LEARNER_STREAM)),
            published,
            iteration: 0,
            env_steps: 0,
            last_eval: None,
            events: Vec::new(),
            config,
        })
    }

    pub fn config(&self) -> &TrialConfig {
        &self.config
    }

    pub fn nets(&self) -> &AgentNets {
        &self.learner.nets
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn buffer(&self) -> MutexGuard<'_, DualPriorityBuffer> {
        self.buffer.lock()
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn last_eval(&self) -> Option<&EvalMetrics> {
        self.last_eval.as_ref()
    }

    /// Diagnostic messages (failed episodes, flushes) since the last call.
    pub fn drain_events(&mut self) -> Vec<String> {
        std::mem::take(&mut self.events)
    }

    pub fn push_event(&mut self, message: String) {
        self.events.push(message);
    }

    /// Learning waits until the buffer holds this many sequences.
    pub fn learner_ready(&self) -> bool {
        self.buffer.lock().len() >= self.config.learner.warmup_sequences.max(1)
    }

    /// Replace the networks, e.g. after copying a better trial.
    pub fn adopt(&mut self, nets: AgentNets) {
        self.learner.load_nets(nets);
        self.publish();
    }

    /// Update learner hyperparameters; a new sequence length empties the buffer.
    pub fn set_learner_config(&mut self, learner: LearnerConfig, sequence_length: usize) -> Result<(), AgentError> {
        learner.validate(sequence_length)?;
        if sequence_length != self.config.replay.sequence_length {
            self.buffer.lock().flush(sequence_length)?;
            self.config.replay.sequence_length = sequence_length;
            self.events.push(format!(
                "sequence length changed to {sequence_length}; replay flushed"
            ));
        }
        self.learner.config = learner.clone();
        self.config.learner = learner;
        Ok(())
    }

    fn publish(&mut self) {
        if self.published.version != self.learner.nets.actor.version
            || self.published.data != self.learner.nets.actor.data
        {
            self.published = Arc::new(self.learner.nets.actor.clone());
        }
    }

    fn store(&mut self, outcome: &EpisodeOutcome) -> Result<(), AgentError> {
        let m = self.config.replay.sequence_length;
        let seqs = segment_episode(&outcome.episode, m)?;
        self.buffer.lock().append(seqs)?;
        self.env_steps += outcome.steps as u64;
        Ok(())
    }

    /// One iteration with actors and learner interleaved on the calling
    /// thread: every actor runs its episodes in id order, then the learner
    /// takes `num_batches` steps. Fully reproducible from the seed.
    pub fn run_iteration(&mut self) -> Result<IterationMetrics, AgentError> {
        let mut outcomes = Vec::new();
        for i in 0..self.actors.len() {
            for _ in 0..self.config.actors.episodes_per_iteration {
                self.publish();
                let actor = &mut self.actors[i];
                if actor.needs_refresh() {
                    actor.set_snapshot(self.published.clone());
                }
                match actor.run_episode() {
                    Ok(o) => {
                        self.store(&o)?;
                        outcomes.push(o);
                    }
                    Err(e) => self.events.push(format!("actor {i}: episode aborted: {e}")),
                }
            }
        }
        let mut learn = Vec::new();
        if self.learner_ready() {
            let mut buffer = self.buffer.lock();
            for _ in 0..self.learner.config.num_batches {
                learn.push(self.learner.step(&mut buffer, &mut self.rng)?);
            }
        }
        self.publish();
        self.finish_iteration(&outcomes, &learn)
    }

    /// One iteration with each actor on its own thread. Actors refresh from
    /// an atomically swapped snapshot and pause while the unsampled backlog
    /// is too large; the learner runs on the calling thread and the iteration
    /// lasts at least `min_iteration_time`.
    pub fn run_iteration_concurrent(&mut self) -> Result<IterationMetrics, AgentError> {
        let started = Instant::now();
        let min_time = Duration::from_secs_f64(self.learner.config.min_iteration_time.max(0.0));
        let warmup = self.config.learner.warmup_sequences.max(1);
        let max_backlog = self.config.actors.max_backlog;
        let stop = AtomicBool::new(false);
        let snapshot = RwLock::new(self.published.clone());
        let outcomes = Mutex::new(Vec::new());
        let events = Mutex::new(Vec::new());
        let m = self.config.replay.sequence_length;
        let buffer = &self.buffer;
        let learner = &mut self.learner;
        let rng = &mut self.rng;
        let num_batches = learner.config.num_batches;

        let learn = std::thread::scope(|scope| {
            for actor in self.actors.iter_mut() {
                let (stop, snapshot, outcomes, events) = (&stop, &snapshot, &outcomes, &events);
                scope.spawn(move || {
                    while !stop.load(Ordering::Acquire) {
                        {
                            let b = buffer.lock();
                            if b.len() >= warmup && b.backlog() > max_backlog {
                                drop(b);
                                std::thread::sleep(Duration::from_millis(1));
                                continue;
                            }
                        }
                        if actor.needs_refresh() {
                            actor.set_snapshot(snapshot.read().clone());
                        }
                        match actor.run_episode() {
                            Ok(o) => match segment_episode(&o.episode, m) {
                                Ok(seqs) => {
                                    if let Err(e) = buffer.lock().append(seqs) {
                                        events.lock().push(format!("actor {}: append failed: {e}", actor.id));
                                    } else {
                                        outcomes.lock().push(o);
                                    }
                                }
                                Err(e) => events.lock().push(format!("actor {}: {e}", actor.id)),
                            },
                            Err(e) => events
                                .lock()
                                .push(format!("actor {}: episode aborted: {e}", actor.id)),
                        }
                    }
                });
            }

            let result = (|| {
                let mut learn: Vec<LearnerMetrics> = Vec::new();
                while learn.len() < num_batches {
                    if buffer.lock().len() < warmup {
                        std::thread::sleep(Duration::from_millis(1));
                        continue;
                    }
                    let metrics = learner.step(&mut buffer.lock(), rng)?;
                    learn.push(metrics);
                    *snapshot.write() = Arc::new(learner.nets.actor.clone());
                }
                if let Some(rest) = min_time.checked_sub(started.elapsed()) {
                    std::thread::sleep(rest);
                }
                Ok::<_, AgentError>(learn)
            })();
            stop.store(true, Ordering::Release);
            result
        })?;

        self.events.extend(events.into_inner());
        let outcomes = outcomes.into_inner();
        self.env_steps += outcomes.iter().map(|o| o.steps as u64).sum::<u64>();
        self.publish();
        self.finish_iteration(&outcomes, &learn)
    }

    /// Noise-free evaluation on a fixed set of episode seeds.
    pub fn evaluate(&mut self) -> Result<EvalMetrics, AgentError> {
        let m = evaluate_policy(
            &self.learner.nets.actor,
            &mut self.eval_env,
            self.config.eval_episodes,
            self.eval_seed,
        )?;
        self.last_eval = Some(m.clone());
        Ok(m)
    }

    fn finish_iteration(
        &mut self,
        outcomes: &[EpisodeOutcome],
        learn: &[LearnerMetrics],
    ) -> Result<IterationMetrics, AgentError> {
        self.iteration += 1;
        let eval = if self.iteration % self.config.eval_interval == 0 {
            Some(self.evaluate()?)
        } else {
            None
        };
        let stats = self.buffer.lock().stats();
        let n = outcomes.len().max(1) as f64;
        let l = learn.len().max(1) as f64;
        Ok(IterationMetrics {
            iteration: self.iteration,
            env_steps: self.env_steps,
            learner_steps: self.learner.steps(),
            episodes: outcomes.len(),
            mean_episode_reward: outcomes.iter().map(|o| o.total_reward).sum::<f64>() / n,
            success_rate: outcomes.iter().filter(|o| o.success).count() as f64 / n,
            buffer_fill: stats.fill,
            mean_priority: stats.mean_priority,
            stale_updates: stats.stale_updates,
            critic_loss: learn.iter().map(|m| m.critic_loss).sum::<f64>() / l,
            actor_loss: learn.iter().map(|m| m.actor_loss).sum::<f64>() / l,
            eval_success_rate: eval.as_ref().map(|e| e.success_rate),
            eval_mean_reward: eval.as_ref().map(|e| e.mean_reward),
        })
    }
}
