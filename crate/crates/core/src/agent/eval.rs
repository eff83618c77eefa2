use serde::{Deserialize, Serialize};

use super::{mix_seed, policy_input, AgentError, EpisodeOutcome};
use crate::env::{DoneReason, Environment};
use crate::geom::{wrench_transform, Pose, Twist, Wrench};
use crate::nn::{NetworkParams, RecurrentState, Role};
use crate::replay::{Episode, Transition};

/// Run one episode with `actor`. `perturb` may modify each normalized action
/// before it is clamped to `[-1, 1]`; `observe` maps what the environment
/// reports to what the policy sees.
pub fn rollout_episode(
    actor: &NetworkParams,
    env: &mut Environment,
    seed: u64,
    mut perturb: impl FnMut(&mut [f64; 6]),
    mut observe: impl FnMut(&Wrench) -> Result<Wrench, AgentError>,
) -> Result<EpisodeOutcome, AgentError> {
    if actor.spec.role != Role::Actor {
        return Err(AgentError::Config("rollout needs an actor network".into()));
    }
    let limits = env.task().limits.as_array();
    let mut obs = policy_input(&observe(&env.reset(seed)?)?);
    let mut state = RecurrentState::for_spec(&actor.spec);
    let mut transitions = Vec::new();
    let mut total_reward = 0.0;
    loop {
        let f = actor.forward(&obs, &state)?;
        state = f.final_state;
        let mut a: [f64; 6] = std::array::from_fn(|i| f.outputs[i]);
        perturb(&mut a);
        a.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        let cmd = Twist::from_array(std::array::from_fn(|i| a[i] * limits[i]));
        let r = env.step(&cmd)?;
        total_reward += r.reward;
        transitions.push(Transition {
            obs,
            action: a,
            reward: r.reward,
            terminal: r.done_reason == Some(DoneReason::Success),
            valid: true,
        });
        obs = policy_input(&observe(&r.observation)?);
        if r.done {
            let success = r.done_reason == Some(DoneReason::Success);
            let steps = transitions.len();
            return Ok(EpisodeOutcome {
                episode: Episode {
                    id: 0,
                    transitions,
                    final_obs: obs,
                },
                total_reward,
                success,
                steps,
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_reward: f64,
    pub mean_steps: f64,
}

impl EvalMetrics {
    fn from_outcomes(outcomes: &[EpisodeOutcome]) -> Self {
        let n = outcomes.len().max(1) as f64;
        EvalMetrics {
            episodes: outcomes.len(),
            success_rate: outcomes.iter().filter(|o| o.success).count() as f64 / n,
            mean_reward: outcomes.iter().map(|o| o.total_reward).sum::<f64>() / n,
            mean_steps: outcomes.iter().map(|o| o.steps as f64).sum::<f64>() / n,
        }
    }
}

fn evaluate_with(
    actor: &NetworkParams,
    env: &mut Environment,
    num_episodes: usize,
    seed: u64,
    observe: impl Fn(&Wrench) -> Result<Wrench, AgentError>,
) -> Result<EvalMetrics, AgentError> {
    let outcomes = (0..num_episodes as u64)
        .map(|i| rollout_episode(actor, env, mix_seed(seed, i), |_| {}, &observe))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalMetrics::from_outcomes(&outcomes))
}

/// Noise-free rollouts; episode `i` is reset from a seed derived from `seed` and `i`.
pub fn evaluate_policy(
    actor: &NetworkParams,
    env: &mut Environment,
    num_episodes: usize,
    seed: u64,
) -> Result<EvalMetrics, AgentError> {
    evaluate_with(actor, env, num_episodes, seed, |w| Ok(*w))
}

/// Evaluate as if the sensor were mounted at `mount_pose` relative to the
/// training sensor frame. With `correction` the deployment layer maps each
/// reading back into the training frame before the policy sees it; without
/// it the policy receives the mounted-frame reading directly.
pub fn transfer_rollout(
    actor: &NetworkParams,
    mount_pose: &Pose,
    env: &mut Environment,
    num_episodes: usize,
    seed: u64,
    correction: bool,
) -> Result<EvalMetrics, AgentError> {
    let back = mount_pose.inverse();
    evaluate_with(actor, env, num_episodes, seed, |w| {
        let mounted = wrench_transform(mount_pose, w)?;
        if correction {
            Ok(wrench_transform(&back, &mounted)?)
        } else {
            Ok(mounted)
        }
    })
}
