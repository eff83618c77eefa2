use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{AgentError, AgentNets, LearnerConfig};
use crate::nn::{
    backward_through_time, clip_grad_norm, critic_inputs, hard_update, NetworkParams, Optimizer,
    RecurrentState,
};
use crate::replay::{compute_sequence_priority, DualPriorityBuffer, Sequence};

/// n-step bootstrapped returns for the valid suffix of `seq`, truncated at
/// termination and at the sequence end (where the stored successor
/// observation bootstraps the last step).
fn nstep_returns(
    seq: &Sequence,
    target_actor: &NetworkParams,
    target_critic: &NetworkParams,
    gamma: f64,
    n: usize,
    reward_scale: f64,
) -> Result<Vec<f64>, AgentError> {
    let pad = seq.pad_count();
    let valid = &seq.transitions[pad..];
    let len = valid.len();
    let mut obs = Vec::with_capacity((len + 1) * 6);
    for t in valid {
        obs.extend_from_slice(&t.obs);
    }
    obs.extend_from_slice(&seq.final_obs);

    let a = target_actor.forward(&obs, &RecurrentState::for_spec(&target_actor.spec))?;
    let spec = &target_critic.spec;
    let x = critic_inputs(&obs, &a.outputs, spec.obs_dim, spec.action_dim)?;
    let q_next = target_critic.forward(&x, &RecurrentState::for_spec(spec))?.outputs;

    let mut targets = Vec::with_capacity(len);
    for t in 0..len {
        let horizon = n.min(len - t);
        let mut g = 0.0;
        let mut discount = 1.0;
        let mut bootstrap = true;
        for tr in &valid[t..t + horizon] {
            g += discount * reward_scale * tr.reward;
            discount *= gamma;
            if tr.terminal {
                bootstrap = false;
                break;
            }
        }
        if bootstrap {
            g += discount * q_next[t + horizon];
        }
        targets.push(g);
    }
    Ok(targets)
}

/// Per-step n-step targets and absolute TD errors of `critic` over a whole
/// sequence (`m` entries each; padding gets 0).
pub fn compute_nstep_targets(
    seq: &Sequence,
    critic: &NetworkParams,
    target_actor: &NetworkParams,
    target_critic: &NetworkParams,
    gamma: f64,
    n: usize,
) -> Result<(Vec<f64>, Vec<f64>), AgentError> {
    if n < 1 {
        return Err(AgentError::Config("n_step must be at least 1".into()));
    }
    let pad = seq.pad_count();
    let g = nstep_returns(seq, target_actor, target_critic, gamma, n, 1.0)?;
    let valid = &seq.transitions[pad..];
    let obs: Vec<f64> = valid.iter().flat_map(|t| t.obs).collect();
    let act: Vec<f64> = valid.iter().flat_map(|t| t.action).collect();
    let x = critic_inputs(&obs, &act, 6, 6)?;
    let q = critic.forward(&x, &RecurrentState::for_spec(&critic.spec))?.outputs;
    let mut targets = vec![0.0; pad];
    let mut td = vec![0.0; pad];
    for (gt, qt) in g.iter().zip(&q) {
        targets.push(*gt);
        td.push((gt - qt).abs());
    }
    Ok((targets, td))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LearnerMetrics {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub mean_abs_td: f64,
    pub critic_grad_norm: f64,
    pub actor_grad_norm: f64,
    pub stale: usize,
}

struct SequenceGrads {
    critic: Vec<f64>,
    actor: Vec<f64>,
    weighted_sq_err: f64,
    weight_sum: f64,
    q_sum: f64,
    q_count: usize,
    abs_td: Vec<f64>,
}

fn sequence_grads(
    nets: &AgentNets,
    seq: &Sequence,
    weights: &[f64],
    config: &LearnerConfig,
) -> Result<SequenceGrads, AgentError> {
    let pad = seq.pad_count();
    let valid = &seq.transitions[pad..];
    let len = valid.len();
    let targets = nstep_returns(seq, &nets.target_actor, &nets.target_critic, config.gamma, config.n_step, config.reward_scale)?;
    let obs: Vec<f64> = valid.iter().flat_map(|t| t.obs).collect();
    let act: Vec<f64> = valid.iter().flat_map(|t| t.action).collect();
    let in_loss = |t: usize| t >= config.burn_in;

    // Critic: weighted squared TD error.
    let critic = &nets.critic;
    let zero_c = RecurrentState::for_spec(&critic.spec);
    let fc = critic.forward(&critic_inputs(&obs, &act, 6, 6)?, &zero_c)?;
    let mut d_q = vec![0.0; len];
    let mut abs_td = vec![0.0; pad];
    let (mut weighted_sq_err, mut weight_sum) = (0.0, 0.0);
    for t in 0..len {
        let delta = targets[t] - fc.outputs[t];
        abs_td.push(delta.abs());
        if in_loss(t) {
            let w = weights[pad + t];
            weighted_sq_err += w * delta * delta;
            weight_sum += w;
            d_q[t] = -2.0 * w * delta;
        }
    }
    let critic_grad = backward_through_time(critic, &fc, &d_q)?.params;

    // Actor: ascend Q(o, π(o)) through the critic's action inputs.
    let actor = &nets.actor;
    let fa = actor.forward(&obs, &RecurrentState::for_spec(&actor.spec))?;
    let fq = critic.forward(&critic_inputs(&obs, &fa.outputs, 6, 6)?, &zero_c)?;
    let mut d_out = vec![0.0; len];
    let (mut q_sum, mut q_count) = (0.0, 0);
    for t in (0..len).filter(|&t| in_loss(t)) {
        q_sum += fq.outputs[t];
        q_count += 1;
        d_out[t] = -1.0;
    }
    let gq = backward_through_time(critic, &fq, &d_out)?;
    let in_dim = critic.spec.input_dim();
    let mut d_action: Vec<f64> = (0..len)
        .flat_map(|t| gq.inputs[t * in_dim + 6..(t + 1) * in_dim].iter().copied())
        .collect();
    // Quadratic penalty on the normalized actions keeps directions the critic
    // is indifferent to near zero instead of drifting into saturation.
    if config.action_l2 > 0.0 {
        for t in (0..len).filter(|&t| in_loss(t)) {
            for j in 0..6 {
                d_action[t * 6 + j] += 2.0 * config.action_l2 * fa.outputs[t * 6 + j];
            }
        }
    }
    let actor_grad = backward_through_time(actor, &fa, &d_action)?.params;

    Ok(SequenceGrads {
        critic: critic_grad,
        actor: actor_grad,
        weighted_sq_err,
        weight_sum,
        q_sum,
        q_count,
        abs_td,
    })
}

/// Online/target networks plus their optimizers.
#[derive(Debug, Clone)]
pub struct Learner {
    pub nets: AgentNets,
    pub config: LearnerConfig,
    actor_opt: Optimizer,
    critic_opt: Optimizer,
    steps: u64,
}

impl Learner {
    pub fn new(nets: AgentNets, config: LearnerConfig) -> Self {
        let actor_opt = Optimizer::new(config.optimizer, nets.actor.data.len(), config.actor_lr);
        let critic_opt = Optimizer::new(config.optimizer, nets.critic.data.len(), config.critic_lr);
        Learner {
            nets,
            config,
            actor_opt,
            critic_opt,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Replace the networks (e.g. when copying from another trial). Optimizer
    /// state restarts; the step count carries on.
    pub fn load_nets(&mut self, nets: AgentNets) {
        let steps = self.steps;
        *self = Learner::new(nets, self.config.clone());
        self.steps = steps;
    }

    /// One update from a prioritized batch. Per-sequence gradients are
    /// computed in parallel and summed in batch order, so the result does not
    /// depend on the thread count.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        buffer: &mut DualPriorityBuffer,
        rng: &mut R,
    ) -> Result<LearnerMetrics, AgentError> {
        let batch = buffer.sample(self.config.batch_size, rng)?;
        let nets = &self.nets;
        let config = &self.config;
        let per_seq: Vec<SequenceGrads> = batch
            .sequences
            .par_iter()
            .zip(batch.weights.par_iter())
            .map(|(s, w)| sequence_grads(nets, s, w, config))
            .collect::<Result<_, _>>()?;

        let mut critic_grad = vec![0.0; nets.critic.data.len()];
        let mut actor_grad = vec![0.0; nets.actor.data.len()];
        let (mut sq, mut wsum, mut qsum, mut qcount) = (0.0, 0.0, 0.0, 0usize);
        for g in &per_seq {
            critic_grad.iter_mut().zip(&g.critic).for_each(|(a, b)| *a += b);
            actor_grad.iter_mut().zip(&g.actor).for_each(|(a, b)| *a += b);
            sq += g.weighted_sq_err;
            wsum += g.weight_sum;
            qsum += g.q_sum;
            qcount += g.q_count;
        }
        if wsum > 0.0 {
            critic_grad.iter_mut().for_each(|g| *g /= wsum);
        }
        if qcount > 0 {
            actor_grad.iter_mut().for_each(|g| *g /= qcount as f64);
        }
        let critic_norm = clip_grad_norm(&mut critic_grad, config.grad_clip);
        let actor_norm = clip_grad_norm(&mut actor_grad, config.grad_clip);

        // Priorities come from the errors of the networks that were sampled against.
        let eta = buffer.config().eta;
        let mut seq_prios = Vec::with_capacity(per_seq.len());
        let mut td_sum = 0.0;
        let mut td_count = 0;
        for (g, s) in per_seq.iter().zip(&batch.sequences) {
            let valid = &g.abs_td[s.pad_count()..];
            td_sum += valid.iter().sum::<f64>();
            td_count += valid.len();
            seq_prios.push(compute_sequence_priority(valid, eta)?);
        }
        let rows: Vec<Vec<f64>> = per_seq.into_iter().map(|g| g.abs_td).collect();
        let stale = buffer.update_priorities(&batch.handles, &seq_prios, &rows)?;

        self.critic_opt.step(&mut self.nets.critic.data, &critic_grad);
        self.actor_opt.step(&mut self.nets.actor.data, &actor_grad);
        self.nets.critic.bump_version();
        self.nets.actor.bump_version();
        self.steps += 1;
        if self.steps % self.config.target_update_frequency == 0 {
            hard_update(&mut self.nets.target_actor, &self.nets.actor)?;
            hard_update(&mut self.nets.target_critic, &self.nets.critic)?;
        }
        if !self.nets.actor.is_finite() || !self.nets.critic.is_finite() {
            return Err(AgentError::Config("learner produced non-finite parameters".into()));
        }
        Ok(LearnerMetrics {
            critic_loss: if wsum > 0.0 { sq / wsum } else { 0.0 },
            actor_loss: if qcount > 0 { -qsum / qcount as f64 } else { 0.0 },
            mean_abs_td: if td_count > 0 { td_sum / td_count as f64 } else { 0.0 },
            critic_grad_norm: critic_norm,
            actor_grad_norm: actor_norm,
            stale,
        })
    }
}
