//! Population based training: truncation selection, multiplicative
//! perturbation or resampling of the mutable hyperparameters, and a
//! population runner that writes per-trial metrics and an audit log.

mod runner;

pub use runner::{run_population, PopulationConfig, PopulationResult, StopCriteria};

use std::path::PathBuf;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::AgentError;

#[derive(Debug, Error)]
pub enum PbtError {
    #[error("population needs at least 2 trials, got {0}")]
    PopulationTooSmall(usize),
    #[error("trial {0} has not been evaluated yet")]
    NotEvaluated(usize),
    #[error("invalid hyperparameter space: {0}")]
    Space(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange {
    pub min: u64,
    pub max: u64,
}

impl IntRange {
    fn contains(&self, v: u64) -> bool {
        (self.min..=self.max).contains(&v)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        rng.random_range(self.min..=self.max)
    }

    /// Scale, clamp into range, round.
    pub fn perturb(&self, v: u64, factor: f64) -> u64 {
        (v as f64 * factor).clamp(self.min as f64, self.max as f64).round() as u64
    }
}

/// Nearest allowed value to `x`; ties go to the smaller choice.
pub fn snap<T: Copy + Into<f64>>(choices: &[T], x: f64) -> T {
    let mut best = choices[0];
    for &c in choices {
        let (d, db) = ((c.into() - x).abs(), (best.into() - x).abs());
        if d < db || (d == db && c.into() < best.into()) {
            best = c;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperSpace {
    pub num_batches: IntRange,
    pub sequence_length: Vec<u32>,
    pub target_update_frequency: Vec<u32>,
    pub n_step: IntRange,
    pub min_iteration_time: Vec<f64>,
}

impl Default for HyperSpace {
    fn default() -> Self {
        HyperSpace {
            num_batches: IntRange { min: 20, max: 120 },
            sequence_length: vec![16, 32, 64, 128],
            target_update_frequency: vec![25_000, 50_000, 75_000, 100_000],
            n_step: IntRange { min: 3, max: 8 },
            min_iteration_time: vec![30.0, 40.0, 50.0, 60.0],
        }
    }
}

/// Values of the tuned hyperparameters for one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub num_batches: u64,
    pub sequence_length: u32,
    pub target_update_frequency: u32,
    pub n_step: u64,
    pub min_iteration_time: f64,
}

/// The hyperparameters that exploration may change; the rest are sampled
/// once per trial and inherited on copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutableParam {
    NumBatches,
    SequenceLength,
    NStep,
}

pub const MUTABLE: [MutableParam; 3] = [
    MutableParam::NumBatches,
    MutableParam::SequenceLength,
    MutableParam::NStep,
];

impl HyperSpace {
    pub fn validate(&self) -> Result<(), PbtError> {
        let bad = |m: &str| Err(PbtError::Space(m.into()));
        if self.num_batches.min == 0 || self.num_batches.min > self.num_batches.max {
            return bad("num_batches range is empty or starts at 0");
        }
        if self.n_step.min == 0 || self.n_step.min > self.n_step.max {
            return bad("n_step range is empty or starts at 0");
        }
        if self.sequence_length.is_empty()
            || self.target_update_frequency.is_empty()
            || self.min_iteration_time.is_empty()
        {
            return bad("choice lists must not be empty");
        }
        if self.sequence_length.iter().any(|&m| m < 2 || m % 2 != 0) {
            return bad("sequence lengths must be even and at least 2");
        }
        let shortest = *self.sequence_length.iter().min().unwrap() as u64;
        if self.n_step.max > shortest / 2 {
            return bad("largest n_step exceeds half the shortest sequence length");
        }
        if self.target_update_frequency.contains(&0) || self.min_iteration_time.iter().any(|t| *t < 0.0) {
            return bad("target_update_frequency must be positive and min_iteration_time non-negative");
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> HyperParams {
        HyperParams {
            num_batches: self.num_batches.sample(rng),
            sequence_length: *self.sequence_length.choose(rng).unwrap(),
            target_update_frequency: *self.target_update_frequency.choose(rng).unwrap(),
            n_step: self.n_step.sample(rng),
            min_iteration_time: *self.min_iteration_time.choose(rng).unwrap(),
        }
    }

    pub fn contains(&self, hp: &HyperParams) -> bool {
        self.num_batches.contains(hp.num_batches)
            && self.sequence_length.contains(&hp.sequence_length)
            && self.target_update_frequency.contains(&hp.target_update_frequency)
            && self.n_step.contains(hp.n_step)
            && self.min_iteration_time.contains(&hp.min_iteration_time)
    }

    fn get(hp: &HyperParams, p: MutableParam) -> f64 {
        match p {
            MutableParam::NumBatches => hp.num_batches as f64,
            MutableParam::SequenceLength => hp.sequence_length as f64,
            MutableParam::NStep => hp.n_step as f64,
        }
    }

    fn resample<R: Rng + ?Sized>(&self, hp: &mut HyperParams, p: MutableParam, rng: &mut R) {
        match p {
            MutableParam::NumBatches => hp.num_batches = self.num_batches.sample(rng),
            MutableParam::SequenceLength => {
                hp.sequence_length = *self.sequence_length.choose(rng).unwrap()
            }
            MutableParam::NStep => hp.n_step = self.n_step.sample(rng),
        }
    }

    fn perturb(&self, hp: &mut HyperParams, p: MutableParam, factor: f64) {
        match p {
            MutableParam::NumBatches => hp.num_batches = self.num_batches.perturb(hp.num_batches, factor),
            MutableParam::SequenceLength => {
                hp.sequence_length = snap(&self.sequence_length, hp.sequence_length as f64 * factor)
            }
            MutableParam::NStep => hp.n_step = self.n_step.perturb(hp.n_step, factor),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationKind {
    Resample,
    Perturb,
}

/// One audited change of one hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationRecord {
    pub round: u64,
    pub trial: usize,
    pub param: MutableParam,
    pub kind: MutationKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub factor: Option<f64>,
    pub before: f64,
    pub after: f64,
}

/// Each mutable hyperparameter is independently resampled with probability
/// `resample_prob`, otherwise scaled by 1.2 or 0.8 with equal probability.
pub fn explore<R: Rng + ?Sized>(
    hp: &HyperParams,
    space: &HyperSpace,
    resample_prob: f64,
    rng: &mut R,
    round: u64,
    trial: usize,
) -> (HyperParams, Vec<MutationRecord>) {
    let mut out = hp.clone();
    let mut log = Vec::with_capacity(MUTABLE.len());
    for p in MUTABLE {
        let before = HyperSpace::get(&out, p);
        let (kind, factor) = if rng.random_bool(resample_prob) {
            space.resample(&mut out, p, rng);
            (MutationKind::Resample, None)
        } else {
            let f = if rng.random_bool(0.5) { 1.2 } else { 0.8 };
            space.perturb(&mut out, p, f);
            (MutationKind::Perturb, Some(f))
        };
        log.push(MutationRecord {
            round,
            trial,
            param: p,
            kind,
            factor,
            before,
            after: HyperSpace::get(&out, p),
        });
    }
    (out, log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialState {
    pub trial_id: usize,
    pub hyperparams: HyperParams,
    pub last_eval_score: Option<f64>,
    pub iterations_done: u64,
    pub checkpoint: Option<PathBuf>,
}

/// A bottom trial taking over a top trial's weights and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploitRecord {
    pub round: u64,
    pub target: usize,
    pub source: usize,
    pub target_score: f64,
    pub source_score: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PbtOutcome {
    pub exploits: Vec<ExploitRecord>,
    pub mutations: Vec<MutationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PbtConfig {
    /// Fraction of the population in each of the top and bottom groups.
    pub quantile: f64,
    pub resample_prob: f64,
}

impl Default for PbtConfig {
    fn default() -> Self {
        PbtConfig {
            quantile: 0.25,
            resample_prob: 0.25,
        }
    }
}

/// Size of the top and bottom groups: `ceil(quantile · P)`, at most `P/2`.
pub fn group_size(population: usize, quantile: f64) -> usize {
    ((quantile * population as f64).ceil() as usize).clamp(1, population / 2)
}

/// Truncation selection over the latest scores. Each bottom-group trial
/// picks a top-group trial uniformly; if that trial scored strictly
/// higher, it copies its hyperparameters and checkpoint reference and then
/// explores. Ties keep the current trial.
pub fn pbt_step<R: Rng + ?Sized>(
    population: &mut [TrialState],
    space: &HyperSpace,
    config: &PbtConfig,
    rng: &mut R,
    round: u64,
) -> Result<PbtOutcome, PbtError> {
    let n = population.len();
    if n < 2 {
        return Err(PbtError::PopulationTooSmall(n));
    }
    let mut scores = Vec::with_capacity(n);
    for t in population.iter() {
        scores.push(t.last_eval_score.ok_or(PbtError::NotEvaluated(t.trial_id))?);
    }
    // Best first; equal scores keep population order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let q = group_size(n, config.quantile);
    let top = &order[..q];
    let bottom = &order[n - q..];

    let mut outcome = PbtOutcome::default();
    for &target in bottom {
        let source = *top.choose(rng).unwrap();
        if scores[source] <= scores[target] {
            continue;
        }
        let (hp, log) = explore(
            &population[source].hyperparams,
            space,
            config.resample_prob,
            rng,
            round,
            population[target].trial_id,
        );
        outcome.exploits.push(ExploitRecord {
            round,
            target: population[target].trial_id,
            source: population[source].trial_id,
            target_score: scores[target],
            source_score: scores[source],
        });
        outcome.mutations.extend(log);
        population[target].checkpoint = population[source].checkpoint.clone();
        population[target].hyperparams = hp;
    }
    Ok(outcome)
}
