//! Fixed-length sequence replay: episode segmentation and a store with two
//! sum-trees, one over sequences (what gets sampled) and one over individual
//! transitions (what the importance weights are computed from).

mod segment;
mod sum_tree;

pub use segment::{segment_episode, window_starts};
pub use sum_tree::SumTree;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest priority stored for a live transition or sequence.
pub const PRIORITY_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("sequence length must be even and at least 2, got {0}")]
    InvalidLength(usize),
    #[error("episode has no transitions")]
    EmptyEpisode,
    #[error("sequence length {got} does not match buffer length {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("replay buffer is empty")]
    Empty,
    #[error("priority must be finite and non-negative, got {0}")]
    InvalidPriority(f64),
    #[error("no valid transitions to prioritize")]
    NoValidTransitions,
    #[error("batch shape mismatch: {0}")]
    Shape(String),
}

/// One environment step as stored for learning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: [f64; 6],
    pub action: [f64; 6],
    pub reward: f64,
    /// The episode ended in success after this step: no bootstrapping.
    pub terminal: bool,
    /// False for front padding.
    pub valid: bool,
}

impl Transition {
    pub fn pad() -> Self {
        Transition {
            obs: [0.0; 6],
            action: [0.0; 6],
            reward: 0.0,
            terminal: false,
            valid: false,
        }
    }
}

/// A complete episode from one actor.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: u64,
    pub transitions: Vec<Transition>,
    /// Observation after the last step.
    pub final_obs: [f64; 6],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub transitions: Vec<Transition>,
    /// Observation following the last transition, used to bootstrap it.
    pub final_obs: [f64; 6],
    pub episode_id: u64,
    /// Index of the first real transition within its episode.
    pub start_index: usize,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.transitions.iter().filter(|t| t.valid).count()
    }

    /// Number of leading pad transitions.
    pub fn pad_count(&self) -> usize {
        self.transitions.iter().take_while(|t| !t.valid).count()
    }

    /// Observations `o_0..o_{m-1}` followed by the successor of the last one.
    pub fn observations_with_successor(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity((self.len() + 1) * 6);
        for t in &self.transitions {
            out.extend_from_slice(&t.obs);
        }
        out.extend_from_slice(&self.final_obs);
        out
    }

    pub fn actions(&self) -> Vec<f64> {
        self.transitions.iter().flat_map(|t| t.action).collect()
    }
}

/// `η·max|δ| + (1−η)·mean|δ|`, evaluated as `mean + η·(max − mean)` so that
/// equal errors and `η = 1` come out exact.
pub fn compute_sequence_priority(abs_td: &[f64], eta: f64) -> Result<f64, ReplayError> {
    if abs_td.is_empty() {
        return Err(ReplayError::NoValidTransitions);
    }
    let mut max = 0.0f64;
    let mut sum = 0.0;
    for &d in abs_td {
        let d = d.abs();
        max = max.max(d);
        sum += d;
    }
    let mean = sum / abs_td.len() as f64;
    Ok(mean + eta * (max - mean))
}

/// Which maximum importance weights are divided by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightNormalization {
    #[default]
    Batch,
    Sequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplayConfig {
    /// Capacity in sequences.
    pub capacity: usize,
    pub sequence_length: usize,
    pub eta: f64,
    pub beta: f64,
    pub normalization: WeightNormalization,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            capacity: 4096,
            sequence_length: 16,
            eta: 0.9,
            beta: 0.4,
            normalization: WeightNormalization::Batch,
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<(), ReplayError> {
        segment::check_length(self.sequence_length)?;
        if self.capacity == 0 {
            return Err(ReplayError::Shape("capacity must be positive".into()));
        }
        Ok(())
    }
}

/// Refers to a stored sequence; goes stale once that sequence is evicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SequenceHandle {
    pub slot: usize,
    pub id: u64,
}

#[derive(Debug, Clone)]
pub struct SampledBatch {
    pub sequences: Vec<Arc<Sequence>>,
    pub handles: Vec<SequenceHandle>,
    /// Normalized importance weight per transition; 0 for padding.
    pub weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BufferStats {
    pub sequences: usize,
    pub capacity: usize,
    pub fill: f64,
    pub transitions: usize,
    pub mean_priority: f64,
    pub max_priority: f64,
    pub stale_updates: u64,
    pub backlog: usize,
    /// Sequence priorities bucketed by decade, from `<1e-5` up to `>=1e3`.
    pub priority_histogram: [u64; 9],
}

#[derive(Debug)]
struct Slot {
    id: u64,
    sequence: Arc<Sequence>,
    sampled: bool,
}

/// Ring store of sequences with sequence- and transition-level priorities.
#[derive(Debug)]
pub struct DualPriorityBuffer {
    config: ReplayConfig,
    slots: Vec<Option<Slot>>,
    next_slot: usize,
    next_id: u64,
    len: usize,
    live_transitions: usize,
    seq_tree: SumTree,
    trans_tree: SumTree,
    max_priority: f64,
    stale_updates: u64,
    backlog: usize,
}

impl DualPriorityBuffer {
    pub fn new(config: ReplayConfig) -> Result<Self, ReplayError> {
        config.validate()?;
        let n = config.capacity;
        let m = config.sequence_length;
        Ok(DualPriorityBuffer {
            slots: (0..n).map(|_| None).collect(),
            next_slot: 0,
            next_id: 0,
            len: 0,
            live_transitions: 0,
            seq_tree: SumTree::new(n),
            trans_tree: SumTree::new(n * m),
            max_priority: 0.0,
            stale_updates: 0,
            backlog: 0,
            config,
        })
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.config
    }

    pub fn sequence_length(&self) -> usize {
        self.config.sequence_length
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn live_transitions(&self) -> usize {
        self.live_transitions
    }

    pub fn stale_updates(&self) -> u64 {
        self.stale_updates
    }

    /// Stored sequences that have not been sampled yet.
    pub fn backlog(&self) -> usize {
        self.backlog
    }

    /// Priority given to newly appended data.
    pub fn initial_priority(&self) -> f64 {
        if self.max_priority > 0.0 {
            self.max_priority
        } else {
            1.0
        }
    }

    pub fn sequence_tree(&self) -> &SumTree {
        &self.seq_tree
    }

    pub fn transition_tree(&self) -> &SumTree {
        &self.trans_tree
    }

    pub fn sequence_priority(&self, handle: SequenceHandle) -> Option<f64> {
        self.live(handle).then(|| self.seq_tree.get(handle.slot))
    }

    pub fn transition_priorities(&self, handle: SequenceHandle) -> Option<Vec<f64>> {
        let m = self.sequence_length();
        self.live(handle)
            .then(|| (0..m).map(|j| self.trans_tree.get(handle.slot * m + j)).collect())
    }

    fn live(&self, handle: SequenceHandle) -> bool {
        matches!(self.slots.get(handle.slot), Some(Some(s)) if s.id == handle.id)
    }

    fn evict(&mut self, slot: usize) {
        let m = self.sequence_length();
        if let Some(old) = self.slots[slot].take() {
            self.len -= 1;
            self.live_transitions -= old.sequence.valid_count();
            if !old.sampled {
                self.backlog -= 1;
            }
            self.seq_tree.set(slot, 0.0);
            for j in 0..m {
                self.trans_tree.set(slot * m + j, 0.0);
            }
        }
    }

    /// Store sequences at the running-maximum priority, evicting the oldest
    /// entries once full. All sequences are checked before any is stored.
    pub fn append(&mut self, sequences: Vec<Sequence>) -> Result<Vec<SequenceHandle>, ReplayError> {
        let m = self.sequence_length();
        for s in &sequences {
            if s.len() != m {
                return Err(ReplayError::LengthMismatch {
                    expected: m,
                    got: s.len(),
                });
            }
        }
        let p = self.initial_priority();
        let mut handles = Vec::with_capacity(sequences.len());
        for seq in sequences {
            let slot = self.next_slot;
            self.next_slot = (slot + 1) % self.config.capacity;
            self.evict(slot);
            let id = self.next_id;
            self.next_id += 1;
            for (j, t) in seq.transitions.iter().enumerate() {
                if t.valid {
                    self.trans_tree.set(slot * m + j, p);
                }
            }
            self.seq_tree.set(slot, p);
            self.len += 1;
            self.live_transitions += seq.valid_count();
            self.backlog += 1;
            self.slots[slot] = Some(Slot {
                id,
                sequence: Arc::new(seq),
                sampled: false,
            });
            handles.push(SequenceHandle { slot, id });
        }
        Ok(handles)
    }

    /// Stratified proportional sampling of `batch_size` sequences with
    /// per-transition importance weights.
    pub fn sample<R: Rng + ?Sized>(
        &mut self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<SampledBatch, ReplayError> {
        if self.is_empty() {
            return Err(ReplayError::Empty);
        }
        if batch_size == 0 {
            return Err(ReplayError::Shape("batch size must be positive".into()));
        }
        let m = self.sequence_length();
        let total = self.seq_tree.total();
        let stratum = total / batch_size as f64;
        let trans_total = self.trans_tree.total();
        let n = self.live_transitions as f64;
        let beta = self.config.beta;

        let mut batch = SampledBatch {
            sequences: Vec::with_capacity(batch_size),
            handles: Vec::with_capacity(batch_size),
            weights: Vec::with_capacity(batch_size),
        };
        for k in 0..batch_size {
            let u: f64 = rng.random();
            let slot = self.seq_tree.find((k as f64 + u) * stratum);
            let stored = self.slots[slot].as_mut().expect("sampled slot holds a sequence");
            if !stored.sampled {
                stored.sampled = true;
                self.backlog -= 1;
            }
            let w: Vec<f64> = stored
                .sequence
                .transitions
                .iter()
                .enumerate()
                .map(|(j, t)| {
                    if t.valid {
                        importance_weight(n, self.trans_tree.get(slot * m + j) / trans_total, beta)
                    } else {
                        0.0
                    }
                })
                .collect();
            batch.sequences.push(stored.sequence.clone());
            batch.handles.push(SequenceHandle {
                slot,
                id: stored.id,
            });
            batch.weights.push(w);
        }
        normalize_weights(&mut batch.weights, self.config.normalization);
        Ok(batch)
    }

    /// Write back fresh priorities. Handles to evicted sequences are skipped
    /// and counted; the number skipped is returned.
    pub fn update_priorities(
        &mut self,
        handles: &[SequenceHandle],
        sequence_priorities: &[f64],
        transition_abs_td: &[Vec<f64>],
    ) -> Result<usize, ReplayError> {
        let m = self.sequence_length();
        if handles.len() != sequence_priorities.len() || handles.len() != transition_abs_td.len() {
            return Err(ReplayError::Shape(format!(
                "{} handles, {} sequence priorities, {} transition rows",
                handles.len(),
                sequence_priorities.len(),
                transition_abs_td.len()
            )));
        }
        for (&p, row) in sequence_priorities.iter().zip(transition_abs_td) {
            if row.len() != m {
                return Err(ReplayError::LengthMismatch {
                    expected: m,
                    got: row.len(),
                });
            }
            for &v in std::iter::once(&p).chain(row) {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(ReplayError::InvalidPriority(v));
                }
            }
        }
        let mut stale = 0;
        for ((&h, &p), row) in handles.iter().zip(sequence_priorities).zip(transition_abs_td) {
            if !self.live(h) {
                stale += 1;
                continue;
            }
            let seq = self.slots[h.slot].as_ref().unwrap().sequence.clone();
            let p = p.max(PRIORITY_FLOOR);
            self.seq_tree.set(h.slot, p);
            self.max_priority = self.max_priority.max(p);
            for (j, (t, &d)) in seq.transitions.iter().zip(row).enumerate() {
                if t.valid {
                    let d = d.max(PRIORITY_FLOOR);
                    self.trans_tree.set(h.slot * m + j, d);
                    self.max_priority = self.max_priority.max(d);
                }
            }
        }
        self.stale_updates += stale as u64;
        Ok(stale)
    }

    /// Drop everything and switch to sequences of length `m`.
    pub fn flush(&mut self, m: usize) -> Result<(), ReplayError> {
        let config = ReplayConfig {
            sequence_length: m,
            ..self.config.clone()
        };
        let stale = self.stale_updates;
        *self = DualPriorityBuffer::new(config)?;
        self.stale_updates = stale;
        Ok(())
    }

    /// Recompute both trees from their leaves.
    pub fn rebuild_trees(&mut self) {
        self.seq_tree.rebuild();
        self.trans_tree.rebuild();
    }

    pub fn stats(&self) -> BufferStats {
        let mut histogram = [0u64; 9];
        let mut sum = 0.0;
        let mut max = 0.0f64;
        for (slot, s) in self.slots.iter().enumerate() {
            if s.is_some() {
                let p = self.seq_tree.get(slot);
                sum += p;
                max = max.max(p);
                let bucket = (p.log10().floor() + 5.0).clamp(0.0, 8.0) as usize;
                histogram[bucket] += 1;
            }
        }
        BufferStats {
            sequences: self.len,
            capacity: self.config.capacity,
            fill: self.len as f64 / self.config.capacity as f64,
            transitions: self.live_transitions,
            mean_priority: if self.len > 0 { sum / self.len as f64 } else { 0.0 },
            max_priority: max,
            stale_updates: self.stale_updates,
            backlog: self.backlog,
            priority_histogram: histogram,
        }
    }
}

/// Raw importance weight `(N·P)^(−β)`.
pub fn importance_weight(n: f64, probability: f64, beta: f64) -> f64 {
    (n * probability).powf(-beta)
}

/// Divide weights by their maximum, over the whole batch or per sequence.
/// Zero weights stay zero.
pub fn normalize_weights(weights: &mut [Vec<f64>], mode: WeightNormalization) {
    let scale = |rows: &mut [Vec<f64>]| {
        let max = rows.iter().flatten().copied().fold(0.0f64, f64::max);
        if max > 0.0 {
            rows.iter_mut().flatten().for_each(|w| *w /= max);
        }
    };
    match mode {
        WeightNormalization::Batch => scale(weights),
        WeightNormalization::Sequence => {
            for i in 0..weights.len() {
                scale(&mut weights[i..i + 1]);
            }
        }
    }
}
