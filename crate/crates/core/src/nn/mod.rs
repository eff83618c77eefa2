//! Actor and critic networks: fully-connected (ReLU) -> recurrent cell ->
//! fully-connected head, with exact reverse-mode gradients through time.
//!
//! Parameters of one network live in a single flat `Vec<f64>`; [`Layout`]
//! records where each tensor starts. Matrices are row-major `[out][in]`.

mod checkpoint;
mod optim;

pub use checkpoint::{deserialize_params, serialize_params, FORMAT_VERSION};
pub use optim::{clip_grad_norm, Adam, Optimizer, OptimizerKind};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("non-finite activation at step {step}")]
    NonFinite { step: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("empty sequence")]
    EmptySequence,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("checkpoint spec mismatch: {0}")]
    SpecMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which cell sits between the first fully-connected layer and the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    /// Sigmoid gates, tanh candidate, ReLU on the cell-output path.
    Lstm,
    /// `h = relu(Wx x + Wh h_prev + b)`.
    ReluRnn,
    /// Memoryless fully-connected ReLU layer (recurrence-off ablation).
    None,
}

impl CellKind {
    fn gates(self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::ReluRnn | CellKind::None => 1,
        }
    }

    pub fn is_recurrent(self) -> bool {
        self != CellKind::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Observation in, tanh-bounded action out.
    Actor,
    /// Observation and action in, scalar value out.
    Critic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub role: Role,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub hidden: usize,
    pub recurrent_hidden: usize,
    pub cell: CellKind,
    /// Per-component output bound of the actor head; empty for critics.
    pub action_limits: Vec<f64>,
}

impl NetworkSpec {
    pub fn actor(hidden: usize, recurrent_hidden: usize, cell: CellKind, limits: [f64; 6]) -> Self {
        NetworkSpec {
            role: Role::Actor,
            obs_dim: 6,
            action_dim: 6,
            hidden,
            recurrent_hidden,
            cell,
            action_limits: limits.to_vec(),
        }
    }

    pub fn critic(hidden: usize, recurrent_hidden: usize, cell: CellKind) -> Self {
        NetworkSpec {
            role: Role::Critic,
            obs_dim: 6,
            action_dim: 6,
            hidden,
            recurrent_hidden,
            cell,
            action_limits: Vec::new(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self.role {
            Role::Actor => self.obs_dim,
            Role::Critic => self.obs_dim + self.action_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self.role {
            Role::Actor => self.action_dim,
            Role::Critic => 1,
        }
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.hidden == 0 || self.recurrent_hidden == 0 || self.obs_dim == 0 || self.action_dim == 0
        {
            return Err(NnError::ShapeMismatch("layer sizes must be positive".into()));
        }
        let want = match self.role {
            Role::Actor => self.action_dim,
            Role::Critic => 0,
        };
        if self.action_limits.len() != want {
            return Err(NnError::ShapeMismatch(format!(
                "expected {want} action limits, got {}",
                self.action_limits.len()
            )));
        }
        Ok(())
    }
}

/// Offsets of each tensor in the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub w1: usize,
    pub b1: usize,
    pub wx: usize,
    pub wh: usize,
    pub bc: usize,
    pub w2: usize,
    pub b2: usize,
    pub total: usize,
    input: usize,
    hidden: usize,
    rec: usize,
    gates: usize,
    output: usize,
    recurrent: bool,
}

impl Layout {
    fn new(spec: &NetworkSpec) -> Self {
        let input = spec.input_dim();
        let hidden = spec.hidden;
        let rec = spec.recurrent_hidden;
        let gates = spec.cell.gates();
        let output = spec.output_dim();
        let recurrent = spec.cell.is_recurrent();
        let w1 = 0;
        let b1 = w1 + hidden * input;
        let wx = b1 + hidden;
        let wh = wx + gates * rec * hidden;
        let bc = wh + if recurrent { gates * rec * rec } else { 0 };
        let w2 = bc + gates * rec;
        let b2 = w2 + output * rec;
        let total = b2 + output;
        Layout {
            w1,
            b1,
            wx,
            wh,
            bc,
            w2,
            b2,
            total,
            input,
            hidden,
            rec,
            gates,
            output,
            recurrent,
        }
    }

    /// Number of parameters that only exist because of recurrence.
    pub fn recurrent_params(&self) -> usize {
        self.bc - self.wh
    }
}

/// Hidden and cell vectors carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl RecurrentState {
    pub fn zeros(size: usize) -> Self {
        RecurrentState {
            hidden: vec![0.0; size],
            cell: vec![0.0; size],
        }
    }

    pub fn for_spec(spec: &NetworkSpec) -> Self {
        Self::zeros(spec.recurrent_hidden)
    }
}

/// Weights of one network plus a counter of applied updates.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub spec: NetworkSpec,
    pub data: Vec<f64>,
    pub version: u64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out[r] += sum_c m[r][c] * v[c]` for a row-major `rows x v.len()` matrix.
#[inline]
fn matvec_acc(m: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = v.len();
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out[c] += sum_r m[r][c] * v[r]`.
#[inline]
fn matvec_t_acc(m: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (row, &vr) in m.chunks_exact(cols).zip(v) {
        if vr != 0.0 {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * vr;
            }
        }
    }
}

/// `g[r][c] += u[r] * v[c]`.
#[inline]
fn outer_acc(g: &mut [f64], u: &[f64], v: &[f64]) {
    let cols = v.len();
    for (row, &ur) in g.chunks_exact_mut(cols).zip(u) {
        if ur != 0.0 {
            for (x, b) in row.iter_mut().zip(v) {
                *x += ur * b;
            }
        }
    }
}

/// Values kept from the forward pass for the backward pass.
#[derive(Debug, Clone)]
struct Cache {
    steps: usize,
    inputs: Vec<f64>,
    /// Post-ReLU output of the first layer, `T x hidden`.
    a1: Vec<f64>,
    /// Smallest |argument| of any ReLU seen during the unroll.
    relu_margin: f64,
    /// Cell pre-activations (ReLU cells) or post-activation gates (LSTM), `T x gates*rec`.
    gates: Vec<f64>,
    /// Cell states, `(T+1) x rec`, row 0 is the initial state.
    cells: Vec<f64>,
    /// Hidden states, `(T+1) x rec`, row 0 is the initial state.
    hiddens: Vec<f64>,
    /// Head pre-activations, `T x out`.
    head: Vec<f64>,
}

/// Outputs of an unroll plus everything needed to differentiate it.
#[derive(Debug, Clone)]
pub struct Forward {
    pub outputs: Vec<f64>,
    pub final_state: RecurrentState,
    cache: Cache,
}

impl Forward {
    pub fn steps(&self) -> usize {
        self.cache.steps
    }

    /// Distance of the closest ReLU argument to its kink over the whole
    /// unroll. Finite-difference checks are only meaningful when this is
    /// large compared to the perturbation.
    pub fn relu_margin(&self) -> f64 {
        self.cache.relu_margin
    }
}

/// Parameter gradients and gradients with respect to the per-step inputs.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub inputs: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(spec: NetworkSpec) -> Self {
        let n = spec.param_count();
        NetworkParams {
            spec,
            data: vec![0.0; n],
            version: 0,
        }
    }

    /// Fan-in uniform fully-connected layers, orthogonal recurrent kernels,
    /// heads scaled by 1e-3, LSTM forget bias 1.
    pub fn init<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Self {
        let l = spec.layout();
        let mut p = NetworkParams::zeros(spec);
        let mut uniform = |slice: &mut [f64], fan_in: usize, scale: f64| {
            let bound = scale / (fan_in as f64).sqrt();
            for v in slice {
                *v = rng.random_range(-bound..bound);
            }
        };
        uniform(&mut p.data[l.w1..l.b1], l.input, 1.0);
        uniform(&mut p.data[l.b1..l.wx], l.input, 1.0);
        uniform(&mut p.data[l.wx..l.wh], l.hidden, 1.0);
        uniform(&mut p.data[l.w2..l.b2], l.rec, 1e-3);
        uniform(&mut p.data[l.b2..l.total], l.rec, 1e-3);
        if l.recurrent {
            for g in 0..l.gates {
                let q = orthogonal(l.rec, rng);
                let start = l.wh + g * l.rec * l.rec;
                p.data[start..start + l.rec * l.rec].copy_from_slice(&q);
            }
        }
        if p.spec.cell == CellKind::Lstm {
            p.data[l.bc + l.rec..l.bc + 2 * l.rec].fill(1.0);
        }
        p
    }

    pub fn layout(&self) -> Layout {
        self.spec.layout()
    }

    pub fn bump_version(&mut self) {
        self.version += 1;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Unroll over `inputs` (`T x input_dim`, row-major) from `state0`.
    pub fn forward(&self, inputs: &[f64], state0: &RecurrentState) -> Result<Forward, NnError> {
        let l = self.layout();
        if inputs.is_empty() {
            return Err(NnError::EmptySequence);
        }
        if inputs.len() % l.input != 0 {
            return Err(NnError::LengthMismatch {
                expected: l.input,
                got: inputs.len(),
            });
        }
        if state0.hidden.len() != l.rec || state0.cell.len() != l.rec {
            return Err(NnError::ShapeMismatch(format!(
                "recurrent state of size {} for a cell of size {}",
                state0.hidden.len(),
                l.rec
            )));
        }
        let t_len = inputs.len() / l.input;
        let d = &self.data;
        let gw = l.gates * l.rec;
        let mut cache = Cache {
            steps: t_len,
            inputs: inputs.to_vec(),
            a1: vec![0.0; t_len * l.hidden],
            relu_margin: f64::INFINITY,
            gates: vec![0.0; t_len * gw],
            cells: vec![0.0; (t_len + 1) * l.rec],
            hiddens: vec![0.0; (t_len + 1) * l.rec],
            head: vec![0.0; t_len * l.output],
        };
        if l.recurrent {
            cache.hiddens[..l.rec].copy_from_slice(&state0.hidden);
            cache.cells[..l.rec].copy_from_slice(&state0.cell);
        }
        let mut outputs = vec![0.0; t_len * l.output];
        let scale = &self.spec.action_limits;

        for t in 0..t_len {
            let x = &inputs[t * l.input..(t + 1) * l.input];
            let a1 = &mut cache.a1[t * l.hidden..(t + 1) * l.hidden];
            a1.copy_from_slice(&d[l.b1..l.wx]);
            matvec_acc(&d[l.w1..l.b1], x, a1);
            let mut margin = cache.relu_margin;
            for v in a1.iter_mut() {
                margin = margin.min(v.abs());
                *v = v.max(0.0);
            }

            let (prev_rows, next_rows) = cache.hiddens.split_at_mut((t + 1) * l.rec);
            let h_prev = &prev_rows[t * l.rec..];
            let h = &mut next_rows[..l.rec];
            let (cprev_rows, cnext_rows) = cache.cells.split_at_mut((t + 1) * l.rec);
            let c_prev = &cprev_rows[t * l.rec..];
            let c = &mut cnext_rows[..l.rec];

            let pre = &mut cache.gates[t * gw..(t + 1) * gw];
            pre.copy_from_slice(&d[l.bc..l.w2]);
            matvec_acc(&d[l.wx..l.wh], a1, pre);
            if l.recurrent {
                matvec_acc(&d[l.wh..l.bc], h_prev, pre);
            }
            match self.spec.cell {
                CellKind::Lstm => {
                    let r = l.rec;
                    for j in 0..r {
                        let i = sigmoid(pre[j]);
                        let f = sigmoid(pre[r + j]);
                        let g = pre[2 * r + j].tanh();
                        let o = sigmoid(pre[3 * r + j]);
                        pre[j] = i;
                        pre[r + j] = f;
                        pre[2 * r + j] = g;
                        pre[3 * r + j] = o;
                        c[j] = f * c_prev[j] + i * g;
                        h[j] = o * c[j].max(0.0);
                        margin = margin.min(c[j].abs());
                    }
                }
                CellKind::ReluRnn | CellKind::None => {
                    for (hj, pj) in h.iter_mut().zip(pre.iter()) {
                        margin = margin.min(pj.abs());
                        *hj = pj.max(0.0);
                    }
                }
            }
            cache.relu_margin = margin;

            let y_pre = &mut cache.head[t * l.output..(t + 1) * l.output];
            y_pre.copy_from_slice(&d[l.b2..l.total]);
            matvec_acc(&d[l.w2..l.b2], h, y_pre);
            let y = &mut outputs[t * l.output..(t + 1) * l.output];
            match self.spec.role {
                Role::Actor => {
                    for k in 0..l.output {
                        y[k] = scale[k] * y_pre[k].tanh();
                    }
                }
                Role::Critic => y.copy_from_slice(y_pre),
            }
            if !y.iter().all(|v| v.is_finite()) || !h.iter().all(|v| v.is_finite()) {
                return Err(NnError::NonFinite { step: t });
            }
        }
        let final_state = if l.recurrent {
            RecurrentState {
                hidden: cache.hiddens[t_len * l.rec..].to_vec(),
                cell: cache.cells[t_len * l.rec..].to_vec(),
            }
        } else {
            RecurrentState::zeros(l.rec)
        };
        Ok(Forward {
            outputs,
            final_state,
            cache,
        })
    }
}

/// Gradients of `sum_t <d_outputs[t], y_t>` with respect to every parameter
/// and every input, by reverse-mode differentiation through the unroll.
/// Steps whose `d_outputs` row is zero contribute nothing.
pub fn backward_through_time(
    params: &NetworkParams,
    fwd: &Forward,
    d_outputs: &[f64],
) -> Result<Gradients, NnError> {
    let l = params.layout();
    let c = &fwd.cache;
    let t_len = c.steps;
    if d_outputs.len() != t_len * l.output {
        return Err(NnError::LengthMismatch {
            expected: t_len * l.output,
            got: d_outputs.len(),
        });
    }
    let d = &params.data;
    let r = l.rec;
    let gw = l.gates * r;
    let mut g = vec![0.0; l.total];
    let mut dx_all = vec![0.0; t_len * l.input];
    let mut dh_next = vec![0.0; r];
    let mut dc_next = vec![0.0; r];
    let mut dh = vec![0.0; r];
    let mut dpre = vec![0.0; gw];
    let mut da1 = vec![0.0; l.hidden];
    let mut dy_pre = vec![0.0; l.output];

    for t in (0..t_len).rev() {
        let h = &c.hiddens[(t + 1) * r..(t + 2) * r];
        let h_prev = &c.hiddens[t * r..(t + 1) * r];
        let a1 = &c.a1[t * l.hidden..(t + 1) * l.hidden];
        let x = &c.inputs[t * l.input..(t + 1) * l.input];
        let dy = &d_outputs[t * l.output..(t + 1) * l.output];

        match params.spec.role {
            Role::Actor => {
                let y_pre = &c.head[t * l.output..(t + 1) * l.output];
                for k in 0..l.output {
                    let th = y_pre[k].tanh();
                    dy_pre[k] = dy[k] * params.spec.action_limits[k] * (1.0 - th * th);
                }
            }
            Role::Critic => dy_pre.copy_from_slice(dy),
        }
        for (gb, dv) in g[l.b2..l.total].iter_mut().zip(&dy_pre) {
            *gb += dv;
        }
        outer_acc(&mut g[l.w2..l.b2], &dy_pre, h);
        dh.copy_from_slice(&dh_next);
        matvec_t_acc(&d[l.w2..l.b2], &dy_pre, &mut dh);

        let gates = &c.gates[t * gw..(t + 1) * gw];
        match params.spec.cell {
            CellKind::Lstm => {
                let cell = &c.cells[(t + 1) * r..(t + 2) * r];
                let c_prev = &c.cells[t * r..(t + 1) * r];
                for j in 0..r {
                    let (i, f, gg, o) = (gates[j], gates[r + j], gates[2 * r + j], gates[3 * r + j]);
                    let relu_c = cell[j].max(0.0);
                    let d_o = dh[j] * relu_c;
                    let dc = dh[j] * o * if cell[j] > 0.0 { 1.0 } else { 0.0 } + dc_next[j];
                    dpre[j] = dc * gg * i * (1.0 - i);
                    dpre[r + j] = dc * c_prev[j] * f * (1.0 - f);
                    dpre[2 * r + j] = dc * i * (1.0 - gg * gg);
                    dpre[3 * r + j] = d_o * o * (1.0 - o);
                    dc_next[j] = dc * f;
                }
            }
            CellKind::ReluRnn | CellKind::None => {
                for j in 0..r {
                    dpre[j] = if gates[j] > 0.0 { dh[j] } else { 0.0 };
                }
            }
        }
        for (gb, dv) in g[l.bc..l.w2].iter_mut().zip(&dpre) {
            *gb += dv;
        }
        outer_acc(&mut g[l.wx..l.wh], &dpre, a1);
        dh_next.fill(0.0);
        if l.recurrent {
            outer_acc(&mut g[l.wh..l.bc], &dpre, h_prev);
            matvec_t_acc(&d[l.wh..l.bc], &dpre, &mut dh_next);
        }
        da1.fill(0.0);
        matvec_t_acc(&d[l.wx..l.wh], &dpre, &mut da1);
        for (dv, av) in da1.iter_mut().zip(a1) {
            if *av <= 0.0 {
                *dv = 0.0;
            }
        }
        for (gb, dv) in g[l.b1..l.wx].iter_mut().zip(&da1) {
            *gb += dv;
        }
        outer_acc(&mut g[l.w1..l.b1], &da1, x);
        matvec_t_acc(&d[l.w1..l.b1], &da1, &mut dx_all[t * l.input..(t + 1) * l.input]);
    }
    Ok(Gradients {
        params: g,
        inputs: dx_all,
    })
}

/// Actions for each observation in `obs_seq` (`T x 6`).
pub fn actor_forward(
    params: &NetworkParams,
    obs_seq: &[f64],
    state0: &RecurrentState,
) -> Result<(Vec<f64>, RecurrentState), NnError> {
    if params.spec.role != Role::Actor {
        return Err(NnError::ShapeMismatch("actor_forward on a critic".into()));
    }
    let f = params.forward(obs_seq, state0)?;
    Ok((f.outputs, f.final_state))
}

/// Interleave observation and action rows into critic inputs.
pub fn critic_inputs(obs_seq: &[f64], action_seq: &[f64], obs_dim: usize, action_dim: usize) -> Result<Vec<f64>, NnError> {
    let t_len = obs_seq.len() / obs_dim;
    if obs_seq.len() % obs_dim != 0 || action_seq.len() != t_len * action_dim {
        return Err(NnError::LengthMismatch {
            expected: t_len * action_dim,
            got: action_seq.len(),
        });
    }
    let mut x = Vec::with_capacity(t_len * (obs_dim + action_dim));
    for t in 0..t_len {
        x.extend_from_slice(&obs_seq[t * obs_dim..(t + 1) * obs_dim]);
        x.extend_from_slice(&action_seq[t * action_dim..(t + 1) * action_dim]);
    }
    Ok(x)
}

/// Value per step for (observation, action) pairs.
pub fn critic_forward(
    params: &NetworkParams,
    obs_seq: &[f64],
    action_seq: &[f64],
    state0: &RecurrentState,
) -> Result<(Vec<f64>, RecurrentState), NnError> {
    if params.spec.role != Role::Critic {
        return Err(NnError::ShapeMismatch("critic_forward on an actor".into()));
    }
    let x = critic_inputs(obs_seq, action_seq, params.spec.obs_dim, params.spec.action_dim)?;
    let f = params.forward(&x, state0)?;
    Ok((f.outputs, f.final_state))
}

/// Copy `online` into `target`. The target takes the online version number,
/// so versions never decrease and repeated copies are idempotent.
pub fn hard_update(target: &mut NetworkParams, online: &NetworkParams) -> Result<(), NnError> {
    if target.spec != online.spec {
        return Err(NnError::ShapeMismatch(
            "target and online networks have different specs".into(),
        ));
    }
    target.data.copy_from_slice(&online.data);
    target.version = online.version;
    Ok(())
}

fn orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let a = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let mut q = qr.q();
    let rdiag = qr.r().diagonal();
    for (j, s) in rdiag.iter().enumerate() {
        if *s < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push(q[(i, j)]);
        }
    }
    out
}
