//! Robotless quasi-static assembly environment.
//!
//! The moving piece is driven kinematically by the commanded twist; contact
//! is resolved with a penalty model and only ever reported through the
//! force/torque sensor. The observation is the 6-component wrench and
//! nothing else.

mod contact;
pub mod geometry;
mod noise;
mod trace;

pub use contact::{contact_wrench, ContactModel};
pub use noise::{inject_noise, perturb_friction, RunningRms, REFERENCE_FLOOR};
pub use trace::{TraceRecord, TraceWriter};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{pose_distance, Pose, Twist, Wrench};

/// Reset poses penetrating deeper than this are rejected.
pub const MAX_RESET_PENETRATION: f64 = 0.005;
/// Bisection stops once the bracket is shorter than this (m).
const BISECTION_TOLERANCE: f64 = 1e-5;
/// Characteristic radius converting angular motion to a length for bisection.
const ANGULAR_LEVER: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("action contains non-finite components")]
    NonFiniteAction,
    #[error("episode already finished; call reset")]
    EpisodeDone,
    #[error("environment has not been reset")]
    NotReset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    LapJoint,
    PegInHole,
}

/// Initial pose perturbation around the nominal start.
///
/// The linear offset has fixed magnitude in a uniformly random horizontal
/// direction; the angular offset is a rotation about z of fixed magnitude
/// and random sign.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct InitialOffset {
    pub linear: f64,
    pub angular: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionLimits {
    pub v_max: f64,
    pub w_max: f64,
}

impl Default for ActionLimits {
    fn default() -> Self {
        ActionLimits {
            v_max: 0.02,
            w_max: 0.1,
        }
    }
}

impl ActionLimits {
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.v_max, self.v_max, self.v_max, self.w_max, self.w_max, self.w_max,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    #[serde(default)]
    pub clearance: f64,
    #[serde(default)]
    pub goal_pose: Option<Pose>,
    #[serde(default = "default_epsilon")]
    pub success_epsilon: f64,
    #[serde(default = "default_bonus")]
    pub success_bonus: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u32,
    #[serde(default)]
    pub initial_offset: InitialOffset,
    /// Height of the piece's bottom face above the socket rim at the nominal start.
    #[serde(default = "default_start_height")]
    pub start_height: f64,
    #[serde(default = "default_lambda_rot")]
    pub lambda_rot: f64,
    #[serde(default)]
    pub limits: ActionLimits,
}

fn default_epsilon() -> f64 {
    0.001
}
fn default_bonus() -> f64 {
    100.0
}
fn default_max_steps() -> u32 {
    200
}
fn default_start_height() -> f64 {
    0.003
}
fn default_lambda_rot() -> f64 {
    0.1
}

impl TaskSpec {
    pub fn lap_joint() -> Self {
        TaskSpec {
            kind: TaskKind::LapJoint,
            clearance: 0.002,
            goal_pose: None,
            success_epsilon: default_epsilon(),
            success_bonus: default_bonus(),
            max_steps: default_max_steps(),
            initial_offset: InitialOffset::default(),
            start_height: default_start_height(),
            lambda_rot: default_lambda_rot(),
            limits: ActionLimits::default(),
        }
    }

    pub fn peg_in_hole() -> Self {
        TaskSpec {
            kind: TaskKind::PegInHole,
            clearance: 0.0,
            ..TaskSpec::lap_joint()
        }
    }

    /// Fully seated at the socket floor unless overridden.
    pub fn goal(&self) -> Pose {
        self.goal_pose.unwrap_or_else(|| {
            Pose::from_translation(Vector3::new(0.0, 0.0, -geometry::SOCKET_DEPTH))
        })
    }

    pub fn nominal_start(&self) -> Pose {
        Pose::from_translation(Vector3::new(0.0, 0.0, self.start_height))
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::Config(m.to_string()));
        if !(self.clearance >= 0.0) {
            return bad("task.clearance must be >= 0");
        }
        if !(self.success_epsilon > 0.0) {
            return bad("task.success_epsilon must be > 0");
        }
        if self.max_steps < 1 {
            return bad("task.max_steps must be >= 1");
        }
        if !(self.lambda_rot >= 0.0) {
            return bad("task.lambda_rot must be >= 0");
        }
        if !(self.limits.v_max > 0.0 && self.limits.w_max > 0.0) {
            return bad("task.limits must be positive");
        }
        if !(self.initial_offset.linear >= 0.0 && self.initial_offset.angular >= 0.0) {
            return bad("task.initial_offset must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicsParams {
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    pub friction_coeff: f64,
    pub friction_smoothing: f64,
    pub dt: f64,
    pub ft_noise_frac: f64,
    pub friction_noise_frac: f64,
    /// Sensor frame located in the piece frame.
    pub sensor_pose: Pose,
    /// Commanded motion is scaled back so no sample point exceeds this depth.
    pub max_penetration: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        PhysicsParams {
            contact_stiffness: 5000.0,
            contact_damping: 50.0,
            friction_coeff: 0.3,
            friction_smoothing: 1e-3,
            dt: 0.05,
            ft_noise_frac: 0.0,
            friction_noise_frac: 0.0,
            sensor_pose: Pose::from_translation(Vector3::new(0.0, 0.0, 0.12)),
            max_penetration: 0.002,
        }
    }
}

impl PhysicsParams {
    pub fn validate(&self) -> Result<(), EnvError> {
        let ok = self.contact_stiffness > 0.0
            && self.contact_damping >= 0.0
            && self.friction_coeff >= 0.0
            && self.friction_smoothing > 0.0
            && self.dt > 0.0
            && self.ft_noise_frac >= 0.0
            && self.friction_noise_frac >= 0.0
            && self.max_penetration > 0.0;
        if ok {
            Ok(())
        } else {
            Err(EnvError::Config(
                "physics: stiffness, smoothing, dt, max_penetration must be > 0; \
                 damping, friction and noise fractions must be >= 0"
                    .into(),
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoneReason {
    Success,
    Timeout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Wrench,
    pub reward: f64,
    pub done: bool,
    pub done_reason: Option<DoneReason>,
    /// Distance to goal; diagnostics only, never part of the observation.
    pub info_distance: f64,
    /// The commanded twist was outside the actuation limits.
    pub clamped: bool,
}

#[derive(Debug, Clone)]
pub struct EnvState {
    pub piece_pose: Pose,
    pub step_count: u32,
    pub done: bool,
    friction: f64,
    rms: RunningRms,
    rng: ChaCha8Rng,
}

impl EnvState {
    /// Friction coefficient in effect for this episode.
    pub fn friction(&self) -> f64 {
        self.friction
    }
}

/// One single-owner environment instance.
#[derive(Debug, Clone)]
pub struct Environment {
    task: TaskSpec,
    params: PhysicsParams,
    model: ContactModel,
    goal: Pose,
    state: Option<EnvState>,
}

impl Environment {
    pub fn new(task: TaskSpec, params: PhysicsParams) -> Result<Self, EnvError> {
        task.validate()?;
        params.validate()?;
        let model = ContactModel::new(&task);
        let goal = task.goal();
        Ok(Environment {
            task,
            params,
            model,
            goal,
            state: None,
        })
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn params(&self) -> &PhysicsParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut PhysicsParams {
        &mut self.params
    }

    pub fn model(&self) -> &ContactModel {
        &self.model
    }

    pub fn state(&self) -> Option<&EnvState> {
        self.state.as_ref()
    }

    pub fn goal(&self) -> &Pose {
        &self.goal
    }

    /// Sample the start pose and return the first observation.
    pub fn reset(&mut self, seed: u64) -> Result<Wrench, EnvError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let off = self.task.initial_offset;
        let heading = rng.random_range(0.0..std::f64::consts::TAU);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let start = self.task.nominal_start();
        let dt = Vector3::new(off.linear * heading.cos(), off.linear * heading.sin(), 0.0);
        let drot = Vector3::new(0.0, 0.0, sign * off.angular);
        let pose = start.displaced(&dt, &drot);

        let pen = self.model.max_penetration(&pose);
        if pen > MAX_RESET_PENETRATION {
            return Err(EnvError::Config(format!(
                "initial pose penetrates {:.2} mm (limit {:.1} mm)",
                pen * 1e3,
                MAX_RESET_PENETRATION * 1e3
            )));
        }
        let friction = perturb_friction(
            self.params.friction_coeff,
            self.params.friction_noise_frac,
            &mut rng,
        );
        let mut state = EnvState {
            piece_pose: pose,
            step_count: 0,
            done: false,
            friction,
            rms: RunningRms::default(),
            rng,
        };
        let obs = self.observe(&mut state, &Twist::zero());
        self.state = Some(state);
        Ok(obs)
    }

    fn episode_params(&self, friction: f64) -> PhysicsParams {
        PhysicsParams {
            friction_coeff: friction,
            ..self.params.clone()
        }
    }

    fn observe(&self, state: &mut EnvState, velocity: &Twist) -> Wrench {
        let params = self.episode_params(state.friction);
        let clean = self.model.sensor_wrench(&state.piece_pose, velocity, &params);
        if self.params.ft_noise_frac == 0.0 {
            return clean;
        }
        state.rms.push(&clean);
        let scale = state.rms.scale();
        inject_noise(&clean, self.params.ft_noise_frac, &scale, &mut state.rng)
    }

    /// Fraction of the commanded displacement that keeps penetration bounded.
    fn admissible_fraction(&self, pose: &Pose, dt: &Vector3<f64>, drot: &Vector3<f64>) -> f64 {
        let limit = self
            .params
            .max_penetration
            .max(self.model.max_penetration(pose));
        let pen_at = |s: f64| {
            self.model
                .max_penetration(&pose.displaced(&(dt * s), &(drot * s)))
        };
        if pen_at(1.0) <= limit {
            return 1.0;
        }
        let length = dt.norm() + drot.norm() * ANGULAR_LEVER;
        let (mut lo, mut hi) = (0.0, 1.0);
        while (hi - lo) * length > BISECTION_TOLERANCE {
            let mid = 0.5 * (lo + hi);
            if pen_at(mid) <= limit {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    pub fn step(&mut self, action: &Twist) -> Result<StepResult, EnvError> {
        let mut state = self.state.take().ok_or(EnvError::NotReset)?;
        let result = self.step_state(&mut state, action);
        self.state = Some(state);
        result
    }

    fn step_state(&self, state: &mut EnvState, action: &Twist) -> Result<StepResult, EnvError> {
        if state.done {
            return Err(EnvError::EpisodeDone);
        }
        if !action.is_finite() {
            return Err(EnvError::NonFiniteAction);
        }
        let (cmd, clamped) = action.clamped(self.task.limits.v_max, self.task.limits.w_max);
        let h = self.params.dt;
        let dt = cmd.linear * h;
        let drot = cmd.angular * h;
        let s = self.admissible_fraction(&state.piece_pose, &dt, &drot);
        state.piece_pose = state.piece_pose.displaced(&(dt * s), &(drot * s));
        state.step_count += 1;

        let actual = Twist::new(cmd.linear * s, cmd.angular * s);
        let observation = self.observe(state, &actual);

        let d = pose_distance(&state.piece_pose, &self.goal, self.task.lambda_rot);
        let success = d <= self.task.success_epsilon;
        let reward = if success {
            -d + self.task.success_bonus
        } else {
            -d
        };
        let done_reason = if success {
            Some(DoneReason::Success)
        } else if state.step_count >= self.task.max_steps {
            Some(DoneReason::Timeout)
        } else {
            None
        };
        state.done = done_reason.is_some();
        Ok(StepResult {
            observation,
            reward,
            done: state.done,
            done_reason,
            info_distance: d,
            clamped,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lap() -> Environment {
        Environment::new(TaskSpec::lap_joint(), PhysicsParams::default()).unwrap()
    }

    fn down(v: f64) -> Twist {
        Twist::new(Vector3::new(0.0, 0.0, -v), Vector3::zeros())
    }

    #[test]
    fn zero_offset_reset_is_contact_free() {
        let mut env = lap();
        assert_eq!(env.reset(0).unwrap(), Wrench::zero());
    }

    #[test]
    fn reset_is_deterministic_per_seed() {
        let mut task = TaskSpec::lap_joint();
        task.initial_offset = InitialOffset {
            linear: 0.003,
            angular: 0.05,
        };
        let mut a = Environment::new(task.clone(), PhysicsParams::default()).unwrap();
        let mut b = Environment::new(task, PhysicsParams::default()).unwrap();
        let oa = a.reset(42).unwrap();
        let ob = b.reset(42).unwrap();
        assert_eq!(oa, ob);
        assert_eq!(a.state().unwrap().piece_pose, b.state().unwrap().piece_pose);
        b.reset(43).unwrap();
        assert_ne!(a.state().unwrap().piece_pose, b.state().unwrap().piece_pose);
    }

    #[test]
    fn lateral_offset_on_chamfer_pushes_back() {
        for &(dir, expect_sign) in &[(1.0, -1.0), (-1.0, 1.0)] {
            let mut task = TaskSpec::lap_joint();
            task.start_height = -0.0025;
            task.initial_offset.linear = 0.003;
            let mut env = Environment::new(task, PhysicsParams::default()).unwrap();
            // Find a seed whose heading points along +x or -x closely enough.
            let mut found = false;
            for seed in 0..5000 {
                env.reset(seed).unwrap();
                let t = *env.state().unwrap().piece_pose.translation();
                if (t.x * dir - 0.003).abs() < 2e-5 {
                    let obs = env.reset(seed).unwrap();
                    assert!(obs.force.x * expect_sign > 0.0, "f_x = {}", obs.force.x);
                    found = true;
                    break;
                }
            }
            assert!(found);
        }
    }

    #[test]
    fn deep_interpenetration_rejected_on_reset() {
        let mut task = TaskSpec::lap_joint();
        task.start_height = -0.010;
        task.initial_offset.linear = 0.008;
        let mut env = Environment::new(task, PhysicsParams::default()).unwrap();
        assert!(matches!(env.reset(1), Err(EnvError::Config(_))));
    }

    #[test]
    fn free_space_descent_integrates_exactly() {
        let mut env = lap();
        env.reset(0).unwrap();
        let z0 = env.state().unwrap().piece_pose.translation().z;
        for _ in 0..10 {
            let r = env.step(&down(0.01)).unwrap();
            assert!(!r.done);
            assert_eq!(r.observation, Wrench::zero());
        }
        let z1 = env.state().unwrap().piece_pose.translation().z;
        assert!(((z0 - z1) - 0.005).abs() < 1e-15);
    }

    #[test]
    fn zero_action_times_out_with_negative_distance_reward() {
        let mut task = TaskSpec::lap_joint();
        task.max_steps = 5;
        let mut env = Environment::new(task, PhysicsParams::default()).unwrap();
        env.reset(0).unwrap();
        let start = env.state().unwrap().piece_pose;
        for i in 0..5 {
            let r = env.step(&Twist::zero()).unwrap();
            assert!((r.reward + r.info_distance).abs() < 1e-15);
            assert_eq!(r.done, i == 4);
            if r.done {
                assert_eq!(r.done_reason, Some(DoneReason::Timeout));
            }
        }
        assert_eq!(env.state().unwrap().piece_pose, start);
        assert_eq!(env.step(&Twist::zero()), Err(EnvError::EpisodeDone));
    }

    #[test]
    fn success_reward_adds_bonus() {
        let mut task = TaskSpec::lap_joint();
        // Goal 0.6 mm below the start so one 1 mm step lands 0.4 mm past it.
        task.goal_pose = Some(Pose::from_translation(Vector3::new(0.0, 0.0, 0.0024)));
        let mut env = Environment::new(task, PhysicsParams::default()).unwrap();
        env.reset(0).unwrap();
        let r = env.step(&down(0.02)).unwrap();
        assert!((r.info_distance - 0.0004).abs() < 1e-12);
        assert!((r.reward - 99.9996).abs() < 1e-9);
        assert_eq!(r.done_reason, Some(DoneReason::Success));
        assert!(r.reward >= 100.0 - 0.001);
    }

    #[test]
    fn non_finite_action_rejected_and_clamping_reported() {
        let mut env = lap();
        assert_eq!(env.step(&Twist::zero()), Err(EnvError::NotReset));
        env.reset(0).unwrap();
        let bad = Twist::from_array([f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(env.step(&bad), Err(EnvError::NonFiniteAction));
        let r = env.step(&down(1.0)).unwrap();
        assert!(r.clamped);
        let z = env.state().unwrap().piece_pose.translation().z;
        assert!((z - (0.003 - 0.001)).abs() < 1e-15);
    }

    #[test]
    fn penetration_is_bounded_when_pushing_into_the_rim() {
        let mut task = TaskSpec::lap_joint();
        task.initial_offset.linear = 0.010;
        let params = PhysicsParams::default();
        let mut env = Environment::new(task, params.clone()).unwrap();
        env.reset(5).unwrap();
        for _ in 0..30 {
            env.step(&down(0.02)).unwrap();
            let pen = env.model().max_penetration(&env.state().unwrap().piece_pose);
            assert!(pen <= params.max_penetration + 1e-12, "penetration {pen}");
        }
        let pen = env.model().max_penetration(&env.state().unwrap().piece_pose);
        assert!(pen > params.max_penetration - 2e-5);
    }

    #[test]
    fn scripted_descent_succeeds_on_both_tasks() {
        for task in [TaskSpec::lap_joint(), TaskSpec::peg_in_hole()] {
            let mut env = Environment::new(task, PhysicsParams::default()).unwrap();
            env.reset(0).unwrap();
            let mut last = None;
            for _ in 0..200 {
                let r = env.step(&down(0.02)).unwrap();
                if r.done {
                    last = r.done_reason;
                    break;
                }
            }
            assert_eq!(last, Some(DoneReason::Success));
        }
    }

    #[test]
    fn reward_is_one_lipschitz_in_pose_distance() {
        let task = TaskSpec::lap_joint();
        let goal = task.goal();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let mut sample = || {
                let t = Vector3::new(
                    rng.random_range(-0.02..0.02),
                    rng.random_range(-0.02..0.02),
                    rng.random_range(-0.02..0.02),
                );
                let axis = Vector3::new(rng.random(), rng.random(), rng.random::<f64>());
                Pose::from_axis_angle(axis, rng.random_range(-0.5..0.5), t)
            };
            let (a, b) = (sample(), sample());
            let da = pose_distance(&a, &goal, task.lambda_rot);
            let db = pose_distance(&b, &goal, task.lambda_rot);
            if da > task.success_epsilon && db > task.success_epsilon {
                assert!((da - db).abs() <= pose_distance(&a, &b, task.lambda_rot) + 1e-12);
            }
        }
    }
}
