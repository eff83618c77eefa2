//! Penalty contact between the sampled piece and the analytic socket.

use nalgebra::Vector3;

use super::geometry::{piece_points, ContactPoint, Socket};
use super::{PhysicsParams, TaskSpec};
use crate::geom::{wrench_transform, Pose, Twist, Wrench};

/// Cached piece samples and socket for one task.
#[derive(Debug, Clone)]
pub struct ContactModel {
    points: Vec<ContactPoint>,
    socket: Socket,
}

impl ContactModel {
    pub fn new(task: &TaskSpec) -> Self {
        ContactModel {
            points: piece_points(task.kind),
            socket: Socket::for_task(task),
        }
    }

    pub fn socket(&self) -> &Socket {
        &self.socket
    }

    pub fn points(&self) -> &[ContactPoint] {
        &self.points
    }

    /// Largest penetration depth over all sample points (0 when contact free).
    pub fn max_penetration(&self, pose: &Pose) -> f64 {
        self.points
            .iter()
            .filter_map(|cp| self.socket.penetration(&pose.transform_point(&cp.position)))
            .map(|p| p.depth)
            .fold(0.0, f64::max)
    }

    /// Contact wrench acting on the piece, about the piece origin, in world axes.
    pub fn world_wrench(&self, pose: &Pose, velocity: &Twist, params: &PhysicsParams) -> Wrench {
        let origin = pose.translation();
        let mut force = Vector3::zeros();
        let mut torque = Vector3::zeros();
        for cp in &self.points {
            let p = pose.transform_point(&cp.position);
            let Some(pen) = self.socket.penetration(&p) else {
                continue;
            };
            let lever = p - origin;
            let v = velocity.linear + velocity.angular.cross(&lever);
            let vn = v.dot(&pen.normal);
            let rate = -vn;
            let fn_mag = (cp.weight
                * (params.contact_stiffness * pen.depth + params.contact_damping * rate))
                .max(0.0);
            if fn_mag == 0.0 {
                continue;
            }
            let mut f = pen.normal * fn_mag;
            let vt = v - pen.normal * vn;
            let speed = vt.norm();
            if speed > 0.0 && params.friction_coeff > 0.0 {
                let mag = params.friction_coeff * fn_mag * (speed / params.friction_smoothing).tanh();
                f -= vt * (mag / speed);
            }
            force += f;
            torque += lever.cross(&f);
        }
        Wrench::new(force, torque)
    }

    /// Contact wrench as reported by the sensor: piece axes, then the
    /// sensor mounting frame. The piece's own weight is never included.
    pub fn sensor_wrench(&self, pose: &Pose, velocity: &Twist, params: &PhysicsParams) -> Wrench {
        let world = self.world_wrench(pose, velocity, params);
        let rt = pose.rotation().transpose();
        let piece = Wrench::new(rt * world.force, rt * world.torque);
        let out = wrench_transform(&params.sensor_pose.inverse(), &piece);
        // Contact forces are finite by construction.
        out.unwrap_or_default()
    }
}

/// Sensor-frame contact wrench for `piece_pose` moving with `velocity`.
pub fn contact_wrench(
    piece_pose: &Pose,
    velocity: &Twist,
    task: &TaskSpec,
    params: &PhysicsParams,
) -> Wrench {
    ContactModel::new(task).sensor_wrench(piece_pose, velocity, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::geometry::{LAP_HALF_WIDTH, SOCKET_DEPTH};

    fn bare_params() -> PhysicsParams {
        PhysicsParams {
            sensor_pose: Pose::identity(),
            ..PhysicsParams::default()
        }
    }

    fn at(x: f64, y: f64, z: f64) -> Pose {
        Pose::from_translation(Vector3::new(x, y, z))
    }

    #[test]
    fn contact_free_pose_gives_zero_wrench() {
        let task = TaskSpec::lap_joint();
        let w = contact_wrench(&at(0.0, 0.0, 0.003), &Twist::zero(), &task, &bare_params());
        assert_eq!(w, Wrench::zero());
        // Inside the pocket with clearance on every side.
        let w = contact_wrench(&at(0.0005, 0.0, -0.010), &Twist::zero(), &task, &bare_params());
        assert_eq!(w, Wrench::zero());
    }

    #[test]
    fn flat_floor_contact_is_stiffness_times_depth() {
        let task = TaskSpec::lap_joint();
        let params = bare_params();
        let p = 0.0007;
        let w = contact_wrench(&at(0.0, 0.0, -SOCKET_DEPTH - p), &Twist::zero(), &task, &params);
        let expected = params.contact_stiffness * p;
        assert!((w.force.norm() - expected).abs() <= 1e-9 * expected);
        assert!((w.force.z - expected).abs() <= 1e-9 * expected);
        assert!(w.torque.norm() <= 1e-12);
    }

    #[test]
    fn wall_contact_torque_matches_lever_arm() {
        let task = TaskSpec::lap_joint();
        let params = bare_params();
        // Push the +x face 0.5 mm into the wall, bottom 10 mm below the rim.
        let pen = 0.0005;
        let x = 0.016 - LAP_HALF_WIDTH + pen;
        let w = contact_wrench(&at(x, 0.0, -0.010), &Twist::zero(), &task, &params);
        let k = params.contact_stiffness;
        // In the wall: the bottom edge column (7 of 49), the lowest row of the
        // +x face (7 of 42) and the corner point of that row on each y face (1 of 42).
        let f_bottom = k * pen * 7.0 / 49.0;
        let f_side = k * pen * 9.0 / 42.0;
        assert!((w.force.x + f_bottom + f_side).abs() < 1e-9, "{w:?} {f_bottom} {f_side}");
        assert!(w.force.y.abs() < 1e-12 && w.force.z.abs() < 1e-12);
        // The side row sits 5 mm above the piece origin; the bottom column has no lever in z.
        let tau_y = 0.005 * -f_side;
        assert!((w.torque.y - tau_y).abs() < 1e-9, "{} vs {}", w.torque.y, tau_y);
        assert!(w.torque.x.abs() < 1e-12 && w.torque.z.abs() < 1e-12);
    }

    #[test]
    fn mirrored_offsets_give_mirrored_wrenches() {
        let task = TaskSpec::lap_joint();
        let params = PhysicsParams::default();
        for &dx in &[0.001, 0.002, 0.003, 0.0045] {
            for &z in &[-0.0005, -0.001, -0.0015] {
                let a = contact_wrench(&at(dx, 0.0, z), &Twist::zero(), &task, &params);
                let b = contact_wrench(&at(-dx, 0.0, z), &Twist::zero(), &task, &params);
                assert!((a.force.x + b.force.x).abs() <= 1e-9);
                assert!((a.force.z - b.force.z).abs() <= 1e-9);
                assert!((a.force.y - b.force.y).abs() <= 1e-9);
                assert!((a.torque.y + b.torque.y).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn normal_force_zero_iff_no_penetration_and_monotone() {
        let task = TaskSpec::lap_joint();
        let params = bare_params();
        let model = ContactModel::new(&task);
        let mut last = 0.0;
        for i in 0..100 {
            let depth = -0.001 + 0.003 * i as f64 / 99.0;
            let pose = at(0.0, 0.0, -SOCKET_DEPTH - depth);
            let f = model.world_wrench(&pose, &Twist::zero(), &params).force.z;
            if depth <= 0.0 {
                assert_eq!(f, 0.0);
            } else {
                assert!(f > last, "not increasing at depth {depth}");
                last = f;
            }
        }
    }

    #[test]
    fn sliding_contact_adds_opposing_friction() {
        let task = TaskSpec::lap_joint();
        let params = bare_params();
        let pose = at(0.0, 0.0, -SOCKET_DEPTH - 0.0005);
        let slide = Twist::new(Vector3::new(0.01, 0.0, 0.0), Vector3::zeros());
        let w = contact_wrench(&pose, &slide, &task, &params);
        let fz = w.force.z;
        let expected = -params.friction_coeff * fz * (0.01 / params.friction_smoothing).tanh();
        assert!((w.force.x - expected).abs() < 1e-9);
        assert!(w.force.x < 0.0);
    }
}
