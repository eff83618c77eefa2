//! Analytic socket geometry and the sample points used to probe it.

use nalgebra::Vector3;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::{TaskKind, TaskSpec};

/// Lap-joint member: 30 x 30 mm cross-section (only the lower part is sampled).
pub const LAP_HALF_WIDTH: f64 = 0.015;
pub const LAP_CHAMFER: f64 = 0.004;
/// Peg: 20 mm diameter with a 2 mm 45 degree chamfer on the bottom edge.
pub const PEG_RADIUS: f64 = 0.010;
pub const PEG_CHAMFER: f64 = 0.002;
/// Numerical skin added to the hole radius so a centered zero-clearance peg is contact free.
pub const PEG_SKIN: f64 = 0.000_05;
pub const SOCKET_DEPTH: f64 = 0.020;

const SIDE_HEIGHT: f64 = 0.030;

/// A point on the moving piece, in the piece frame, with its share of the
/// stiffness of the face it samples.
#[derive(Debug, Clone, Copy)]
pub struct ContactPoint {
    pub position: Vector3<f64>,
    pub weight: f64,
}

/// Penetration depth (m) and unit normal pointing out of the socket material.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penetration {
    pub depth: f64,
    pub normal: Vector3<f64>,
}

/// Static socket, top surface at z = 0, opening centered on the z axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Socket {
    /// Square pocket with a 45 degree chamfer around its rim.
    Pocket {
        half_width: f64,
        depth: f64,
        chamfer: f64,
    },
    /// Cylindrical hole with a sharp rim.
    Hole { radius: f64, depth: f64 },
}

impl Socket {
    pub fn for_task(task: &TaskSpec) -> Socket {
        match task.kind {
            TaskKind::LapJoint => Socket::Pocket {
                half_width: LAP_HALF_WIDTH + task.clearance / 2.0,
                depth: SOCKET_DEPTH,
                chamfer: LAP_CHAMFER,
            },
            TaskKind::PegInHole => Socket::Hole {
                radius: PEG_RADIUS + task.clearance / 2.0 + PEG_SKIN,
                depth: SOCKET_DEPTH,
            },
        }
    }

    pub fn depth(&self) -> f64 {
        match *self {
            Socket::Pocket { depth, .. } | Socket::Hole { depth, .. } => depth,
        }
    }

    /// Deepest penetration of world point `p` into the socket material, if any.
    ///
    /// The material is a union of convex pieces (floor slab, walls); the
    /// deepest piece wins and supplies the normal.
    pub fn penetration(&self, p: &Vector3<f64>) -> Option<Penetration> {
        let mut best: Option<Penetration> = None;
        let mut consider = |cand: Option<Penetration>| {
            if let Some(c) = cand {
                if best.is_none_or(|b| c.depth > b.depth) {
                    best = Some(c);
                }
            }
        };
        let floor = self.depth();
        if p.z < -floor {
            consider(Some(Penetration {
                depth: -floor - p.z,
                normal: Vector3::z(),
            }));
        }
        match *self {
            Socket::Pocket {
                half_width,
                chamfer,
                ..
            } => {
                for (axis, sign) in [(0usize, 1.0), (0, -1.0), (1, 1.0), (1, -1.0)] {
                    consider(pocket_wall(p, axis, sign, half_width, chamfer));
                }
            }
            Socket::Hole { radius, .. } => {
                let r = (p.x * p.x + p.y * p.y).sqrt();
                if p.z < 0.0 && r > radius {
                    let radial = r - radius;
                    let vertical = -p.z;
                    let cand = if vertical <= radial {
                        Penetration {
                            depth: vertical,
                            normal: Vector3::z(),
                        }
                    } else {
                        Penetration {
                            depth: radial,
                            normal: Vector3::new(-p.x / r, -p.y / r, 0.0),
                        }
                    };
                    consider(Some(cand));
                }
            }
        }
        best
    }
}

/// One wall of the pocket: `{z <= 0, u >= a, u - z >= a + c}` with `u = sign * p[axis]`.
fn pocket_wall(
    p: &Vector3<f64>,
    axis: usize,
    sign: f64,
    half_width: f64,
    chamfer: f64,
) -> Option<Penetration> {
    let u = sign * p[axis];
    let mut inward = Vector3::zeros();
    inward[axis] = -sign;
    let planes = [
        (p.z, Vector3::z()),
        (half_width - u, inward),
        (
            (half_width + chamfer - u + p.z) * FRAC_1_SQRT_2,
            (inward + Vector3::z()) * FRAC_1_SQRT_2,
        ),
    ];
    let (phi, normal) = planes
        .into_iter()
        .fold((f64::NEG_INFINITY, Vector3::zeros()), |acc, pl| {
            if pl.0 > acc.0 {
                pl
            } else {
                acc
            }
        });
    (phi < 0.0).then_some(Penetration { depth: -phi, normal })
}

fn push_group(out: &mut Vec<ContactPoint>, positions: Vec<Vector3<f64>>) {
    let weight = 1.0 / positions.len() as f64;
    out.extend(
        positions
            .into_iter()
            .map(|position| ContactPoint { position, weight }),
    );
}

fn linspace(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| a + (b - a) * i as f64 / (n - 1) as f64)
}

fn ring(r: f64, z: f64, n: usize) -> impl Iterator<Item = Vector3<f64>> {
    (0..n).map(move |k| {
        let a = 2.0 * PI * k as f64 / n as f64;
        Vector3::new(r * a.cos(), r * a.sin(), z)
    })
}

/// Sample points on the moving piece. The piece frame origin is the center
/// of its bottom face; +z points away from the socket.
///
/// Each face is one group whose weights sum to 1, so a face pressed flat
/// into material by `p` produces a normal force of exactly `k * p`.
pub fn piece_points(kind: TaskKind) -> Vec<ContactPoint> {
    let mut out = Vec::new();
    match kind {
        TaskKind::LapJoint => {
            let h = LAP_HALF_WIDTH;
            let n = 7;
            let bottom = linspace(-h, h, n)
                .flat_map(|x| linspace(-h, h, n).map(move |y| Vector3::new(x, y, 0.0)))
                .collect();
            push_group(&mut out, bottom);
            // Side rows start above the bottom edge, which the bottom group covers.
            let rows: Vec<f64> = linspace(SIDE_HEIGHT / 6.0, SIDE_HEIGHT, 6).collect();
            for (axis, sign) in [(0usize, 1.0), (0, -1.0), (1, 1.0), (1, -1.0)] {
                let mut face = Vec::new();
                for &z in &rows {
                    for s in linspace(-h, h, n) {
                        let mut p = Vector3::new(0.0, 0.0, z);
                        p[axis] = sign * h;
                        p[1 - axis] = s;
                        face.push(p);
                    }
                }
                push_group(&mut out, face);
            }
        }
        TaskKind::PegInHole => {
            let inner = PEG_RADIUS - PEG_CHAMFER;
            let mut bottom = vec![Vector3::zeros()];
            for (i, r) in linspace(inner / 4.0, inner, 4).enumerate() {
                bottom.extend(ring(r, 0.0, 8 * (i + 1)));
            }
            push_group(&mut out, bottom);
            let chamfer = (1..=4)
                .flat_map(|i| {
                    let s = PEG_CHAMFER * i as f64 / 4.0;
                    ring(inner + s, s, 32)
                })
                .collect();
            push_group(&mut out, chamfer);
            let side = linspace(2.0 * PEG_CHAMFER, SIDE_HEIGHT, 7)
                .flat_map(|z| ring(PEG_RADIUS, z, 32))
                .collect();
            push_group(&mut out, side);
        }
    }
    out
}
