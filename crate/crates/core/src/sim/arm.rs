use std::f64::consts::PI;

use super::geometry::Pose2;
use super::SimError;
use crate::kinematics::{wrap_angle, JointKind, KinematicChain};

/// Joint angles `[shoulder, elbow]` placing a two-link arm's end at `(x, y)`.
///
/// The elbow-down branch has a non-negative elbow angle.
pub fn two_link_ik(x: f64, y: f64, l1: f64, l2: f64, elbow_down: bool) -> Option<[f64; 2]> {
    let r2 = x * x + y * y;
    let c = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
    if !(-1.0..=1.0).contains(&c) {
        return None;
    }
    let t2 = if elbow_down { c.acos() } else { -c.acos() };
    let t1 = y.atan2(x) - (l2 * t2.sin()).atan2(l1 + l2 * t2.cos());
    Some([wrap_angle(t1), t2])
}

pub fn two_link_fk(t1: f64, t2: f64, l1: f64, l2: f64) -> [f64; 2] {
    [l1 * t1.cos() + l2 * (t1 + t2).cos(), l1 * t1.sin() + l2 * (t1 + t2).sin()]
}

/// The shoulder/elbow/wrist-yaw arm of a planar chain.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanarArm {
    pub l1: f64,
    pub l2: f64,
    /// State indices of shoulder, elbow, wrist yaw.
    pub joints: [usize; 3],
    pub limits: [[f64; 2]; 3],
}

pub const ARM_JOINTS: [&str; 3] = ["shoulder", "elbow", "wrist_yaw"];

impl PlanarArm {
    /// Requires joints `shoulder`, `elbow`, `wrist_yaw` about +z, each offset along the parent's x axis,
    /// with the anchor link as the child of `wrist_yaw`.
    pub fn from_chain(chain: &KinematicChain) -> Result<Self, SimError> {
        let bad = |m: String| SimError::Chain(m);
        let mut joints = [0; 3];
        let mut lengths = [0.0; 3];
        let mut limits = [[0.0; 2]; 3];
        for (k, name) in ARM_JOINTS.iter().enumerate() {
            let j = chain
                .joints()
                .iter()
                .find(|j| j.name == *name)
                .ok_or_else(|| bad(format!("missing arm joint {name}")))?;
            if j.kind != JointKind::Revolute || (j.axis - nalgebra::Vector3::z()).norm() > 1e-9 {
                return Err(bad(format!("arm joint {name} must be revolute about +z")));
            }
            let t = j.origin.translation;
            if t.y.abs() > 1e-12 || t.z.abs() > 1e-12 || (j.origin.rotation - nalgebra::Matrix3::identity()).norm() > 1e-12 {
                return Err(bad(format!("arm joint {name} must be offset along x without rotation")));
            }
            joints[k] = j.state_index.expect("revolute joint has a state index");
            lengths[k] = t.x;
            limits[k] = j.limits;
        }
        if lengths[0] != 0.0 {
            return Err(bad("shoulder must sit at the chain root".into()));
        }
        let wrist = chain.joints().iter().find(|j| j.name == "wrist_yaw").unwrap();
        if chain.links()[wrist.child] != chain.anchor_link() {
            return Err(bad("the anchor link must be the child of wrist_yaw".into()));
        }
        Ok(Self {
            l1: lengths[1],
            l2: lengths[2],
            joints,
            limits,
        })
    }

    pub fn angles(&self, q: &[f64]) -> [f64; 3] {
        [q[self.joints[0]], q[self.joints[1]], q[self.joints[2]]]
    }

    pub fn set_angles(&self, q: &mut [f64], a: [f64; 3]) {
        for (k, v) in a.into_iter().enumerate() {
            q[self.joints[k]] = v;
        }
    }

    /// Wrist (anchor) pose in the base frame.
    pub fn wrist(&self, a: [f64; 3]) -> Pose2 {
        let [x, y] = two_link_fk(a[0], a[1], self.l1, self.l2);
        Pose2::new(x, y, wrap_angle(a[0] + a[1] + a[2]))
    }

    /// Both IK branches for a wrist pose in the base frame, each angle shifted by multiples of
    /// `2 pi` to lie nearest `near`; the branch closest to `near` within limits wins.
    pub fn ik(&self, wrist: Pose2, near: [f64; 3]) -> Option<[f64; 3]> {
        let mut best: Option<([f64; 3], f64)> = None;
        for elbow_down in [true, false] {
            let Some([t1, t2]) = two_link_ik(wrist.x, wrist.y, self.l1, self.l2, elbow_down) else {
                continue;
            };
            let raw = [t1, t2, wrist.yaw - t1 - t2];
            let mut a = [0.0; 3];
            for k in 0..3 {
                a[k] = near[k] + wrap_angle(raw[k] - near[k]);
            }
            if (0..3).any(|k| a[k] < self.limits[k][0] || a[k] > self.limits[k][1]) {
                for k in 0..3 {
                    // try the representative inside the limits if the nearest one is not
                    let alt = [a[k] - 2.0 * PI, a[k] + 2.0 * PI];
                    if a[k] < self.limits[k][0] || a[k] > self.limits[k][1] {
                        if let Some(v) = alt.into_iter().find(|v| *v >= self.limits[k][0] && *v <= self.limits[k][1]) {
                            a[k] = v;
                        }
                    }
                }
                if (0..3).any(|k| a[k] < self.limits[k][0] || a[k] > self.limits[k][1]) {
                    continue;
                }
            }
            let d: f64 = (0..3).map(|k| (a[k] - near[k]).powi(2)).sum();
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((a, d));
            }
        }
        best.map(|(a, _)| a)
    }
}
