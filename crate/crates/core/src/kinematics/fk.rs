use super::pose::axis_angle;
use super::{JointState, KinematicChain, Pose6D};

impl KinematicChain {
    fn joint_transform(&self, j: usize, q: &JointState) -> Pose6D {
        let joint = &self.joints[j];
        match joint.state_index {
            Some(i) => joint.origin * Pose6D::new(axis_angle(&joint.axis, q.angles()[i]), Default::default()),
            None => joint.origin,
        }
    }

    /// Pose of `link` in the frame of its ancestor `from`. Panics if `from` is not an ancestor.
    pub fn link_pose(&self, from: usize, link: usize, q: &JointState) -> Pose6D {
        assert_eq!(q.len(), self.dof(), "joint state length");
        let path = self
            .path_between(from, link)
            .unwrap_or_else(|| panic!("{} is not an ancestor of {}", self.links[from], self.links[link]));
        path.iter().fold(Pose6D::identity(), |acc, &j| acc * self.joint_transform(j, q))
    }

    /// Pose of the anchor link in the root link frame.
    pub fn anchor_in_root(&self, q: &JointState) -> Pose6D {
        self.link_pose(self.root, self.anchor, q)
    }
}

/// Sensor poses in the anchor frame, in the chain's sensor order.
pub fn forward_kinematics(chain: &KinematicChain, q: &JointState) -> Vec<(String, Pose6D)> {
    chain
        .sensors
        .iter()
        .map(|s| (s.name.clone(), chain.link_pose(chain.anchor, s.link, q) * s.offset))
        .collect()
}

/// Sensor poses in the world frame: `base_pose * (root -> anchor) * anchor-frame pose`.
pub fn fk_in_world(chain: &KinematicChain, q: &JointState, base_pose: &Pose6D) -> Vec<(String, Pose6D)> {
    let anchor = *base_pose * chain.anchor_in_root(q);
    forward_kinematics(chain, q)
        .into_iter()
        .map(|(n, p)| (n, anchor * p))
        .collect()
}
