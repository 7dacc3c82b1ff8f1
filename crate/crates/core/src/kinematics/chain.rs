use std::collections::HashMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::pose::Origin;
use super::{KinematicError, Pose6D, Result};

pub const CHAIN_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Fixed,
}

impl JointKind {
    pub fn as_str(self) -> &'static str {
        match self {
            JointKind::Revolute => "revolute",
            JointKind::Fixed => "fixed",
        }
    }
}

/// Joint description as written in a chain file, before validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: JointKind,
    pub parent: String,
    pub child: String,
    #[serde(default)]
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limits: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub name: String,
    pub link: String,
    #[serde(default)]
    pub origin: Origin,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    pub parent: usize,
    pub child: usize,
    pub origin: Pose6D,
    pub axis: Vector3<f64>,
    pub limits: [f64; 2],
    /// Position of this joint's angle in a [`JointState`]; `None` for fixed joints.
    pub state_index: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensorFrame {
    pub name: String,
    pub link: usize,
    pub offset: Pose6D,
}

/// Validated, immutable tree of links and joints with a designated anchor link.
#[derive(Clone, Debug, PartialEq)]
pub struct KinematicChain {
    pub(crate) links: Vec<String>,
    pub(crate) joints: Vec<Joint>,
    pub(crate) sensors: Vec<SensorFrame>,
    pub(crate) anchor: usize,
    pub(crate) root: usize,
    /// Joint whose child is the link, per link.
    pub(crate) parent_joint: Vec<Option<usize>>,
    /// Revolute joints in state order.
    pub(crate) revolute: Vec<usize>,
}

const AXIS_TOL: f64 = 1e-3;

impl KinematicChain {
    /// Validate raw parts into a chain.
    pub fn new(links: Vec<String>, joints: Vec<JointSpec>, anchor_link: &str, sensors: Vec<SensorSpec>) -> Result<Self> {
        let mut link_index = HashMap::new();
        for (i, l) in links.iter().enumerate() {
            if link_index.insert(l.as_str(), i).is_some() {
                return Err(KinematicError::Duplicate {
                    kind: "link",
                    name: l.clone(),
                });
            }
        }
        if links.is_empty() {
            return Err(KinematicError::Invalid("chain has no links".into()));
        }
        let find = |name: &str, joint: &str| {
            link_index.get(name).copied().ok_or_else(|| KinematicError::MissingLink {
                link: name.to_string(),
                referrer: joint.to_string(),
            })
        };

        let mut seen_joints = HashMap::new();
        let mut parent_joint: Vec<Option<usize>> = vec![None; links.len()];
        let mut out = Vec::with_capacity(joints.len());
        let mut revolute = Vec::new();
        for (ji, j) in joints.into_iter().enumerate() {
            if seen_joints.insert(j.name.clone(), ji).is_some() {
                return Err(KinematicError::Duplicate {
                    kind: "joint",
                    name: j.name,
                });
            }
            let parent = find(&j.parent, &j.name)?;
            let child = find(&j.child, &j.name)?;
            if let Some(prev) = parent_joint[child] {
                return Err(KinematicError::MultipleParents {
                    link: j.child,
                    joints: [out.get(prev).map(|p: &Joint| p.name.clone()).unwrap_or_default(), j.name],
                });
            }
            parent_joint[child] = Some(ji);
            let origin = j.origin.to_pose();
            check_finite(&j.name, j.origin.xyz.iter().chain(&j.origin.rpy))?;
            let (axis, limits, state_index) = match j.kind {
                JointKind::Fixed => (Vector3::z(), [0.0, 0.0], None),
                JointKind::Revolute => {
                    let a = j.axis.unwrap_or([1.0, 0.0, 0.0]);
                    check_finite(&j.name, a.iter())?;
                    let a = Vector3::from(a);
                    let n = a.norm();
                    if (n - 1.0).abs() > AXIS_TOL {
                        return Err(KinematicError::NonUnitAxis { joint: j.name, norm: n });
                    }
                    let lim = j.limits.ok_or_else(|| KinematicError::Invalid(format!("revolute joint {} has no limits", j.name)))?;
                    check_finite(&j.name, lim.iter())?;
                    if lim[0] > lim[1] {
                        return Err(KinematicError::BadLimits {
                            joint: j.name,
                            lower: lim[0],
                            upper: lim[1],
                        });
                    }
                    revolute.push(ji);
                    (a / n, lim, Some(revolute.len() - 1))
                }
            };
            out.push(Joint {
                name: j.name,
                kind: j.kind,
                parent,
                child,
                origin,
                axis,
                limits,
                state_index,
            });
        }

        // every upward walk must terminate at a root
        for start in 0..links.len() {
            let mut cur = start;
            let mut steps = 0;
            while let Some(j) = parent_joint[cur] {
                cur = out[j].parent;
                steps += 1;
                if cur == start || steps > links.len() {
                    return Err(KinematicError::Cycle { link: links[start].clone() });
                }
            }
        }
        let roots: Vec<usize> = (0..links.len()).filter(|&l| parent_joint[l].is_none()).collect();
        if roots.len() != 1 {
            return Err(KinematicError::Invalid(format!(
                "expected a single root link, found {}: {}",
                roots.len(),
                roots.iter().map(|&r| links[r].as_str()).collect::<Vec<_>>().join(", ")
            )));
        }
        let root = roots[0];

        let anchor = *link_index.get(anchor_link).ok_or_else(|| KinematicError::AnchorNotFound(anchor_link.to_string()))?;

        let mut sensor_frames = Vec::with_capacity(sensors.len());
        let mut seen_sensors = HashMap::new();
        for s in sensors {
            if seen_sensors.insert(s.name.clone(), ()).is_some() {
                return Err(KinematicError::Duplicate {
                    kind: "sensor",
                    name: s.name,
                });
            }
            let link = find(&s.link, &s.name)?;
            check_finite(&s.name, s.origin.xyz.iter().chain(&s.origin.rpy))?;
            sensor_frames.push(SensorFrame {
                name: s.name,
                link,
                offset: s.origin.to_pose(),
            });
        }

        let chain = KinematicChain {
            links,
            joints: out,
            sensors: sensor_frames,
            anchor,
            root,
            parent_joint,
            revolute,
        };
        for s in &chain.sensors {
            if chain.path_between(chain.anchor, s.link).is_none() {
                return Err(KinematicError::SensorNotBelowAnchor {
                    sensor: s.name.clone(),
                    anchor: chain.links[chain.anchor].clone(),
                });
            }
        }
        Ok(chain)
    }

    pub fn links(&self) -> &[String] {
        &self.links
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn sensors(&self) -> &[SensorFrame] {
        &self.sensors
    }

    pub fn sensor_names(&self) -> impl Iterator<Item = &str> {
        self.sensors.iter().map(|s| s.name.as_str())
    }

    pub fn anchor_link(&self) -> &str {
        &self.links[self.anchor]
    }

    pub fn root_link(&self) -> &str {
        &self.links[self.root]
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l == name)
    }

    /// Number of revolute joints, the length of a [`JointState`].
    pub fn dof(&self) -> usize {
        self.revolute.len()
    }

    /// Revolute joints in state order.
    pub fn revolute_joints(&self) -> impl Iterator<Item = &Joint> {
        self.revolute.iter().map(|&j| &self.joints[j])
    }

    pub fn joint_names(&self) -> Vec<&str> {
        self.revolute_joints().map(|j| j.name.as_str()).collect()
    }

    pub fn limits(&self) -> Vec<[f64; 2]> {
        self.revolute_joints().map(|j| j.limits).collect()
    }

    /// Joints on the path from `ancestor` down to `link`, in application order.
    pub fn path_between(&self, ancestor: usize, link: usize) -> Option<Vec<usize>> {
        let mut path = Vec::new();
        let mut cur = link;
        while cur != ancestor {
            let j = self.parent_joint[cur]?;
            path.push(j);
            cur = self.joints[j].parent;
        }
        path.reverse();
        Some(path)
    }

    /// All-zero joint state (clamped into the limits).
    pub fn zero_state(&self) -> JointState {
        self.state_from_slice(&vec![0.0; self.dof()])
    }

    /// Joint state from values in state order, clamping into limits with a warning.
    pub fn state_from_slice(&self, values: &[f64]) -> JointState {
        assert_eq!(values.len(), self.dof(), "joint state length");
        let angles = self
            .revolute_joints()
            .zip(values)
            .map(|(j, &v)| clamp_joint(j, v))
            .collect();
        JointState { angles }
    }

    /// Joint state from a name → angle map; every revolute joint must be present.
    pub fn state_from_pairs<'a>(&self, pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Result<JointState> {
        let mut vals: Vec<Option<f64>> = vec![None; self.dof()];
        for (name, v) in pairs {
            let j = self
                .revolute_joints()
                .position(|j| j.name == name)
                .ok_or_else(|| KinematicError::UnknownJoint(name.to_string()))?;
            vals[j] = Some(v);
        }
        let values = vals
            .iter()
            .zip(self.revolute_joints())
            .map(|(v, j)| v.ok_or_else(|| KinematicError::MissingJoint(j.name.clone())))
            .collect::<Result<Vec<f64>>>()?;
        Ok(self.state_from_slice(&values))
    }

    /// The raw parts this chain was validated from.
    pub fn to_specs(&self) -> (Vec<JointSpec>, Vec<SensorSpec>) {
        let joints = self
            .joints
            .iter()
            .map(|j| JointSpec {
                name: j.name.clone(),
                kind: j.kind,
                parent: self.links[j.parent].clone(),
                child: self.links[j.child].clone(),
                origin: origin_of(&j.origin),
                axis: (j.kind == JointKind::Revolute).then(|| [j.axis.x, j.axis.y, j.axis.z]),
                limits: (j.kind == JointKind::Revolute).then_some(j.limits),
            })
            .collect();
        let sensors = self
            .sensors
            .iter()
            .map(|s| SensorSpec {
                name: s.name.clone(),
                link: self.links[s.link].clone(),
                origin: origin_of(&s.offset),
            })
            .collect();
        (joints, sensors)
    }
}

fn origin_of(p: &Pose6D) -> Origin {
    let r = &p.rotation;
    // inverse of Rz(yaw) Ry(pitch) Rx(roll)
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    Origin {
        xyz: [p.translation.x, p.translation.y, p.translation.z],
        rpy: [roll, pitch, yaw],
    }
}

fn check_finite<'a>(what: &str, vals: impl Iterator<Item = &'a f64>) -> Result<()> {
    for v in vals {
        if !v.is_finite() {
            return Err(KinematicError::Invalid(format!("{what}: non-finite value {v}")));
        }
    }
    Ok(())
}

fn clamp_joint(j: &Joint, v: f64) -> f64 {
    let [lo, hi] = j.limits;
    if v < lo || v > hi || v.is_nan() {
        log::warn!("joint {} value {v} outside [{lo}, {hi}], clamped", j.name);
        if v.is_nan() {
            return lo.max(0.0).min(hi);
        }
        return v.clamp(lo, hi);
    }
    v
}

/// Angles of all revolute joints, in the chain's state order.
#[derive(Clone, Debug, PartialEq)]
pub struct JointState {
    angles: Vec<f64>,
}

impl JointState {
    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }
}
