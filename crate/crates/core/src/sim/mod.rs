//! Planar peg-in-slot environment.
//!
//! A three-joint arm on a randomly placed base carries a rigid peg on its
//! wrist and a two-finger hand whose fingertip sensors image the slot block
//! they rest on. Motion is kinematic: joints track targets under a per-step
//! rate limit, and motion that would push the peg into the block is clipped.

mod arm;
mod dataset;
mod expert;
mod geometry;
mod metrics;
mod render;

pub use arm::{two_link_fk, two_link_ik, PlanarArm, ARM_JOINTS};
pub use dataset::{
    episode_seed, expert_episode, generate_dataset, read_episode, replay, write_episode, Dataset, EpisodeLayout, EpisodeMeta, Manifest, ManifestEntry,
    StepRecord, DATASET_FORMAT_VERSION, EPISODE_MAGIC, EPISODE_VERSION, MAX_ATTEMPTS,
};
pub use expert::{Expert, Phase};
pub use geometry::{deepest_contact, sdf_box, Contact, HalfPlane, Peg, Pose2, RectSolid, Sdf, SlotBlock};
pub use metrics::{evaluate, summarize, Metrics, RolloutSummary, StepTrace};
pub use render::{render_camera, render_patch};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{forward_kinematics, wrap_angle, KinematicChain};
use crate::policy::{ObsDims, Observation};
use crate::rng;
use crate::sat::TactileFrame;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unsupported chain: {0}")]
    Chain(String),
    #[error("invalid simulator config: {0}")]
    Config(String),
    #[error("scene unreachable: {0}")]
    Unreachable(String),
    #[error("episode {episode}: no successful expert demonstration after {attempts} attempts")]
    RetriesExhausted { episode: usize, attempts: usize },
    #[error("action has {got} entries, expected {expected}")]
    ActionSize { got: usize, expected: usize },
    #[error("dataset format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// One millimetre-equivalent in simulator length units.
pub const MM: f64 = 0.01;

/// Slot clearances `g - w_p` in mm-equivalents, from easiest to hardest.
pub const CLEARANCE_NOTCHES_MM: [f64; 5] = [2.0, 1.5, 1.0, 0.75, 0.5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub max_steps: usize,
    /// Success: tip within `tau_pos` of the goal point and yaw within `tau_ang`.
    pub tau_pos: f64,
    pub tau_ang: f64,
    /// Tactile grid `S`.
    pub tactile_size: usize,
    /// Side of the square sensing patch.
    pub patch_size: f64,
    /// Penetration that saturates a tactile pixel; also the allowed peg overlap.
    pub p_max: f64,
    pub camera_size: [usize; 2],
    /// Camera footprint in the wrist frame, `[[x_lo, x_hi], [y_lo, y_hi]]`.
    pub camera_extent: [[f64; 2]; 2],
    /// Expert action noise (radians).
    pub sigma_a: f64,
    /// Tactile pixel noise.
    pub sigma_t: f64,
    /// Per-step joint rate limit (radians).
    pub max_joint_step: f64,
    pub peg_offset: f64,
    pub peg_length: f64,
    pub peg_width: f64,
    /// `g - w_p`.
    pub clearance: f64,
    pub channel_depth: f64,
    pub block_depth: f64,
    pub block_half_width: f64,
    /// Goal tip depth inside the channel.
    pub insert_depth: f64,
    pub base_xy_range: f64,
    pub base_yaw_range: f64,
    /// Slot distance from the base.
    pub object_distance: [f64; 2],
    pub object_bearing_range: f64,
    pub object_yaw_range: f64,
    /// Initial tip distance in front of the slot mouth.
    pub start_distance: f64,
    pub start_lateral_range: f64,
    pub start_yaw_range: f64,
    /// Expert's approach standoff before the mouth and its lateral offset range.
    pub approach_standoff: f64,
    pub approach_offset: [f64; 2],
    pub expert_speed: f64,
    pub expert_yaw_speed: f64,
    /// Closure ranges for `[base, tip]` finger joints (radians, drawn per finger) and the steps taken to close.
    pub finger_closure: [[f64; 2]; 2],
    pub close_steps: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            max_steps: 80,
            tau_pos: 0.008,
            tau_ang: 0.1,
            tactile_size: 16,
            patch_size: 0.05,
            p_max: 0.002,
            camera_size: [12, 12],
            camera_extent: [[0.1, 0.7], [-0.3, 0.3]],
            sigma_a: 0.001,
            sigma_t: 0.01,
            max_joint_step: 0.02,
            peg_offset: 0.02,
            peg_length: 0.2,
            peg_width: 0.04,
            clearance: 1.0 * MM,
            channel_depth: 0.1,
            block_depth: 0.2,
            block_half_width: 0.3,
            insert_depth: 0.06,
            base_xy_range: 0.5,
            base_yaw_range: 60f64.to_radians(),
            object_distance: [1.3, 1.6],
            object_bearing_range: 0.3,
            object_yaw_range: 0.3,
            start_distance: 0.35,
            start_lateral_range: 0.08,
            start_yaw_range: 0.15,
            approach_standoff: 0.12,
            approach_offset: [0.03, 0.04],
            expert_speed: 0.012,
            expert_yaw_speed: 0.03,
            finger_closure: [[0.0, 0.5], [0.0, 0.5]],
            close_steps: 8,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(SimError::Config(m.to_string()));
        if !(self.dt > 0.0) || self.max_steps == 0 {
            return err("dt and max_steps must be positive");
        }
        if self.tactile_size == 0 || self.camera_size.contains(&0) || !(self.patch_size > 0.0) || !(self.p_max > 0.0) {
            return err("tactile/camera sizes, patch_size and p_max must be positive");
        }
        if !(self.clearance > 0.0) || !(self.peg_width > 0.0) || !(self.peg_length > 0.0) {
            return err("peg dimensions and clearance must be positive");
        }
        if !(self.tau_pos > 0.0 && self.tau_pos < self.clearance) {
            return err("tau_pos must lie in (0, clearance)");
        }
        if !(self.tau_ang > 0.0) || self.sigma_a < 0.0 || self.sigma_t < 0.0 || !(self.max_joint_step > 0.0) {
            return err("tau_ang and max_joint_step must be positive, noise levels non-negative");
        }
        if !(self.insert_depth > 0.0 && self.insert_depth < self.channel_depth && self.channel_depth < self.block_depth) {
            return err("need 0 < insert_depth < channel_depth < block_depth");
        }
        if self.gap() / 2.0 >= self.block_half_width {
            return err("slot gap wider than the block");
        }
        if self.object_distance[0] > self.object_distance[1] || self.approach_offset[0] > self.approach_offset[1] {
            return err("empty randomization range");
        }
        let path = self.start_distance + self.insert_depth + self.approach_offset[1];
        if (self.max_steps as f64) * self.expert_speed < path {
            log::warn!("max_steps {} is shorter than the expert path (about {:.0} steps)", self.max_steps, path / self.expert_speed);
        }
        Ok(())
    }

    pub fn gap(&self) -> f64 {
        self.peg_width + self.clearance
    }

    /// Clearance in mm-equivalents.
    pub fn clearance_mm(&self) -> f64 {
        self.clearance / MM
    }

    /// The next narrower clearance notch, with `tau_pos` shrunk to stay below it.
    pub fn narrowed(&self) -> Option<SimConfig> {
        let cur = self.clearance_mm();
        let next = CLEARANCE_NOTCHES_MM.iter().copied().find(|&n| n < cur - 1e-9)?;
        let mut c = self.clone();
        c.clearance = next * MM;
        c.tau_pos = c.tau_pos.min(0.8 * c.clearance);
        Some(c)
    }

    pub fn obs_dims(&self, chain: &KinematicChain) -> ObsDims {
        ObsDims {
            joints: chain.dof(),
            camera: self.camera_size,
            tactile: self.tactile_size,
            sensors: chain.sensors().len(),
        }
    }

    pub fn peg(&self) -> Peg {
        Peg {
            offset: self.peg_offset,
            length: self.peg_length,
            width: self.peg_width,
        }
    }

    pub fn block(&self, pose: Pose2) -> SlotBlock {
        SlotBlock {
            pose,
            depth: self.block_depth,
            half_width: self.block_half_width,
            channel_depth: self.channel_depth,
            gap: self.gap(),
        }
    }
}

/// Randomized episode setup, fully determined by the episode seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub seed: u64,
    pub base_pose: [f64; 3],
    pub object_pose: [f64; 3],
    pub start_joints: Vec<f64>,
    /// Expert's lateral offset at the approach waypoint.
    pub approach_offset: f64,
    /// Closure target of every finger joint, in joint order.
    pub closure: Vec<f64>,
}

fn uniform(r: &mut rng::Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        r.gen_range(lo..hi)
    } else {
        lo
    }
}

fn sym(r: &mut rng::Rng, range: f64) -> f64 {
    uniform(r, -range, range)
}

/// Wrist pose (world) that puts the peg tip at `tip` in the object frame.
fn wrist_for_tip(object: Pose2, peg: &Peg, tip: Pose2) -> Pose2 {
    object.compose(&tip).compose(&Pose2::new(-peg.tip()[0], 0.0, 0.0))
}

impl Scene {
    /// Draw a scene; fails if the start or any expert waypoint is out of reach.
    pub fn sample(cfg: &SimConfig, arm: &PlanarArm, dof: usize, seed: u64) -> Result<Scene> {
        let mut r = rng::stream(seed, 0);
        let base = Pose2::new(sym(&mut r, cfg.base_xy_range), sym(&mut r, cfg.base_xy_range), sym(&mut r, cfg.base_yaw_range));
        let dist = uniform(&mut r, cfg.object_distance[0], cfg.object_distance[1]);
        let bearing = sym(&mut r, cfg.object_bearing_range);
        let rel = Pose2::new(dist * bearing.cos(), dist * bearing.sin(), wrap_angle(bearing + sym(&mut r, cfg.object_yaw_range)));
        let object = base.compose(&rel);
        let start_tip = Pose2::new(-cfg.start_distance, sym(&mut r, cfg.start_lateral_range), sym(&mut r, cfg.start_yaw_range));
        let sign = if r.gen_bool(0.5) { 1.0 } else { -1.0 };
        let offset = sign * uniform(&mut r, cfg.approach_offset[0], cfg.approach_offset[1]);
        let closure: Vec<f64> = (0..dof.saturating_sub(arm.joints.len()))
            .map(|k| {
                let [lo, hi] = cfg.finger_closure[k % 2];
                uniform(&mut r, lo, hi)
            })
            .collect();

        let peg = cfg.peg();
        let inv = base.inverse();
        let reach = |tip: Pose2, near: [f64; 3]| arm.ik(inv.compose(&wrist_for_tip(object, &peg, tip)), near);
        let elbow_down = [0.0, std::f64::consts::FRAC_PI_2, 0.0];
        let a0 = reach(start_tip, elbow_down).ok_or_else(|| SimError::Unreachable("start pose".into()))?;
        let waypoints = [
            Pose2::new(-cfg.approach_standoff, offset, 0.0),
            Pose2::new(-0.02, 0.0, 0.0),
            Pose2::new(cfg.insert_depth, 0.0, 0.0),
        ];
        let mut near = a0;
        for w in waypoints {
            near = reach(w, near).ok_or_else(|| SimError::Unreachable("expert waypoint".into()))?;
        }
        let mut q = vec![0.0; dof];
        arm.set_angles(&mut q, a0.map(|v| v as f32 as f64));
        Ok(Scene {
            seed,
            base_pose: base.to_array(),
            object_pose: object.to_array(),
            start_joints: q,
            approach_offset: offset,
            closure,
        })
    }
}

/// Tip alignment relative to the slot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TipError {
    /// Distance from the tip to the goal point.
    pub pos: f64,
    /// Tip depth past the mouth (object x).
    pub depth: f64,
    /// Signed offset from the slot axis.
    pub lateral: f64,
    /// Absolute yaw error.
    pub angle: f64,
}

#[derive(Clone, Debug)]
pub struct Env {
    pub cfg: SimConfig,
    pub chain: KinematicChain,
    pub arm: PlanarArm,
    pub scene: Scene,
    pub base: Pose2,
    pub block: SlotBlock,
    pub peg: Peg,
    peg_samples: Vec<[f64; 2]>,
    limits: Vec<[f64; 2]>,
    q: Vec<f64>,
    step: usize,
}

impl Env {
    pub fn new(cfg: &SimConfig, chain: &KinematicChain, scene: Scene) -> Result<Env> {
        cfg.validate()?;
        let arm = PlanarArm::from_chain(chain)?;
        if scene.start_joints.len() != chain.dof() {
            return Err(SimError::ActionSize {
                got: scene.start_joints.len(),
                expected: chain.dof(),
            });
        }
        let peg = cfg.peg();
        Ok(Env {
            cfg: cfg.clone(),
            chain: chain.clone(),
            base: Pose2::from_array(scene.base_pose),
            block: cfg.block(Pose2::from_array(scene.object_pose)),
            peg_samples: peg.boundary(cfg.p_max),
            peg,
            limits: chain.limits(),
            q: scene.start_joints.clone(),
            arm,
            scene,
            step: 0,
        })
    }

    /// Sample a scene from `seed` and build the environment.
    pub fn from_seed(cfg: &SimConfig, chain: &KinematicChain, seed: u64) -> Result<Env> {
        cfg.validate()?;
        let arm = PlanarArm::from_chain(chain)?;
        let scene = Scene::sample(cfg, &arm, chain.dof(), seed)?;
        Env::new(cfg, chain, scene)
    }

    pub fn joints(&self) -> &[f64] {
        &self.q
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn object(&self) -> Pose2 {
        self.block.pose
    }

    /// Overwrite the joint state (testing and replay).
    pub fn set_joints(&mut self, q: &[f64]) {
        self.q.copy_from_slice(q);
    }

    fn wrist_of(&self, a: [f64; 3]) -> Pose2 {
        self.base.compose(&self.arm.wrist(a))
    }

    /// Wrist (anchor) pose in the world.
    pub fn wrist(&self) -> Pose2 {
        self.wrist_of(self.arm.angles(&self.q))
    }

    pub fn tip_world(&self) -> [f64; 2] {
        self.wrist().apply(self.peg.tip())
    }

    /// Tip pose in the object frame.
    pub fn tip_in_object(&self) -> Pose2 {
        let w = self.wrist();
        let [x, y] = self.block.pose.apply_inv(w.apply(self.peg.tip()));
        Pose2::new(x, y, wrap_angle(w.yaw - self.block.pose.yaw))
    }

    pub fn tip_error(&self) -> TipError {
        let t = self.tip_in_object();
        TipError {
            pos: (t.x - self.cfg.insert_depth).hypot(t.y),
            depth: t.x,
            lateral: t.y,
            angle: t.yaw.abs(),
        }
    }

    pub fn is_success(&self) -> bool {
        let e = self.tip_error();
        e.pos < self.cfg.tau_pos && e.angle < self.cfg.tau_ang
    }

    pub fn contact(&self) -> Option<Contact> {
        deepest_contact(&self.block, &self.peg, &self.peg_samples, self.wrist())
    }

    fn penetration(&self, a: [f64; 3]) -> Option<Contact> {
        deepest_contact(&self.block, &self.peg, &self.peg_samples, self.wrist_of(a))
    }

    /// Sensor poses in the world, chain sensor order.
    pub fn sensor_poses(&self) -> Vec<Pose2> {
        let q = self.chain.state_from_slice(&self.q);
        let wrist = self.wrist();
        forward_kinematics(&self.chain, &q)
            .into_iter()
            .map(|(_, p)| wrist.compose(&Pose2::from_array(p.to_planar())))
            .collect()
    }

    /// Tactile images for every sensor at the current step.
    pub fn render_tactile(&self) -> Vec<TactileFrame> {
        let mut noise = rng::stream(self.scene.seed, 2 + self.step as u64);
        let cfg = &self.cfg;
        self.chain
            .sensor_names()
            .zip(self.sensor_poses())
            .map(|(name, pose)| TactileFrame {
                sensor: name.to_string(),
                size: cfg.tactile_size,
                image: render_patch(&self.block, pose, cfg.tactile_size, cfg.patch_size, cfg.p_max, cfg.sigma_t, &mut noise),
            })
            .collect()
    }

    pub fn render_camera(&self) -> Vec<f32> {
        render_camera(&self.block, self.wrist(), self.cfg.camera_size, self.cfg.camera_extent)
    }

    pub fn observe(&self) -> Observation {
        Observation {
            joints: self.q.clone(),
            camera: self.render_camera(),
            tactile: self.render_tactile(),
            base_pose: self.base.to_array(),
        }
    }

    pub fn trace(&self, obs: &Observation) -> StepTrace {
        let e = self.tip_error();
        StepTrace {
            pos_err: e.pos,
            lateral: e.lateral,
            ang_err: e.angle,
            max_tactile: obs.tactile.iter().flat_map(|f| &f.image).fold(0.0f64, |m, &v| m.max(v as f64)),
        }
    }

    /// Advance one step toward joint targets `action`.
    pub fn step(&mut self, action: &[f64]) -> Result<Observation> {
        if action.len() != self.q.len() {
            return Err(SimError::ActionSize {
                got: action.len(),
                expected: self.q.len(),
            });
        }
        let dmax = self.cfg.max_joint_step;
        let mut cand: Vec<f64> = self
            .q
            .iter()
            .zip(action)
            .zip(&self.limits)
            .map(|((&q, &a), l)| q + (a.clamp(l[0], l[1]) - q).clamp(-dmax, dmax))
            .collect();
        let arm = self.resolve_contact(self.arm.angles(&self.q), self.arm.angles(&cand));
        self.arm.set_angles(&mut cand, arm);
        self.q = cand;
        self.step += 1;
        Ok(self.observe())
    }

    fn admissible(&self, from: [f64; 3], to: [f64; 3]) -> Option<[f64; 3]> {
        let dmax = self.cfg.max_joint_step;
        let biggest = (0..3).map(|k| (to[k] - from[k]).abs()).fold(0.0, f64::max);
        let s = if biggest > dmax { dmax / biggest } else { 1.0 };
        let a = [0, 1, 2].map(|k| from[k] + s * (to[k] - from[k]));
        if (0..3).any(|k| a[k] < self.arm.limits[k][0] || a[k] > self.arm.limits[k][1]) {
            return None;
        }
        match self.penetration(a) {
            Some(c) if c.depth > self.cfg.p_max => None,
            _ => Some(a),
        }
    }

    /// Arm angles after clipping the motion `a0 -> a1` against the block.
    fn resolve_contact(&self, a0: [f64; 3], a1: [f64; 3]) -> [f64; 3] {
        let Some(c) = self.penetration(a1).filter(|c| c.depth > self.cfg.p_max) else {
            return a1;
        };
        let w0 = self.wrist_of(a0);
        let w1 = self.wrist_of(a1);
        let project = |w: Pose2, c: &Contact| {
            let before = w0.apply(w.apply_inv(c.point));
            let d = [c.point[0] - before[0], c.point[1] - before[1]];
            let dn = (d[0] * c.normal[0] + d[1] * c.normal[1]).min(0.0);
            Pose2::new(w.x - dn * c.normal[0], w.y - dn * c.normal[1], w.yaw)
        };
        let inv = self.base.inverse();
        let mut tries = vec![project(w1, &c)];
        let frozen = Pose2::new(w1.x, w1.y, w0.yaw);
        match deepest_contact(&self.block, &self.peg, &self.peg_samples, frozen) {
            Some(c2) if c2.depth > self.cfg.p_max => tries.push(project(frozen, &c2)),
            _ => tries.push(frozen),
        }
        for w in tries {
            if let Some(a) = self.arm.ik(inv.compose(&w), a0).and_then(|a| self.admissible(a0, a)) {
                return a;
            }
        }
        a0
    }
}

/// Per-step state of a finished rollout.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub summary: RolloutSummary,
    pub trace: Vec<StepTrace>,
    /// Observation and executed action of every step.
    pub steps: Vec<(Observation, Vec<f64>)>,
}

/// Run `policy` until success or `max_steps`; returns the trace including the initial state.
pub fn rollout<E>(
    env: &mut Env,
    record: bool,
    mut policy: impl FnMut(&Env, &Observation) -> std::result::Result<Vec<f64>, E>,
) -> std::result::Result<Rollout, E>
where
    E: From<SimError>,
{
    let mut obs = env.observe();
    let mut trace = vec![env.trace(&obs)];
    let mut steps = Vec::new();
    while !env.is_success() && env.step_index() < env.cfg.max_steps {
        let action = policy(env, &obs)?;
        let next = env.step(&action)?;
        if record {
            steps.push((std::mem::replace(&mut obs, next), action));
        } else {
            obs = next;
        }
        trace.push(env.trace(&obs));
    }
    let summary = summarize(&trace, env.cfg.tau_pos, env.cfg.tau_ang, env.cfg.max_steps);
    Ok(Rollout { summary, trace, steps })
}
