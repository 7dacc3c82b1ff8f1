use rand_distr::{Distribution, Normal};

use super::geometry::Pose2;
use super::{wrist_for_tip, Env, Scene};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Toward the standoff point, laterally offset.
    Approach,
    /// Toward the aligned point just before the mouth.
    Align,
    /// Straight into the channel.
    Insert,
}

/// Scripted demonstrator with access to the true scene.
#[derive(Clone, Debug)]
pub struct Expert {
    pub phase: Phase,
    offset: f64,
    closure: Vec<f64>,
    noise: rng::Rng,
}

const ALIGN_X: f64 = -0.02;
const REACHED: f64 = 0.003;

impl Expert {
    pub fn new(scene: &Scene) -> Self {
        Self {
            phase: Phase::Approach,
            offset: scene.approach_offset,
            closure: scene.closure.clone(),
            noise: rng::stream(scene.seed, 1),
        }
    }

    fn waypoint(&mut self, env: &Env, tip: Pose2) -> Pose2 {
        let cfg = &env.cfg;
        if self.phase == Phase::Approach && tip.x >= -cfg.approach_standoff - REACHED {
            self.phase = Phase::Align;
        }
        if self.phase == Phase::Align && tip.x >= ALIGN_X - REACHED && tip.y.abs() < 0.002 && tip.yaw.abs() < 0.02 {
            self.phase = Phase::Insert;
        }
        match self.phase {
            Phase::Approach => Pose2::new(-cfg.approach_standoff, self.offset, 0.0),
            Phase::Align => Pose2::new(ALIGN_X, 0.0, 0.0),
            Phase::Insert => Pose2::new(cfg.insert_depth, 0.0, 0.0),
        }
    }

    /// Noise-free joint targets for the current state.
    pub fn clean_action(&mut self, env: &Env) -> Vec<f64> {
        let q = env.joints().to_vec();
        if env.is_success() {
            return q;
        }
        let cfg = &env.cfg;
        let tip = env.tip_in_object();
        let goal = self.waypoint(env, tip);
        let (dx, dy) = (goal.x - tip.x, goal.y - tip.y);
        let dist = dx.hypot(dy);
        let s = if dist > 0.0 { cfg.expert_speed.min(dist) / dist } else { 0.0 };
        let dyaw = (-tip.yaw).clamp(-cfg.expert_yaw_speed, cfg.expert_yaw_speed);
        let next = Pose2::new(tip.x + s * dx, tip.y + s * dy, tip.yaw + dyaw);
        let wrist = env.base.inverse().compose(&wrist_for_tip(env.object(), &env.peg, next));
        let mut target = q.clone();
        if let Some(a) = env.arm.ik(wrist, env.arm.angles(&q)) {
            env.arm.set_angles(&mut target, a);
        }
        let frac = ((env.step_index() + 1) as f64 / cfg.close_steps.max(1) as f64).min(1.0);
        let arm = env.arm.joints;
        let fingers: Vec<usize> = (0..q.len()).filter(|i| !arm.contains(i)).collect();
        for (k, &i) in fingers.iter().enumerate() {
            target[i] = frac * self.closure.get(k).copied().unwrap_or(0.0);
        }
        target
    }

    /// Joint targets with Gaussian noise, rounded to `f32` precision. Holds still once successful.
    pub fn action(&mut self, env: &Env) -> Vec<f64> {
        if env.is_success() {
            return env.joints().to_vec();
        }
        let mut a = self.clean_action(env);
        if env.cfg.sigma_a > 0.0 {
            let n = Normal::new(0.0, env.cfg.sigma_a).expect("finite sigma");
            for v in &mut a {
                *v += n.sample(&mut self.noise);
            }
        }
        a.into_iter().map(|v| v as f32 as f64).collect()
    }
}
