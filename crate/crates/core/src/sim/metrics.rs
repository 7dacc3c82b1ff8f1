use serde::{Deserialize, Serialize};

use super::{Result, SimError};

/// Alignment and contact state at one step of a rollout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub pos_err: f64,
    pub lateral: f64,
    pub ang_err: f64,
    /// Largest tactile pixel over all sensors.
    pub max_tactile: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub success: bool,
    pub steps_to_success: Option<usize>,
    /// Alignment within `2 tau` at the first tactile contact; `None` without contact.
    pub first_contact_ok: Option<bool>,
}

/// Contact threshold on tactile pixels.
pub const CONTACT_PIXEL: f64 = 0.1;

/// Summarize a trace whose entry `i` is the state after `i` steps.
pub fn summarize(trace: &[StepTrace], tau_pos: f64, tau_ang: f64, max_steps: usize) -> RolloutSummary {
    let steps_to_success = trace
        .iter()
        .take(max_steps + 1)
        .position(|s| s.pos_err < tau_pos && s.ang_err < tau_ang);
    let first_contact_ok = trace
        .iter()
        .find(|s| s.max_tactile > CONTACT_PIXEL)
        .map(|s| s.lateral.abs() < 2.0 * tau_pos && s.ang_err < 2.0 * tau_ang);
    RolloutSummary {
        success: steps_to_success.is_some(),
        steps_to_success,
        first_contact_ok,
    }
}

/// Success rate, first-contact rate and completion time over a set of rollouts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rollouts: usize,
    pub sr: f64,
    pub fc: f64,
    /// Mean steps among successes; `None` when nothing succeeded.
    pub mean_steps: Option<f64>,
    /// `mean_steps * dt`.
    pub completion_time: Option<f64>,
}

impl Metrics {
    /// Completion time formatted like a results table ("—" when undefined).
    pub fn time_cell(&self) -> String {
        self.completion_time.map_or_else(|| "—".to_string(), |t| format!("{t:.2}"))
    }
}

pub fn evaluate(rollouts: &[RolloutSummary], dt: f64) -> Result<Metrics> {
    if rollouts.is_empty() {
        return Err(SimError::Config("evaluate needs at least one rollout".into()));
    }
    let n = rollouts.len() as f64;
    let steps: Vec<f64> = rollouts.iter().filter_map(|r| r.steps_to_success.map(|s| s as f64)).collect();
    let mean_steps = (!steps.is_empty()).then(|| steps.iter().sum::<f64>() / steps.len() as f64);
    Ok(Metrics {
        rollouts: rollouts.len(),
        sr: rollouts.iter().filter(|r| r.success).count() as f64 / n,
        fc: rollouts.iter().filter(|r| r.first_contact_ok == Some(true)).count() as f64 / n,
        mean_steps,
        completion_time: mean_steps.map(|s| s * dt),
    })
}
