use rand::RngCore;

use super::{ExperimentConfig, HarnessError, Result, SeedMetrics};
use crate::kinematics::KinematicChain;
use crate::policy::{Observation, Policy};
use crate::rng;
use crate::sim::{evaluate, rollout, Env, Expert, Scene, SimConfig, SimError, MAX_ATTEMPTS};
use crate::tensor::ParamStore;

const EVAL_SALT: u64 = 0xE7A1_5CE4_E000_0000;

/// Seed of evaluation scene `index` (attempt `attempt`) for training seed `seed`.
/// Disjoint in practice from the demonstration seeds.
pub fn eval_scene_seed(seed: u64, index: usize, attempt: usize) -> u64 {
    rng::stream(seed ^ EVAL_SALT, ((index as u64) << 8) | attempt as u64).next_u64()
}

/// `n` reachable evaluation scenes for `seed`.
pub fn eval_scenes(cfg: &SimConfig, chain: &KinematicChain, seed: u64, n: usize) -> Result<Vec<Scene>> {
    (0..n)
        .map(|i| {
            for attempt in 0..MAX_ATTEMPTS {
                match Env::from_seed(cfg, chain, eval_scene_seed(seed, i, attempt)) {
                    Ok(env) => return Ok(env.scene),
                    Err(SimError::Unreachable(_)) => continue,
                    Err(e) => return Err(e.into()),
                }
            }
            Err(SimError::RetriesExhausted {
                episode: i,
                attempts: MAX_ATTEMPTS,
            }
            .into())
        })
        .collect()
}

/// Roll out a controller on the evaluation scenes of `seed`. `make` builds a fresh
/// controller per scene.
pub fn evaluate_with<C>(
    cfg: &ExperimentConfig,
    chain: &KinematicChain,
    n: usize,
    seed: u64,
    mut make: impl FnMut(&Scene) -> C,
) -> Result<SeedMetrics>
where
    C: FnMut(&Env, &Observation) -> Result<Vec<f64>>,
{
    if n == 0 {
        return Err(HarnessError::Config("need at least one rollout".into()));
    }
    let mut summaries = Vec::with_capacity(n);
    for scene in eval_scenes(&cfg.sim, chain, seed, n)? {
        let mut env = Env::new(&cfg.sim, chain, scene)?;
        let ctrl = make(&env.scene);
        let r = rollout::<HarnessError>(&mut env, false, ctrl)?;
        summaries.push(r.summary);
    }
    let m = evaluate(&summaries, cfg.sim.dt)?;
    Ok(SeedMetrics::from_metrics(seed, &m))
}

pub fn evaluate_policy(
    cfg: &ExperimentConfig,
    chain: &KinematicChain,
    policy: &Policy,
    store: &ParamStore<f32>,
    n: usize,
    seed: u64,
) -> Result<SeedMetrics> {
    evaluate_with(cfg, chain, n, seed, |_| {
        let mut ens = policy.ensembler();
        move |_: &Env, obs: &Observation| Ok(policy.act(store, obs, &mut ens)?)
    })
}

/// The scripted expert in place of the network.
pub fn evaluate_expert(cfg: &ExperimentConfig, chain: &KinematicChain, n: usize, seed: u64) -> Result<SeedMetrics> {
    evaluate_with(cfg, chain, n, seed, |scene| {
        let mut expert = Expert::new(scene);
        move |env: &Env, _: &Observation| Ok(expert.action(env))
    })
}
