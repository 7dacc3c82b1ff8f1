use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_dataset, ExperimentConfig, HarnessError, Result};
use crate::kinematics::KinematicChain;
use crate::policy::{Observation, Policy};
use crate::rng;
use crate::sim::Dataset;
use crate::tensor::{Adam, AdamConfig, Float, Graph, ParamStore, Tensor};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub steps: usize,
    pub loss: f64,
    pub l1: f64,
    pub kl: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedPolicy {
    pub policy: Policy,
    pub store: ParamStore<f32>,
    pub log: Vec<TrainLogRow>,
    /// Masked L1 of every optimizer step.
    pub step_l1: Vec<f64>,
}

/// A freshly initialized policy for the config's effective variant.
pub fn build_policy(cfg: &ExperimentConfig, chain: &KinematicChain, seed: u64) -> Result<(Policy, ParamStore<f32>)> {
    let mut store = ParamStore::new();
    let pcfg = cfg.effective_policy();
    let policy = Policy::new(&mut store, &pcfg, chain, cfg.sim.obs_dims(chain), &mut rng::stream(seed, 0))?;
    Ok((policy, store))
}

/// Rebuild the policy for `cfg` and load checkpoint values into it.
pub fn load_checkpoint(cfg: &ExperimentConfig, chain: &KinematicChain, path: &Path) -> Result<(Policy, ParamStore<f32>)> {
    let file = fs::File::open(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    let saved = ParamStore::<f32>::load(BufReader::new(file))?;
    let (policy, mut store) = build_policy(cfg, chain, 0)?;
    if saved.len() != store.len() {
        return Err(HarnessError::Checkpoint(format!(
            "{} holds {} parameters, the config expects {}",
            path.display(),
            saved.len(),
            store.len()
        )));
    }
    store
        .load_values_from(&saved)
        .map_err(|e| HarnessError::Checkpoint(format!("{}: {e}", path.display())))?;
    Ok((policy, store))
}

fn sibling(ckpt: &Path, suffix: &str) -> PathBuf {
    let stem = ckpt.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    ckpt.with_file_name(format!("{stem}{suffix}"))
}

fn save(store: &ParamStore<f32>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    store.save(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Targets `a_t..a_{t+K-1}` as `[K, J]` and their mask; steps past the episode end repeat the
/// final action and are masked out.
fn chunk_targets(data: &Dataset, e: usize, t: usize, k: usize, targets: &mut Vec<f64>, mask: &mut Vec<f64>) {
    let ep = &data.episodes[e];
    let last = &ep[ep.len() - 1].action;
    for i in 0..k {
        match ep.get(t + i) {
            Some(s) => {
                targets.extend(s.action.iter().map(|&v| v as f64));
                mask.push(1.0);
            }
            None => {
                targets.extend(last.iter().map(|&v| v as f64));
                mask.push(0.0);
            }
        }
    }
}

/// Imitation training on every (episode, step) sample of `data`.
///
/// With `ckpt`, writes `ckpt` (final weights), `<stem>.epochNN.satw` after every
/// epoch and `<stem>.log.csv`.
pub fn train(
    cfg: &ExperimentConfig,
    chain: &KinematicChain,
    data: &Dataset,
    seed: u64,
    ckpt: Option<&Path>,
) -> Result<TrainedPolicy> {
    cfg.validate()?;
    check_dataset(cfg, chain, data)?;
    let (policy, mut store) = build_policy(cfg, chain, seed)?;
    let mut adam = Adam::new(
        &store,
        AdamConfig {
            lr: cfg.train.lr,
            ..AdamConfig::default()
        },
    );
    let mut rng = rng::stream(seed, 1);
    let k = policy.cfg.chunk;
    let j = policy.dims.joints;
    let zd = policy.cfg.z_dim;
    let mut samples: Vec<(usize, usize)> = data
        .episodes
        .iter()
        .enumerate()
        .flat_map(|(e, ep)| (0..ep.len()).map(move |t| (e, t)))
        .collect();
    if let Some(p) = ckpt.and_then(Path::parent).filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p)?;
    }
    let mut log = Vec::with_capacity(cfg.train.epochs);
    let mut step_l1 = Vec::new();
    for epoch in 1..=cfg.train.epochs {
        samples.shuffle(&mut rng);
        let (mut sum, mut sum_l1, mut sum_kl, mut n) = (0.0, 0.0, 0.0, 0usize);
        for batch in samples.chunks(cfg.train.batch_size) {
            let b = batch.len();
            let obs: Vec<Observation> = batch.iter().map(|&(e, t)| data.observation(e, t)).collect();
            let refs: Vec<&Observation> = obs.iter().collect();
            let pb = policy.batch::<f32>(&refs)?;
            let mut targets = Vec::with_capacity(b * k * j);
            let mut mask = Vec::with_capacity(b * k);
            for &(e, t) in batch {
                chunk_targets(data, e, t, k, &mut targets, &mut mask);
            }
            let targets = Tensor::<f32>::from_f64(&[b, k, j], &targets)?;
            let mask = Tensor::<f32>::from_f64(&[b, k], &mask)?;
            let eps: Vec<f64> = (0..b * zd).map(|_| StandardNormal.sample(&mut rng)).collect();
            let eps = Tensor::<f32>::from_f64(&[b, zd], &eps)?;
            let (grads, terms) = {
                let mut g = Graph::with_params(&store);
                let l = policy.loss(&mut g, &pb, &targets, &mask, &eps)?;
                let terms = [l.total, l.l1, l.kl].map(|v| g.value(v).item().as_f64());
                (g.backward_params(l.total)?, terms)
            };
            store.zero_grad();
            store.accumulate(&grads);
            adam.step(&mut store);
            sum += terms[0];
            sum_l1 += terms[1];
            sum_kl += terms[2];
            n += 1;
            step_l1.push(terms[1]);
        }
        let row = TrainLogRow {
            epoch,
            steps: adam.steps() as usize,
            loss: sum / n as f64,
            l1: sum_l1 / n as f64,
            kl: sum_kl / n as f64,
        };
        log::debug!("epoch {epoch}: loss {:.5} l1 {:.5} kl {:.5}", row.loss, row.l1, row.kl);
        log.push(row);
        if let Some(c) = ckpt {
            save(&store, &sibling(c, &format!(".epoch{epoch:02}.satw")))?;
        }
    }
    if let Some(c) = ckpt {
        save(&store, c)?;
        let mut w = csv::Writer::from_path(sibling(c, ".log.csv"))?;
        for row in &log {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    Ok(TrainedPolicy {
        policy,
        store,
        log,
        step_l1,
    })
}
