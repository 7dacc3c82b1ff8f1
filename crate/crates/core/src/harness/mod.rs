//! Experiment plumbing: configuration, training, evaluation, ablations and reports.

mod config;
mod eval;
pub mod gradcheck;
mod report;
mod train;

pub use config::{ExperimentConfig, Paths, TrainConfig, Variant, CONFIG_FORMAT_VERSION, SEED_ENV};
pub use eval::{eval_scene_seed, eval_scenes, evaluate_expert, evaluate_policy, evaluate_with};
pub use report::{AblationRow, AblationTable, CsvRow, MeanMetrics, MetricsReport, SeedMetrics, REPORT_FORMAT_VERSION};
pub use train::{build_policy, load_checkpoint, train, TrainLogRow, TrainedPolicy};

use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::kinematics::{parse_chain, planar_hand, KinematicChain, KinematicError};
use crate::sim::{generate_dataset, Dataset, SimError};
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("report: {0}")]
    Report(String),
    #[error("ordering check failed: {0}")]
    Ordering(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Kinematics(#[from] KinematicError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// The chain named by `paths.chain`, or the bundled planar hand.
pub fn load_chain(cfg: &ExperimentConfig) -> Result<KinematicChain> {
    match &cfg.paths.chain {
        None => Ok(planar_hand()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| HarnessError::Io(format!("{}: {e}", p.display())))?;
            Ok(parse_chain(&text)?)
        }
    }
}

/// Load the dataset at `dir`, generating it from the config when absent.
pub fn ensure_dataset(cfg: &ExperimentConfig, chain: &KinematicChain, dir: &Path) -> Result<Dataset> {
    if !dir.join("manifest.json").exists() {
        log::info!("generating {} episodes into {}", cfg.train.episodes, dir.display());
        generate_dataset(&cfg.sim, chain, dir, cfg.train.episodes, cfg.train.data_seed)?;
    }
    let data = Dataset::load(dir)?;
    check_dataset(cfg, chain, &data)?;
    Ok(data)
}

/// Reject datasets recorded under a different simulator or chain.
pub fn check_dataset(cfg: &ExperimentConfig, chain: &KinematicChain, data: &Dataset) -> Result<()> {
    data.check_compatible(&cfg.sim, chain)
        .map_err(|e| HarnessError::Dataset(format!("{}: {e}", data.dir.display())))?;
    if data.manifest.sim != cfg.sim {
        return Err(HarnessError::Dataset(format!(
            "{} was generated with a different sim config",
            data.dir.display()
        )));
    }
    if data.episodes.is_empty() {
        return Err(HarnessError::Dataset("dataset has no episodes".into()));
    }
    Ok(())
}

/// Train and evaluate one variant on every configured seed.
///
/// Checkpoints and training logs go to `out/seed_<s>.*`; the report is written to
/// `out/metrics.json` and `out/metrics.csv`.
pub fn run_variant(cfg: &ExperimentConfig, chain: &KinematicChain, data: &Dataset, out: &Path) -> Result<MetricsReport> {
    cfg.validate()?;
    let start = Instant::now();
    std::fs::create_dir_all(out)?;
    let mut seeds = Vec::with_capacity(cfg.train.seeds.len());
    for &seed in &cfg.train.seeds {
        let ckpt = out.join(format!("seed_{seed}.satw"));
        let t = Instant::now();
        let trained = train(cfg, chain, data, seed, Some(&ckpt))?;
        log::info!("{} seed {seed}: trained in {:.1?}", cfg.variant, t.elapsed());
        let m = evaluate_policy(cfg, chain, &trained.policy, &trained.store, cfg.train.eval_rollouts, seed)?;
        log::info!("{} seed {seed}: sr {:.3} fc {:.3}", cfg.variant, m.sr, m.fc);
        seeds.push(m);
    }
    let mut report = MetricsReport::new(cfg, seeds)?;
    report.wall_clock_s = Some(start.elapsed().as_secs_f64());
    report.write(out)?;
    Ok(report)
}

/// Train and evaluate each variant on the shared dataset; writes `ablation.{json,csv,md}` under `out`.
pub fn ablate(
    cfg: &ExperimentConfig,
    chain: &KinematicChain,
    data: &Dataset,
    variants: &[Variant],
    out: &Path,
) -> Result<AblationTable> {
    if variants.is_empty() {
        return Err(HarnessError::Config("ablation needs at least one variant".into()));
    }
    check_dataset(cfg, chain, data)?;
    let mut reports = Vec::with_capacity(variants.len());
    for &v in variants {
        let vc = cfg.with_variant(v);
        reports.push(run_variant(&vc, chain, data, &variant_dir(out, v))?);
    }
    let table = AblationTable::new(reports);
    table.write(out)?;
    Ok(table)
}

pub fn variant_dir(out: &Path, v: Variant) -> PathBuf {
    out.join(v.name())
}

/// Parse a comma-separated variant list; `all` expands to every variant.
pub fn parse_variants(list: &str) -> Result<Vec<Variant>> {
    if list.trim() == "all" {
        return Ok(Variant::ALL.to_vec());
    }
    let mut out: Vec<Variant> = Vec::new();
    for part in list.split(',').filter(|s| !s.trim().is_empty()) {
        let v: Variant = part.parse()?;
        if out.contains(&v) {
            return Err(HarnessError::Config(format!("variant {v} listed twice")));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(HarnessError::Config("empty variant list".into()));
    }
    Ok(out)
}
