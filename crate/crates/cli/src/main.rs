use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use sata_core::harness::{
    self, gradcheck, load_chain, load_checkpoint, parse_variants, train, ExperimentConfig, MetricsReport, Variant,
};
use sata_core::kinematics::{fk_in_world, forward_kinematics, parse_chain, Pose6D};
use sata_core::sim::{generate_dataset, Dataset};

#[derive(Parser)]
#[command(name = "sata", version, about = "Spatially-anchored tactile policies on a planar slot task")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Record scripted-expert demonstrations.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Episodes (defaults to train.episodes).
        #[arg(long)]
        n: Option<usize>,
        /// Dataset seed (defaults to train.data_seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one policy on train.seeds[0] (override with SATA_SEED).
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Final checkpoint path; per-epoch checkpoints and the loss log go next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on fresh scenes for every configured seed.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        rollouts: Option<usize>,
        /// Report directory (defaults to the checkpoint's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate several variants on one shared dataset.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated variant names, or `all`.
        #[arg(long, default_value = "all")]
        variants: String,
        /// Dataset directory (defaults to paths.data; generated when missing).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory (defaults to paths.runs).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fail unless SR(sata) > SR(tactile_flat).
        #[arg(long)]
        check_ordering: bool,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, default_value = "all")]
        scope: String,
        #[arg(long, default_value_t = 100)]
        seeds: u64,
    },
    /// Sensor poses of a chain at a joint configuration.
    Fk {
        #[arg(long)]
        chain: PathBuf,
        /// `name=rad` pairs; missing joints are zero.
        #[arg(long, default_value = "")]
        q: String,
        /// Report poses in the world frame instead of the anchor frame.
        #[arg(long)]
        world: bool,
        /// Planar base pose `x,y,yaw` used with --world.
        #[arg(long, default_value = "0,0,0", allow_hyphen_values = true)]
        base: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn run(cmd: Cmd) -> Result<bool> {
    match cmd {
        Cmd::GenData { config: c, out, n, seed } => {
            let cfg = config(&c)?;
            let chain = load_chain(&cfg)?;
            let n = n.unwrap_or(cfg.train.episodes);
            let m = generate_dataset(&cfg.sim, &chain, &out, n, seed.unwrap_or(cfg.train.data_seed))?;
            let steps: usize = m.episodes.iter().map(|e| e.steps).sum();
            println!("wrote {n} episodes ({steps} steps) to {}", out.display());
        }
        Cmd::Train { config: c, data, out } => {
            let cfg = config(&c)?;
            let chain = load_chain(&cfg)?;
            let ds = Dataset::load(&data).with_context(|| format!("loading {}", data.display()))?;
            let seed = cfg.train.seeds[0];
            let t = train(&cfg, &chain, &ds, seed, Some(&out))?;
            let last = t.log.last().expect("at least one epoch");
            println!(
                "seed {seed}: {} epochs, {} steps, loss {:.5} (l1 {:.5}, kl {:.5}); checkpoint {}",
                last.epoch,
                last.steps,
                last.loss,
                last.l1,
                last.kl,
                out.display()
            );
        }
        Cmd::Eval { ckpt, config: c, rollouts, out } => {
            let mut cfg = config(&c)?;
            if let Some(n) = rollouts {
                cfg.train.eval_rollouts = n;
            }
            cfg.validate()?;
            let chain = load_chain(&cfg)?;
            let (policy, store) = load_checkpoint(&cfg, &chain, &ckpt)?;
            let seeds = cfg
                .train
                .seeds
                .iter()
                .map(|&s| harness::evaluate_policy(&cfg, &chain, &policy, &store, cfg.train.eval_rollouts, s))
                .collect::<Result<Vec<_>, _>>()?;
            let report = MetricsReport::new(&cfg, seeds)?;
            let dir = out.unwrap_or_else(|| ckpt.parent().map(Path::to_path_buf).unwrap_or_default());
            report.write(&dir)?;
            print!("{}", report.to_csv());
        }
        Cmd::Ablate {
            config: c,
            variants,
            data,
            out,
            check_ordering,
        } => {
            let cfg = config(&c)?;
            let chain = load_chain(&cfg)?;
            let variants = parse_variants(&variants)?;
            let data_dir = data.unwrap_or_else(|| cfg.paths.data.clone());
            let ds = harness::ensure_dataset(&cfg, &chain, &data_dir)?;
            let out = out.unwrap_or_else(|| cfg.paths.runs.clone());
            let table = harness::ablate(&cfg, &chain, &ds, &variants, &out)?;
            print!("{}", table.to_markdown());
            if check_ordering {
                if let Err(e) = table.check_ordering(&[Variant::TactileFlat], 0.0) {
                    eprintln!("{e}");
                    return Ok(false);
                }
            }
        }
        Cmd::Gradcheck { scope, seeds } => {
            let scope: gradcheck::Scope = scope.parse()?;
            let report = gradcheck::run(scope, seeds)?;
            print!("{report}");
            if !report.passed() {
                eprintln!("failed: {}", report.failures().join(", "));
                return Ok(false);
            }
        }
        Cmd::Fk { chain, q, world, base } => {
            let text = std::fs::read_to_string(&chain).with_context(|| format!("reading {}", chain.display()))?;
            let ch = parse_chain(&text)?;
            let pairs = parse_pairs(&q)?;
            let mut all: Vec<(&str, f64)> = ch.revolute_joints().map(|j| (j.name.as_str(), 0.0)).collect();
            all.extend(pairs.iter().map(|(n, v)| (n.as_str(), *v)));
            let state = ch.state_from_pairs(all)?;
            let poses = if world {
                let b = parse_floats(&base)?;
                if b.len() != 3 {
                    bail!("--base expects x,y,yaw");
                }
                fk_in_world(&ch, &state, &Pose6D::planar(b[0], b[1], b[2]))
            } else {
                forward_kinematics(&ch, &state)
            };
            let frame = if world { "world".to_string() } else { ch.anchor_link().to_string() };
            let body: serde_json::Map<String, serde_json::Value> = poses
                .into_iter()
                .map(|(name, p)| (name, serde_json::json!(p.to_vec6())))
                .collect();
            println!("{}", serde_json::to_string_pretty(&serde_json::json!({ "frame": frame, "poses": body }))?);
        }
    }
    Ok(true)
}

fn parse_pairs(s: &str) -> Result<Vec<(String, f64)>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (name, v) = p.split_once('=').with_context(|| format!("expected name=rad, got {p:?}"))?;
            let v: f64 = v.trim().parse().with_context(|| format!("bad angle in {p:?}"))?;
            Ok((name.trim().to_string(), v))
        })
        .collect()
}

fn parse_floats(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad number {v:?}")))
        .collect()
}
