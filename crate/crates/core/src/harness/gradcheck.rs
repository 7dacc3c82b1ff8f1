//! Finite-difference suites for the engine ops, the tactile encoder and the policy loss.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::{HarnessError, Result};
use crate::kinematics::planar_hand;
use crate::policy::{ObsDims, Observation, Policy, PolicyConfig, PoseRouting};
use crate::rng;
use crate::sat::{encode_graph, AnchorMode, FilmHead, Fusion, FourierConfig, SatConfig, SatEncoder, TactileFrame};
use crate::tensor::gradcheck::{check_inputs, check_inputs_with, check_params, run_op_suite, OpReport, DEFAULT_STEP};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// Tolerance for single ops and encoder components.
pub const OP_TOL: f64 = 1e-5;
/// Tolerance for the end-to-end policy loss.
pub const POLICY_TOL: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Ops,
    Sat,
    Policy,
    All,
}

impl FromStr for Scope {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ops" => Ok(Scope::Ops),
            "sat" => Ok(Scope::Sat),
            "policy" => Ok(Scope::Policy),
            "all" => Ok(Scope::All),
            _ => Err(HarnessError::Config(format!("unknown gradcheck scope {s:?} (ops|sat|policy|all)"))),
        }
    }
}

/// A named check with its tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub report: OpReport,
    pub tol: f64,
}

impl Entry {
    pub fn passed(&self) -> bool {
        self.report.passed(self.tol)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub entries: Vec<Entry>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(Entry::passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.entries.iter().filter(|e| !e.passed()).map(|e| e.report.name.as_str()).collect()
    }

    pub fn worst(&self) -> f64 {
        self.entries.iter().map(|e| e.report.worst_rel_err).fold(0.0, f64::max)
    }

    fn extend(&mut self, reports: Vec<OpReport>, tol: f64) {
        self.entries.extend(reports.into_iter().map(|report| Entry { report, tol }));
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "{:<24} worst {:.3e} over {:>3} cases (tol {:.0e})  {}",
                e.report.name,
                e.report.worst_rel_err,
                e.report.cases,
                e.tol,
                if e.passed() { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

/// Run the checks for `scope` with `seeds` random instances each.
pub fn run(scope: Scope, seeds: u64) -> Result<Report> {
    let mut r = Report::default();
    if matches!(scope, Scope::Ops | Scope::All) {
        r.extend(run_op_suite(seeds)?, OP_TOL);
    }
    if matches!(scope, Scope::Sat | Scope::All) {
        r.extend(sat_suite(seeds)?, OP_TOL);
    }
    if matches!(scope, Scope::Policy | Scope::All) {
        r.extend(policy_suite(seeds)?, POLICY_TOL);
    }
    Ok(r)
}

/// Worst error of `f` over `seeds` instances.
pub fn suite(name: &str, seeds: u64, f: impl Fn(u64) -> Result<f64>) -> Result<OpReport> {
    let mut worst = 0.0f64;
    for s in 0..seeds {
        worst = worst.max(f(s)?);
    }
    Ok(OpReport {
        name: name.to_string(),
        worst_rel_err: worst,
        cases: seeds as usize,
    })
}

fn rand_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_f64(shape, &(0..n).map(|_| rng.gen_range(lo..hi)).collect::<Vec<_>>()).expect("shape matches")
}

fn jitter(store: &mut ParamStore<f64>, rng: &mut impl Rng, scale: f64) {
    for p in store.iter_mut() {
        for v in p.value.data_mut() {
            *v += rng.gen_range(-scale..scale);
        }
    }
}

fn contract(g: &mut Graph<'_, f64>, y: Var, rng: &mut impl Rng) -> crate::tensor::Result<Var> {
    let w = rand_tensor(rng, g.shape(y), -1.0, 1.0);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn small_sat_cfg() -> SatConfig {
    SatConfig {
        channels: vec![2, 3, 3],
        film_hidden: 5,
        fourier: FourierConfig {
            bands: 3,
            ..SatConfig::default().fourier
        },
        ..SatConfig::default()
    }
}

/// Fourier encoding, FiLM head and full tactile token path (FiLM and concat fusion).
pub fn sat_suite(seeds: u64) -> Result<Vec<OpReport>> {
    let fourier = suite("sat.fourier", seeds, |s| {
        let mut r = rng::stream(s, 31);
        let cfg = FourierConfig {
            bands: r.gen_range(1..=6),
            include_raw: r.gen_bool(0.5),
            ..FourierConfig::default()
        };
        let n = r.gen_range(1..=3);
        let x = rand_tensor(&mut r, &[n, 6], -1.0, 1.0);
        Ok(check_inputs(&[x], DEFAULT_STEP, |g, v| {
            let y = encode_graph(g, v[0], &cfg)?;
            contract(g, y, &mut rng::stream(s, 32))
        })?)
    })?;
    let film = suite("sat.film_head", seeds, |s| {
        let mut r = rng::stream(s, 33);
        let mut store = ParamStore::<f64>::new();
        let head = FilmHead::new(&mut store, "f", 10, 6, &[2, 3], &mut r);
        jitter(&mut store, &mut r, 0.3);
        let x = rand_tensor(&mut r, &[2, 10], -1.0, 1.0);
        Ok(check_inputs_with(&store, &[x], DEFAULT_STEP, |g, v| {
            let p = head.forward(g, v[0])?;
            let mut total = Vec::new();
            let mut wr = rng::stream(s, 34);
            for (gamma, beta) in p.stages {
                total.push(contract(g, gamma, &mut wr)?);
                total.push(contract(g, beta, &mut wr)?);
            }
            let mut acc = total[0];
            for &t in &total[1..] {
                acc = g.add(acc, t)?;
            }
            Ok(acc)
        })?)
    })?;
    let mut out = vec![fourier, film];
    for (name, fusion) in [("sat.token_film", Fusion::Film), ("sat.token_concat", Fusion::Concat)] {
        out.push(suite(name, seeds, |s| {
            let mut r = rng::stream(s, 35);
            let mut store = ParamStore::<f64>::new();
            let sat = SatEncoder::new(&mut store, &small_sat_cfg(), AnchorMode::HandFrame, fusion, 4, &mut r);
            jitter(&mut store, &mut r, 0.2);
            let img = rand_tensor(&mut r, &[2, 1, 8, 8], 0.0, 1.0);
            let pose = rand_tensor(&mut r, &[2, 6], -0.9, 0.9);
            Ok(check_inputs_with(&store, &[img, pose], DEFAULT_STEP, |g, v| {
                let t = sat.forward(g, v[0], Some(v[1]))?;
                contract(g, t, &mut rng::stream(s, 36))
            })?)
        })?);
    }
    Ok(out)
}

pub fn tiny_policy_config() -> PolicyConfig {
    PolicyConfig {
        d_model: 16,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        n_cvae_layers: 1,
        ff_dim: 24,
        chunk: 3,
        z_dim: 4,
        vision_channels: [3, 4],
        sat: SatConfig {
            channels: vec![3, 4, 4],
            film_hidden: 8,
            ..SatConfig::default()
        },
        ..PolicyConfig::default()
    }
}

const TINY_DIMS: ObsDims = ObsDims {
    joints: 7,
    camera: [8, 8],
    tactile: 8,
    sensors: 2,
};

/// Gradient of the full training loss (L1 + KL through the latent encoder) with respect to
/// 40 random parameter coordinates of a jittered tiny policy.
pub fn policy_loss_error(cfg: &PolicyConfig, seed: u64) -> Result<f64> {
    let chain = planar_hand();
    let mut r = rng::stream(seed, 41);
    let mut store = ParamStore::<f64>::new();
    let policy = Policy::new(&mut store, cfg, &chain, TINY_DIMS, &mut r)?;
    jitter(&mut store, &mut r, 0.1);
    let s = TINY_DIMS.tactile;
    let obs: Vec<Observation> = (0..2)
        .map(|_| Observation {
            joints: chain.limits().iter().map(|l| r.gen_range(l[0] * 0.5..l[1] * 0.5)).collect(),
            camera: (0..64).map(|_| r.gen_range(0.0..1.0)).collect(),
            tactile: chain
                .sensor_names()
                .map(|name| TactileFrame {
                    sensor: name.to_string(),
                    size: s,
                    image: (0..s * s).map(|_| r.gen_range(0.0..1.0)).collect(),
                })
                .collect(),
            base_pose: [r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5), r.gen_range(-1.0..1.0)],
        })
        .collect();
    let refs: Vec<&Observation> = obs.iter().collect();
    let batch = policy.batch::<f64>(&refs)?;
    let (k, j, z) = (cfg.chunk, TINY_DIMS.joints, cfg.z_dim);
    let targets = rand_tensor(&mut r, &[2, k, j], -1.0, 1.0);
    let mut mask = vec![1.0; 2 * k];
    mask[2 * k - 1] = 0.0;
    let mask = Tensor::from_f64(&[2, k], &mask)?;
    let eps = rand_tensor(&mut r, &[2, z], -1.0, 1.0);
    let ids: Vec<_> = store.ids().collect();
    let coords: Vec<_> = (0..40)
        .map(|_| {
            let id = ids[r.gen_range(0..ids.len())];
            (id, r.gen_range(0..store.value(id).numel()))
        })
        .collect();
    Ok(check_params(&store, &coords, DEFAULT_STEP, |g| {
        Ok(policy.loss(g, &batch, &targets, &mask, &eps)?.total)
    })?)
}

/// End-to-end loss checks for each way poses can enter the network.
pub fn policy_suite(seeds: u64) -> Result<Vec<OpReport>> {
    let base = tiny_policy_config();
    let routings = [
        ("policy.sata", AnchorMode::HandFrame, PoseRouting::Film),
        ("policy.concat", AnchorMode::HandFrame, PoseRouting::Concat),
        ("policy.proprio_concat", AnchorMode::WorldFrame, PoseRouting::ProprioConcat),
        ("policy.flat", AnchorMode::None, PoseRouting::Film),
    ];
    let mut out = Vec::new();
    for (name, anchor, pose_routing) in routings {
        let cfg = PolicyConfig {
            anchor,
            pose_routing,
            ..base.clone()
        };
        // the main configuration gets every seed, the others a quarter
        let n = if name == "policy.sata" { seeds } else { seeds.div_ceil(4) };
        out.push(suite(name, n, |s| policy_loss_error(&cfg, s))?);
    }
    Ok(out)
}
