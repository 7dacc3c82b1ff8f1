//! End-to-end acceptance run. Prints one line per criterion and fails if any criterion fails.
//!
//! The ablation criterion trains 12 policies and takes most of an hour on one core.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{Matrix4, Rotation3, Unit, Vector3};
use rand::Rng;
use sata_core::harness::gradcheck::{self, Scope};
use sata_core::harness::{self, evaluate_expert, ExperimentConfig, MetricsReport, Variant};
use sata_core::kinematics::*;
use sata_core::policy::{ObsDims, Observation, Policy, PolicyConfig};
use sata_core::rng::seeded;
use sata_core::sat::*;
use sata_core::sim::{evaluate, generate_dataset, summarize, Dataset, RolloutSummary, StepTrace};
use sata_core::tensor::{Graph, ParamStore, Tensor};
use serde::Deserialize;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

/// Written to the raw stderr handle so the lines show up without `--nocapture`.
fn report_line(n: usize, name: &str, o: &Outcome, took: Duration) {
    let line = format!(
        "acceptance {n} {name:<28} {}  ({:.1}s) {}\n",
        if o.passed { "PASS" } else { "FAIL" },
        took.as_secs_f64(),
        o.detail
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

// 1

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let report = gradcheck::run(Scope::All, 100).unwrap();
    let took = start.elapsed();
    let ops_worst = report
        .entries
        .iter()
        .filter(|e| e.tol == gradcheck::OP_TOL)
        .map(|e| e.report.worst_rel_err)
        .fold(0.0, f64::max);
    let policy_worst = report
        .entries
        .iter()
        .filter(|e| e.report.name.starts_with("policy."))
        .map(|e| e.report.worst_rel_err)
        .fold(0.0, f64::max);
    let enough = report.entries.iter().any(|e| e.report.name == "policy.sata" && e.report.cases >= 100)
        && report.entries.iter().filter(|e| e.tol == gradcheck::OP_TOL).all(|e| e.report.cases >= 100);
    let ok = report.passed() && ops_worst < 1e-5 && policy_worst < 1e-4 && enough && took < Duration::from_secs(300);
    outcome(
        ok,
        format!(
            "ops worst {ops_worst:.2e}, end-to-end worst {policy_worst:.2e}, {} checks, {:.0}s{}",
            report.entries.len(),
            took.as_secs_f64(),
            if report.passed() { String::new() } else { format!(", failing: {}", report.failures().join(",")) }
        ),
    )
}

// 2

fn h(xyz: [f64; 3], rpy: [f64; 3]) -> Matrix4<f64> {
    let mut m = Rotation3::from_euler_angles(rpy[0], rpy[1], rpy[2]).to_homogeneous();
    m[(0, 3)] = xyz[0];
    m[(1, 3)] = xyz[1];
    m[(2, 3)] = xyz[2];
    m
}

fn h_axis(axis: [f64; 3], angle: f64) -> Matrix4<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::from(axis)), angle).to_homogeneous()
}

type LinkSpec = (usize, [f64; 3], [f64; 3], Option<[f64; 3]>);

fn random_chain(seed: u64) -> (KinematicChain, Vec<LinkSpec>, Vec<(usize, [f64; 3], [f64; 3])>) {
    let mut rng = seeded(seed);
    let r3 = |rng: &mut rand_chacha::ChaCha8Rng, a: f64| [rng.gen_range(-a..a), rng.gen_range(-a..a), rng.gen_range(-a..a)];
    let n = rng.gen_range(2..10);
    let mut links = vec!["root".to_string()];
    let mut joints = Vec::new();
    let mut spec: Vec<LinkSpec> = vec![(0, [0.0; 3], [0.0; 3], None)];
    for i in 1..n {
        let parent = rng.gen_range(0..i);
        let (xyz, rpy) = (r3(&mut rng, 1.0), r3(&mut rng, PI));
        let mut axis = r3(&mut rng, 1.0);
        let norm = axis.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-3);
        axis.iter_mut().for_each(|a| *a /= norm);
        let revolute = rng.gen_bool(0.75);
        links.push(format!("link{i}"));
        joints.push(JointSpec {
            name: format!("joint{i}"),
            kind: if revolute { JointKind::Revolute } else { JointKind::Fixed },
            parent: links[parent].clone(),
            child: format!("link{i}"),
            origin: Origin { xyz, rpy },
            axis: revolute.then_some(axis),
            limits: revolute.then_some([-PI, PI]),
        });
        spec.push((parent, xyz, rpy, revolute.then_some(axis)));
    }
    let mut sensors = Vec::new();
    let mut offsets = Vec::new();
    for s in 0..rng.gen_range(1..5) {
        let link = rng.gen_range(0..n);
        let (xyz, rpy) = (r3(&mut rng, 0.3), r3(&mut rng, PI));
        sensors.push(SensorSpec {
            name: format!("sensor{s}"),
            link: links[link].clone(),
            origin: Origin { xyz, rpy },
        });
        offsets.push((link, xyz, rpy));
    }
    (KinematicChain::new(links, joints, "root", sensors).unwrap(), spec, offsets)
}

fn oracle(spec: &[LinkSpec], link: usize, angle_of: &dyn Fn(usize) -> f64) -> Matrix4<f64> {
    if link == 0 {
        return Matrix4::identity();
    }
    let (parent, xyz, rpy, axis) = spec[link];
    let mut m = oracle(spec, parent, angle_of) * h(xyz, rpy);
    if let Some(a) = axis {
        m *= h_axis(a, angle_of(link));
    }
    m
}

fn fk_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..1000 {
        let (chain, spec, offsets) = random_chain(seed);
        let mut rng = seeded(1 << 20 | seed);
        let q: Vec<f64> = (0..chain.dof()).map(|_| rng.gen_range(-PI..PI)).collect();
        // state index of each revolute link, in declaration order
        let mut index = vec![usize::MAX; spec.len()];
        let mut k = 0;
        for (i, s) in spec.iter().enumerate().skip(1) {
            if s.3.is_some() {
                index[i] = k;
                k += 1;
            }
        }
        let angle_of = |link: usize| q[index[link]];
        let fk = forward_kinematics(&chain, &chain.state_from_slice(&q));
        for ((_, pose), &(link, xyz, rpy)) in fk.iter().zip(&offsets) {
            let m = oracle(&spec, link, &angle_of) * h(xyz, rpy);
            for r in 0..3 {
                worst = worst.max((pose.translation[r] - m[(r, 3)]).abs());
                for c in 0..3 {
                    worst = worst.max((pose.rotation[(r, c)] - m[(r, c)]).abs());
                }
            }
        }
    }

    let two = parse_chain_json(
        r#"{"format_version":1,"anchor_link":"base","links":[{"name":"base"},{"name":"upper"},{"name":"lower"}],
            "joints":[{"name":"a","type":"revolute","parent":"base","child":"upper","axis":[0,0,1],"limits":[-4,4]},
                      {"name":"b","type":"revolute","parent":"upper","child":"lower","origin":{"xyz":[1.3,0,0]},"axis":[0,0,1],"limits":[-4,4]}],
            "sensor_frames":[{"name":"tip","link":"lower","origin":{"xyz":[0.7,0,0]}}]}"#,
    )
    .unwrap();
    let mut closed = 0.0f64;
    let mut rng = seeded(77);
    for _ in 0..1000 {
        let (t1, t2) = (rng.gen_range(-PI..PI), rng.gen_range(-PI..PI));
        let p = forward_kinematics(&two, &two.state_from_slice(&[t1, t2]))[0].1;
        let x = 1.3 * t1.cos() + 0.7 * (t1 + t2).cos();
        let y = 1.3 * t1.sin() + 0.7 * (t1 + t2).sin();
        closed = closed.max((p.translation.x - x).abs()).max((p.translation.y - y).abs()).max(p.translation.z.abs());
        let yaw = p.rotation[(1, 0)].atan2(p.rotation[(0, 0)]);
        let d = (yaw - (t1 + t2)).rem_euclid(2.0 * PI);
        closed = closed.max(d.min(2.0 * PI - d));
    }
    outcome(
        worst < 1e-9 && closed < 1e-12,
        format!("1000 random chains worst {worst:.1e}; two-link closed form worst {closed:.1e}"),
    )
}

// 3

fn with_film_weights<T: sata_core::tensor::Float>(store: &mut ParamStore<T>, seed: u64) {
    let mut rng = seeded(seed);
    for p in store.iter_mut().filter(|p| p.name.starts_with("sat.film.l2")) {
        for v in p.value.data_mut() {
            *v = T::lit(rng.gen_range(-0.3..0.3));
        }
    }
}

fn random_frames(chain: &KinematicChain, rng: &mut impl Rng, s: usize) -> Vec<TactileFrame> {
    chain
        .sensor_names()
        .map(|name| TactileFrame {
            sensor: name.to_string(),
            size: s,
            image: (0..s * s).map(|_| rng.gen_range(0.0f32..1.0)).collect(),
        })
        .collect()
}

fn random_rigid(rng: &mut impl Rng) -> Pose6D {
    Pose6D::from_xyz_rpy(
        [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-0.05..0.05)],
        [rng.gen_range(-PI..PI), rng.gen_range(-1.5..1.5), rng.gen_range(-PI..PI)],
    )
}

fn anchoring_invariance() -> Outcome {
    let chain = planar_hand();
    let cfg = SatConfig::default();
    let mut rng = seeded(300);
    let frames = random_frames(&chain, &mut rng, cfg_tactile_size());
    let hand = [0.2, 0.35, 0.1, 0.45];
    let q_of = |arm: [f64; 3]| chain.state_from_slice(&[arm[0], arm[1], arm[2], hand[0], hand[1], hand[2], hand[3]]);
    let tokens = |mode: AnchorMode, arm: [f64; 3], base: &Pose6D| -> Vec<f32> {
        let mut store = ParamStore::<f32>::new();
        let sat = SatEncoder::new(&mut store, &cfg, mode, Fusion::Film, 32, &mut seeded(301));
        with_film_weights(&mut store, 302);
        let mut g = Graph::with_params(&store);
        let t = anchor_batch(&mut g, &sat, &frames, &chain, &q_of(arm), base).unwrap();
        g.value(t).data().to_vec()
    };
    let hand0 = tokens(AnchorMode::HandFrame, [0.0; 3], &Pose6D::identity());
    let world0 = tokens(AnchorMode::WorldFrame, [0.0; 3], &Pose6D::identity());
    let mut hand_worst = 0.0f32;
    let mut world_changed = 0;
    for _ in 0..100 {
        let base = random_rigid(&mut rng);
        let arm = [rng.gen_range(-PI..PI), rng.gen_range(-2.5..2.5), rng.gen_range(-PI..PI)];
        let h = tokens(AnchorMode::HandFrame, arm, &base);
        hand_worst = hand_worst.max(h.iter().zip(&hand0).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max));
        let w = tokens(AnchorMode::WorldFrame, arm, &base);
        if w.iter().zip(&world0).any(|(a, b)| (a - b).abs() > 1e-3) {
            world_changed += 1;
        }
    }

    // full policy: hand-frame chunks ignore the base pose
    let pcfg = PolicyConfig {
        d_model: 32,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        n_cvae_layers: 1,
        ff_dim: 48,
        chunk: 6,
        z_dim: 4,
        ..PolicyConfig::default()
    };
    let dims = ObsDims {
        joints: chain.dof(),
        camera: [12, 12],
        tactile: 16,
        sensors: chain.sensors().len(),
    };
    let mut store = ParamStore::<f32>::new();
    let policy = Policy::new(&mut store, &pcfg, &chain, dims, &mut seeded(303)).unwrap();
    with_film_weights(&mut store, 304);
    let obs = Observation {
        joints: vec![0.3, 1.2, -0.4, hand[0], hand[1], hand[2], hand[3]],
        camera: (0..144).map(|_| rng.gen_range(0.0f32..1.0)).collect(),
        tactile: random_frames(&chain, &mut rng, 16),
        base_pose: [0.0; 3],
    };
    let chunk0 = policy.predict(&store, &obs).unwrap();
    let mut chunk_worst = 0.0f64;
    for _ in 0..100 {
        let mut moved = obs.clone();
        moved.base_pose = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-PI..PI)];
        let c = policy.predict(&store, &moved).unwrap();
        chunk_worst = chunk_worst.max(c.actions.iter().zip(&chunk0.actions).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    outcome(
        (hand_worst as f64) < 1e-6 && chunk_worst < 1e-6 && world_changed >= 99,
        format!("hand-frame token drift {hand_worst:.1e}, chunk drift {chunk_worst:.1e}; world-frame changed {world_changed}/100"),
    )
}

fn cfg_tactile_size() -> usize {
    sata_core::sim::SimConfig::default().tactile_size
}

// 4

fn film_identity() -> Outcome {
    let cfg = SatConfig::default();
    let mut store = ParamStore::<f32>::new();
    let sat = SatEncoder::new(&mut store, &cfg, AnchorMode::HandFrame, Fusion::Film, 32, &mut seeded(400));
    let s = cfg_tactile_size();
    let mut rng = seeded(401);
    let mut mismatched = 0;
    for _ in 0..100 {
        let img = Tensor::new(&[1, 1, s, s], (0..s * s).map(|_| rng.gen_range(0.0f32..1.0)).collect()).unwrap();
        let pose = [
            rng.gen_range(0.0..0.5),
            rng.gen_range(-0.25..0.25),
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let mut g = Graph::with_params(&store);
        let x = g.constant(img);
        let p = g.constant(sat.pose_tensor(&[pose]));
        let modulated = sat.forward(&mut g, x, Some(p)).unwrap();
        let plain = encode_tactile(&mut g, &sat.encoder, x, None).unwrap();
        if !g.value(modulated).data().iter().zip(g.value(plain).data()).all(|(a, b)| a.to_bits() == b.to_bits()) {
            mismatched += 1;
        }
    }
    outcome(mismatched == 0, format!("{} of 100 frames bitwise equal", 100 - mismatched))
}

// 5

fn fourier_contract() -> Outcome {
    let unit = FourierConfig {
        bands: 6,
        include_raw: true,
        pos_bounds: [[-1.0, 1.0]; 3],
        rot_scale: PI,
    };
    let dim_ok = unit.dim() == 78 && fourier_encode(&Pose6D::identity(), &unit).len() == 78;
    let no_raw = FourierConfig {
        include_raw: false,
        ..unit.clone()
    };
    let centered = fourier_encode(&Pose6D::identity(), &no_raw);
    let centered_ok = centered.len() == 72 && centered.chunks(2).all(|p| p[0] == 0.0 && p[1] == 1.0);
    let e = encode_normalized([0.5, 0.0, 0.0, 0.0, 0.0, 0.0], &no_raw);
    // (sin 2^k pi x, cos 2^k pi x) at x = 1/2
    let want = [(0.5 * PI).sin(), (0.5 * PI).cos(), PI.sin(), PI.cos()];
    let closed = e[..4].iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let exact = e[..4].iter().zip([1.0, 0.0, 0.0, -1.0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    outcome(
        dim_ok && centered_ok && closed < 1e-12 && exact < 1e-12,
        format!("dim {}, centered sin/cos ok: {centered_ok}, closed-form error {closed:.1e}", unit.dim()),
    )
}

// 6

const ABLATION_BUDGET: Duration = Duration::from_secs(60 * 60);
const MARGIN: f64 = 0.15;

fn ablation_verdict(table: &harness::AblationTable) -> (bool, bool, String) {
    let sr = |v| table.sr(v).unwrap();
    let sata = sr(Variant::Sata);
    let beats = [Variant::TactileGlobal, Variant::TactileFlat, Variant::WorldFrame].iter().all(|&b| sata > sr(b));
    let margin = sata - sr(Variant::TactileFlat) >= MARGIN - 1e-12;
    let text = format!(
        "SR sata {:.3}, tactile_global {:.3}, tactile_flat {:.3}, world_frame {:.3}",
        sata,
        sr(Variant::TactileGlobal),
        sr(Variant::TactileFlat),
        sr(Variant::WorldFrame)
    );
    (beats, margin, text)
}

fn run_ablation(cfg: &ExperimentConfig, dir: &Path) -> (harness::AblationTable, Duration) {
    let start = Instant::now();
    let chain = harness::load_chain(cfg).unwrap();
    let data = harness::ensure_dataset(cfg, &chain, &dir.join("data")).unwrap();
    let variants = [Variant::Sata, Variant::TactileGlobal, Variant::TactileFlat, Variant::WorldFrame];
    let table = harness::ablate(cfg, &chain, &data, &variants, &dir.join("runs")).unwrap();
    (table, start.elapsed())
}

fn acceptance_config() -> ExperimentConfig {
    let cfg = ExperimentConfig::from_json(include_str!("fixtures/acceptance.json")).unwrap();
    assert_eq!((cfg.train.episodes, cfg.train.epochs, cfg.train.seeds.len(), cfg.train.eval_rollouts), (200, 20, 3, 40));
    cfg
}

fn ablation_ordering() -> Outcome {
    let cfg = acceptance_config();
    let dir = tempfile::tempdir().unwrap();
    let (table, took) = run_ablation(&cfg, dir.path());
    let (beats, margin, text) = ablation_verdict(&table);
    let in_budget = took < ABLATION_BUDGET;
    let detail = format!("{text}; {:.1} min", took.as_secs_f64() / 60.0);
    if beats && margin {
        return outcome(in_budget, detail);
    }
    let Some(narrow) = cfg.sim.narrowed() else {
        return outcome(false, format!("{detail}; no narrower notch"));
    };
    let narrow_cfg = ExperimentConfig { sim: narrow, ..cfg };
    let dir = tempfile::tempdir().unwrap();
    let (table, took2) = run_ablation(&narrow_cfg, dir.path());
    let (beats2, margin2, text2) = ablation_verdict(&table);
    outcome(
        beats2 && margin2 && in_budget && took2 < ABLATION_BUDGET,
        format!(
            "default: {detail}; narrowed to {} mm: {text2}; {:.1} min",
            narrow_cfg.sim.clearance_mm(),
            took2.as_secs_f64() / 60.0
        ),
    )
}

// 7

#[derive(Deserialize)]
struct Golden {
    tau_pos: f64,
    tau_ang: f64,
    max_steps: usize,
    dt: f64,
    rollouts: Vec<GoldenRollout>,
    totals: GoldenTotals,
}

#[derive(Deserialize)]
struct GoldenRollout {
    trace: Vec<[f64; 4]>,
    label: RolloutSummary,
}

#[derive(Deserialize)]
struct GoldenTotals {
    successes: usize,
    first_contact_ok: usize,
    success_steps_sum: usize,
}

fn metric_harness() -> Outcome {
    let g: Golden = serde_json::from_str(include_str!("fixtures/golden_rollouts.json")).unwrap();
    let summaries: Vec<RolloutSummary> = g
        .rollouts
        .iter()
        .map(|r| {
            let trace: Vec<StepTrace> = r
                .trace
                .iter()
                .map(|&[pos_err, lateral, ang_err, max_tactile]| StepTrace {
                    pos_err,
                    lateral,
                    ang_err,
                    max_tactile,
                })
                .collect();
            summarize(&trace, g.tau_pos, g.tau_ang, g.max_steps)
        })
        .collect();
    let labels_ok = summaries.iter().zip(&g.rollouts).all(|(s, r)| *s == r.label);
    let m = evaluate(&summaries, g.dt).unwrap();
    let n = g.rollouts.len() as f64;
    let mean = g.totals.success_steps_sum as f64 / g.totals.successes as f64;
    let totals_ok = m.sr == g.totals.successes as f64 / n
        && m.fc == g.totals.first_contact_ok as f64 / n
        && m.mean_steps == Some(mean)
        && m.completion_time == Some(mean * g.dt);

    let mut cfg = ExperimentConfig::default();
    cfg.sim.sigma_a = 0.0;
    let chain = planar_hand();
    let expert = evaluate_expert(&cfg, &chain, 40, 0).unwrap();
    outcome(
        g.rollouts.len() == 10 && labels_ok && totals_ok && expert.sr == 1.0,
        format!("golden labels {labels_ok}, totals {totals_ok}; noiseless expert SR {:.3} over 40", expert.sr),
    )
}

// 8

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn reproducibility() -> Outcome {
    let mut cfg = ExperimentConfig {
        policy: gradcheck::tiny_policy_config(),
        ..ExperimentConfig::default()
    };
    cfg.policy.chunk = 5;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 32;
    cfg.train.lr = 1e-3;
    cfg.train.seeds = vec![11];
    cfg.train.eval_rollouts = 3;
    let chain = planar_hand();
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        generate_dataset(&cfg.sim, &chain, &data_dir, 6, 5).unwrap();
        let data = Dataset::load(&data_dir).unwrap();
        let out = dir.path().join("run");
        harness::run_variant(&cfg, &chain, &data, &out).unwrap();
        let files: Vec<(String, Vec<u8>)> = dir_bytes(&out).into_iter().filter(|(n, _)| n != "timing.json").collect();
        (dir_bytes(&data_dir), files)
    };
    let (data_a, run_a) = run();
    let (data_b, run_b) = run();
    let names: Vec<&str> = run_a.iter().map(|(n, _)| n.as_str()).collect();
    let complete = ["metrics.csv", "metrics.json", "seed_11.satw"].iter().all(|f| names.contains(f));
    let report = MetricsReport::from_json(std::str::from_utf8(&run_a.iter().find(|(n, _)| n == "metrics.json").unwrap().1).unwrap()).unwrap();
    let data_same = data_a == data_b;
    let run_same = run_a == run_b;
    outcome(
        complete && data_same && run_same && report.config_hash == cfg.hash(),
        format!("dataset files {} identical: {data_same}; checkpoint/log/metrics files {} identical: {run_same}", data_a.len(), run_a.len()),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient correctness", gradient_correctness),
        ("fk oracle equivalence", fk_equivalence),
        ("anchoring invariance", anchoring_invariance),
        ("film identity", film_identity),
        ("fourier contract", fourier_contract),
        ("ablation ordering", ablation_ordering),
        ("metric harness", metric_harness),
        ("reproducibility", reproducibility),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = f();
        report_line(i + 1, name, &o, start.elapsed());
        if !o.passed {
            failed.push(format!("{} {name}: {}", i + 1, o.detail));
        }
    }
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
