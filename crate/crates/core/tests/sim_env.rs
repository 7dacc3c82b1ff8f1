use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use sata_core::kinematics::{fk_in_world, planar_hand, Pose6D};
use sata_core::sim::*;

fn quiet() -> SimConfig {
    SimConfig {
        sigma_a: 0.0,
        sigma_t: 0.0,
        ..SimConfig::default()
    }
}

fn env(cfg: &SimConfig, seed: u64) -> Env {
    let chain = planar_hand();
    (0..)
        .find_map(|k| Env::from_seed(cfg, &chain, seed * 1000 + k).ok())
        .unwrap()
}

#[test]
fn holding_current_joints_is_a_fixed_point() {
    for seed in 0..10 {
        let mut e = env(&SimConfig::default(), seed);
        let q = e.joints().to_vec();
        let before = e.tip_in_object();
        e.step(&q).unwrap();
        assert_eq!(e.joints(), q.as_slice());
        assert_eq!(e.tip_in_object(), before);
        assert_eq!(e.step_index(), 1);
    }
}

#[test]
fn wrong_action_length_is_rejected() {
    let mut e = env(&SimConfig::default(), 0);
    assert!(matches!(e.step(&[0.0; 3]), Err(SimError::ActionSize { got: 3, expected: 7 })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn joint_motion_respects_rate_and_limits(seed in 0u64..1000, targets in prop::collection::vec(-4.0f64..4.0, 7)) {
        let cfg = SimConfig::default();
        let mut e = env(&cfg, seed);
        let limits = planar_hand().limits();
        for _ in 0..3 {
            let q0 = e.joints().to_vec();
            e.step(&targets).unwrap();
            for (j, (&a, &b)) in q0.iter().zip(e.joints()).enumerate() {
                prop_assert!((b - a).abs() <= cfg.max_joint_step + 1e-12);
                prop_assert!(b >= limits[j][0] - 1e-12 && b <= limits[j][1] + 1e-12);
            }
        }
    }

    #[test]
    fn peg_never_sinks_past_the_allowed_overlap(seed in 0u64..1000, targets in prop::collection::vec(-2.0f64..2.0, 7)) {
        let cfg = SimConfig::default();
        let mut e = env(&cfg, seed);
        for _ in 0..30 {
            e.step(&targets).unwrap();
            let depth = e.contact().map_or(0.0, |c| c.depth);
            prop_assert!(depth <= cfg.p_max + 1e-12, "depth {}", depth);
        }
    }
}

/// Joint targets that move the wrist by `(dx, dy)` in the object frame at fixed yaw.
fn translate_wrist(e: &Env, dx: f64, dy: f64) -> Vec<f64> {
    let obj = e.object();
    let d = obj.rotate([dx, dy]);
    let w = e.wrist();
    let target = Pose2::new(w.x + d[0], w.y + d[1], w.yaw);
    let a = e.arm.ik(e.base.inverse().compose(&target), e.arm.angles(e.joints())).unwrap();
    let mut q = e.joints().to_vec();
    e.arm.set_angles(&mut q, a);
    q
}

/// Place the tip at `tip` (object frame) by IK.
fn place_tip(e: &mut Env, tip: Pose2) {
    let peg = e.peg;
    let wrist = e.object().compose(&tip).compose(&Pose2::new(-peg.tip()[0], 0.0, 0.0));
    let a = e.arm.ik(e.base.inverse().compose(&wrist), e.arm.angles(e.joints())).unwrap();
    let mut q = e.joints().to_vec();
    e.arm.set_angles(&mut q, a);
    e.set_joints(&q);
}

#[test]
fn pushing_into_the_face_keeps_only_the_tangential_motion() {
    let cfg = quiet();
    for seed in 0..10 {
        let mut e = env(&cfg, seed);
        let lateral = if seed % 2 == 0 { 0.1 } else { -0.12 };
        place_tip(&mut e, Pose2::new(0.0, lateral, 0.0));
        let t0 = e.tip_in_object();
        let (dx, dy) = (0.004, 0.003);
        let q = translate_wrist(&e, dx, dy);
        e.step(&q).unwrap();
        let t1 = e.tip_in_object();
        // oracle: the face is the plane x = 0 with outward normal -x, so the
        // x component is removed and the y component is kept
        assert_abs_diff_eq!(t1.x, t0.x, epsilon = 1e-9);
        assert_abs_diff_eq!(t1.y, t0.y + dy, epsilon = 1e-9);
        assert_abs_diff_eq!(t1.yaw, t0.yaw, epsilon = 1e-9);
    }
}

#[test]
fn free_motion_is_not_clipped() {
    let cfg = quiet();
    let mut e = env(&cfg, 3);
    place_tip(&mut e, Pose2::new(-0.1, 0.1, 0.0));
    let t0 = e.tip_in_object();
    let q = translate_wrist(&e, 0.004, 0.003);
    e.step(&q).unwrap();
    let t1 = e.tip_in_object();
    assert_abs_diff_eq!(t1.x, t0.x + 0.004, epsilon = 1e-9);
    assert_abs_diff_eq!(t1.y, t0.y + 0.003, epsilon = 1e-9);
}

#[test]
fn tactile_far_from_geometry_is_blank() {
    let e = env(&quiet(), 0);
    for f in e.render_tactile() {
        assert!(f.image.iter().all(|&v| v == 0.0));
        assert_eq!(f.image.len(), 256);
    }
    let block = e.block;
    let far = Pose2::new(block.pose.x - 5.0, block.pose.y, 0.3);
    let img = render_patch(&block, far, 16, 0.05, 0.002, 0.0, &mut ChaCha8Rng::seed_from_u64(0));
    assert!(img.iter().all(|&v| v == 0.0));
}

#[test]
fn uniform_half_penetration_gives_half_intensity() {
    let p_max = 0.002;
    let field = |_: [f64; 2]| (-p_max / 2.0, [1.0, 0.0]);
    let img = render_patch(&field, Pose2::new(0.3, -0.2, 1.1), 16, 0.05, p_max, 0.0, &mut ChaCha8Rng::seed_from_u64(0));
    assert!(img.iter().all(|&v| v == 0.5));
}

#[test]
fn diagonal_edge_matches_per_pixel_oracle() {
    let (s, patch, p_max) = (16usize, 0.05, 0.002);
    let sensor = Pose2::new(0.7, -0.4, 0.4);
    // edge through the patch centre along the local (1, -1) diagonal
    let ln = [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];
    let wn = sensor.rotate(ln);
    let plane = HalfPlane {
        normal: wn,
        offset: wn[0] * sensor.x + wn[1] * sensor.y,
    };
    let img = render_patch(&plane, sensor, s, patch, p_max, 0.0, &mut ChaCha8Rng::seed_from_u64(0));
    let pitch = patch / s as f64;
    let mut active = 0;
    for r in 0..s {
        for c in 0..s {
            let u = -patch / 2.0 + (c as f64 + 0.5) * pitch;
            let v = -patch / 2.0 + (r as f64 + 0.5) * pitch;
            let sd = (u + v) * std::f64::consts::FRAC_1_SQRT_2;
            let want = (-sd / p_max).clamp(0.0, 1.0);
            assert_abs_diff_eq!(img[r * s + c] as f64, want, epsilon = 1e-6);
            if img[r * s + c] > 1e-6 {
                active += 1;
            }
        }
    }
    // strictly below the diagonal: s(s-1)/2 pixels; the diagonal itself is at zero depth up to rounding
    assert_eq!(active, s * (s - 1) / 2);
}

#[test]
fn tactile_noise_is_seeded_per_step() {
    let cfg = SimConfig::default();
    let a = env(&cfg, 4);
    let b = env(&cfg, 4);
    assert_eq!(a.render_tactile(), b.render_tactile());
    let mut c = env(&cfg, 4);
    let q = c.joints().to_vec();
    c.step(&q).unwrap();
    assert_ne!(a.render_tactile(), c.render_tactile());
}

#[test]
fn tactile_images_invariant_to_shared_rigid_motion() {
    let cfg = quiet();
    let chain = planar_hand();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..20 {
        let mut e = env(&cfg, seed);
        // press the fingers onto the face so that some pixels are active; offsets keep
        // camera cell centres off the block edges, where rounding could flip a cell
        place_tip(&mut e, Pose2::new(-0.0013, 0.1037, 0.011));
        let q = e.joints().to_vec();
        let ref_imgs = e.render_tactile();
        let ref_cam = e.render_camera();
        let m = Pose2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-3.0..3.0));
        let mut scene = e.scene.clone();
        scene.base_pose = m.compose(&Pose2::from_array(scene.base_pose)).to_array();
        scene.object_pose = m.compose(&Pose2::from_array(scene.object_pose)).to_array();
        let mut moved = Env::new(&cfg, &chain, scene).unwrap();
        moved.set_joints(&q);
        let imgs = moved.render_tactile();
        for (a, b) in ref_imgs.iter().zip(&imgs) {
            assert_eq!(a.sensor, b.sensor);
            for (x, y) in a.image.iter().zip(&b.image) {
                assert!((x - y).abs() as f64 <= 1e-6, "{x} vs {y}");
            }
        }
        assert_eq!(ref_cam, moved.render_camera());
    }
}

#[test]
fn sensor_poses_match_chain_fk_in_world() {
    let chain = planar_hand();
    for seed in 0..10 {
        let e = env(&quiet(), seed);
        let q = chain.state_from_slice(e.joints());
        let base = Pose6D::planar(e.base.x, e.base.y, e.base.yaw);
        let world = fk_in_world(&chain, &q, &base);
        for (p, (_, w)) in e.sensor_poses().iter().zip(world) {
            let [x, y, yaw] = w.to_planar();
            assert_abs_diff_eq!(p.x, x, epsilon = 1e-9);
            assert_abs_diff_eq!(p.y, y, epsilon = 1e-9);
            assert_abs_diff_eq!(sata_core::kinematics::wrap_angle(p.yaw - yaw), 0.0, epsilon = 1e-9);
        }
    }
}

#[test]
fn two_link_ik_round_trip_at_reference_target() {
    let a = two_link_ik(1.2, 0.3, 1.0, 1.0, true).unwrap();
    assert!(a[1] > 0.0);
    let p = two_link_fk(a[0], a[1], 1.0, 1.0);
    assert!((p[0] - 1.2).hypot(p[1] - 0.3) < 1e-9);
    assert!(two_link_ik(2.5, 0.0, 1.0, 1.0, true).is_none());
}

proptest! {
    #[test]
    fn two_link_ik_round_trips(x in -1.9f64..1.9, y in -1.9f64..1.9, down in any::<bool>()) {
        prop_assume!(x.hypot(y) > 0.05 && x.hypot(y) < 1.95);
        let a = two_link_ik(x, y, 1.0, 0.8, down);
        if let Some([t1, t2]) = a {
            let p = two_link_fk(t1, t2, 1.0, 0.8);
            prop_assert!((p[0] - x).hypot(p[1] - y) < 1e-9);
        } else {
            prop_assert!(x.hypot(y) > 1.8 || x.hypot(y) < 0.2);
        }
    }
}

#[test]
fn arm_wrist_matches_chain_fk() {
    let chain = planar_hand();
    let arm = PlanarArm::from_chain(&chain).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let q: Vec<f64> = chain.limits().iter().map(|l| rng.gen_range(l[0]..l[1])).collect();
        let w = arm.wrist(arm.angles(&q));
        let state = chain.state_from_slice(&q);
        let anchor = chain.anchor_in_root(&state).to_planar();
        assert_abs_diff_eq!(w.x, anchor[0], epsilon = 1e-9);
        assert_abs_diff_eq!(w.y, anchor[1], epsilon = 1e-9);
        assert_abs_diff_eq!(sata_core::kinematics::wrap_angle(w.yaw - anchor[2]), 0.0, epsilon = 1e-9);
        let back = arm.ik(w, arm.angles(&q)).unwrap();
        let w2 = arm.wrist(back);
        assert!((w2.x - w.x).hypot(w2.y - w.y) < 1e-9);
    }
}

#[test]
fn expert_holds_once_inserted() {
    let cfg = SimConfig::default();
    let mut e = env(&cfg, 1);
    place_tip(&mut e, Pose2::new(cfg.insert_depth, 0.0, 0.0));
    assert!(e.is_success());
    let mut expert = Expert::new(&e.scene);
    assert_eq!(expert.action(&e), e.joints().to_vec());
    assert_eq!(expert.clean_action(&e), e.joints().to_vec());
}

#[test]
fn noiseless_expert_is_deterministic_and_always_succeeds() {
    let cfg = quiet();
    let chain = planar_hand();
    let mut successes = 0;
    for i in 0..50 {
        let s = (0..MAX_ATTEMPTS)
            .map(|a| episode_seed(11, i, a))
            .find(|&s| Env::from_seed(&cfg, &chain, s).is_ok())
            .unwrap();
        let (_, r1) = expert_episode(&cfg, &chain, s).unwrap();
        let (_, r2) = expert_episode(&cfg, &chain, s).unwrap();
        assert_eq!(r1.steps.len(), r2.steps.len());
        for ((o1, a1), (o2, a2)) in r1.steps.iter().zip(&r2.steps) {
            assert_eq!(a1, a2);
            assert_eq!(o1, o2);
        }
        successes += r1.summary.success as usize;
    }
    assert_eq!(successes, 50);
}

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
    note: String,
    trace: Vec<[f64; 4]>,
    label: RolloutSummary,
}

#[derive(Deserialize)]
struct GoldenTotals {
    successes: usize,
    first_contact_ok: usize,
    success_steps_sum: usize,
}

#[test]
fn metrics_match_hand_labels_on_golden_rollouts() {
    let g: Golden = serde_json::from_str(include_str!("fixtures/golden_rollouts.json")).unwrap();
    assert_eq!(g.rollouts.len(), 10);
    let mut summaries = Vec::new();
    for r in &g.rollouts {
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
        let s = summarize(&trace, g.tau_pos, g.tau_ang, g.max_steps);
        assert_eq!(s, r.label, "{}", r.note);
        summaries.push(s);
    }
    let m = evaluate(&summaries, g.dt).unwrap();
    let n = g.rollouts.len() as f64;
    assert_eq!(m.rollouts, 10);
    assert_eq!(m.sr, g.totals.successes as f64 / n);
    assert_eq!(m.fc, g.totals.first_contact_ok as f64 / n);
    let mean = g.totals.success_steps_sum as f64 / g.totals.successes as f64;
    assert_eq!(m.mean_steps, Some(mean));
    assert_eq!(m.completion_time, Some(mean * g.dt));
}

#[test]
fn all_timeouts_have_no_completion_time() {
    let fail = RolloutSummary {
        success: false,
        steps_to_success: None,
        first_contact_ok: None,
    };
    let m = evaluate(&[fail; 4], 0.05).unwrap();
    assert_eq!(m.sr, 0.0);
    assert_eq!(m.completion_time, None);
    assert_eq!(m.time_cell(), "—");
    assert!(evaluate(&[], 0.05).is_err());
}

#[test]
fn dataset_is_byte_identical_for_a_seed() {
    let cfg = SimConfig::default();
    let chain = planar_hand();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let m = generate_dataset(&cfg, &chain, a.path(), 4, 21).unwrap();
    generate_dataset(&cfg, &chain, b.path(), 4, 21).unwrap();
    assert_eq!(m.episodes.len(), 4);
    assert!(m.episodes.iter().all(|e| e.meta.success));
    for f in ["manifest.json", "episodes/ep00000.bin", "episodes/ep00003.bin"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let c = tempfile::tempdir().unwrap();
    generate_dataset(&cfg, &chain, c.path(), 4, 22).unwrap();
    assert_ne!(
        std::fs::read(a.path().join("episodes/ep00000.bin")).unwrap(),
        std::fs::read(c.path().join("episodes/ep00000.bin")).unwrap()
    );
}

#[test]
fn impossible_episodes_exhaust_the_retry_budget() {
    let cfg = SimConfig {
        max_steps: 2,
        ..SimConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    match generate_dataset(&cfg, &planar_hand(), dir.path(), 1, 0) {
        Err(SimError::RetriesExhausted { episode: 0, attempts }) => assert_eq!(attempts, 100),
        other => panic!("expected exhausted retries, got {other:?}"),
    }
    assert!(generate_dataset(&SimConfig::default(), &planar_hand(), dir.path(), 0, 0).is_err());
}

#[test]
fn episode_files_round_trip_and_replay_bit_exactly() {
    let cfg = SimConfig::default();
    let chain = planar_hand();
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&cfg, &chain, dir.path(), 3, 5).unwrap();
    let ds = Dataset::load(dir.path()).unwrap();
    ds.check_compatible(&cfg, &chain).unwrap();
    let layout = ds.manifest.layout;
    assert_eq!(layout.floats_per_step(), 2 * 7 + 3 + 144 + 2 * 256);
    for (entry, steps) in ds.manifest.episodes.iter().zip(&ds.episodes) {
        let bytes = std::fs::read(dir.path().join(&entry.file)).unwrap();
        assert_eq!(&bytes[..4], b"SATE");
        assert_eq!(bytes.len(), 12 + 4 * steps.len() * layout.floats_per_step());
        let mut again = Vec::new();
        write_episode(&mut again, &layout, steps).unwrap();
        assert_eq!(again, bytes);

        let obs = replay(&cfg, &chain, &entry.meta, steps).unwrap();
        assert_eq!(obs.len(), steps.len());
        for (o, s) in obs.iter().zip(steps) {
            let rec = StepRecord::new(o, &s.action.iter().map(|&v| v as f64).collect::<Vec<_>>());
            assert_eq!(&rec, s);
        }
    }
}

#[test]
fn corrupt_episode_files_are_rejected() {
    let layout = EpisodeLayout {
        joints: 1,
        camera: [1, 1],
        sensors: 1,
        tactile: 1,
    };
    let step = StepRecord {
        joints: vec![0.5],
        action: vec![0.25],
        base_pose: [1.0, 2.0, 3.0],
        camera: vec![1.0],
        tactile: vec![0.0],
    };
    let mut bytes = Vec::new();
    write_episode(&mut bytes, &layout, &[step.clone(), step.clone()]).unwrap();
    assert_eq!(read_episode(bytes.as_slice(), &layout).unwrap(), vec![step.clone(), step]);
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(read_episode(bad.as_slice(), &layout).is_err());
    let mut long = bytes.clone();
    long.push(0);
    assert!(read_episode(long.as_slice(), &layout).is_err());
    assert!(read_episode(&bytes[..bytes.len() - 1], &layout).is_err());
}

#[test]
fn narrowing_walks_down_the_clearance_notches() {
    let mut cfg = SimConfig {
        clearance: 2.0 * MM,
        ..SimConfig::default()
    };
    let mut seen = vec![cfg.clearance_mm()];
    while let Some(n) = cfg.narrowed() {
        assert!(n.tau_pos < n.clearance);
        cfg = n;
        seen.push(cfg.clearance_mm());
    }
    for (a, b) in seen.iter().zip(CLEARANCE_NOTCHES_MM) {
        assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
    }
}

/// Success and first-contact rates of the noisy expert over `n` scenes.
fn expert_rates(cfg: &SimConfig, n: usize) -> (f64, f64) {
    let chain = planar_hand();
    let (mut ok, mut fc) = (0, 0);
    for i in 0..n {
        let s = (0..MAX_ATTEMPTS)
            .map(|a| episode_seed(1234, i, a))
            .find(|&s| Env::from_seed(cfg, &chain, s).is_ok())
            .unwrap();
        let r = expert_episode(cfg, &chain, s).unwrap().1.summary;
        ok += r.success as usize;
        fc += (r.first_contact_ok == Some(true)) as usize;
    }
    (ok as f64 / n as f64, fc as f64 / n as f64)
}

#[test]
fn narrower_slots_are_harder_for_the_noisy_expert() {
    let base = SimConfig {
        sigma_a: 0.01,
        clearance: 2.0 * MM,
        ..SimConfig::default()
    };
    let mid = base.narrowed().unwrap().narrowed().unwrap();
    let tight = mid.narrowed().unwrap().narrowed().unwrap();
    let rates: Vec<(f64, f64)> = [&base, &mid, &tight].iter().map(|c| expert_rates(c, 100)).collect();
    for w in rates.windows(2) {
        assert!(w[0].0 >= w[1].0 && w[0].1 >= w[1].1, "{rates:?}");
    }
    assert!(rates[0].0 > rates[2].0 && rates[0].1 > rates[2].1, "{rates:?}");
}
