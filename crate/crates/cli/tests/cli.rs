use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sata(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sata"));
    cmd.args(args).env("RUST_LOG", "warn").env_remove("SATA_SEED");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn chain_path() -> String {
    format!("{}/../core/assets/planar_hand.urdf.xml", env!("CARGO_MANIFEST_DIR"))
}

const SMALL: &str = r#"{
  "format_version": 1,
  "policy": {
    "d_model": 16, "n_heads": 2, "n_enc_layers": 1, "n_dec_layers": 1, "n_cvae_layers": 1,
    "ff_dim": 24, "chunk": 4, "z_dim": 4, "vision_channels": [3, 4],
    "sat": {"channels": [3, 4, 4], "film_hidden": 8}
  },
  "train": {"epochs": 1, "batch_size": 32, "lr": 0.001, "seeds": [0, 1], "episodes": 3, "eval_rollouts": 2},
  "variant": "sata"
}"#;

fn write_config(dir: &Path) -> String {
    let p = dir.join("config.json");
    fs::write(&p, SMALL).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn fk_prints_anchor_frame_poses() {
    let out = stdout(&sata(&["fk", "--chain", &chain_path(), "--q", "thumb_base=0.2,index_tip=-0.1"], &[]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["frame"], "wrist");
    let thumb = v["poses"]["thumb_pad"].as_array().unwrap();
    assert_eq!(thumb.len(), 6);
    let x = 0.14 + 0.07 * 0.2f64.cos() + 0.06 * 0.2f64.cos();
    assert!((thumb[0].as_f64().unwrap() - x).abs() < 1e-12);
    assert!((thumb[5].as_f64().unwrap() + 0.2).abs() < 1e-12);
}

#[test]
fn fk_world_frame_applies_base() {
    let out = stdout(&sata(&["fk", "--chain", &chain_path(), "--world", "--base", "1,-2,0"], &[]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["frame"], "world");
    let index = v["poses"]["index_pad"].as_array().unwrap();
    // straight arm: wrist at x = 2, pad 0.27 further
    assert!((index[0].as_f64().unwrap() - 3.27).abs() < 1e-12);
    assert!((index[1].as_f64().unwrap() + 2.05).abs() < 1e-12);
}

#[test]
fn fk_rejects_unknown_joint() {
    let o = sata(&["fk", "--chain", &chain_path(), "--q", "pinky=1"], &[]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("pinky"));
}

#[test]
fn gradcheck_ops_scope() {
    let out = stdout(&sata(&["gradcheck", "--scope", "ops", "--seeds", "3"], &[]));
    assert!(out.lines().count() > 20);
    assert!(out.lines().all(|l| l.ends_with("ok")), "{out}");
    assert!(!sata(&["gradcheck", "--scope", "nope"], &[]).status.success());
}

#[test]
fn gen_data_train_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("data");
    let data_s = data.to_string_lossy().into_owned();
    let out = stdout(&sata(&["gen-data", "--config", &cfg, "--out", &data_s, "--n", "2", "--seed", "4"], &[]));
    assert!(out.starts_with("wrote 2 episodes"));
    assert!(data.join("manifest.json").exists());

    let ckpt = dir.path().join("run/model.satw");
    let ckpt_s = ckpt.to_string_lossy().into_owned();
    stdout(&sata(&["train", "--config", &cfg, "--data", &data_s, "--out", &ckpt_s], &[]));
    assert!(ckpt.exists());
    assert!(dir.path().join("run/model.log.csv").exists());
    assert!(dir.path().join("run/model.epoch01.satw").exists());

    let csv = stdout(&sata(&["eval", "--ckpt", &ckpt_s, "--config", &cfg, "--rollouts", "2"], &[]));
    assert!(csv.starts_with("variant,seed,sr,fc,time_steps\n"));
    assert_eq!(csv.lines().count(), 4);
    let json = fs::read_to_string(dir.path().join("run/metrics.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["variant"], "sata");
    assert_eq!(v["seeds"].as_array().unwrap().len(), 2);
    assert_eq!(fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap(), csv);
}

#[test]
fn seed_override_changes_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("data").to_string_lossy().into_owned();
    stdout(&sata(&["gen-data", "--config", &cfg, "--out", &data, "--n", "1"], &[]));
    let ck = |name: &str, seed: Option<&str>| {
        let p = dir.path().join(name).to_string_lossy().into_owned();
        let envs: Vec<(&str, &str)> = seed.map(|s| ("SATA_SEED", s)).into_iter().collect();
        stdout(&sata(&["train", "--config", &cfg, "--data", &data, "--out", &p], &envs));
        fs::read(&p).unwrap()
    };
    let a = ck("a.satw", None);
    let b = ck("b.satw", Some("0"));
    let c = ck("c.satw", Some("9"));
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(!sata(&["train", "--config", &cfg, "--data", &data, "--out", "x.satw"], &[("SATA_SEED", "minus")]).status.success());
}

#[test]
fn ablate_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("data").to_string_lossy().into_owned();
    let runs = dir.path().join("runs");
    let runs_s = runs.to_string_lossy().into_owned();
    let out = stdout(&sata(
        &["ablate", "--config", &cfg, "--variants", "sata,vision_only", "--data", &data, "--out", &runs_s],
        &[],
    ));
    assert!(out.starts_with("| Variant | SR (%) | FC (%) | Time (s) |"));
    assert!(out.contains("| vision_only |"));
    assert!(runs.join("ablation.csv").exists());
    assert!(runs.join("sata/metrics.json").exists());
    assert!(!sata(&["ablate", "--config", &cfg, "--variants", "sata,bogus"], &[]).status.success());
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(&p, r#"{"format_version": 3}"#).unwrap();
    let o = sata(&["gen-data", "--config", p.to_str().unwrap(), "--out", "unused"], &[]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("format_version"));
}
