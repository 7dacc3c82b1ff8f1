use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{rollout, Env, Expert, Result, Rollout, Scene, SimConfig, SimError};
use crate::kinematics::KinematicChain;
use crate::policy::Observation;
use crate::rng;
use crate::sat::TactileFrame;

pub const EPISODE_MAGIC: &[u8; 4] = b"SATE";
pub const EPISODE_VERSION: u32 = 1;
pub const DATASET_FORMAT_VERSION: u32 = 1;
/// Scenes drawn per episode before giving up.
pub const MAX_ATTEMPTS: usize = 100;

/// Per-step record sizes of an episode file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeLayout {
    pub joints: usize,
    pub camera: [usize; 2],
    pub sensors: usize,
    pub tactile: usize,
}

impl EpisodeLayout {
    pub fn new(cfg: &SimConfig, chain: &KinematicChain) -> Self {
        Self {
            joints: chain.dof(),
            camera: cfg.camera_size,
            sensors: chain.sensors().len(),
            tactile: cfg.tactile_size,
        }
    }

    pub fn floats_per_step(&self) -> usize {
        2 * self.joints + 3 + self.camera[0] * self.camera[1] + self.sensors * self.tactile * self.tactile
    }
}

/// One recorded step: the observation before acting and the executed action.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub joints: Vec<f32>,
    pub action: Vec<f32>,
    pub base_pose: [f32; 3],
    pub camera: Vec<f32>,
    /// Sensor images concatenated in chain sensor order.
    pub tactile: Vec<f32>,
}

impl StepRecord {
    pub fn new(obs: &Observation, action: &[f64]) -> Self {
        Self {
            joints: obs.joints.iter().map(|&v| v as f32).collect(),
            action: action.iter().map(|&v| v as f32).collect(),
            base_pose: obs.base_pose.map(|v| v as f32),
            camera: obs.camera.clone(),
            tactile: obs.tactile.iter().flat_map(|f| f.image.iter().copied()).collect(),
        }
    }

    pub fn observation(&self, layout: &EpisodeLayout, sensors: &[String]) -> Observation {
        let px = layout.tactile * layout.tactile;
        Observation {
            joints: self.joints.iter().map(|&v| v as f64).collect(),
            camera: self.camera.clone(),
            tactile: sensors
                .iter()
                .zip(self.tactile.chunks(px))
                .map(|(name, img)| TactileFrame {
                    sensor: name.clone(),
                    size: layout.tactile,
                    image: img.to_vec(),
                })
                .collect(),
            base_pose: self.base_pose.map(|v| v as f64),
        }
    }
}

pub fn write_episode(mut w: impl Write, layout: &EpisodeLayout, steps: &[StepRecord]) -> Result<()> {
    w.write_all(EPISODE_MAGIC)?;
    w.write_all(&EPISODE_VERSION.to_le_bytes())?;
    let n = u32::try_from(steps.len()).map_err(|_| SimError::Format("too many steps".into()))?;
    w.write_all(&n.to_le_bytes())?;
    let cam = layout.camera[0] * layout.camera[1];
    let tac = layout.sensors * layout.tactile * layout.tactile;
    for s in steps {
        if s.joints.len() != layout.joints || s.action.len() != layout.joints || s.camera.len() != cam || s.tactile.len() != tac {
            return Err(SimError::Format("step record does not match the episode layout".into()));
        }
        let fields: [&[f32]; 5] = [&s.joints, &s.action, &s.base_pose, &s.camera, &s.tactile];
        for v in fields.into_iter().flatten() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_episode(mut r: impl Read, layout: &EpisodeLayout) -> Result<Vec<StepRecord>> {
    let mut head = [0u8; 12];
    r.read_exact(&mut head)?;
    if &head[..4] != EPISODE_MAGIC {
        return Err(SimError::Format("bad episode magic".into()));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != EPISODE_VERSION {
        return Err(SimError::Format(format!("unsupported episode version {version}")));
    }
    let n = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let per = layout.floats_per_step();
    let mut buf = vec![0u8; per * 4];
    let mut steps = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        let v: Vec<f32> = buf.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        let j = layout.joints;
        let cam = layout.camera[0] * layout.camera[1];
        steps.push(StepRecord {
            joints: v[..j].to_vec(),
            action: v[j..2 * j].to_vec(),
            base_pose: [v[2 * j], v[2 * j + 1], v[2 * j + 2]],
            camera: v[2 * j + 3..2 * j + 3 + cam].to_vec(),
            tactile: v[2 * j + 3 + cam..].to_vec(),
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(SimError::Format("trailing bytes after the last step".into()));
    }
    Ok(steps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub seed: u64,
    pub base_pose: [f64; 3],
    pub object_pose: [f64; 3],
    pub success: bool,
    pub first_contact_ok: Option<bool>,
    pub steps_to_success: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub steps: usize,
    #[serde(flatten)]
    pub meta: EpisodeMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub sim: SimConfig,
    pub joints: Vec<String>,
    pub sensors: Vec<String>,
    pub layout: EpisodeLayout,
    pub episodes: Vec<ManifestEntry>,
}

/// Seed of attempt `attempt` for episode `index`.
pub fn episode_seed(seed: u64, index: usize, attempt: usize) -> u64 {
    rng::stream(seed.wrapping_add(index as u64), attempt as u64).next_u64()
}

/// Run the scripted expert on the scene drawn from `seed`.
pub fn expert_episode(cfg: &SimConfig, chain: &KinematicChain, seed: u64) -> Result<(Scene, Rollout)> {
    let mut env = Env::from_seed(cfg, chain, seed)?;
    let mut expert = Expert::new(&env.scene);
    let r = rollout::<SimError>(&mut env, true, |e, _| Ok(expert.action(e)))?;
    Ok((env.scene.clone(), r))
}

/// Write `n` successful expert episodes and a manifest into `dir`.
pub fn generate_dataset(cfg: &SimConfig, chain: &KinematicChain, dir: &Path, n: usize, seed: u64) -> Result<Manifest> {
    cfg.validate()?;
    if n == 0 {
        return Err(SimError::Config("n_episodes must be at least 1".into()));
    }
    let layout = EpisodeLayout::new(cfg, chain);
    fs::create_dir_all(dir.join("episodes"))?;
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let mut found = None;
        for attempt in 0..MAX_ATTEMPTS {
            let s = episode_seed(seed, i, attempt);
            match expert_episode(cfg, chain, s) {
                Ok((scene, r)) if r.summary.success => {
                    found = Some((scene, r));
                    break;
                }
                Ok(_) | Err(SimError::Unreachable(_)) => log::debug!("episode {i}: attempt {attempt} rejected"),
                Err(e) => return Err(e),
            }
        }
        let (scene, r) = found.ok_or(SimError::RetriesExhausted {
            episode: i,
            attempts: MAX_ATTEMPTS,
        })?;
        let file = format!("episodes/ep{i:05}.bin");
        let records: Vec<StepRecord> = r.steps.iter().map(|(o, a)| StepRecord::new(o, a)).collect();
        let mut w = BufWriter::new(fs::File::create(dir.join(&file))?);
        write_episode(&mut w, &layout, &records)?;
        w.flush()?;
        entries.push(ManifestEntry {
            file,
            steps: records.len(),
            meta: EpisodeMeta {
                seed: scene.seed,
                base_pose: scene.base_pose,
                object_pose: scene.object_pose,
                success: r.summary.success,
                first_contact_ok: r.summary.first_contact_ok,
                steps_to_success: r.summary.steps_to_success,
            },
        });
    }
    let manifest = Manifest {
        format_version: DATASET_FORMAT_VERSION,
        seed,
        sim: cfg.clone(),
        joints: chain.joint_names().iter().map(|s| s.to_string()).collect(),
        sensors: chain.sensor_names().map(String::from).collect(),
        layout,
        episodes: entries,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join("manifest.json"), text)?;
    Ok(manifest)
}

/// A dataset directory loaded into memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub episodes: Vec<Vec<StepRecord>>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Dataset> {
        let manifest: Manifest = serde_json::from_reader(BufReader::new(fs::File::open(dir.join("manifest.json"))?))?;
        if manifest.format_version != DATASET_FORMAT_VERSION {
            return Err(SimError::Format(format!("unsupported dataset format_version {}", manifest.format_version)));
        }
        let episodes = manifest
            .episodes
            .iter()
            .map(|e| {
                let steps = read_episode(BufReader::new(fs::File::open(dir.join(&e.file))?), &manifest.layout)?;
                if steps.len() != e.steps {
                    return Err(SimError::Format(format!("{}: {} steps, manifest says {}", e.file, steps.len(), e.steps)));
                }
                Ok(steps)
            })
            .collect::<Result<_>>()?;
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest,
            episodes,
        })
    }

    /// Check the dataset was recorded for this chain and simulator layout.
    pub fn check_compatible(&self, cfg: &SimConfig, chain: &KinematicChain) -> Result<()> {
        let m = &self.manifest;
        let names: Vec<&str> = chain.joint_names();
        let sensors: Vec<&str> = chain.sensor_names().collect();
        if m.joints != names || m.sensors != sensors || m.layout != EpisodeLayout::new(cfg, chain) {
            return Err(SimError::Format("dataset does not match the chain or observation layout".into()));
        }
        Ok(())
    }

    pub fn observation(&self, episode: usize, step: usize) -> Observation {
        self.episodes[episode][step].observation(&self.manifest.layout, &self.manifest.sensors)
    }
}

/// Re-run recorded actions from the scene of `meta`; returns the observation before each step.
pub fn replay(cfg: &SimConfig, chain: &KinematicChain, meta: &EpisodeMeta, steps: &[StepRecord]) -> Result<Vec<Observation>> {
    let mut env = Env::from_seed(cfg, chain, meta.seed)?;
    if let Some(first) = steps.first() {
        let q: Vec<f64> = first.joints.iter().map(|&v| v as f64).collect();
        env.set_joints(&q);
    }
    let mut out = Vec::with_capacity(steps.len());
    let mut obs = env.observe();
    for s in steps {
        let a: Vec<f64> = s.action.iter().map(|&v| v as f64).collect();
        let next = env.step(&a)?;
        out.push(std::mem::replace(&mut obs, next));
    }
    Ok(out)
}
