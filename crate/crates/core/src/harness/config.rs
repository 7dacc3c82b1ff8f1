use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{HarnessError, Result};
use crate::policy::{PolicyConfig, PoseRouting};
use crate::sat::AnchorMode;
use crate::sim::SimConfig;

pub const CONFIG_FORMAT_VERSION: u32 = 1;
pub const SEED_ENV: &str = "SATA_SEED";

/// Named policy configurations compared in the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Sata,
    NoFilm,
    NoFourier,
    WorldFrame,
    TactileFlat,
    TactileGlobal,
    VisionOnly,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Sata,
        Variant::NoFilm,
        Variant::NoFourier,
        Variant::WorldFrame,
        Variant::TactileFlat,
        Variant::TactileGlobal,
        Variant::VisionOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Sata => "sata",
            Variant::NoFilm => "no_film",
            Variant::NoFourier => "no_fourier",
            Variant::WorldFrame => "world_frame",
            Variant::TactileFlat => "tactile_flat",
            Variant::TactileGlobal => "tactile_global",
            Variant::VisionOnly => "vision_only",
        }
    }

    /// Policy flags for this variant, starting from `base` (architecture sizes are kept).
    pub fn apply(self, base: &PolicyConfig) -> PolicyConfig {
        let mut c = base.clone();
        c.use_tactile = true;
        c.use_vision = true;
        c.anchor = AnchorMode::HandFrame;
        c.pose_routing = PoseRouting::Film;
        match self {
            Variant::Sata => {}
            Variant::NoFilm => c.pose_routing = PoseRouting::Concat,
            Variant::NoFourier => {
                c.sat.fourier.bands = 0;
                c.sat.fourier.include_raw = true;
            }
            Variant::WorldFrame => c.anchor = AnchorMode::WorldFrame,
            Variant::TactileFlat => c.anchor = AnchorMode::None,
            Variant::TactileGlobal => {
                c.anchor = AnchorMode::WorldFrame;
                c.pose_routing = PoseRouting::ProprioConcat;
            }
            Variant::VisionOnly => c.use_tactile = false,
        }
        c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s.trim())
            .ok_or_else(|| HarnessError::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seeds: Vec<u64>,
    /// Episodes generated for a fresh dataset.
    pub episodes: usize,
    pub data_seed: u64,
    /// Evaluation rollouts per training seed.
    pub eval_rollouts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            lr: 1e-4,
            seeds: vec![0, 1, 2],
            episodes: 200,
            data_seed: 0,
            eval_rollouts: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: PathBuf,
    pub runs: PathBuf,
    /// Kinematic chain file; the bundled planar hand when absent.
    pub chain: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            runs: PathBuf::from("runs"),
            chain: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format_version: u32,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default)]
    pub paths: Paths,
}

fn default_variant() -> Variant {
    Variant::Sata
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            format_version: CONFIG_FORMAT_VERSION,
            sim: SimConfig::default(),
            policy: PolicyConfig::default(),
            train: TrainConfig::default(),
            variant: Variant::Sata,
            paths: Paths::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file and apply the `SATA_SEED` override.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.apply_seed_override(std::env::var(SEED_ENV).ok().as_deref())?;
        Ok(cfg)
    }

    /// Replace `train.seeds[0]` with `value` when given.
    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            let seed: u64 = v
                .trim()
                .parse()
                .map_err(|_| HarnessError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
            match self.train.seeds.first_mut() {
                Some(s) => *s = seed,
                None => self.train.seeds.push(seed),
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(HarnessError::Config(format!("unsupported format_version {}", self.format_version)));
        }
        self.sim.validate()?;
        self.effective_policy().validate().map_err(HarnessError::Config)?;
        let t = &self.train;
        if t.epochs == 0 || t.batch_size == 0 || !(t.lr > 0.0) || t.seeds.is_empty() || t.episodes == 0 || t.eval_rollouts == 0 {
            return Err(HarnessError::Config("train: epochs, batch_size, lr, seeds, episodes and eval_rollouts must be positive/non-empty".into()));
        }
        Ok(())
    }

    /// Policy configuration after applying the variant's flags.
    pub fn effective_policy(&self) -> PolicyConfig {
        self.variant.apply(&self.policy)
    }

    pub fn with_variant(&self, v: Variant) -> Self {
        Self {
            variant: v,
            ..self.clone()
        }
    }

    /// Canonical JSON: keys sorted at every level, no whitespace.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn to_pretty_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}
