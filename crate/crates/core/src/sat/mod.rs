//! Spatially anchored tactile encoding.
//!
//! Each tactile image is paired with its sensor's 6D pose. The pose is
//! normalized, Fourier-encoded, and turned into per-channel FiLM parameters
//! that modulate a small residual convolutional encoder, producing one token
//! per sensor.

mod encoder;
mod fourier;

pub use encoder::{apply_film, FilmHead, FilmParams, ResStage, TactileEncoder};
pub use fourier::{encode_graph, encode_normalized, fourier_encode, FourierConfig};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kinematics::{fk_in_world, forward_kinematics, JointState, KinematicChain, Pose6D};
use crate::tensor::{invalid, Float, Graph, ParamStore, Result, Tensor, Var};

/// Frame in which sensor poses are expressed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMode {
    /// Anchor (wrist) link frame, via forward kinematics.
    HandFrame,
    /// World frame, via the base pose and the arm joints.
    WorldFrame,
    /// No pose: plain tactile encoding.
    None,
}

/// How the encoded pose enters the tactile encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    Film,
    Concat,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SatConfig {
    /// `[stem, stage_1, stage_2]` channel widths.
    pub channels: Vec<usize>,
    pub film_hidden: usize,
    /// Encoding of hand-frame poses.
    pub fourier: FourierConfig,
    /// Translation bounds used instead of `fourier.pos_bounds` for world-frame poses.
    pub world_pos_bounds: [[f64; 2]; 3],
}

impl Default for SatConfig {
    fn default() -> Self {
        Self {
            channels: vec![8, 16, 16],
            film_hidden: 64,
            fourier: FourierConfig {
                pos_bounds: [[0.0, 0.5], [-0.25, 0.25], [-0.1, 0.1]],
                ..FourierConfig::default()
            },
            world_pos_bounds: [[-4.0, 4.0], [-4.0, 4.0], [-0.1, 0.1]],
        }
    }
}

impl SatConfig {
    /// Fourier settings for poses expressed in `mode`'s frame.
    pub fn fourier_for(&self, mode: AnchorMode) -> FourierConfig {
        let mut f = self.fourier.clone();
        if mode == AnchorMode::WorldFrame {
            f.pos_bounds = self.world_pos_bounds;
        }
        f
    }
}

/// One sensor's contact image, `size x size` row-major values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TactileFrame {
    pub sensor: String,
    pub size: usize,
    pub image: Vec<f32>,
}

/// Sensor poses as vec6 in the frame selected by `mode`; `None` for [`AnchorMode::None`].
pub fn sensor_poses(chain: &KinematicChain, q: &JointState, base: &Pose6D, mode: AnchorMode) -> Option<Vec<[f64; 6]>> {
    let poses = match mode {
        AnchorMode::HandFrame => forward_kinematics(chain, q),
        AnchorMode::WorldFrame => fk_in_world(chain, q, base),
        AnchorMode::None => return None,
    };
    Some(poses.into_iter().map(|(_, p)| p.to_vec6()).collect())
}

/// Tactile encoder with optional pose conditioning. Parameters are named `sat.*`.
#[derive(Clone, Debug)]
pub struct SatEncoder {
    pub mode: AnchorMode,
    pub fusion: Fusion,
    pub fourier: FourierConfig,
    pub film: Option<FilmHead>,
    pub encoder: TactileEncoder,
}

impl SatEncoder {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        cfg: &SatConfig,
        mode: AnchorMode,
        fusion: Fusion,
        d_model: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fusion = if mode == AnchorMode::None { Fusion::None } else { fusion };
        let fourier = cfg.fourier_for(mode);
        let extra = if fusion == Fusion::Concat { fourier.dim() } else { 0 };
        let encoder = TactileEncoder::new(store, "sat.enc", &cfg.channels, extra, d_model, rng);
        let film = (fusion == Fusion::Film)
            .then(|| FilmHead::new(store, "sat.film", fourier.dim(), cfg.film_hidden, &cfg.channels[1..], rng));
        Self {
            mode,
            fusion,
            fourier,
            film,
            encoder,
        }
    }

    pub fn uses_pose(&self) -> bool {
        self.fusion != Fusion::None
    }

    /// Normalized `[m, 6]` pose tensor for a list of vec6 poses.
    pub fn pose_tensor<T: Float>(&self, poses: &[[f64; 6]]) -> Tensor<T> {
        let data: Vec<f64> = poses.iter().flat_map(|p| self.fourier.normalize(*p)).collect();
        Tensor::from_f64(&[poses.len(), 6], &data).expect("pose tensor shape")
    }

    /// `images: [m, 1, s, s]`, `poses`: normalized `[m, 6]` (ignored without fusion) to `[m, d_model]`.
    pub fn forward<T: Float>(&self, g: &mut Graph<'_, T>, images: Var, poses: Option<Var>) -> Result<Var> {
        let enc = match (self.fusion, poses) {
            (Fusion::None, _) => None,
            (_, Some(p)) => Some(encode_graph(g, p, &self.fourier)?),
            (_, None) => return Err(invalid("sat", "pose input required for pose fusion")),
        };
        match self.fusion {
            Fusion::Film => {
                let film = film_from_pose(g, self.film.as_ref().expect("film head"), enc.unwrap())?;
                self.encoder.forward(g, images, Some(&film), None)
            }
            Fusion::Concat => self.encoder.forward(g, images, None, enc),
            Fusion::None => self.encoder.forward(g, images, None, None),
        }
    }
}

/// FiLM parameters from a pose encoding `[n, enc_dim]`.
pub fn film_from_pose<T: Float>(g: &mut Graph<'_, T>, head: &FilmHead, enc: Var) -> Result<FilmParams> {
    head.forward(g, enc)
}

/// Encode images `[n, 1, s, s]` under the given modulation.
pub fn encode_tactile<T: Float>(g: &mut Graph<'_, T>, encoder: &TactileEncoder, images: Var, film: Option<&FilmParams>) -> Result<Var> {
    encoder.forward(g, images, film, None)
}

/// Tokens `[n_sensors, d_model]` for one timestep, in the chain's sensor order.
pub fn anchor_batch<T: Float>(
    g: &mut Graph<'_, T>,
    sat: &SatEncoder,
    frames: &[TactileFrame],
    chain: &KinematicChain,
    q: &JointState,
    base: &Pose6D,
) -> Result<Var> {
    let mut images = Vec::new();
    let mut size = None;
    for name in chain.sensor_names() {
        let f = frames
            .iter()
            .find(|f| f.sensor == name)
            .ok_or_else(|| invalid("anchor_batch", format!("no tactile frame for sensor {name}")))?;
        if f.image.len() != f.size * f.size || size.is_some_and(|s| s != f.size) {
            return Err(invalid("anchor_batch", format!("frame for {name} has inconsistent size")));
        }
        size = Some(f.size);
        images.extend(f.image.iter().map(|&v| T::lit(v as f64)));
    }
    let n = chain.sensors().len();
    let s = size.ok_or_else(|| invalid("anchor_batch", "chain has no sensors"))?;
    let images = g.constant(Tensor::new(&[n, 1, s, s], images)?);
    let poses = sensor_poses(chain, q, base, sat.mode).map(|p| {
        let t = sat.pose_tensor(&p);
        g.constant(t)
    });
    sat.forward(g, images, poses)
}
