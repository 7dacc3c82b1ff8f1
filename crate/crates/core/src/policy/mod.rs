//! Action-chunking conditional-VAE policy.
//!
//! Observations become a small set of tokens (latent, proprioception, camera,
//! one per tactile sensor). A transformer encoder fuses them and a decoder with
//! `K` learned queries cross-attends to produce a chunk of joint targets. During
//! training a second transformer encodes the expert chunk into a latent `z`.

mod ensemble;
mod transformer;
mod vision;

pub use ensemble::TemporalEnsembler;
pub use transformer::{Attention, DecoderLayer, EncoderLayer, FeedForward};
pub use vision::VisionEncoder;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kinematics::{KinematicChain, Pose6D};
use crate::sat::{sensor_poses, AnchorMode, Fusion, SatConfig, SatEncoder, TactileFrame};
use crate::tensor::nn::{init_tensor, Init, LayerNorm, Linear};
use crate::tensor::{invalid, Float, Graph, ParamId, ParamStore, Result, Tensor, Var};

/// Where sensor poses enter the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseRouting {
    /// FiLM modulation of the tactile encoder.
    Film,
    /// Pose encoding concatenated to the pooled tactile feature.
    Concat,
    /// Raw normalized poses appended to the proprioceptive input; no FiLM.
    ProprioConcat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    /// Layers of the training-time latent encoder.
    pub n_cvae_layers: usize,
    pub ff_dim: usize,
    /// Chunk length `K`.
    pub chunk: usize,
    pub z_dim: usize,
    pub beta_kl: f64,
    pub anchor: AnchorMode,
    pub pose_routing: PoseRouting,
    pub use_tactile: bool,
    pub use_vision: bool,
    pub vision_channels: [usize; 2],
    pub sat: SatConfig,
    /// Predicted actions are `q + action_scale * output`.
    pub action_scale: f64,
    pub temporal_ensemble: bool,
    pub ensemble_m: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_heads: 4,
            n_enc_layers: 3,
            n_dec_layers: 3,
            n_cvae_layers: 2,
            ff_dim: 512,
            chunk: 20,
            z_dim: 32,
            beta_kl: 10.0,
            anchor: AnchorMode::HandFrame,
            pose_routing: PoseRouting::Film,
            use_tactile: true,
            use_vision: true,
            vision_channels: [8, 16],
            sat: SatConfig::default(),
            action_scale: 0.1,
            temporal_ensemble: true,
            ensemble_m: 0.1,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(format!("d_model {} must be a positive multiple of n_heads {}", self.d_model, self.n_heads));
        }
        if self.chunk == 0 || self.z_dim == 0 || self.ff_dim == 0 {
            return Err("chunk, z_dim and ff_dim must be positive".into());
        }
        if self.n_dec_layers == 0 {
            return Err("at least one decoder layer is required".into());
        }
        if !(self.beta_kl >= 0.0) || !(self.action_scale > 0.0) || !(self.ensemble_m >= 0.0) {
            return Err("beta_kl, action_scale and ensemble_m must be non-negative (action_scale positive)".into());
        }
        if self.use_tactile {
            if self.sat.channels.len() < 2 {
                return Err("sat.channels needs a stem and at least one stage".into());
            }
            self.sat.fourier.validate()?;
            if self.pose_routing == PoseRouting::ProprioConcat && self.anchor == AnchorMode::None {
                return Err("proprio_concat routing needs an anchor frame".into());
            }
        }
        Ok(())
    }

    /// Fusion used inside the tactile encoder.
    pub fn fusion(&self) -> Fusion {
        match (self.anchor, self.pose_routing) {
            (AnchorMode::None, _) | (_, PoseRouting::ProprioConcat) => Fusion::None,
            (_, PoseRouting::Film) => Fusion::Film,
            (_, PoseRouting::Concat) => Fusion::Concat,
        }
    }
}

/// Sizes of the observation streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsDims {
    pub joints: usize,
    pub camera: [usize; 2],
    pub tactile: usize,
    pub sensors: usize,
}

/// One timestep as seen by the policy. `base_pose` only matters for world-frame anchoring.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub joints: Vec<f64>,
    /// Row-major `camera[0] x camera[1]` intensities in `[0, 1]`.
    pub camera: Vec<f32>,
    pub tactile: Vec<TactileFrame>,
    pub base_pose: [f64; 3],
}

/// `k x j` joint targets, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionChunk {
    pub k: usize,
    pub j: usize,
    pub actions: Vec<f64>,
}

impl ActionChunk {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.actions[i * self.j..(i + 1) * self.j]
    }

    pub fn clamp(&mut self, limits: &[[f64; 2]]) {
        for row in self.actions.chunks_mut(self.j) {
            for (a, l) in row.iter_mut().zip(limits) {
                *a = a.clamp(l[0], l[1]);
            }
        }
    }
}

/// Network inputs for a batch of observations.
#[derive(Clone, Debug)]
pub struct PolicyBatch<T> {
    pub size: usize,
    /// `[b, j]`
    pub joints: Tensor<T>,
    /// `[b, j]` or `[b, j + 6n]` with proprio-routed poses.
    pub proprio: Tensor<T>,
    /// `[b, 3, h, w]`
    pub camera: Option<Tensor<T>>,
    /// `[b * n, 1, s, s]`, sensors in `sensor_ids` order within each sample.
    pub tactile: Option<Tensor<T>>,
    /// Normalized `[b * n, 6]` poses for encoder fusion.
    pub poses: Option<Tensor<T>>,
    /// Chain sensor index of each tactile slot.
    pub sensor_ids: Vec<usize>,
}

/// Latent posterior parameters, each `[b, z_dim]`.
#[derive(Clone, Copy, Debug)]
pub struct LatentCode {
    pub mu: Var,
    pub logsig: Var,
}

/// Scalar loss nodes.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub l1: Var,
    pub kl: Var,
}

const LATENT_TOKEN: usize = 0;
const PROPRIO_TOKEN: usize = 1;
const CAMERA_TOKEN: usize = 2;
const FIRST_SENSOR_TOKEN: usize = 3;

/// Training-time encoder of `(proprio, expert chunk)` into a latent.
#[derive(Clone, Debug)]
pub struct CvaeEncoder {
    pub cls: ParamId,
    pub pos: ParamId,
    pub proprio: Linear,
    pub action: Linear,
    pub layers: Vec<EncoderLayer>,
    pub ln: LayerNorm,
    pub head: Linear,
}

#[derive(Clone, Debug)]
pub struct Policy {
    pub cfg: PolicyConfig,
    pub chain: KinematicChain,
    pub dims: ObsDims,
    limits: Vec<[f64; 2]>,
    proprio: Linear,
    latent: Linear,
    token_embed: ParamId,
    vision: Option<VisionEncoder>,
    sat: Option<SatEncoder>,
    enc_layers: Vec<EncoderLayer>,
    enc_ln: LayerNorm,
    queries: ParamId,
    dec_layers: Vec<DecoderLayer>,
    dec_ln: LayerNorm,
    head: Linear,
    cvae: CvaeEncoder,
}

impl Policy {
    /// Register all parameters in `store`. Names are prefixed `policy.`, `vision.`, `sat.` and `cvae.`.
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        cfg: &PolicyConfig,
        chain: &KinematicChain,
        dims: ObsDims,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate().map_err(|e| invalid("policy", e))?;
        if dims.joints != chain.dof() || dims.sensors != chain.sensors().len() {
            return Err(invalid(
                "policy",
                format!("observation has {} joints / {} sensors, chain has {} / {}", dims.joints, dims.sensors, chain.dof(), chain.sensors().len()),
            ));
        }
        let d = cfg.d_model;
        let (j, n) = (dims.joints, dims.sensors);
        let proprio_in = j + if cfg.use_tactile && cfg.pose_routing == PoseRouting::ProprioConcat { 6 * n } else { 0 };
        let proprio = Linear::new(store, "policy.proprio", proprio_in, d, rng);
        let latent = Linear::new(store, "policy.latent", cfg.z_dim, d, rng);
        let token_embed = store.add("policy.token_embed", init_tensor(&[FIRST_SENSOR_TOKEN + n, d], Init::Uniform(0.1), rng));
        let vision = cfg.use_vision.then(|| VisionEncoder::new(store, "vision", cfg.vision_channels, d, rng));
        let sat = cfg.use_tactile.then(|| {
            let mode = if cfg.fusion() == Fusion::None { AnchorMode::None } else { cfg.anchor };
            SatEncoder::new(store, &cfg.sat, mode, cfg.fusion(), d, rng)
        });
        let enc_layers = (0..cfg.n_enc_layers)
            .map(|i| EncoderLayer::new(store, &format!("policy.enc{i}"), d, cfg.n_heads, cfg.ff_dim, rng))
            .collect();
        let enc_ln = LayerNorm::new(store, "policy.enc_ln", d);
        let queries = store.add("policy.queries", init_tensor(&[cfg.chunk, d], Init::Uniform(0.1), rng));
        let dec_layers = (0..cfg.n_dec_layers)
            .map(|i| DecoderLayer::new(store, &format!("policy.dec{i}"), d, cfg.n_heads, cfg.ff_dim, rng))
            .collect();
        let dec_ln = LayerNorm::new(store, "policy.dec_ln", d);
        let head = Linear::new(store, "policy.head", d, j, rng);
        let cvae = CvaeEncoder {
            cls: store.add("cvae.cls", init_tensor(&[1, d], Init::Uniform(0.1), rng)),
            pos: store.add("cvae.pos", init_tensor(&[cfg.chunk + 2, d], Init::Uniform(0.1), rng)),
            proprio: Linear::new(store, "cvae.proprio", j, d, rng),
            action: Linear::new(store, "cvae.action", j, d, rng),
            layers: (0..cfg.n_cvae_layers)
                .map(|i| EncoderLayer::new(store, &format!("cvae.enc{i}"), d, cfg.n_heads, cfg.ff_dim, rng))
                .collect(),
            ln: LayerNorm::new(store, "cvae.ln", d),
            head: Linear::zeroed(store, "cvae.head", d, 2 * cfg.z_dim),
        };
        Ok(Self {
            cfg: cfg.clone(),
            chain: chain.clone(),
            dims,
            limits: chain.limits(),
            proprio,
            latent,
            token_embed,
            vision,
            sat,
            enc_layers,
            enc_ln,
            queries,
            dec_layers,
            dec_ln,
            head,
            cvae,
        })
    }

    pub fn limits(&self) -> &[[f64; 2]] {
        &self.limits
    }

    /// Assemble network inputs. All observations must list their tactile frames in the same order.
    pub fn batch<T: Float>(&self, obs: &[&Observation]) -> Result<PolicyBatch<T>> {
        let b = obs.len();
        if b == 0 {
            return Err(invalid("policy", "empty observation batch"));
        }
        let ObsDims { joints: j, camera: [h, w], tactile: s, sensors: n } = self.dims;
        let cfg = &self.cfg;
        let proprio_poses = cfg.use_tactile && cfg.pose_routing == PoseRouting::ProprioConcat;
        let fourier = cfg.sat.fourier_for(cfg.anchor);
        let sensor_ids: Vec<usize> = if cfg.use_tactile {
            obs[0].tactile.iter().map(|f| self.sensor_index(&f.sensor)).collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        if cfg.use_tactile && sensor_ids.len() != n {
            return Err(invalid("policy", format!("expected {n} tactile frames, got {}", sensor_ids.len())));
        }
        let fuse = self.sat.as_ref().is_some_and(|e| e.uses_pose());

        let mut joints = Vec::with_capacity(b * j);
        let mut proprio = Vec::new();
        let mut camera = Vec::new();
        let mut tactile = Vec::new();
        let mut poses = Vec::new();
        for o in obs {
            if o.joints.len() != j {
                return Err(invalid("policy", format!("expected {j} joints, got {}", o.joints.len())));
            }
            joints.extend_from_slice(&o.joints);
            proprio.extend_from_slice(&o.joints);
            if cfg.use_vision {
                if o.camera.len() != h * w {
                    return Err(invalid("policy", format!("camera image has {} pixels, expected {}", o.camera.len(), h * w)));
                }
                camera.extend_from_slice(&o.camera);
            }
            if !cfg.use_tactile {
                continue;
            }
            if o.tactile.len() != n {
                return Err(invalid("policy", format!("expected {n} tactile frames, got {}", o.tactile.len())));
            }
            for (f, &id) in o.tactile.iter().zip(&sensor_ids) {
                if self.chain.sensors()[id].name != f.sensor {
                    return Err(invalid("policy", "tactile frames listed in different orders within a batch"));
                }
                if f.size != s || f.image.len() != s * s {
                    return Err(invalid("policy", format!("tactile frame {} is not {s}x{s}", f.sensor)));
                }
                tactile.extend(f.image.iter().map(|&v| T::lit(v as f64)));
            }
            if fuse || proprio_poses {
                let q = self.chain.state_from_slice(&o.joints);
                let base = Pose6D::planar(o.base_pose[0], o.base_pose[1], o.base_pose[2]);
                let all = sensor_poses(&self.chain, &q, &base, cfg.anchor).expect("anchored mode");
                if fuse {
                    for &id in &sensor_ids {
                        poses.extend(fourier.normalize(all[id]));
                    }
                }
                if proprio_poses {
                    for p in &all {
                        proprio.extend(fourier.normalize(*p));
                    }
                }
            }
        }
        let pw = proprio.len() / b;
        Ok(PolicyBatch {
            size: b,
            joints: Tensor::from_f64(&[b, j], &joints)?,
            proprio: Tensor::from_f64(&[b, pw], &proprio)?,
            camera: if cfg.use_vision { Some(VisionEncoder::input(&camera, b, h, w)?) } else { None },
            tactile: if cfg.use_tactile { Some(Tensor::new(&[b * n, 1, s, s], tactile)?) } else { None },
            poses: if fuse { Some(Tensor::from_f64(&[b * n, 6], &poses)?) } else { None },
            sensor_ids,
        })
    }

    fn sensor_index(&self, name: &str) -> Result<usize> {
        self.chain
            .sensor_names()
            .position(|s| s == name)
            .ok_or_else(|| invalid("policy", format!("unknown sensor {name}")))
    }

    /// Observation tokens after the encoder, `[b, t, d]`.
    pub fn encode<T: Float>(&self, g: &mut Graph<'_, T>, batch: &PolicyBatch<T>, z: Var) -> Result<Var> {
        let b = batch.size;
        let d = self.cfg.d_model;
        let mut tokens = Vec::new();
        let mut ids = Vec::new();

        let lat = self.latent.forward(g, z)?;
        tokens.push(g.reshape(lat, &[b, 1, d])?);
        ids.push(LATENT_TOKEN);

        let p = g.constant(batch.proprio.clone());
        let p = self.proprio.forward(g, p)?;
        tokens.push(g.reshape(p, &[b, 1, d])?);
        ids.push(PROPRIO_TOKEN);

        match (&self.vision, &batch.camera) {
            (Some(v), Some(cam)) => {
                let x = g.constant(cam.clone());
                let c = v.forward(g, x)?;
                tokens.push(g.reshape(c, &[b, 1, d])?);
                ids.push(CAMERA_TOKEN);
            }
            (None, None) => {}
            _ => return Err(invalid("policy", "camera input does not match use_vision")),
        }

        match (&self.sat, &batch.tactile) {
            (Some(sat), Some(img)) => {
                let n = batch.sensor_ids.len();
                let x = g.constant(img.clone());
                let poses = batch.poses.as_ref().map(|p| g.constant(p.clone()));
                let t = sat.forward(g, x, poses)?;
                tokens.push(g.reshape(t, &[b, n, d])?);
                ids.extend(batch.sensor_ids.iter().map(|i| FIRST_SENSOR_TOKEN + i));
            }
            (None, None) => {}
            _ => return Err(invalid("policy", "tactile input does not match use_tactile")),
        }

        let x = g.concat(&tokens, 1)?;
        let table = g.param(self.token_embed);
        let emb = g.embedding(table, &ids)?;
        let mut x = g.add(x, emb)?;
        for layer in &self.enc_layers {
            x = layer.forward(g, x)?;
        }
        self.enc_ln.forward(g, x)
    }

    /// Predicted joint targets `[b, K, J]` (unclamped) for latent `z: [b, z_dim]`.
    pub fn forward<T: Float>(&self, g: &mut Graph<'_, T>, batch: &PolicyBatch<T>, z: Var) -> Result<Var> {
        let (b, k, d, j) = (batch.size, self.cfg.chunk, self.cfg.d_model, self.dims.joints);
        if g.shape(z) != [b, self.cfg.z_dim] {
            return Err(invalid("policy", format!("latent shape {:?}, expected [{b}, {}]", g.shape(z), self.cfg.z_dim)));
        }
        let mem = self.encode(g, batch, z)?;
        let zeros = g.constant(Tensor::zeros(&[b, k, d]));
        let q = g.param(self.queries);
        let mut x = g.add(zeros, q)?;
        for layer in &self.dec_layers {
            x = layer.forward(g, x, mem)?;
        }
        let x = self.dec_ln.forward(g, x)?;
        let out = self.head.forward(g, x)?;
        let out = g.scale(out, self.cfg.action_scale);
        let q0 = g.constant(batch.joints.clone().reshape(&[b, 1, j])?);
        g.add(out, q0)
    }

    /// Posterior over `z` from the proprio input and the expert chunk `targets: [b, K, J]`.
    pub fn encode_state<T: Float>(&self, g: &mut Graph<'_, T>, batch: &PolicyBatch<T>, targets: Var) -> Result<LatentCode> {
        let (b, k, d, j) = (batch.size, self.cfg.chunk, self.cfg.d_model, self.dims.joints);
        if g.shape(targets) != [b, k, j] {
            return Err(invalid("policy", format!("target chunk shape {:?}, expected [{b}, {k}, {j}]", g.shape(targets))));
        }
        let c = &self.cvae;
        let q0 = g.constant(batch.joints.clone().reshape(&[b, 1, j])?);
        let rel = g.sub(targets, q0)?;
        let rel = g.scale(rel, 1.0 / self.cfg.action_scale);
        let acts = c.action.forward(g, rel)?;
        let jv = g.constant(batch.joints.clone());
        let p = c.proprio.forward(g, jv)?;
        let p = g.reshape(p, &[b, 1, d])?;
        let zeros = g.constant(Tensor::zeros(&[b, 1, d]));
        let cls = g.param(c.cls);
        let cls = g.add(zeros, cls)?;
        let x = g.concat(&[cls, p, acts], 1)?;
        let pos = g.param(c.pos);
        let mut x = g.add(x, pos)?;
        for layer in &c.layers {
            x = layer.forward(g, x)?;
        }
        let x = c.ln.forward(g, x)?;
        let x = g.slice(x, 1, 0, 1)?;
        let x = g.reshape(x, &[b, d])?;
        let h = c.head.forward(g, x)?;
        let z = self.cfg.z_dim;
        Ok(LatentCode {
            mu: g.slice(h, 1, 0, z)?,
            logsig: g.slice(h, 1, z, z)?,
        })
    }

    /// `mean|a_hat - a|` over unmasked entries plus `beta_kl * KL`, with `z = mu + sigma * eps`.
    pub fn loss<T: Float>(
        &self,
        g: &mut Graph<'_, T>,
        batch: &PolicyBatch<T>,
        targets: &Tensor<T>,
        mask: &Tensor<T>,
        eps: &Tensor<T>,
    ) -> Result<LossTerms> {
        let t = g.constant(targets.clone());
        let lat = self.encode_state(g, batch, t)?;
        let e = g.constant(eps.clone());
        let z = reparameterize(g, lat.mu, lat.logsig, e)?;
        let pred = self.forward(g, batch, z)?;
        let m = g.constant(mask.clone());
        let l1 = masked_l1(g, pred, t, m)?;
        let kl = kl_divergence(g, lat.mu, lat.logsig)?;
        let wkl = g.scale(kl, self.cfg.beta_kl);
        let total = g.add(l1, wkl)?;
        Ok(LossTerms { total, l1, kl })
    }

    /// Inference chunk with `z = 0`, clamped to joint limits.
    pub fn predict<T: Float>(&self, store: &ParamStore<T>, obs: &Observation) -> Result<ActionChunk> {
        let batch = self.batch::<T>(&[obs])?;
        let mut g = Graph::with_params(store);
        let z = g.constant(Tensor::zeros(&[1, self.cfg.z_dim]));
        let out = self.forward(&mut g, &batch, z)?;
        let mut chunk = ActionChunk {
            k: self.cfg.chunk,
            j: self.dims.joints,
            actions: g.value(out).to_f64_vec(),
        };
        chunk.clamp(&self.limits);
        Ok(chunk)
    }

    /// Next joint target under temporal ensembling, clamped to joint limits.
    pub fn act<T: Float>(&self, store: &ParamStore<T>, obs: &Observation, ens: &mut TemporalEnsembler) -> Result<Vec<f64>> {
        if ens.needs_query() {
            ens.push(self.predict(store, obs)?);
        }
        let mut a = ens.next_action().expect("a live chunk after querying");
        for (x, l) in a.iter_mut().zip(&self.limits) {
            *x = x.clamp(l[0], l[1]);
        }
        Ok(a)
    }

    pub fn ensembler(&self) -> TemporalEnsembler {
        TemporalEnsembler::new(self.cfg.ensemble_m, self.cfg.temporal_ensemble)
    }
}

/// `z = mu + exp(logsig) * eps`.
pub fn reparameterize<T: Float>(g: &mut Graph<'_, T>, mu: Var, logsig: Var, eps: Var) -> Result<Var> {
    let s = g.exp(logsig);
    let n = g.mul(s, eps)?;
    g.add(mu, n)
}

/// `KL(N(mu, sigma^2) || N(0, I))` summed over latent dimensions, averaged over the batch.
pub fn kl_divergence<T: Float>(g: &mut Graph<'_, T>, mu: Var, logsig: Var) -> Result<Var> {
    let b = g.shape(mu)[0] as f64;
    let m2 = g.square(mu)?;
    let ls2 = g.scale(logsig, 2.0);
    let s2 = g.exp(ls2);
    let t = g.add(m2, s2)?;
    let t = g.sub(t, ls2)?;
    let t = g.add_scalar(t, -1.0);
    let s = g.sum(t);
    Ok(g.scale(s, 0.5 / b))
}

/// Mean absolute error over entries whose `mask: [b, K]` is 1; `pred`, `target`: `[b, K, J]`.
pub fn masked_l1<T: Float>(g: &mut Graph<'_, T>, pred: Var, target: Var, mask: Var) -> Result<Var> {
    let shape = g.shape(pred).to_vec();
    let (b, k, j) = (shape[0], shape[1], shape[2]);
    let count = g.value(mask).data().iter().map(|m| m.as_f64()).sum::<f64>() * j as f64;
    if count <= 0.0 {
        return Err(invalid("masked_l1", "mask excludes every entry"));
    }
    let m = g.reshape(mask, &[b, k, 1])?;
    let diff = g.sub(pred, target)?;
    let a = g.abs(diff);
    let a = g.mul(a, m)?;
    let s = g.sum(a);
    Ok(g.scale(s, 1.0 / count))
}
