use rand::Rng;

use crate::tensor::nn::{Conv2d, Linear};
use crate::tensor::{invalid, Float, Graph, ParamStore, Result, Var};

/// Per-stage channel-wise modulation: `gamma` and `beta` are `[n, c, 1, 1]`.
#[derive(Clone, Debug)]
pub struct FilmParams {
    pub stages: Vec<(Var, Var)>,
}

/// `gamma * f + beta`, broadcasting `[n, c, 1, 1]` over `[n, c, h, w]`.
pub fn apply_film<T: Float>(g: &mut Graph<'_, T>, f: Var, gamma: Var, beta: Var) -> Result<Var> {
    let y = g.mul(f, gamma)?;
    g.add(y, beta)
}

/// Two-layer MLP from a pose encoding to FiLM parameters, last layer zero-initialized.
#[derive(Clone, Debug)]
pub struct FilmHead {
    pub hidden: Linear,
    pub out: Linear,
    pub stage_channels: Vec<usize>,
}

impl FilmHead {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        enc_dim: usize,
        hidden: usize,
        stage_channels: &[usize],
        rng: &mut impl Rng,
    ) -> Self {
        let total: usize = stage_channels.iter().map(|c| 2 * c).sum();
        Self {
            hidden: Linear::new(store, &format!("{name}.l1"), enc_dim, hidden, rng),
            out: Linear::zeroed(store, &format!("{name}.l2"), hidden, total),
            stage_channels: stage_channels.to_vec(),
        }
    }

    /// `enc: [n, enc_dim]`; output per stage `gamma = 1 + dgamma` and `beta`.
    pub fn forward<T: Float>(&self, g: &mut Graph<'_, T>, enc: Var) -> Result<FilmParams> {
        let h = self.hidden.forward(g, enc)?;
        let h = g.gelu(h);
        let o = self.out.forward(g, h)?;
        let n = g.shape(o)[0];
        let mut stages = Vec::with_capacity(self.stage_channels.len());
        let mut off = 0;
        for &c in &self.stage_channels {
            let dg = g.slice(o, 1, off, c)?;
            let b = g.slice(o, 1, off + c, c)?;
            off += 2 * c;
            let gamma = g.add_scalar(dg, 1.0);
            let gamma = g.reshape(gamma, &[n, c, 1, 1])?;
            let beta = g.reshape(b, &[n, c, 1, 1])?;
            stages.push((gamma, beta));
        }
        Ok(FilmParams { stages })
    }
}

/// Residual stage: strided 3x3 conv, 3x3 conv, strided 1x1 skip.
#[derive(Clone, Debug)]
pub struct ResStage {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub skip: Conv2d,
}

impl ResStage {
    pub fn forward<T: Float>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(g, x)?;
        let h = g.gelu(h);
        let h = self.conv2.forward(g, h)?;
        let s = self.skip.forward(g, x)?;
        let y = g.add(h, s)?;
        Ok(g.gelu(y))
    }
}

/// Residual convolutional encoder for single-channel tactile images.
#[derive(Clone, Debug)]
pub struct TactileEncoder {
    pub stem: Conv2d,
    pub stages: Vec<ResStage>,
    pub out: Linear,
    /// Width of an optional vector concatenated to the pooled feature.
    pub extra_dim: usize,
}

impl TactileEncoder {
    /// `channels = [stem, stage_1, ..., stage_s]`.
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: &[usize],
        extra_dim: usize,
        d_model: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(!channels.is_empty(), "encoder needs a stem width");
        let stem = Conv2d::new(store, &format!("{name}.stem"), 1, channels[0], 3, 1, 1, rng);
        let stages = channels
            .windows(2)
            .enumerate()
            .map(|(i, w)| ResStage {
                conv1: Conv2d::new(store, &format!("{name}.stage{i}.conv1"), w[0], w[1], 3, 2, 1, rng),
                conv2: Conv2d::new(store, &format!("{name}.stage{i}.conv2"), w[1], w[1], 3, 1, 1, rng),
                skip: Conv2d::new(store, &format!("{name}.stage{i}.skip"), w[0], w[1], 1, 2, 0, rng),
            })
            .collect();
        let last = *channels.last().unwrap();
        Self {
            stem,
            stages,
            out: Linear::new(store, &format!("{name}.out"), last + extra_dim, d_model, rng),
            extra_dim,
        }
    }

    pub fn stage_channels<T: Float>(&self, store: &ParamStore<T>) -> Vec<usize> {
        self.stages.iter().map(|s| store.value(s.conv2.w).shape()[0]).collect()
    }

    /// `x: [n, 1, s, s]` to `[n, d_model]`.
    pub fn forward<T: Float>(&self, g: &mut Graph<'_, T>, x: Var, film: Option<&FilmParams>, extra: Option<Var>) -> Result<Var> {
        if let Some(f) = film {
            if f.stages.len() != self.stages.len() {
                return Err(invalid(
                    "encode_tactile",
                    format!("{} FiLM stages for a {}-stage encoder", f.stages.len(), self.stages.len()),
                ));
            }
        }
        let h = self.stem.forward(g, x)?;
        let mut h = g.gelu(h);
        for (i, stage) in self.stages.iter().enumerate() {
            h = stage.forward(g, h)?;
            if let Some(f) = film {
                let (gamma, beta) = f.stages[i];
                h = apply_film(g, h, gamma, beta)?;
            }
        }
        let mut pooled = g.global_avg_pool(h)?;
        match (extra, self.extra_dim) {
            (Some(e), d) if d > 0 => pooled = g.concat(&[pooled, e], 1)?,
            (None, 0) => {}
            _ => return Err(invalid("encode_tactile", "concatenated input does not match encoder width")),
        }
        self.out.forward(g, pooled)
    }
}
