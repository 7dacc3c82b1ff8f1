use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::kinematics::Pose6D;
use crate::tensor::{Float, Graph, Result, Tensor, Var};

/// Multi-scale sinusoidal encoding of a 6D pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FourierConfig {
    pub bands: usize,
    pub include_raw: bool,
    /// Per-axis `[lo, hi]` translation range mapped onto `[-1, 1]`.
    pub pos_bounds: [[f64; 2]; 3],
    /// Rotation-vector components are divided by this.
    pub rot_scale: f64,
}

impl Default for FourierConfig {
    fn default() -> Self {
        Self {
            bands: 6,
            include_raw: true,
            pos_bounds: [[-1.0, 1.0]; 3],
            rot_scale: PI,
        }
    }
}

impl FourierConfig {
    pub fn dim(&self) -> usize {
        6 * 2 * self.bands + if self.include_raw { 6 } else { 0 }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (i, [lo, hi]) in self.pos_bounds.iter().enumerate() {
            if !(lo < hi) {
                return Err(format!("pos_bounds[{i}] = [{lo}, {hi}] must satisfy lo < hi"));
            }
        }
        if !(self.rot_scale > 0.0) {
            return Err(format!("rot_scale must be positive, got {}", self.rot_scale));
        }
        if self.dim() == 0 {
            return Err("encoding is empty: bands = 0 and include_raw = false".into());
        }
        Ok(())
    }

    /// Map a vec6 onto `[-1, 1]^6`, clamping translations outside the bounds.
    pub fn normalize(&self, v: [f64; 6]) -> [f64; 6] {
        let mut out = [0.0; 6];
        for i in 0..3 {
            let [lo, hi] = self.pos_bounds[i];
            let mut t = v[i];
            if t < lo || t > hi {
                log::warn!("pose component {i} = {t} outside [{lo}, {hi}], clamped");
                t = t.clamp(lo, hi);
            }
            out[i] = (2.0 * t - lo - hi) / (hi - lo);
        }
        for i in 3..6 {
            out[i] = v[i] / self.rot_scale;
        }
        out
    }

    /// Per-band angular frequencies `2^k * pi`.
    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.bands).map(|k| (1u64 << k) as f64 * PI).collect()
    }
}

/// Encoding of already-normalized components, order `component x band x (sin, cos)`.
pub fn encode_normalized(x: [f64; 6], cfg: &FourierConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.dim());
    if cfg.include_raw {
        out.extend_from_slice(&x);
    }
    let freqs = cfg.frequencies();
    for &xi in &x {
        for &f in &freqs {
            let (s, c) = (f * xi).sin_cos();
            out.push(s);
            out.push(c);
        }
    }
    out
}

pub fn fourier_encode(pose: &Pose6D, cfg: &FourierConfig) -> Vec<f64> {
    encode_normalized(cfg.normalize(pose.to_vec6()), cfg)
}

/// Differentiable encoding of a batch of normalized poses `[n, 6]` into `[n, dim]`.
pub fn encode_graph<T: Float>(g: &mut Graph<'_, T>, x: Var, cfg: &FourierConfig) -> Result<Var> {
    let n = g.shape(x)[0];
    let mut parts = Vec::with_capacity(2);
    if cfg.include_raw {
        parts.push(x);
    }
    if cfg.bands > 0 {
        let l = cfg.bands;
        let freqs = g.constant(Tensor::from_f64(&[1, 1, l], &cfg.frequencies())?);
        let col = g.reshape(x, &[n, 6, 1])?;
        let a = g.mul(col, freqs)?;
        let s = g.sin(a);
        let c = g.cos(a);
        let s = g.reshape(s, &[n, 6, l, 1])?;
        let c = g.reshape(c, &[n, 6, l, 1])?;
        let sc = g.concat(&[s, c], 3)?;
        parts.push(g.reshape(sc, &[n, 12 * l])?);
    }
    if parts.len() == 1 {
        Ok(parts[0])
    } else {
        g.concat(&parts, 1)
    }
}
