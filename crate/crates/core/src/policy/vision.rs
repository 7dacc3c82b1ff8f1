use rand::Rng;

use crate::tensor::nn::{Conv2d, Linear};
use crate::tensor::{Float, Graph, ParamStore, Result, Tensor, Var};

/// Two conv layers (the second strided), global pooling, and a linear projection.
///
/// Two fixed coordinate channels are appended to the image so pooled
/// features can still say where things are.
#[derive(Clone, Debug)]
pub struct VisionEncoder {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub out: Linear,
}

impl VisionEncoder {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, channels: [usize; 2], d_model: usize, rng: &mut impl Rng) -> Self {
        Self {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), 3, channels[0], 3, 1, 1, rng),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), channels[0], channels[1], 3, 2, 1, rng),
            out: Linear::new(store, &format!("{name}.out"), channels[1], d_model, rng),
        }
    }

    /// `images` holds `b` row-major `h x w` images; returns the `[b, 3, h, w]` input tensor.
    pub fn input<T: Float>(images: &[f32], b: usize, h: usize, w: usize) -> Result<Tensor<T>> {
        let coord = |i: usize, n: usize| if n > 1 { 2.0 * i as f64 / (n - 1) as f64 - 1.0 } else { 0.0 };
        let mut data = Vec::with_capacity(b * 3 * h * w);
        for img in images.chunks(h * w).take(b) {
            data.extend(img.iter().map(|&v| T::lit(v as f64)));
            data.extend((0..h * w).map(|p| T::lit(coord(p % w, w))));
            data.extend((0..h * w).map(|p| T::lit(coord(p / w, h))));
        }
        Tensor::new(&[b, 3, h, w], data)
    }

    /// `[b, 3, h, w]` to `[b, d_model]`.
    pub fn forward<T: Float>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(g, x)?;
        let h = g.gelu(h);
        let h = self.conv2.forward(g, h)?;
        let h = g.gelu(h);
        let p = g.global_avg_pool(h)?;
        self.out.forward(g, p)
    }
}
