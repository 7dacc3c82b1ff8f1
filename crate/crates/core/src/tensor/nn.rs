//! Parameterized layers. Layers own [`ParamId`]s; values live in a [`ParamStore`].

use rand::Rng;

use super::{Float, Graph, ParamId, ParamStore, Result, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `U(-sqrt(6/fan_in), sqrt(6/fan_in))`
    HeUniform { fan_in: usize },
    Uniform(f64),
    Zeros,
    Ones,
}

pub fn init_tensor<T: Float>(shape: &[usize], init: Init, rng: &mut impl Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = match init {
        Init::HeUniform { fan_in } => {
            let a = (6.0 / fan_in as f64).sqrt();
            (0..n).map(|_| T::lit(rng.gen_range(-a..a))).collect()
        }
        Init::Uniform(a) => (0..n).map(|_| T::lit(rng.gen_range(-a..a))).collect(),
        Init::Zeros => vec![T::zero(); n],
        Init::Ones => vec![T::one(); n],
    };
    Tensor::new(shape, data).expect("init shape")
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let w = store.add(format!("{name}.w"), init_tensor(&[in_dim, out_dim], Init::HeUniform { fan_in: in_dim }, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[out_dim]));
        Self {
            w,
            b: Some(b),
            in_dim,
            out_dim,
        }
    }

    /// Weights and bias start at zero.
    pub fn zeroed<T: Float>(store: &mut ParamStore<T>, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let w = store.add(format!("{name}.w"), Tensor::zeros(&[in_dim, out_dim]));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[out_dim]));
        Self {
            w,
            b: Some(b),
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = self.b.map(|b| g.param(b));
        g.affine(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = cin * kernel * kernel;
        let w = store.add(
            format!("{name}.w"),
            init_tensor(&[cout, cin, kernel, kernel], Init::HeUniform { fan_in }, rng),
        );
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[cout]));
        Self { w, b, stride, pad }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

/// Layer normalization over the last axis with learned gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.g"), Tensor::ones(&[dim])),
            bias: store.add(format!("{name}.b"), Tensor::zeros(&[dim])),
            eps: 1e-5,
        }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let n = g.layernorm(x, self.eps);
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        let y = g.mul(n, gain)?;
        g.add(y, bias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn he_uniform_bounds() {
        let mut rng = seeded(3);
        let t: Tensor<f64> = init_tensor(&[64, 32], Init::HeUniform { fan_in: 64 }, &mut rng);
        let a = (6.0f64 / 64.0).sqrt();
        assert!(t.data().iter().all(|x| x.abs() <= a));
        assert!(t.data().iter().any(|x| x.abs() > a * 0.9));
    }

    #[test]
    fn linear_zero_bias_at_init() {
        let mut store = ParamStore::<f32>::new();
        let lin = Linear::new(&mut store, "l", 3, 2, &mut seeded(0));
        assert!(store.value(lin.b.unwrap()).data().iter().all(|&x| x == 0.0));
        assert_eq!(store.get(lin.w).name, "l.w");
    }
}
