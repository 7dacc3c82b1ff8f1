use serde::{Deserialize, Serialize};

use super::{Float, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of a flat parameter slice. `t` starts at 1.
pub fn adam_step<T: Float>(param: &mut [T], grad: &[T], m: &mut [T], v: &mut [T], cfg: &AdamConfig, t: u64) {
    assert!(t >= 1, "adam step counter starts at 1");
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let one = T::one();
    let c1 = T::lit(1.0 - cfg.beta1.powi(t as i32));
    let c2 = T::lit(1.0 - cfg.beta2.powi(t as i32));
    let lr = T::lit(cfg.lr);
    let eps = T::lit(cfg.eps);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let mhat = m[i] / c1;
        let vhat = v[i] / c2;
        param[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}

/// Adam with per-parameter moment buffers, reading gradients from the store.
pub struct Adam<T> {
    pub cfg: AdamConfig,
    t: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Float> Adam<T> {
    pub fn new(store: &ParamStore<T>, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            t: 0,
            m: store.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: store.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore<T>) {
        self.t += 1;
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad.data().to_vec();
            adam_step(p.value.data_mut(), &grad, m.data_mut(), v.data_mut(), &self.cfg, self.t);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.3f64, -1.2];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        for t in 1..=5 {
            adam_step(&mut p, &[0.0, 0.0], &mut m, &mut v, &AdamConfig::default(), t);
        }
        assert_eq!(p, vec![0.3, -1.2]);
    }

    #[test]
    fn first_step_closed_form() {
        let cfg = AdamConfig { lr: 0.1, ..Default::default() };
        let mut p = vec![0.0f64];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        adam_step(&mut p, &[1.0], &mut m, &mut v, &cfg, 1);
        let want = -0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p[0] - want).abs() < 1e-15);
    }

    #[test]
    fn quadratic_matches_scalar_reference() {
        // reference loop written out independently of `adam_step`
        let cfg = AdamConfig { lr: 0.005, ..Default::default() };
        let (mut w_ref, mut m_ref, mut v_ref) = (1.0f64, 0.0f64, 0.0f64);
        let mut refs = Vec::new();
        for t in 1..=100 {
            let g = 2.0 * w_ref;
            m_ref = 0.9 * m_ref + 0.1 * g;
            v_ref = 0.999 * v_ref + 0.001 * g * g;
            let mh = m_ref / (1.0 - 0.9f64.powi(t));
            let vh = v_ref / (1.0 - 0.999f64.powi(t));
            w_ref -= 0.005 * mh / (vh.sqrt() + 1e-8);
            refs.push(w_ref);
        }
        let mut w = vec![1.0f64];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        for (t, r) in (1..=100).zip(&refs) {
            let g = [2.0 * w[0]];
            adam_step(&mut w, &g, &mut m, &mut v, &cfg, t);
            assert!((w[0] - r).abs() < 1e-14);
        }
        assert!(refs[2..].windows(2).all(|p| p[1].abs() < p[0].abs()));
        assert!(refs.last().unwrap().abs() < 0.6);
    }
}
