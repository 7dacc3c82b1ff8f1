//! Central finite-difference checks of analytic gradients in `f64`.
//!
//! Errors are reported as `max_i |a_i - n_i| / max(max|a|, max|n|, 1e-12)`,
//! i.e. the worst coordinate error scaled by the gradient's magnitude.

use rand::Rng;

use super::{Graph, ParamId, ParamStore, Result, Tensor, Var};

pub const DEFAULT_STEP: f64 = 1e-5;

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(1e-12f64, |m, x| m.max(x.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Check gradients of a scalar function of leaf inputs.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    check_inputs_with(&ParamStore::new(), inputs, h, f)
}

/// [`check_inputs`] for a function that also reads (fixed) parameters from `store`.
pub fn check_inputs_with<F>(store: &ParamStore<f64>, inputs: &[Tensor<f64>], h: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::with_params(store);
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let mut analytic = Vec::new();
    for &v in &vars {
        analytic.extend(grads.wrt(&g, v).into_data());
    }
    drop(g);

    let eval = |inp: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::with_params(store);
        let vars: Vec<Var> = inp.iter().map(|t| g.constant(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut work = inputs.to_vec();
    for i in 0..work.len() {
        for j in 0..work[i].numel() {
            let x0 = work[i].data()[j];
            work[i].data_mut()[j] = x0 + h;
            let fp = eval(&work)?;
            work[i].data_mut()[j] = x0 - h;
            let fm = eval(&work)?;
            work[i].data_mut()[j] = x0;
            numeric.push((fp - fm) / (2.0 * h));
        }
    }
    Ok(relative_error(&analytic, &numeric))
}

/// Check parameter gradients of a scalar model loss on selected coordinates.
pub fn check_params<F>(store: &ParamStore<f64>, coords: &[(ParamId, usize)], h: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let analytic: Vec<f64> = {
        let mut g = Graph::with_params(store);
        let loss = f(&mut g)?;
        let grads = g.backward_params(loss)?;
        coords
            .iter()
            .map(|&(id, j)| grads.get(id).map_or(0.0, |t| t.data()[j]))
            .collect()
    };
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::with_params(s);
        let loss = f(&mut g)?;
        Ok(g.value(loss).item())
    };
    let mut work = store.clone();
    let mut numeric = Vec::with_capacity(coords.len());
    for &(id, j) in coords {
        let x0 = work.value(id).data()[j];
        work.value_mut(id).data_mut()[j] = x0 + h;
        let fp = eval(&work)?;
        work.value_mut(id).data_mut()[j] = x0 - h;
        let fm = eval(&work)?;
        work.value_mut(id).data_mut()[j] = x0;
        numeric.push((fp - fm) / (2.0 * h));
    }
    Ok(relative_error(&analytic, &numeric))
}


/// Worst error of one named check over many random instances.
#[derive(Clone, Debug, PartialEq)]
pub struct OpReport {
    pub name: String,
    pub worst_rel_err: f64,
    pub cases: usize,
}

impl OpReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.worst_rel_err < tol
    }
}

fn rand_tensor(rng: &mut impl rand::Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Random values bounded away from zero, for ops with a kink at the origin.
fn rand_away_from_zero(rng: &mut impl rand::Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Contract an op output with fixed random weights to get a scalar.
fn weighted_sum(g: &mut Graph<'_, f64>, y: Var, rng_seed: u64) -> Result<Var> {
    let mut rng = crate::rng::stream(rng_seed, 99);
    let w = rand_tensor(&mut rng, g.shape(y));
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

type Case = (&'static str, fn(u64) -> Result<f64>);

macro_rules! case {
    ($name:literal, |$rng:ident, $seed:ident| $inputs:expr, |$g:ident, $v:ident| $body:expr) => {
        ($name, |$seed: u64| -> Result<f64> {
            let mut $rng = crate::rng::stream($seed, 7);
            let inputs: Vec<Tensor<f64>> = $inputs;
            check_inputs(&inputs, DEFAULT_STEP, |$g, $v| {
                let y = $body?;
                weighted_sum($g, y, $seed)
            })
        })
    };
}

fn dims(rng: &mut impl rand::Rng, n: usize, lo: usize, hi: usize) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(lo..=hi)).collect()
}

/// Every differentiable op of the engine, each on random shapes drawn from the seed.
pub fn op_cases() -> Vec<Case> {
    vec![
        case!("add", |r, s| { let d = dims(&mut r, 3, 1, 4); vec![rand_tensor(&mut r, &d), rand_tensor(&mut r, &d[2..])] }, |g, v| g.add(v[0], v[1])),
        case!("sub", |r, s| { let d = dims(&mut r, 2, 1, 5); vec![rand_tensor(&mut r, &d), rand_tensor(&mut r, &d)] }, |g, v| g.sub(v[0], v[1])),
        case!("mul", |r, s| { let d = dims(&mut r, 4, 1, 4); vec![rand_tensor(&mut r, &d), rand_tensor(&mut r, &[d[0], d[1], 1, 1])] }, |g, v| g.mul(v[0], v[1])),
        case!("scale", |r, s| { let d = dims(&mut r, 2, 1, 5); vec![rand_tensor(&mut r, &d)] }, |g, v| Ok::<_, super::TensorError>(g.scale(v[0], -1.7))),
        case!("add_scalar", |r, s| { let d = dims(&mut r, 2, 1, 5); vec![rand_tensor(&mut r, &d)] }, |g, v| Ok::<_, super::TensorError>(g.add_scalar(v[0], 0.3))),
        case!("matmul", |r, s| { let d = dims(&mut r, 4, 1, 5); vec![rand_tensor(&mut r, &[d[0], d[1], d[2]]), rand_tensor(&mut r, &[d[2], d[3]])] }, |g, v| g.matmul(v[0], v[1])),
        case!("bmm", |r, s| { let d = dims(&mut r, 4, 1, 4); vec![rand_tensor(&mut r, &[d[0], d[1], d[2]]), rand_tensor(&mut r, &[d[0], d[2], d[3]])] }, |g, v| g.bmm(v[0], v[1], false)),
        case!("bmm_t", |r, s| { let d = dims(&mut r, 4, 1, 4); vec![rand_tensor(&mut r, &[d[0], 2, d[1], d[2]]), rand_tensor(&mut r, &[d[0], 2, d[3], d[2]])] }, |g, v| g.bmm(v[0], v[1], true)),
        ("conv2d", |seed: u64| -> Result<f64> {
            let mut r = crate::rng::stream(seed, 7);
            let (n, cin, cout) = (r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=3));
            let (h, w) = (r.gen_range(3..=6), r.gen_range(3..=6));
            let k = if r.gen_bool(0.5) { 3 } else { 1 };
            let stride = r.gen_range(1..=2);
            let pad = if k == 3 { r.gen_range(0..=1) } else { 0 };
            let inputs = vec![
                rand_tensor(&mut r, &[n, cin, h, w]),
                rand_tensor(&mut r, &[cout, cin, k, k]),
                rand_tensor(&mut r, &[cout]),
            ];
            check_inputs(&inputs, DEFAULT_STEP, |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
                weighted_sum(g, y, seed)
            })
        }),
        case!("relu", |r, s| { let d = dims(&mut r, 2, 1, 6); vec![rand_away_from_zero(&mut r, &d)] }, |g, v| Ok::<_, super::TensorError>(g.relu(v[0]))),
        case!("gelu", |r, s| { let d = dims(&mut r, 2, 1, 6); vec![rand_tensor(&mut r, &d).map(|x| 3.0 * x)] }, |g, v| Ok::<_, super::TensorError>(g.gelu(v[0]))),
        case!("exp", |r, s| { let d = dims(&mut r, 2, 1, 6); vec![rand_tensor(&mut r, &d)] }, |g, v| Ok::<_, super::TensorError>(g.exp(v[0]))),
        case!("abs", |r, s| { let d = dims(&mut r, 2, 1, 6); vec![rand_away_from_zero(&mut r, &d)] }, |g, v| Ok::<_, super::TensorError>(g.abs(v[0]))),
        case!("sin", |r, s| { let d = dims(&mut r, 2, 1, 6); vec![rand_tensor(&mut r, &d).map(|x| 4.0 * x)] }, |g, v| Ok::<_, super::TensorError>(g.sin(v[0]))),
        case!("cos", |r, s| { let d = dims(&mut r, 2, 1, 6); vec![rand_tensor(&mut r, &d).map(|x| 4.0 * x)] }, |g, v| Ok::<_, super::TensorError>(g.cos(v[0]))),
        case!("layernorm", |r, s| { let d = dims(&mut r, 2, 2, 6); vec![rand_tensor(&mut r, &d)] }, |g, v| Ok::<_, super::TensorError>(g.layernorm(v[0], 1e-5))),
        case!("softmax", |r, s| { let d = dims(&mut r, 3, 1, 5); vec![rand_tensor(&mut r, &d).map(|x| 3.0 * x)] }, |g, v| Ok::<_, super::TensorError>(g.softmax(v[0]))),
        case!("sum", |r, s| { let d = dims(&mut r, 3, 1, 4); vec![rand_tensor(&mut r, &d)] }, |g, v| Ok::<_, super::TensorError>(g.sum(v[0]))),
        case!("mean", |r, s| { let d = dims(&mut r, 3, 1, 4); vec![rand_tensor(&mut r, &d)] }, |g, v| Ok::<_, super::TensorError>(g.mean(v[0]))),
        ("sum_axis", |seed: u64| -> Result<f64> {
            let mut r = crate::rng::stream(seed, 7);
            let d = dims(&mut r, 3, 1, 4);
            let axis = r.gen_range(0..3);
            check_inputs(&[rand_tensor(&mut r, &d)], DEFAULT_STEP, |g, v| {
                let y = g.sum_axis(v[0], axis)?;
                weighted_sum(g, y, seed)
            })
        }),
        case!("reshape", |r, s| { let d = dims(&mut r, 2, 1, 5); vec![rand_tensor(&mut r, &d)] }, |g, v| { let n = g.value(v[0]).numel(); g.reshape(v[0], &[n]) }),
        case!("permute", |r, s| { let d = dims(&mut r, 4, 1, 4); vec![rand_tensor(&mut r, &d)] }, |g, v| g.permute(v[0], &[2, 0, 3, 1])),
        ("concat", |seed: u64| -> Result<f64> {
            let mut r = crate::rng::stream(seed, 7);
            let d = dims(&mut r, 3, 1, 4);
            let axis = r.gen_range(0..3);
            let mut d2 = d.clone();
            d2[axis] = r.gen_range(1..=3);
            check_inputs(&[rand_tensor(&mut r, &d), rand_tensor(&mut r, &d2)], DEFAULT_STEP, |g, v| {
                let y = g.concat(&[v[0], v[1], v[0]], axis)?;
                weighted_sum(g, y, seed)
            })
        }),
        ("slice", |seed: u64| -> Result<f64> {
            let mut r = crate::rng::stream(seed, 7);
            let d = dims(&mut r, 3, 2, 5);
            let axis = r.gen_range(0..3);
            let start = r.gen_range(0..d[axis]);
            let len = r.gen_range(1..=d[axis] - start);
            check_inputs(&[rand_tensor(&mut r, &d)], DEFAULT_STEP, |g, v| {
                let y = g.slice(v[0], axis, start, len)?;
                weighted_sum(g, y, seed)
            })
        }),
        case!("global_avg_pool", |r, s| { let d = dims(&mut r, 4, 1, 4); vec![rand_tensor(&mut r, &d)] }, |g, v| g.global_avg_pool(v[0])),
        ("embedding", |seed: u64| -> Result<f64> {
            let mut r = crate::rng::stream(seed, 7);
            let (rows, d) = (r.gen_range(2..=5), r.gen_range(1..=4));
            let idx: Vec<usize> = (0..r.gen_range(1..=6)).map(|_| r.gen_range(0..rows)).collect();
            check_inputs(&[rand_tensor(&mut r, &[rows, d])], DEFAULT_STEP, |g, v| {
                let y = g.embedding(v[0], &idx)?;
                weighted_sum(g, y, seed)
            })
        }),
    ]
}

/// Run every op case on seeds `0..seeds`, reporting the worst error per op.
pub fn run_op_suite(seeds: u64) -> Result<Vec<OpReport>> {
    op_cases()
        .into_iter()
        .map(|(name, f)| {
            let mut worst = 0.0f64;
            for s in 0..seeds {
                worst = worst.max(f(s)?);
            }
            Ok(OpReport {
                name: name.to_string(),
                worst_rel_err: worst,
                cases: seeds as usize,
            })
        })
        .collect()
}
