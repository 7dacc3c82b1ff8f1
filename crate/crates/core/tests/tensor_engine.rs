use proptest::prelude::*;
use rand::Rng;
use sata_core::rng::seeded;
use sata_core::tensor::gradcheck::{check_inputs, check_params, run_op_suite, DEFAULT_STEP};
use sata_core::tensor::nn::Linear;
use sata_core::tensor::{Graph, ParamStore, Tensor, TensorError};

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[3], &[0.0, 0.0, 0.0]));
    let y = g.softmax(x);
    for &v in g.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn identity_kernel_conv_returns_input() {
    let mut rng = seeded(1);
    let data: Vec<f32> = (0..2 * 3 * 5 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = Tensor::new(&[2, 3, 5, 4], data).unwrap();
    let mut w = vec![0.0f32; 3 * 3];
    for c in 0..3 {
        w[c * 3 + c] = 1.0;
    }
    let mut g = Graph::<f32>::new();
    let xv = g.constant(x.clone());
    let wv = g.constant(Tensor::new(&[3, 3, 1, 1], w).unwrap());
    let y = g.conv2d(xv, wv, None, 1, 0).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn matmul_matches_triple_loop() {
    let a = [0.5, -1.0, 2.0, 3.0, 0.25, -0.75];
    let b = [1.5, -2.0, 0.0, 4.0, -1.25, 0.5];
    // oracle: c[i][j] = sum_p a[i][p] * b[p][j]
    let mut want = [0.0; 4];
    for i in 0..2 {
        for j in 0..2 {
            for p in 0..3 {
                want[i * 2 + j] += a[i * 3 + p] * b[p * 2 + j];
            }
        }
    }
    assert_eq!(want, [-1.75, -4.0, 5.4375, -5.375]);
    let mut g = Graph::<f64>::new();
    let av = g.constant(t(&[2, 3], &a));
    let bv = g.constant(t(&[3, 2], &b));
    let c = g.matmul(av, bv).unwrap();
    assert_eq!(g.value(c).data(), &want);
}

#[test]
fn grad_of_sum_is_ones() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[2, 3, 2], &[0.1; 12]));
    let s = g.sum(x);
    let grads = g.backward(s).unwrap();
    assert!(grads.wrt(&g, x).data().iter().all(|&v| v == 1.0));
}

#[test]
fn grad_of_mean_relu() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[2], &[-1.0, 2.0]));
    let r = g.relu(x);
    let m = g.mean(r);
    let grads = g.backward(m).unwrap();
    assert_eq!(grads.wrt(&g, x).data(), &[0.0, 0.5]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[2], &[1.0, 2.0]));
    assert!(matches!(g.backward(x), Err(TensorError::NonScalarLoss(s)) if s == vec![2]));
}

#[test]
fn shape_errors_name_op_and_shapes() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        TensorError::ShapeMismatch {
            op: "matmul",
            lhs: vec![2, 3],
            rhs: vec![2, 3]
        }
    );
    assert!(err.to_string().contains("matmul"));
    let c = g.constant(Tensor::zeros(&[4]));
    assert!(matches!(g.add(a, c), Err(TensorError::ShapeMismatch { op: "add", .. })));
}

fn mlp_loss(g: &mut Graph<'_, f64>, layers: &[Linear], x: &Tensor<f64>) -> sata_core::tensor::Result<sata_core::tensor::Var> {
    let mut h = g.constant(x.clone());
    for (i, l) in layers.iter().enumerate() {
        h = l.forward(g, h)?;
        if i + 1 < layers.len() {
            h = g.gelu(h);
        }
    }
    let sq = g.square(h)?;
    Ok(g.mean(sq))
}

#[test]
fn mlp_gradients_match_finite_differences() {
    for seed in 0..10 {
        let mut rng = seeded(seed);
        let mut store = ParamStore::<f64>::new();
        let layers = vec![
            Linear::new(&mut store, "l0", 4, 8, &mut rng),
            Linear::new(&mut store, "l1", 8, 6, &mut rng),
            Linear::new(&mut store, "l2", 6, 2, &mut rng),
        ];
        for p in store.iter_mut() {
            for v in p.value.data_mut() {
                *v += rng.gen_range(-0.1..0.1);
            }
        }
        let x = Tensor::new(&[5, 4], (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let coords: Vec<_> = store
            .ids()
            .flat_map(|id| (0..store.value(id).numel()).map(move |j| (id, j)))
            .collect();
        let err = check_params(&store, &coords, DEFAULT_STEP, |g| mlp_loss(g, &layers, &x)).unwrap();
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn every_op_passes_gradcheck_on_many_seeds() {
    for r in run_op_suite(100).unwrap() {
        assert!(r.passed(1e-5), "{}: {}", r.name, r.worst_rel_err);
    }
}

#[test]
fn forward_is_bit_identical_across_runs() {
    let run = || {
        let mut rng = seeded(5);
        let mut store = ParamStore::<f32>::new();
        let l = Linear::new(&mut store, "l", 16, 16, &mut rng);
        let x = Tensor::new(&[8, 16], (0..128).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap();
        let mut g = Graph::with_params(&store);
        let xv = g.constant(x);
        let y = l.forward(&mut g, xv).unwrap();
        let y = g.gelu(y);
        let y = g.softmax(y);
        g.value(y).clone()
    };
    let a = run();
    let b = run();
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn repeated_param_use_accumulates() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("w", t(&[2], &[1.0, 2.0]));
    let err = check_params(&store, &[(id, 0), (id, 1)], DEFAULT_STEP, |g| {
        let w = g.param(id);
        let w2 = g.param(id);
        let p = g.mul(w, w2)?;
        let q = g.mul(p, w)?;
        Ok(g.sum(q))
    })
    .unwrap();
    assert!(err < 1e-8);
}

#[test]
fn fourier_style_composition_gradcheck() {
    let x = t(&[2, 3], &[0.1, -0.4, 0.7, 0.2, 0.9, -0.3]);
    let err = check_inputs(&[x], DEFAULT_STEP, |g, v| {
        let r = g.reshape(v[0], &[2, 3, 1])?;
        let f = g.constant(t(&[1, 1, 2], &[std::f64::consts::PI, 2.0 * std::f64::consts::PI]));
        let a = g.mul(r, f)?;
        let s = g.sin(a);
        let c = g.cos(a);
        let y = g.concat(&[s, c], 2)?;
        let sq = g.square(y)?;
        let w = g.scale(sq, 0.5);
        let z = g.add(w, y)?;
        Ok(g.sum(z))
    })
    .unwrap();
    assert!(err < 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..6, cols in 1usize..9, seed in 0u64..1000) {
        let mut rng = seeded(seed);
        let data: Vec<f32> = (0..rows * cols).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::new(&[rows, cols], data).unwrap());
        let y = g.softmax(x);
        for row in g.value(y).data().chunks(cols) {
            let s: f32 = row.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layernorm_rows_are_standardized(rows in 1usize..6, cols in 2usize..33, seed in 0u64..1000) {
        let mut rng = seeded(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(&[rows, cols], data).unwrap());
        let y = g.layernorm(x, 1e-12);
        for row in g.value(y).data().chunks(cols) {
            let n = cols as f64;
            let mu: f64 = row.iter().sum::<f64>() / n;
            let var: f64 = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            prop_assert!(mu.abs() < 1e-6);
            prop_assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn permute_then_inverse_is_identity(a in 1usize..4, b in 1usize..4, c in 1usize..4) {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..a * b * c).map(|i| i as f64).collect();
        let x = g.constant(Tensor::new(&[a, b, c], data).unwrap());
        let p = g.permute(x, &[2, 0, 1]).unwrap();
        let back = g.permute(p, &[1, 2, 0]).unwrap();
        prop_assert_eq!(g.value(back), g.value(x));
    }
}
