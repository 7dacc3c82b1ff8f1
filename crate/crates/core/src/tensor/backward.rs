use super::graph::{inverse_perm, permute_tensor, Graph, Op, Var};
use super::kernels::{self, ConvGeom};
use super::{broadcast_index_map, numel, Float, ParamGrads, Result, Tensor, TensorError};

/// Gradients of a scalar loss with respect to every node that needs one.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `v` if the loss does not depend on it.
    pub fn wrt(&self, g: &Graph<'_, T>, v: Var) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(g.shape(v)))
    }
}

fn accumulate<T: Float>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Sum `g` (shaped like `out`) down to `shape` by undoing broadcasting.
fn unbroadcast<T: Float>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let map = broadcast_index_map(shape, g.shape());
    let mut out = vec![T::zero(); numel(shape)];
    for (&i, &v) in map.iter().zip(g.data()) {
        out[i] += v;
    }
    Tensor::new(shape, out).unwrap()
}

/// `g ⊙ other`, with `other` broadcast to `g`'s shape.
fn mul_broadcast<T: Float>(g: &Tensor<T>, other: &Tensor<T>) -> Tensor<T> {
    if g.shape() == other.shape() {
        let d = g.data().iter().zip(other.data()).map(|(&a, &b)| a * b).collect();
        return Tensor::new(g.shape(), d).unwrap();
    }
    let map = broadcast_index_map(other.shape(), g.shape());
    let od = other.data();
    let d = g.data().iter().zip(&map).map(|(&a, &j)| a * od[j]).collect();
    Tensor::new(g.shape(), d).unwrap()
}

fn zip_map<T: Float>(g: &Tensor<T>, x: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let d = g.data().iter().zip(x.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::new(g.shape(), d).unwrap()
}

impl<T: Float> Graph<'_, T> {
    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lv.shape()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let wants = |v: Var| self.nodes[v.0].needs_grad;
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf | Op::Constant | Op::Param(_) => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    if wants(*a) {
                        accumulate(&mut grads, *a, unbroadcast(&g, val(*a).shape()));
                    }
                    if wants(*b) {
                        accumulate(&mut grads, *b, unbroadcast(&g, val(*b).shape()));
                    }
                }
                Op::Sub(a, b) => {
                    if wants(*a) {
                        accumulate(&mut grads, *a, unbroadcast(&g, val(*a).shape()));
                    }
                    if wants(*b) {
                        accumulate(&mut grads, *b, unbroadcast(&g, val(*b).shape()).map(|x| -x));
                    }
                }
                Op::Mul(a, b) => {
                    if wants(*a) {
                        let ga = mul_broadcast(&g, val(*b));
                        accumulate(&mut grads, *a, unbroadcast(&ga, val(*a).shape()));
                    }
                    if wants(*b) {
                        let gb = mul_broadcast(&g, val(*a));
                        accumulate(&mut grads, *b, unbroadcast(&gb, val(*b).shape()));
                    }
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    accumulate(&mut grads, *a, g.map(|x| x * c));
                }
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let k = bv.shape()[0];
                    let n = bv.shape()[1];
                    let m = av.numel() / k;
                    if wants(*a) {
                        let mut ga = vec![T::zero(); m * k];
                        kernels::gemm_nt(g.data(), bv.data(), &mut ga, m, n, k);
                        accumulate(&mut grads, *a, Tensor::new(av.shape(), ga)?);
                    }
                    if wants(*b) {
                        let mut gb = vec![T::zero(); k * n];
                        kernels::gemm_tn(av.data(), g.data(), &mut gb, k, m, n);
                        accumulate(&mut grads, *b, Tensor::new(bv.shape(), gb)?);
                    }
                }
                Op::BatchMatMul { a, b, trans_b } => {
                    let (av, bv) = (val(*a), val(*b));
                    let r = av.rank();
                    let (m, k) = (av.shape()[r - 2], av.shape()[r - 1]);
                    let n = g.shape()[r - 1];
                    let batch = av.numel() / (m * k);
                    let gd = g.data();
                    if wants(*a) {
                        let mut ga = vec![T::zero(); av.numel()];
                        for bi in 0..batch {
                            let gb_ = &gd[bi * m * n..(bi + 1) * m * n];
                            let bb = &bv.data()[bi * k * n..(bi + 1) * k * n];
                            let out = &mut ga[bi * m * k..(bi + 1) * m * k];
                            if *trans_b {
                                kernels::gemm_nn(gb_, bb, out, m, n, k);
                            } else {
                                kernels::gemm_nt(gb_, bb, out, m, n, k);
                            }
                        }
                        accumulate(&mut grads, *a, Tensor::new(av.shape(), ga)?);
                    }
                    if wants(*b) {
                        let mut gbv = vec![T::zero(); bv.numel()];
                        for bi in 0..batch {
                            let gb_ = &gd[bi * m * n..(bi + 1) * m * n];
                            let ab = &av.data()[bi * m * k..(bi + 1) * m * k];
                            let out = &mut gbv[bi * k * n..(bi + 1) * k * n];
                            if *trans_b {
                                kernels::gemm_tn(gb_, ab, out, n, m, k);
                            } else {
                                kernels::gemm_tn(ab, gb_, out, k, m, n);
                            }
                        }
                        accumulate(&mut grads, *b, Tensor::new(bv.shape(), gbv)?);
                    }
                }
                Op::Conv2d { x, w, bias, stride, pad } => {
                    let (xv, wv) = (val(*x), val(*w));
                    let (sx, sw) = (xv.shape(), wv.shape());
                    let (nb, cin, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
                    let cout = sw[0];
                    let geom = ConvGeom::new(cin, h, wd, sw[2], sw[3], *stride, *pad).unwrap();
                    let (rows, ncol) = (geom.col_rows(), geom.col_cols());
                    let img = cin * h * wd;
                    let gd = g.data();
                    let mut cols = vec![T::zero(); rows * ncol];
                    let mut gw = wants(*w).then(|| vec![T::zero(); wv.numel()]);
                    let mut gx = wants(*x).then(|| vec![T::zero(); xv.numel()]);
                    for i in 0..nb {
                        let gi = &gd[i * cout * ncol..(i + 1) * cout * ncol];
                        if let Some(gw) = gw.as_mut() {
                            kernels::im2col(&xv.data()[i * img..(i + 1) * img], &geom, &mut cols);
                            kernels::gemm_nt(gi, &cols, gw, cout, ncol, rows);
                        }
                        if let Some(gx) = gx.as_mut() {
                            cols.fill(T::zero());
                            kernels::gemm_tn(wv.data(), gi, &mut cols, rows, cout, ncol);
                            kernels::col2im(&cols, &geom, &mut gx[i * img..(i + 1) * img]);
                        }
                    }
                    if let Some(gw) = gw {
                        accumulate(&mut grads, *w, Tensor::new(sw, gw)?);
                    }
                    if let Some(gx) = gx {
                        accumulate(&mut grads, *x, Tensor::new(sx, gx)?);
                    }
                    if let Some(b) = bias.filter(|b| wants(*b)) {
                        let mut gb = vec![T::zero(); cout];
                        for (j, chunk) in gd.chunks(ncol).enumerate() {
                            gb[j % cout] += chunk.iter().copied().sum::<T>();
                        }
                        accumulate(&mut grads, b, Tensor::new(&[cout], gb)?);
                    }
                }
                Op::Relu(a) => {
                    let t = zip_map(&g, val(*a), |gv, x| if x > T::zero() { gv } else { T::zero() });
                    accumulate(&mut grads, *a, t);
                }
                Op::Gelu(a) => {
                    let t = zip_map(&g, val(*a), |gv, x| gv * kernels::gelu_grad(x));
                    accumulate(&mut grads, *a, t);
                }
                Op::Exp(a) => {
                    let t = zip_map(&g, &node.value, |gv, y| gv * y);
                    accumulate(&mut grads, *a, t);
                }
                Op::Abs(a) => {
                    let t = zip_map(&g, val(*a), |gv, x| {
                        if x > T::zero() {
                            gv
                        } else if x < T::zero() {
                            -gv
                        } else {
                            T::zero()
                        }
                    });
                    accumulate(&mut grads, *a, t);
                }
                Op::Sin(a) => {
                    let t = zip_map(&g, val(*a), |gv, x| gv * x.cos());
                    accumulate(&mut grads, *a, t);
                }
                Op::Cos(a) => {
                    let t = zip_map(&g, val(*a), |gv, x| -gv * x.sin());
                    accumulate(&mut grads, *a, t);
                }
                Op::LayerNorm { x, rstd } => {
                    let y = &node.value;
                    let d = *y.shape().last().unwrap();
                    let dn = T::from_usize(d).unwrap();
                    let mut out = vec![T::zero(); y.numel()];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let gy = &g.data()[r * d..(r + 1) * d];
                        let yy = &y.data()[r * d..(r + 1) * d];
                        let mg = gy.iter().copied().sum::<T>() / dn;
                        let mgy = gy.iter().zip(yy).map(|(&a, &b)| a * b).sum::<T>() / dn;
                        for j in 0..d {
                            out[r * d + j] = rs * (gy[j] - mg - yy[j] * mgy);
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(y.shape(), out)?);
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let d = *y.shape().last().unwrap();
                    let mut out = vec![T::zero(); y.numel()];
                    for ((o, gy), yy) in out.chunks_mut(d).zip(g.data().chunks(d)).zip(y.data().chunks(d)) {
                        let dot = gy.iter().zip(yy).map(|(&a, &b)| a * b).sum::<T>();
                        for j in 0..d {
                            o[j] = yy[j] * (gy[j] - dot);
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(y.shape(), out)?);
                }
                Op::SumAll(x) => {
                    accumulate(&mut grads, *x, Tensor::full(val(*x).shape(), g.item()));
                }
                Op::MeanAll(x) => {
                    let xv = val(*x);
                    let s = g.item() / T::from_usize(xv.numel()).unwrap();
                    accumulate(&mut grads, *x, Tensor::full(xv.shape(), s));
                }
                Op::SumAxis { x, axis } => {
                    let s = val(*x).shape();
                    let outer = numel(&s[..*axis]);
                    let n = s[*axis];
                    let inner = numel(&s[axis + 1..]);
                    let mut out = Vec::with_capacity(outer * n * inner);
                    for o in 0..outer {
                        for _ in 0..n {
                            out.extend_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(s, out)?);
                }
                Op::Reshape(x) => {
                    accumulate(&mut grads, *x, g.reshape(val(*x).shape())?);
                }
                Op::Permute { x, perm } => {
                    accumulate(&mut grads, *x, permute_tensor(&g, &inverse_perm(perm)));
                }
                Op::Concat { xs, axis } => {
                    let s = g.shape();
                    let outer = numel(&s[..*axis]);
                    let inner = numel(&s[axis + 1..]);
                    let total = s[*axis];
                    let mut start = 0;
                    for &v in xs {
                        let vs = val(v).shape();
                        let n = vs[*axis];
                        if wants(v) {
                            let mut out = Vec::with_capacity(outer * n * inner);
                            for o in 0..outer {
                                let base = (o * total + start) * inner;
                                out.extend_from_slice(&g.data()[base..base + n * inner]);
                            }
                            accumulate(&mut grads, v, Tensor::new(vs, out)?);
                        }
                        start += n;
                    }
                }
                Op::Slice { x, axis, start } => {
                    let s = val(*x).shape();
                    let outer = numel(&s[..*axis]);
                    let inner = numel(&s[axis + 1..]);
                    let n = s[*axis];
                    let len = g.shape()[*axis];
                    let mut out = vec![T::zero(); numel(s)];
                    for o in 0..outer {
                        let dst = (o * n + start) * inner;
                        out[dst..dst + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                    }
                    accumulate(&mut grads, *x, Tensor::new(s, out)?);
                }
                Op::GlobalAvgPool(x) => {
                    let s = val(*x).shape();
                    let hw = s[2] * s[3];
                    let inv = T::one() / T::from_usize(hw).unwrap();
                    let mut out = Vec::with_capacity(numel(s));
                    for &gv in g.data() {
                        out.extend(std::iter::repeat(gv * inv).take(hw));
                    }
                    accumulate(&mut grads, *x, Tensor::new(s, out)?);
                }
                Op::Embedding { w, idx } => {
                    let s = val(*w).shape();
                    let d = s[1];
                    let mut out = vec![T::zero(); numel(s)];
                    for (r, &row) in idx.iter().enumerate() {
                        for j in 0..d {
                            out[row * d + j] += g.data()[r * d + j];
                        }
                    }
                    accumulate(&mut grads, *w, Tensor::new(s, out)?);
                }
                Op::Custom { parents, backward, .. } => {
                    let pv: Vec<&Tensor<T>> = parents.iter().map(|&p| val(p)).collect();
                    let pg = backward(&pv, &node.value, &g);
                    for (&p, t) in parents.iter().zip(pg) {
                        if wants(p) {
                            accumulate(&mut grads, p, t);
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Backward pass collecting gradients of every bound parameter.
    pub fn backward_params(&self, loss: Var) -> Result<ParamGrads<T>> {
        let grads = self.backward(loss)?;
        let mut out: Vec<Option<Tensor<T>>> = (0..self.param_count()).map(|_| None).collect();
        for (id, v) in self.param_nodes() {
            out[id.0] = grads.get(v).cloned();
        }
        Ok(ParamGrads(out))
    }
}
