use super::kernels::{self, ConvGeom};
use super::{broadcast_index_map, broadcast_shape, invalid, mismatch, numel, strides, Float, ParamId, ParamStore, Result, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a custom op: `(parent values, output value, output grad) -> parent grads`.
pub type BackwardFn<T> = Box<dyn Fn(&[&Tensor<T>], &Tensor<T>, &Tensor<T>) -> Vec<Tensor<T>>>;

pub(crate) enum Op<T> {
    Leaf,
    Constant,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, trans_b: bool },
    Conv2d { x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize },
    Relu(Var),
    Gelu(Var),
    Exp(Var),
    Abs(Var),
    Sin(Var),
    Cos(Var),
    LayerNorm { x: Var, rstd: Vec<T> },
    Softmax(Var),
    SumAll(Var),
    MeanAll(Var),
    SumAxis { x: Var, axis: usize },
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    Concat { xs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    GlobalAvgPool(Var),
    Embedding { w: Var, idx: Vec<usize> },
    Custom { name: String, parents: Vec<Var>, backward: BackwardFn<T> },
}

impl<T> Op<T> {
    pub(crate) fn name(&self) -> &str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::MatMul(..) => "matmul",
            Op::BatchMatMul { .. } => "bmm",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu(_) => "relu",
            Op::Gelu(_) => "gelu",
            Op::Exp(_) => "exp",
            Op::Abs(_) => "abs",
            Op::Sin(_) => "sin",
            Op::Cos(_) => "cos",
            Op::LayerNorm { .. } => "layernorm",
            Op::Softmax(_) => "softmax",
            Op::SumAll(_) => "sum",
            Op::MeanAll(_) => "mean",
            Op::SumAxis { .. } => "sum_axis",
            Op::Reshape(_) => "reshape",
            Op::Permute { .. } => "permute",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::Embedding { .. } => "embedding",
            Op::Custom { name, .. } => name,
        }
    }

    pub(crate) fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Constant | Op::Param(_) => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::BatchMatMul { a, b, .. } => vec![*a, *b],
            Op::Conv2d { x, w, bias, .. } => {
                let mut v = vec![*x, *w];
                v.extend(bias);
                v
            }
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Relu(a)
            | Op::Gelu(a)
            | Op::Exp(a)
            | Op::Abs(a)
            | Op::Sin(a)
            | Op::Cos(a)
            | Op::Softmax(a)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::Reshape(a)
            | Op::GlobalAvgPool(a) => vec![*a],
            Op::LayerNorm { x, .. } | Op::SumAxis { x, .. } | Op::Permute { x, .. } | Op::Slice { x, .. } => vec![*x],
            Op::Concat { xs, .. } => xs.clone(),
            Op::Embedding { w, .. } => vec![*w],
            Op::Custom { parents, .. } => parents.clone(),
        }
    }
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub needs_grad: bool,
}

/// Recording tape. Nodes are appended in evaluation order, so the node list is
/// already a topological order of the computation.
pub struct Graph<'s, T: Float> {
    pub(crate) nodes: Vec<Node<T>>,
    store: Option<&'s ParamStore<T>>,
    bound: Vec<Option<Var>>,
}

impl<T: Float> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'s, T: Float> Graph<'s, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            store: None,
            bound: Vec::new(),
        }
    }

    /// A graph that can bind parameters from `store`.
    pub fn with_params(store: &'s ParamStore<T>) -> Self {
        Self {
            nodes: Vec::new(),
            store: Some(store),
            bound: vec![None; store.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn op_name(&self, v: Var) -> &str {
        self.nodes[v.0].op.name()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let needs_grad = match &op {
            Op::Leaf | Op::Param(_) => true,
            Op::Constant => false,
            other => other.parents().iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Constant)
    }

    /// Bind a parameter from the attached store. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let store = self.store.expect("graph has no parameter store attached");
        let v = self.push(store.value(id).clone(), Op::Param(id));
        self.bound[id.0] = Some(v);
        v
    }

    pub(crate) fn param_nodes(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param(id) => Some((id, Var(i))),
            _ => None,
        })
    }

    pub(crate) fn param_count(&self) -> usize {
        self.bound.len()
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, ())> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(op, &sa, &sb)?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let data: Vec<T> = if sa == sb {
            da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ma = broadcast_index_map(&sa, &out_shape);
            let mb = broadcast_index_map(&sb, &out_shape);
            ma.iter().zip(&mb).map(|(&i, &j)| f(da[i], db[j])).collect()
        };
        Ok((Tensor::new(&out_shape, data)?, ()))
    }

    /// Elementwise sum with broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = T::lit(c);
        let t = self.value(a).map(|x| x * c);
        self.push(t, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let c = T::lit(c);
        let t = self.value(a).map(|x| x + c);
        self.push(t, Op::AddScalar(a))
    }

    /// `a[..., k] @ b[k, n]`, leading dims of `a` are flattened.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let k = sb[0];
        let n = sb[1];
        let m = numel(&sa) / k;
        let mut out = vec![T::zero(); m * n];
        kernels::gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = n;
        let t = Tensor::new(&shape, out)?;
        Ok(self.push(t, Op::MatMul(a, b)))
    }

    /// Batched matmul over matching leading dims: `a[..., m, k] @ b[..., k, n]`,
    /// or `@ b[..., n, k]^T` when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let r = sa.len();
        if r < 3 || sb.len() != r || sa[..r - 2] != sb[..r - 2] {
            return Err(mismatch("bmm", &sa, &sb));
        }
        let (m, k) = (sa[r - 2], sa[r - 1]);
        let (kb, n) = if trans_b { (sb[r - 1], sb[r - 2]) } else { (sb[r - 2], sb[r - 1]) };
        if k != kb {
            return Err(mismatch("bmm", &sa, &sb));
        }
        let batch = numel(&sa[..r - 2]);
        let mut out = vec![T::zero(); batch * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for bi in 0..batch {
            let ab = &da[bi * m * k..(bi + 1) * m * k];
            let bb = &db[bi * k * n..(bi + 1) * k * n];
            let cb = &mut out[bi * m * n..(bi + 1) * m * n];
            if trans_b {
                kernels::gemm_nt(ab, bb, cb, m, k, n);
            } else {
                kernels::gemm_nn(ab, bb, cb, m, k, n);
            }
        }
        let mut shape = sa[..r - 2].to_vec();
        shape.extend([m, n]);
        let t = Tensor::new(&shape, out)?;
        Ok(self.push(t, Op::BatchMatMul { a, b, trans_b }))
    }

    /// 2-D convolution. `x: [N, Cin, H, W]`, `w: [Cout, Cin, kh, kw]`, `bias: [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(mismatch("conv2d", &sx, &sw));
        }
        if let Some(b) = bias {
            if self.shape(b) != [sw[0]] {
                return Err(mismatch("conv2d", &sw, self.shape(b)));
            }
        }
        let (n, cin, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let cout = sw[0];
        let geom = ConvGeom::new(cin, h, wd, sw[2], sw[3], stride, pad)
            .ok_or_else(|| invalid("conv2d", format!("kernel {sw:?} does not fit input {sx:?} (stride {stride}, pad {pad})")))?;
        let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
        let mut out = vec![T::zero(); n * cout * cols_n];
        let mut cols = vec![T::zero(); rows * cols_n];
        let xd = self.value(x).data();
        let wdat = self.value(w).data();
        let img = cin * h * wd;
        for i in 0..n {
            kernels::im2col(&xd[i * img..(i + 1) * img], &geom, &mut cols);
            let o = &mut out[i * cout * cols_n..(i + 1) * cout * cols_n];
            if let Some(b) = bias {
                let bd = self.value(b).data();
                for co in 0..cout {
                    o[co * cols_n..(co + 1) * cols_n].fill(bd[co]);
                }
            }
            kernels::gemm_nn(wdat, &cols, o, cout, rows, cols_n);
        }
        let t = Tensor::new(&[n, cout, geom.hout, geom.wout], out)?;
        Ok(self.push(t, Op::Conv2d { x, w, bias, stride, pad }))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(kernels::relu);
        self.push(t, Op::Relu(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(kernels::gelu);
        self.push(t, Op::Gelu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.exp());
        self.push(t, Op::Exp(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.abs());
        self.push(t, Op::Abs(a))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.sin());
        self.push(t, Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.cos());
        self.push(t, Op::Cos(a))
    }

    /// Normalize over the last axis to zero mean and unit variance (no affine).
    pub fn layernorm(&mut self, x: Var, eps: f64) -> Var {
        let v = self.value(x);
        let d = *v.shape().last().expect("layernorm on rank-0 tensor");
        let rows = v.numel() / d;
        let eps = T::lit(eps);
        let dn = T::from_usize(d).unwrap();
        let mut out = vec![T::zero(); v.numel()];
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &v.data()[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            for (o, &x) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (x - mean) * rs;
            }
            rstd.push(rs);
        }
        let t = Tensor::new(v.shape(), out).unwrap();
        self.push(t, Op::LayerNorm { x, rstd })
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let d = *v.shape().last().expect("softmax on rank-0 tensor");
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(d) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for e in row.iter_mut() {
                *e = (*e - mx).exp();
                s += *e;
            }
            for e in row.iter_mut() {
                *e = *e / s;
            }
        }
        let t = Tensor::new(v.shape(), out).unwrap();
        self.push(t, Op::Softmax(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().copied().sum::<T>() / T::from_usize(v.numel()).unwrap();
        self.push(Tensor::scalar(s), Op::MeanAll(x))
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(invalid("sum_axis", format!("axis {axis} out of range for {s:?}")));
        }
        let outer = numel(&s[..axis]);
        let n = s[axis];
        let inner = numel(&s[axis + 1..]);
        let d = self.value(x).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let src = &d[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        let mut shape = s.clone();
        shape.remove(axis);
        let t = Tensor::new(&shape, out)?;
        Ok(self.push(t, Op::SumAxis { x, axis }))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| invalid("mean_axis", format!("axis {axis} out of range")))?;
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// Reorder axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; s.len()];
        if perm.len() != s.len() || perm.iter().any(|&p| p >= s.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(invalid("permute", format!("bad permutation {perm:?} for {s:?}")));
        }
        let t = permute_tensor(self.value(x), perm);
        Ok(self.push(t, Op::Permute { x, perm: perm.to_vec() }))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*xs.first().ok_or_else(|| invalid("concat", "no inputs"))?).to_vec();
        if axis >= first.len() {
            return Err(invalid("concat", format!("axis {axis} out of range for {first:?}")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != first.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i]) {
                return Err(mismatch("concat", &first, s));
            }
            total += s[axis];
        }
        let outer = numel(&first[..axis]);
        let inner = numel(&first[axis + 1..]);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let n = self.shape(v)[axis];
                let d = self.value(v).data();
                out.extend_from_slice(&d[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let t = Tensor::new(&shape, out)?;
        Ok(self.push(t, Op::Concat { xs: xs.to_vec(), axis }))
    }

    /// `x[..., start..start+len, ...]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(invalid("slice", format!("range {start}..{} on axis {axis} of {s:?}", start + len)));
        }
        let outer = numel(&s[..axis]);
        let inner = numel(&s[axis + 1..]);
        let n = s[axis];
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&d[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let t = Tensor::new(&shape, out)?;
        Ok(self.push(t, Op::Slice { x, axis, start }))
    }

    /// `[N, C, H, W] -> [N, C]`
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(invalid("global_avg_pool", format!("expected NCHW, got {s:?}")));
        }
        let hw = s[2] * s[3];
        let inv = T::one() / T::from_usize(hw).unwrap();
        let out: Vec<T> = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|c| c.iter().copied().sum::<T>() * inv)
            .collect();
        let t = Tensor::new(&[s[0], s[1]], out)?;
        Ok(self.push(t, Op::GlobalAvgPool(x)))
    }

    /// Rows of `w: [V, D]` selected by `idx`, giving `[idx.len(), D]`.
    pub fn embedding(&mut self, w: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(w).to_vec();
        if s.len() != 2 {
            return Err(invalid("embedding", format!("table must be rank 2, got {s:?}")));
        }
        if idx.is_empty() {
            return Err(invalid("embedding", "empty index list"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= s[0]) {
            return Err(invalid("embedding", format!("index {bad} out of range for {} rows", s[0])));
        }
        let d = s[1];
        let wd = self.value(w).data();
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            out.extend_from_slice(&wd[i * d..(i + 1) * d]);
        }
        let t = Tensor::new(&[idx.len(), d], out)?;
        Ok(self.push(t, Op::Embedding { w, idx: idx.to_vec() }))
    }

    /// Record an op with a user-provided value and backward rule.
    pub fn custom(&mut self, name: &str, parents: &[Var], value: Tensor<T>, backward: BackwardFn<T>) -> Var {
        self.push(
            value,
            Op::Custom {
                name: name.to_string(),
                parents: parents.to_vec(),
                backward,
            },
        )
    }

    // Composite helpers.

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    /// `x @ w + b` for `w: [in, out]`, `b: [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }
}

pub(crate) fn permute_tensor<T: Float>(t: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let s = t.shape();
    let st = strides(s);
    let out_shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| st[p]).collect();
    let n = t.numel();
    let d = t.data();
    let mut out = Vec::with_capacity(n);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(d[off]);
        for k in (0..rank).rev() {
            idx[k] += 1;
            off += src_strides[k];
            if idx[k] < out_shape[k] {
                break;
            }
            off -= src_strides[k] * idx[k];
            idx[k] = 0;
        }
    }
    Tensor::new(&out_shape, out).unwrap()
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}
