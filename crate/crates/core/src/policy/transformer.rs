use rand::Rng;

use crate::tensor::nn::{LayerNorm, Linear};
use crate::tensor::{Float, Graph, ParamStore, Result, Var};

/// Multi-head scaled dot-product attention.
#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, d: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert_eq!(d % heads, 0, "d_model {d} not divisible by {heads} heads");
        Self {
            q: Linear::new(store, &format!("{name}.q"), d, d, rng),
            k: Linear::new(store, &format!("{name}.k"), d, d, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, rng),
            o: Linear::new(store, &format!("{name}.o"), d, d, rng),
            heads,
        }
    }

    fn split<T: Float>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (b, t, d) = (s[0], s[1], s[2]);
        let x = g.reshape(x, &[b, t, self.heads, d / self.heads])?;
        g.permute(x, &[0, 2, 1, 3])
    }

    /// `x: [b, t, d]` attends over `mem: [b, s, d]`.
    pub fn forward<T: Float>(&self, g: &mut Graph<'_, T>, x: Var, mem: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (b, t, d) = (s[0], s[1], s[2]);
        let q = self.q.forward(g, x)?;
        let k = self.k.forward(g, mem)?;
        let v = self.v.forward(g, mem)?;
        let q = self.split(g, q)?;
        let k = self.split(g, k)?;
        let v = self.split(g, v)?;
        let scores = g.bmm(q, k, true)?;
        let scores = g.scale(scores, 1.0 / ((d / self.heads) as f64).sqrt());
        let p = g.softmax(scores);
        let ctx = g.bmm(p, v, false)?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[b, t, d])?;
        self.o.forward(g, ctx)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub l1: Linear,
    pub l2: Linear,
}

impl FeedForward {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, d: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            l1: Linear::new(store, &format!("{name}.l1"), d, hidden, rng),
            l2: Linear::new(store, &format!("{name}.l2"), hidden, d, rng),
        }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.l1.forward(g, x)?;
        let h = g.gelu(h);
        self.l2.forward(g, h)
    }
}

/// Pre-norm self-attention block.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub ff: FeedForward,
}

impl EncoderLayer {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, d: usize, heads: usize, ff: usize, rng: &mut impl Rng) -> Self {
        Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d),
            attn: Attention::new(store, &format!("{name}.attn"), d, heads, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d),
            ff: FeedForward::new(store, &format!("{name}.ff"), d, ff, rng),
        }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.ln1.forward(g, x)?;
        let a = self.attn.forward(g, h, h)?;
        let x = g.add(x, a)?;
        let h = self.ln2.forward(g, x)?;
        let f = self.ff.forward(g, h)?;
        g.add(x, f)
    }
}

/// Pre-norm decoder block: self-attention, cross-attention, feed-forward.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub ln1: LayerNorm,
    pub self_attn: Attention,
    pub ln2: LayerNorm,
    pub cross: Attention,
    pub ln3: LayerNorm,
    pub ff: FeedForward,
}

impl DecoderLayer {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, d: usize, heads: usize, ff: usize, rng: &mut impl Rng) -> Self {
        Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d),
            self_attn: Attention::new(store, &format!("{name}.self"), d, heads, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d),
            cross: Attention::new(store, &format!("{name}.cross"), d, heads, rng),
            ln3: LayerNorm::new(store, &format!("{name}.ln3"), d),
            ff: FeedForward::new(store, &format!("{name}.ff"), d, ff, rng),
        }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<'_, T>, x: Var, mem: Var) -> Result<Var> {
        let h = self.ln1.forward(g, x)?;
        let a = self.self_attn.forward(g, h, h)?;
        let x = g.add(x, a)?;
        let h = self.ln2.forward(g, x)?;
        let c = self.cross.forward(g, h, mem)?;
        let x = g.add(x, c)?;
        let h = self.ln3.forward(g, x)?;
        let f = self.ff.forward(g, h)?;
        g.add(x, f)
    }
}
