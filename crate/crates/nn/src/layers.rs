//! Parameterized building blocks. Each layer registers its tensors in a
//! [`ParamStore`] under `"{name}.{tensor}"` and keeps only their ids.

use rand::Rng;

use crate::graph::{ConvOpts, Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data)
}

/// Affine map over the last axis of an input of any rank >= 1.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform(rng, &[in_dim, out_dim], bound));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let shape = g.shape(x).to_vec();
        assert_eq!(*shape.last().unwrap(), self.in_dim, "linear input width");
        let rows = shape[..shape.len() - 1].iter().product();
        let flat = if shape.len() == 2 { x } else { g.reshape(x, &[rows, self.in_dim]) };
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(flat, w);
        let y = g.add_broadcast(y, b);
        if shape.len() == 2 {
            y
        } else {
            let mut out = shape;
            *out.last_mut().unwrap() = self.out_dim;
            g.reshape(y, &out)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub opts: ConvOpts,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        opts: ConvOpts,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let bound = (6.0 / fan_in as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            uniform(rng, &[out_ch, in_ch, kernel, kernel], bound),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch])));
        Self { weight, bias, opts }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        self.forward_with(g, x, self.opts)
    }

    /// Applies the same weights with different stride/padding/dilation.
    pub fn forward_with(&self, g: &mut Graph, x: Var, opts: ConvOpts) -> Var {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.conv2d(x, w, b, opts)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[dim], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta, Self::EPS)
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        vocab: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let table = store.add(format!("{name}.table"), uniform(rng, &[vocab, dim], 0.5));
        Self { table, vocab, dim }
    }

    pub fn forward(&self, g: &mut Graph, ids: &[usize]) -> Var {
        let t = g.param(self.table);
        g.embedding(t, ids)
    }
}

/// Single-layer LSTM over a `[T, in]` sequence. Gate order is input,
/// forget, cell, output.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_ih = store.add(format!("{name}.w_ih"), uniform(rng, &[in_dim, 4 * hidden], bound));
        let w_hh = store.add(format!("{name}.w_hh"), uniform(rng, &[hidden, 4 * hidden], bound));
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].fill(1.0);
        let bias = store.add(format!("{name}.bias"), Tensor::new(&[4 * hidden], b));
        Self {
            w_ih,
            w_hh,
            bias,
            hidden,
        }
    }

    /// Runs over `x: [T, in]` (reversed when `reverse`) and returns the
    /// final hidden state `[1, hidden]`.
    pub fn forward(&self, g: &mut Graph, x: Var, reverse: bool) -> Var {
        let steps = g.shape(x)[0];
        assert!(steps > 0, "lstm over an empty sequence");
        let h4 = 4 * self.hidden;
        let w_ih = g.param(self.w_ih);
        let w_hh = g.param(self.w_hh);
        let bias = g.param(self.bias);
        let xp = g.matmul(x, w_ih);
        let xp = g.add_broadcast(xp, bias);
        let mut h: Option<Var> = None;
        let mut c: Option<Var> = None;
        for step in 0..steps {
            let t = if reverse { steps - 1 - step } else { step };
            let mut gates = g.narrow(xp, 0, t, 1);
            if let Some(h) = h {
                let rec = g.matmul(h, w_hh);
                gates = g.add(gates, rec);
            }
            debug_assert_eq!(g.shape(gates), &[1, h4]);
            let hs = self.hidden;
            let i = g.narrow(gates, 1, 0, hs);
            let i = g.sigmoid(i);
            let f = g.narrow(gates, 1, hs, hs);
            let f = g.sigmoid(f);
            let cand = g.narrow(gates, 1, 2 * hs, hs);
            let cand = g.tanh(cand);
            let o = g.narrow(gates, 1, 3 * hs, hs);
            let o = g.sigmoid(o);
            let ic = g.mul(i, cand);
            let new_c = match c {
                Some(c) => {
                    let fc = g.mul(f, c);
                    g.add(fc, ic)
                }
                None => ic,
            };
            let tc = g.tanh(new_c);
            h = Some(g.mul(o, tc));
            c = Some(new_c);
        }
        h.unwrap()
    }
}

/// Multi-head self-attention over `[B, L, D]`.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub qkv: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        assert_eq!(dim % heads, 0, "dim must divide into heads");
        Self {
            qkv: Linear::new(store, &format!("{name}.qkv"), dim, 3 * dim, rng),
            out: Linear::new(store, &format!("{name}.out"), dim, dim, rng),
            heads,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let shape = g.shape(x).to_vec();
        let (b, l, d) = (shape[0], shape[1], shape[2]);
        let (h, dh) = (self.heads, d / self.heads);
        let qkv = self.qkv.forward(g, x);
        let split = |g: &mut Graph, k: usize| {
            let part = g.narrow(qkv, 2, k * d, d);
            let part = g.reshape(part, &[b, l, h, dh]);
            let part = g.permute(part, &[0, 2, 1, 3]);
            g.reshape(part, &[b * h, l, dh])
        };
        let q = split(g, 0);
        let k = split(g, 1);
        let v = split(g, 2);
        let scores = g.bmm(q, k, true);
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let attn = g.softmax(scores);
        let ctx = g.bmm(attn, v, false);
        let ctx = g.reshape(ctx, &[b, h, l, dh]);
        let ctx = g.permute(ctx, &[0, 2, 1, 3]);
        let ctx = g.reshape(ctx, &[b, l, d]);
        self.out.forward(g, ctx)
    }
}

/// Pre-norm transformer block.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl TransformerBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim),
            fc1: Linear::new(store, &format!("{name}.fc1"), dim, mlp_dim, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), mlp_dim, dim, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let n = self.norm1.forward(g, x);
        let a = self.attn.forward(g, n);
        let x = g.add(x, a);
        let n = self.norm2.forward(g, x);
        let m = self.fc1.forward(g, n);
        let m = g.relu(m);
        let m = self.fc2.forward(g, m);
        g.add(x, m)
    }
}

/// A stack of transformer blocks followed by a final layer norm.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    pub blocks: Vec<TransformerBlock>,
    pub norm: LayerNorm,
}

impl TransformerEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        depth: usize,
        heads: usize,
        mlp_dim: usize,
        rng: &mut R,
    ) -> Self {
        let blocks = (0..depth)
            .map(|i| TransformerBlock::new(store, &format!("{name}.block{i}"), dim, heads, mlp_dim, rng))
            .collect();
        Self {
            blocks,
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim),
        }
    }

    /// `x: [B, L, D]` to `[B, L, D]`.
    pub fn forward(&self, g: &mut Graph, mut x: Var) -> Var {
        for block in &self.blocks {
            x = block.forward(g, x);
        }
        self.norm.forward(g, x)
    }
}
