//! Transformer building blocks recorded on the autodiff tape.
//!
//! Layers hold indices into the parameter store; `p` is the slice of bound
//! parameter nodes for the current graph.

use rand::Rng;

use super::params::ParamStore;
use crate::numerics::{Graph, Tensor, Var};

const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = store.add(
            format!("{name}.w"),
            Tensor::uniform(&[fan_in, fan_out], -limit, limit, rng),
        );
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        Self { w, b }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Var {
        let y = g.matmul(x, p[self.w]);
        g.add_row(y, p[self.b])
    }

    /// Plain evaluation of one input row, summing inputs in index order.
    pub fn eval_row(&self, store: &ParamStore, x: &[f64], out: &mut [f64]) {
        let w = store.value(self.w);
        let cols = w.cols();
        debug_assert_eq!(x.len(), w.rows());
        out.copy_from_slice(store.value(self.b).data());
        for (i, xi) in x.iter().enumerate() {
            if *xi == 0.0 {
                continue;
            }
            for (o, wv) in out.iter_mut().zip(&w.data()[i * cols..(i + 1) * cols]) {
                *o += xi * wv;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Norm {
    gain: usize,
    bias: usize,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), Tensor::full(&[dim], 1.0));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[dim]));
        Self { gain, bias }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Var {
        let n = g.layer_norm(x, NORM_EPS);
        let n = g.mul_row(n, p[self.gain]);
        g.add_row(n, p[self.bias])
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl Attention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        dim: usize,
        heads: usize,
    ) -> Self {
        Self {
            q: Linear::new(store, rng, &format!("{name}.q"), dim, dim),
            k: Linear::new(store, rng, &format!("{name}.k"), dim, dim),
            v: Linear::new(store, rng, &format!("{name}.v"), dim, dim),
            o: Linear::new(store, rng, &format!("{name}.o"), dim, dim),
            heads,
        }
    }

    /// Multi-head attention of `x` over `memory`; `causal` masks future keys.
    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var, memory: Var, causal: bool) -> Var {
        let q = self.q.forward(g, p, x);
        let k = self.k.forward(g, p, memory);
        let v = self.v.forward(g, p, memory);
        let dim = g.shape(q)[1];
        let dh = dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = g.slice_cols(q, lo, hi);
            let kh = g.slice_cols(k, lo, hi);
            let vh = g.slice_cols(v, lo, hi);
            let s = g.matmul_t(qh, kh);
            let s = g.scale(s, scale);
            let a = g.softmax(s, causal);
            outs.push(g.matmul(a, vh));
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)
        };
        self.o.forward(g, p, cat)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        dim: usize,
        hidden: usize,
    ) -> Self {
        Self {
            up: Linear::new(store, rng, &format!("{name}.up"), dim, hidden),
            down: Linear::new(store, rng, &format!("{name}.down"), hidden, dim),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Var {
        let h = self.up.forward(g, p, x);
        let h = g.gelu(h);
        self.down.forward(g, p, h)
    }
}

/// Pre-norm self-attention encoder layer.
#[derive(Debug, Clone)]
pub(crate) struct EncoderLayer {
    n1: Norm,
    attn: Attention,
    n2: Norm,
    ff: FeedForward,
}

impl EncoderLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        dim: usize,
        heads: usize,
        hidden: usize,
    ) -> Self {
        Self {
            n1: Norm::new(store, &format!("{name}.norm1"), dim),
            attn: Attention::new(store, rng, &format!("{name}.attn"), dim, heads),
            n2: Norm::new(store, &format!("{name}.norm2"), dim),
            ff: FeedForward::new(store, rng, &format!("{name}.ff"), dim, hidden),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Var {
        let n = self.n1.forward(g, p, x);
        let a = self.attn.forward(g, p, n, n, false);
        let x = g.add(x, a);
        let n = self.n2.forward(g, p, x);
        let f = self.ff.forward(g, p, n);
        g.add(x, f)
    }
}

/// Pre-norm decoder layer: causal self-attention, cross-attention, feed-forward.
#[derive(Debug, Clone)]
pub(crate) struct DecoderLayer {
    n1: Norm,
    self_attn: Attention,
    n2: Norm,
    cross: Attention,
    n3: Norm,
    ff: FeedForward,
}

impl DecoderLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        dim: usize,
        heads: usize,
        hidden: usize,
    ) -> Self {
        Self {
            n1: Norm::new(store, &format!("{name}.norm1"), dim),
            self_attn: Attention::new(store, rng, &format!("{name}.self_attn"), dim, heads),
            n2: Norm::new(store, &format!("{name}.norm2"), dim),
            cross: Attention::new(store, rng, &format!("{name}.cross_attn"), dim, heads),
            n3: Norm::new(store, &format!("{name}.norm3"), dim),
            ff: FeedForward::new(store, rng, &format!("{name}.ff"), dim, hidden),
        }
    }

    /// With no memory (an utterance that produced no units) the
    /// cross-attention block contributes nothing.
    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var, memory: Option<Var>) -> Var {
        let n = self.n1.forward(g, p, x);
        let a = self.self_attn.forward(g, p, n, n, true);
        let mut x = g.add(x, a);
        if let Some(m) = memory {
            let n = self.n2.forward(g, p, x);
            let c = self.cross.forward(g, p, n, m, false);
            x = g.add(x, c);
        }
        let n = self.n3.forward(g, p, x);
        let f = self.ff.forward(g, p, n);
        g.add(x, f)
    }
}

/// Sinusoidal position table, `len × dim`.
pub fn sinusoid(len: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 * freq;
            data[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![len, dim], data)
}
