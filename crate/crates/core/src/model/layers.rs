use rand::Rng;

use super::params::{Bound, ParamId, ParamStore};
use crate::error::Result;
use crate::tensor::{Graph, Tensor, Var};

pub(crate) const LN_EPS: f64 = 1e-5;

pub(crate) struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    /// Xavier-normal weights `[fan_in, fan_out]`, zero bias.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        let w = store.normal(&format!("{name}.weight"), &[fan_in, fan_out], std, rng);
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
        Self { w, b }
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        x.matmul(p.var(self.w))?.add_row(p.var(self.b))
    }
}

pub(crate) struct LayerNorm {
    gamma: ParamId,
    beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::ones(&[d]));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[d]));
        Self { gamma, beta }
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        x.layer_norm(p.var(self.gamma), p.var(self.beta), LN_EPS)
    }
}

pub(crate) struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), d, width, rng),
            down: Linear::new(store, &format!("{name}.down"), width, d, rng),
        }
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        self.down.forward(p, self.up.forward(p, x)?.gelu())
    }
}

/// Multi-head scaled dot-product attention.
pub(crate) struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
}

impl Attention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), d, d, rng),
            k: Linear::new(store, &format!("{name}.k"), d, d, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, rng),
            out: Linear::new(store, &format!("{name}.out"), d, d, rng),
            heads,
        }
    }

    /// `queries: [B*Lq, d]`, `keys: [B*Lk, d]` -> `[B*Lq, d]`.
    pub fn forward<'g>(
        &self,
        p: &Bound<'g>,
        queries: Var<'g>,
        keys: Var<'g>,
        batch: usize,
        lq: usize,
        lk: usize,
    ) -> Result<Var<'g>> {
        let d = queries.shape()[1];
        let h = self.heads;
        let dh = d / h;
        let split = |x: Var<'g>, len: usize| -> Result<Var<'g>> {
            x.reshape(&[batch, len, h, dh])?
                .permute(&[0, 2, 1, 3])?
                .reshape(&[batch * h, len, dh])
        };
        let q = split(self.q.forward(p, queries)?, lq)?;
        let k = split(self.k.forward(p, keys)?, lk)?;
        let v = split(self.v.forward(p, keys)?, lk)?;
        let weights = q.matmul_nt(k)?.scale(1.0 / (dh as f64).sqrt()).softmax(2)?;
        let ctx = weights
            .matmul(v)?
            .reshape(&[batch, h, lq, dh])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[batch * lq, d])?;
        self.out.forward(p, ctx)
    }
}

/// Fixed sinusoidal encoding, `[len, d]`.
pub fn sinusoidal_table(len: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(len * d);
    for pos in 0..len {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10_000f64.powf(2.0 * pair / d as f64);
            data.push(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(&[len, d], data).expect("positive sizes")
}

/// The table tiled over a batch as a constant `[batch * len, d]`.
pub(crate) fn positional_constant<'g>(g: &'g Graph, batch: usize, len: usize, d: usize) -> Var<'g> {
    let table = sinusoidal_table(len, d);
    let mut data = Vec::with_capacity(batch * len * d);
    for _ in 0..batch {
        data.extend_from_slice(table.data());
    }
    g.constant(Tensor::new(&[batch * len, d], data).expect("positive sizes"))
}
