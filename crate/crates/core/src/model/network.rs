use rand::Rng;

use super::config::ModelConfig;
use super::layers::{positional_constant, Attention, FeedForward, LayerNorm, Linear};
use super::params::{Bound, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

struct EncoderLayer {
    norm_attn: LayerNorm,
    attn: Attention,
    norm_ff: LayerNorm,
    ff: FeedForward,
}

pub(crate) struct MotionEncoder {
    input: Linear,
    prefix: ParamId,
    layers: Vec<EncoderLayer>,
    norm: LayerNorm,
    d: usize,
}

impl MotionEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.d_model;
        let input = Linear::new(store, "encoder.input", cfg.pose_dim, d, rng);
        let prefix = store.normal("encoder.prefix", &[d], 1.0, rng);
        let layers = (0..cfg.layers)
            .map(|i| {
                let name = format!("encoder.layer{i}");
                EncoderLayer {
                    norm_attn: LayerNorm::new(store, &format!("{name}.norm_attn"), d),
                    attn: Attention::new(store, &format!("{name}.attn"), d, cfg.heads, rng),
                    norm_ff: LayerNorm::new(store, &format!("{name}.norm_ff"), d),
                    ff: FeedForward::new(store, &format!("{name}.ff"), d, cfg.ff_width, rng),
                }
            })
            .collect();
        let norm = LayerNorm::new(store, "encoder.norm", d);
        Self {
            input,
            prefix,
            layers,
            norm,
            d,
        }
    }

    /// `poses: [B, T, 144]` -> `[B, d]`, the prefix position's output.
    pub fn forward<'g>(&self, p: &Bound<'g>, poses: Var<'g>) -> Result<Var<'g>> {
        let g = poses.graph();
        let s = poses.shape();
        let (b, t, f) = (s[0], s[1], s[2]);
        let d = self.d;
        let frames = self
            .input
            .forward(p, poses.reshape(&[b * t, f])?)?
            .reshape(&[b, t, d])?;
        let token = p.var(self.prefix).reshape(&[1, 1, d])?;
        let tokens = g.concat(&vec![token; b], 0)?;
        let len = t + 1;
        let mut x = g
            .concat(&[tokens, frames], 1)?
            .reshape(&[b * len, d])?
            .add(positional_constant(g, b, len, d))?;
        for layer in &self.layers {
            let h = layer.norm_attn.forward(p, x)?;
            x = x.add(layer.attn.forward(p, h, h, b, len, len)?)?;
            let h = layer.norm_ff.forward(p, x)?;
            x = x.add(layer.ff.forward(p, h)?)?;
        }
        self.norm
            .forward(p, x)?
            .reshape(&[b, len, d])?
            .slice(1, 0, 1)?
            .reshape(&[b, d])
    }
}

struct DecoderLayer {
    norm_self: LayerNorm,
    self_attn: Attention,
    norm_cross: LayerNorm,
    cross_attn: Attention,
    norm_ff: LayerNorm,
    ff: FeedForward,
}

pub(crate) struct MotionDecoder {
    layers: Vec<DecoderLayer>,
    norm: LayerNorm,
    output: Linear,
    d: usize,
    pose_dim: usize,
}

/// Guard added to ‖z‖² before the latent is rescaled to norm √d.
pub(crate) const LATENT_NORM_EPS: f64 = 1e-12;

impl MotionDecoder {
    pub fn new<R: Rng>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.d_model;
        let layers = (0..cfg.layers)
            .map(|i| {
                let name = format!("decoder.layer{i}");
                DecoderLayer {
                    norm_self: LayerNorm::new(store, &format!("{name}.norm_self"), d),
                    self_attn: Attention::new(
                        store,
                        &format!("{name}.self_attn"),
                        d,
                        cfg.heads,
                        rng,
                    ),
                    norm_cross: LayerNorm::new(store, &format!("{name}.norm_cross"), d),
                    cross_attn: Attention::new(
                        store,
                        &format!("{name}.cross_attn"),
                        d,
                        cfg.heads,
                        rng,
                    ),
                    norm_ff: LayerNorm::new(store, &format!("{name}.norm_ff"), d),
                    ff: FeedForward::new(store, &format!("{name}.ff"), d, cfg.ff_width, rng),
                }
            })
            .collect();
        let norm = LayerNorm::new(store, "decoder.norm", d);
        let output = Linear::new(store, "decoder.output", d, cfg.pose_dim, rng);
        Self {
            layers,
            norm,
            output,
            d,
            pose_dim: cfg.pose_dim,
        }
    }

    /// `z: [B, d]` -> `[B, T, 144]`. Queries are the positional encodings;
    /// the only key/value is `z` rescaled to norm √d.
    pub fn forward<'g>(&self, p: &Bound<'g>, z: Var<'g>, frames: usize) -> Result<Var<'g>> {
        let g = z.graph();
        let s = z.shape();
        if s.len() != 2 || s[1] != self.d {
            return Err(Error::dim("decode", &s, &[s[0], self.d]));
        }
        let (b, d) = (s[0], self.d);
        let inv = z
            .square()
            .sum_axis(1)?
            .add_scalar(LATENT_NORM_EPS)
            .sqrt()
            .recip()
            .scale((d as f64).sqrt());
        let memory = z.mul_col(inv)?;
        let mut x = positional_constant(g, b, frames, d);
        for layer in &self.layers {
            let h = layer.norm_self.forward(p, x)?;
            x = x.add(layer.self_attn.forward(p, h, h, b, frames, frames)?)?;
            let h = layer.norm_cross.forward(p, x)?;
            x = x.add(layer.cross_attn.forward(p, h, memory, b, frames, 1)?)?;
            let h = layer.norm_ff.forward(p, x)?;
            x = x.add(layer.ff.forward(p, h)?)?;
        }
        let h = self.norm.forward(p, x)?;
        self.output
            .forward(p, h)?
            .reshape(&[b, frames, self.pose_dim])
    }
}

pub(crate) fn latent_graph<'g>(g: &'g Graph, latents: &[&[f64]], d: usize) -> Result<Var<'g>> {
    let mut data = Vec::with_capacity(latents.len() * d);
    for z in latents {
        if z.len() != d {
            return Err(Error::dim("decode", &[z.len()], &[d]));
        }
        data.extend_from_slice(z);
    }
    Ok(g.constant(crate::tensor::Tensor::new(&[latents.len(), d], data)?))
}
