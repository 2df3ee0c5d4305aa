//! Transformer motion auto-encoder.
//!
//! The encoder maps a `T × 144` pose sequence to a single latent code of
//! width `d_model`; the decoder maps a latent code back to any requested
//! number of frames. Everything runs on [`crate::tensor::Graph`], so the same
//! code serves inference and training.

mod checkpoint;
mod config;
mod layers;
mod loss;
mod network;
mod params;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{ProviderSpec, SemanticVector};
use crate::error::{Error, Result};
use crate::skeleton::MotionSequence;
use crate::tensor::{Graph, Tensor, Var};
use crate::POSE_DIM;

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use layers::sinusoidal_table;
pub use loss::{
    alignment_term, loss_image, loss_recon, loss_text, loss_total, recon_terms, target_vertices,
    LossWeights, ReconBreakdown, COSINE_EPS, GEOMETRY_EPS,
};
pub use params::{Bound, ParamId, ParamStore};

use network::{latent_graph, MotionDecoder, MotionEncoder};

/// A point in the shared latent space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LatentCode(Vec<f64>);

impl LatentCode {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::input("empty latent code"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent code".into()));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f64>> for LatentCode {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LatentCode> for Vec<f64> {
    fn from(z: LatentCode) -> Self {
        z.0
    }
}

impl From<SemanticVector> for LatentCode {
    fn from(v: SemanticVector) -> Self {
        Self(v.into_vec())
    }
}

pub struct MotionAutoEncoder {
    config: ModelConfig,
    params: ParamStore,
    encoder: MotionEncoder,
    decoder: MotionDecoder,
}

impl MotionAutoEncoder {
    /// Fresh parameters drawn from a ChaCha8 stream seeded with `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = MotionEncoder::new(&mut params, &config, &mut rng);
        let decoder = MotionDecoder::new(&mut params, &config, &mut rng);
        Ok(Self {
            config,
            params,
            encoder,
            decoder,
        })
    }

    /// Builds the architecture for `config` and loads `values` into it.
    pub fn with_params(config: ModelConfig, values: &[(String, Tensor)]) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        m.params.load(values)?;
        Ok(m)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Self::with_params(ck.config.clone(), &ck.group(MODEL_PREFIX))
    }

    /// A checkpoint holding only this model's parameters.
    pub fn to_checkpoint(&self, provider: ProviderSpec) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            provider,
            step: 0,
            epoch: 0,
            rng: None,
            extra: serde_json::Value::Null,
            tensors: self.named_tensors(),
        }
    }

    /// Parameters as `("model/<name>", tensor)` pairs.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|(n, t)| (format!("{MODEL_PREFIX}{n}"), t.clone()))
            .collect()
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.total_len()
    }

    /// `poses: [B, T, 144]` -> `[B, d]`.
    pub fn encode_graph<'g>(&self, p: &Bound<'g>, poses: Var<'g>) -> Result<Var<'g>> {
        let s = poses.shape();
        if s.len() != 3 || s[2] != POSE_DIM {
            return Err(Error::dim(
                "encode",
                &s,
                &[s[0], s.get(1).copied().unwrap_or(0), POSE_DIM],
            ));
        }
        self.check_encode_len(s[1])?;
        self.encoder.forward(p, poses)
    }

    /// `z: [B, d]` -> `[B, frames, 144]`.
    pub fn decode_graph<'g>(&self, p: &Bound<'g>, z: Var<'g>, frames: usize) -> Result<Var<'g>> {
        self.check_decode_len(frames)?;
        self.decoder.forward(p, z, frames)
    }

    fn check_encode_len(&self, t: usize) -> Result<()> {
        if t < 2 || t > self.config.max_frames {
            return Err(Error::input(format!(
                "encode needs 2..={} frames, got {t}",
                self.config.max_frames
            )));
        }
        Ok(())
    }

    fn check_decode_len(&self, t: usize) -> Result<()> {
        if t < 1 || t > self.config.max_frames {
            return Err(Error::input(format!(
                "decode needs 1..={} frames, got {t}",
                self.config.max_frames
            )));
        }
        Ok(())
    }

    pub fn encode(&self, seq: &MotionSequence) -> Result<LatentCode> {
        Ok(self.encode_batch(&[seq])?.remove(0))
    }

    /// Encodes equal-length sequences in one pass.
    pub fn encode_batch(&self, seqs: &[&MotionSequence]) -> Result<Vec<LatentCode>> {
        let Some(first) = seqs.first() else {
            return Ok(Vec::new());
        };
        let t = first.len();
        self.check_encode_len(t)?;
        let mut data = Vec::with_capacity(seqs.len() * t * POSE_DIM);
        for s in seqs {
            if s.len() != t {
                return Err(Error::input("batched sequences must share a length"));
            }
            if !s.is_finite() {
                return Err(Error::NonFinite("motion features".into()));
            }
            data.extend(s.features());
        }
        let g = Graph::new();
        let p = self.params.bind_frozen(&g);
        let poses = g.constant(Tensor::new(&[seqs.len(), t, POSE_DIM], data)?);
        let z = self.encoder.forward(&p, poses)?;
        let z = z.value();
        z.data()
            .chunks(self.config.d_model)
            .map(|c| LatentCode::new(c.to_vec()))
            .collect()
    }

    pub fn decode(&self, z: &LatentCode, frames: usize, fps: f64) -> Result<MotionSequence> {
        Ok(self.decode_batch(&[z], frames, fps)?.remove(0))
    }

    pub fn decode_batch(
        &self,
        zs: &[&LatentCode],
        frames: usize,
        fps: f64,
    ) -> Result<Vec<MotionSequence>> {
        if zs.is_empty() {
            return Ok(Vec::new());
        }
        self.check_decode_len(frames)?;
        let g = Graph::new();
        let p = self.params.bind_frozen(&g);
        let slices: Vec<&[f64]> = zs.iter().map(|z| z.as_slice()).collect();
        let z = latent_graph(&g, &slices, self.config.d_model)?;
        let out = self.decoder.forward(&p, z, frames)?;
        let out = out.value();
        out.data()
            .chunks(frames * POSE_DIM)
            .map(|c| MotionSequence::from_features(fps, c))
            .collect()
    }
}

/// Name prefix of model parameters inside a checkpoint.
pub const MODEL_PREFIX: &str = "model/";

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig::small(2, 32, 4, 64, 8)
    }

    #[test]
    fn parameter_count_matches_formula() {
        for cfg in [tiny(), ModelConfig::small(3, 48, 6, 96, 20)] {
            let m = MotionAutoEncoder::new(cfg.clone(), 1).unwrap();
            assert_eq!(
                m.param_count(),
                cfg.encoder_param_count() + cfg.decoder_param_count()
            );
        }
    }

    #[test]
    fn canonical_parameter_count_is_locked() {
        let cfg = ModelConfig::canonical();
        assert_eq!(cfg.encoder_param_count(), 25_294_848);
        assert_eq!(cfg.decoder_param_count(), 33_707_152);
    }

    #[test]
    fn decode_length_follows_request() {
        let m = MotionAutoEncoder::new(tiny(), 2).unwrap();
        let z = LatentCode::new((0..32).map(|i| (i as f64 * 0.3).sin()).collect()).unwrap();
        for t in [1, 5, 8] {
            assert_eq!(m.decode(&z, t, 30.0).unwrap().len(), t);
        }
        assert!(matches!(m.decode(&z, 0, 30.0), Err(Error::Input(_))));
        assert!(matches!(m.decode(&z, 9, 30.0), Err(Error::Input(_))));
    }

    #[test]
    fn decoding_ignores_latent_scale() {
        let m = MotionAutoEncoder::new(tiny(), 2).unwrap();
        let z: Vec<f64> = (0..32).map(|i| (i as f64 * 0.7).cos()).collect();
        let a = m
            .decode(&LatentCode::new(z.clone()).unwrap(), 4, 30.0)
            .unwrap();
        let b = m
            .decode(
                &LatentCode::new(z.iter().map(|v| v * 4.0).collect()).unwrap(),
                4,
                30.0,
            )
            .unwrap();
        for (x, y) in a.features().iter().zip(b.features()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn checkpoint_rejects_other_config() {
        let m = MotionAutoEncoder::new(tiny(), 3).unwrap();
        let ck = m.to_checkpoint(ProviderSpec::default());
        assert!(ck
            .require_config(&ModelConfig::small(2, 32, 4, 64, 9))
            .is_err());
        let wrong = ModelConfig::small(2, 32, 4, 32, 8);
        assert!(matches!(
            MotionAutoEncoder::with_params(wrong, &ck.group(MODEL_PREFIX)),
            Err(Error::ConfigMismatch(_))
        ));
    }
}
