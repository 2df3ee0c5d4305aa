//! The frozen semantic space that motion latents are aligned to.
//!
//! Providers turn text and frame images into [`SemanticVector`]s. Two
//! implementations exist: [`StubProvider`], a deterministic hash/projection
//! embedder for offline work and tests, and [`RemoteProvider`], an HTTP client
//! for a CLIP-style service. [`CachedProvider`] wraps either with an on-disk,
//! content-addressed cache.

mod cache;
mod remote;
mod stub;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::renderer::FrameImage;

pub use cache::{cache_key_image, cache_key_text, CachedProvider, EmbeddingCache};
pub use remote::{RemoteConfig, RemoteProvider};
pub use stub::{tokenize, StubProvider, DEFAULT_SEED as DEFAULT_STUB_SEED};

/// Canonical embedding width (CLIP ViT-B/32).
pub const CANONICAL_DIM: usize = 512;

/// Embedding vector with finite entries and nonzero norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SemanticVector(Vec<f64>);

impl SemanticVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::input("empty embedding vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding vector".into()));
        }
        if norm(&values) <= 0.0 {
            return Err(Error::DegenerateVector("embedding vector"));
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
        norm(&self.0)
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self(self.0.iter().map(|v| v / n).collect())
    }

    pub fn cosine(&self, other: &SemanticVector) -> f64 {
        cosine(&self.0, &other.0)
    }
}

impl TryFrom<Vec<f64>> for SemanticVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SemanticVector> for Vec<f64> {
    fn from(v: SemanticVector) -> Self {
        v.0
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (norm(a) * norm(b))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub embeds_text: bool,
    pub embeds_image: bool,
    pub dimension: usize,
    pub provider_id: String,
}

pub trait EmbeddingProvider: Send + Sync {
    fn capabilities(&self) -> &Capabilities;

    fn embed_text(&self, text: &str) -> Result<SemanticVector>;

    fn embed_image(&self, image: &FrameImage) -> Result<SemanticVector>;

    fn dimension(&self) -> usize {
        self.capabilities().dimension
    }

    fn provider_id(&self) -> &str {
        &self.capabilities().provider_id
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn capabilities(&self) -> &Capabilities {
        (**self).capabilities()
    }

    fn embed_text(&self, text: &str) -> Result<SemanticVector> {
        (**self).embed_text(text)
    }

    fn embed_image(&self, image: &FrameImage) -> Result<SemanticVector> {
        (**self).embed_image(image)
    }
}

/// Trimmed text, or an input error when nothing is left.
pub(crate) fn checked_text(text: &str) -> Result<&str> {
    let t = text.trim();
    if t.is_empty() {
        Err(Error::input("text to embed is empty"))
    } else {
        Ok(t)
    }
}

/// Serializable recipe for constructing a provider.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderSpec {
    Stub { dim: usize, seed: u64 },
    Remote(RemoteConfig),
}

impl Default for ProviderSpec {
    fn default() -> Self {
        ProviderSpec::Stub {
            dim: CANONICAL_DIM,
            seed: stub::DEFAULT_SEED,
        }
    }
}

impl ProviderSpec {
    pub fn dimension(&self) -> usize {
        match self {
            ProviderSpec::Stub { dim, .. } => *dim,
            ProviderSpec::Remote(cfg) => cfg.dim,
        }
    }

    /// Builds the provider, wrapped in a disk cache when `cache_dir` is set.
    pub fn build(&self, cache_dir: Option<PathBuf>) -> Result<Box<dyn EmbeddingProvider>> {
        let inner: Box<dyn EmbeddingProvider> = match self {
            ProviderSpec::Stub { dim, seed } => Box::new(StubProvider::new(*dim, *seed)?),
            ProviderSpec::Remote(cfg) => Box::new(RemoteProvider::new(cfg.clone())?),
        };
        Ok(match cache_dir {
            Some(dir) => Box::new(CachedProvider::new(inner, dir)?),
            None => inner,
        })
    }
}
