use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::{checked_text, norm, Capabilities, EmbeddingProvider, SemanticVector};
use crate::error::{Error, Result};
use crate::renderer::{FrameImage, CANONICAL_SIZE};

pub const DEFAULT_SEED: u64 = 0x5EED_C11F;
/// Patch grid per image side.
const GRID: u32 = 16;

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Deterministic embedder.
///
/// Text: the normalized sum of one pseudorandom unit vector per token, each
/// seeded from a hash of the token. Image: 16×16 grid of grayscale patch
/// means, centered at 0.5, times a fixed seeded Gaussian matrix, normalized.
pub struct StubProvider {
    caps: Capabilities,
    seed: u64,
    projection: Vec<f64>,
}

impl StubProvider {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::input("embedding dimension must be positive"));
        }
        let features = (GRID * GRID) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1A6E_0000_0000_0001);
        let scale = 1.0 / (features as f64).sqrt();
        let projection = (0..dim * features)
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut rng);
                scale * x
            })
            .collect::<Vec<f64>>();
        Ok(Self {
            caps: Capabilities {
                embeds_text: true,
                embeds_image: true,
                dimension: dim,
                provider_id: format!("stub-v1-d{dim}-s{seed}"),
            },
            seed,
            projection,
        })
    }

    pub fn canonical() -> Self {
        Self::new(super::CANONICAL_DIM, DEFAULT_SEED).expect("valid canonical stub")
    }

    /// Unit direction assigned to a single token.
    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let digest: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        let v: Vec<f64> = (0..self.caps.dimension)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let n = norm(&v);
        v.into_iter().map(|x| x / n).collect()
    }

    /// Zero-centered patch means, row-major over the grid.
    pub fn patch_features(image: &FrameImage) -> Vec<f64> {
        let pw = image.width() / GRID;
        let ph = image.height() / GRID;
        let mut out = Vec::with_capacity((GRID * GRID) as usize);
        for gy in 0..GRID {
            for gx in 0..GRID {
                let mut total = 0.0;
                for y in gy * ph..(gy + 1) * ph {
                    for x in gx * pw..(gx + 1) * pw {
                        total += image.gray(x, y);
                    }
                }
                out.push(total / f64::from(pw * ph) - 0.5);
            }
        }
        out
    }
}

impl EmbeddingProvider for StubProvider {
    fn capabilities(&self) -> &Capabilities {
        &self.caps
    }

    fn embed_text(&self, text: &str) -> Result<SemanticVector> {
        let tokens = tokenize(checked_text(text)?);
        if tokens.is_empty() {
            return Err(Error::input(format!("text {text:?} has no tokens")));
        }
        let mut acc = vec![0.0; self.caps.dimension];
        for t in &tokens {
            for (a, v) in acc.iter_mut().zip(self.token_vector(t)) {
                *a += v;
            }
        }
        let n = norm(&acc);
        if n <= 1e-12 {
            return Err(Error::DegenerateVector("stub text embedding"));
        }
        SemanticVector::new(acc.into_iter().map(|v| v / n).collect())
    }

    fn embed_image(&self, image: &FrameImage) -> Result<SemanticVector> {
        if image.width() != CANONICAL_SIZE || image.height() != CANONICAL_SIZE {
            return Err(Error::input(format!(
                "stub image embedder expects {CANONICAL_SIZE}x{CANONICAL_SIZE}, got {}x{}",
                image.width(),
                image.height()
            )));
        }
        let feats = Self::patch_features(image);
        let k = feats.len();
        let out: Vec<f64> = self
            .projection
            .chunks(k)
            .map(|row| row.iter().zip(&feats).map(|(a, b)| a * b).sum())
            .collect();
        let n = norm(&out);
        if n <= 1e-12 {
            return Err(Error::DegenerateVector("stub image embedding"));
        }
        SemanticVector::new(out.into_iter().map(|v| v / n).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::cosine;

    #[test]
    fn tokenizer_splits_on_punctuation() {
        assert_eq!(
            tokenize("Walk, wave!  JUMP-fast"),
            ["walk", "wave", "jump", "fast"]
        );
    }

    #[test]
    fn single_token_is_token_vector() {
        let p = StubProvider::canonical();
        let e = p.embed_text("  Jump ").unwrap();
        let t = p.token_vector("jump");
        for (a, b) in e.as_slice().iter().zip(&t) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn shared_tokens_raise_similarity() {
        let p = StubProvider::canonical();
        let fast = p.embed_text("walk fast").unwrap();
        let slow = p.embed_text("walk slow").unwrap();
        let jump = p.embed_text("jump").unwrap();
        assert!(fast.cosine(&slow) > fast.cosine(&jump));
        // Two unit vectors sharing one of two tokens: cosine near 1/2.
        assert!((fast.cosine(&slow) - 0.5).abs() < 0.15);
    }

    #[test]
    fn empty_text_is_rejected() {
        let p = StubProvider::canonical();
        assert!(matches!(p.embed_text("   "), Err(Error::Input(_))));
        assert!(matches!(p.embed_text("?!"), Err(Error::Input(_))));
    }

    #[test]
    fn wrong_image_size_is_rejected() {
        let p = StubProvider::canonical();
        let img = FrameImage::filled(64, 64, [0, 0, 0]);
        assert!(matches!(p.embed_image(&img), Err(Error::Input(_))));
    }

    #[test]
    fn one_patch_changes_the_embedding() {
        let p = StubProvider::canonical();
        let a = FrameImage::filled(224, 224, [24, 24, 32]);
        let mut bytes = a.bytes().to_vec();
        for y in 0..14 {
            for x in 0..14 {
                let i = ((y * 224 + x) * 3) as usize;
                bytes[i..i + 3].copy_from_slice(&[255, 255, 255]);
            }
        }
        let b = FrameImage::from_rgb(224, 224, bytes).unwrap();
        let ea = p.embed_image(&a).unwrap();
        let eb = p.embed_image(&b).unwrap();
        assert!(cosine(ea.as_slice(), eb.as_slice()) < 1.0 - 1e-6);
    }
}
