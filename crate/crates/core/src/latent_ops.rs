//! Inference-time uses of the aligned latent space.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{read_motion_file, TARGET_FPS, WINDOW_LEN};
use crate::embedding::{EmbeddingProvider, SemanticVector};
use crate::error::{Error, Result};
use crate::model::{LatentCode, MotionAutoEncoder};
use crate::skeleton::MotionSequence;

/// Softmax temperature applied to cosine logits (cosine × 100).
pub const DEFAULT_TEMPERATURE: f64 = 0.01;
/// Frames produced when no length is requested.
pub const DEFAULT_FRAMES: usize = WINDOW_LEN;

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("cosine", &[a.len()], &[b.len()]));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na <= 1e-12 || nb <= 1e-12 {
        return Err(Error::DegenerateVector("cosine"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// Decodes the text embedding of `text` into `frames` frames.
pub fn text_to_motion(
    model: &MotionAutoEncoder,
    provider: &dyn EmbeddingProvider,
    text: &str,
    frames: usize,
) -> Result<(LatentCode, MotionSequence)> {
    let z = LatentCode::from(provider.embed_text(text)?);
    check_dim(model, &z)?;
    let motion = model.decode(&z, frames, TARGET_FPS)?;
    Ok((z, motion))
}

fn check_dim(model: &MotionAutoEncoder, z: &LatentCode) -> Result<()> {
    let d = model.config().d_model;
    if z.dim() != d {
        return Err(Error::ConfigMismatch(format!(
            "vector of dimension {} cannot be decoded by a model with d_model {d}",
            z.dim()
        )));
    }
    Ok(())
}

/// `(1 − α)·a + α·b` for `α = k/(n − 1)`, `k = 0..n`.
pub fn interpolate_latents(
    a: &LatentCode,
    b: &LatentCode,
    steps: usize,
) -> Result<Vec<LatentCode>> {
    if steps < 2 {
        return Err(Error::input(format!(
            "interpolation needs at least 2 steps, got {steps}"
        )));
    }
    if a.dim() != b.dim() {
        return Err(Error::dim("interpolate", &[a.dim()], &[b.dim()]));
    }
    (0..steps)
        .map(|k| {
            let alpha = k as f64 / (steps - 1) as f64;
            LatentCode::new(
                a.as_slice()
                    .iter()
                    .zip(b.as_slice())
                    .map(|(x, y)| (1.0 - alpha) * x + alpha * y)
                    .collect(),
            )
        })
        .collect()
}

/// Decodes each interpolated latent separately, so the endpoints are exactly
/// `decode(a)` and `decode(b)`.
pub fn interpolate(
    model: &MotionAutoEncoder,
    a: &LatentCode,
    b: &LatentCode,
    steps: usize,
    frames: usize,
) -> Result<Vec<(LatentCode, MotionSequence)>> {
    check_dim(model, a)?;
    check_dim(model, b)?;
    interpolate_latents(a, b, steps)?
        .into_iter()
        .map(|z| {
            let m = model.decode(&z, frames, TARGET_FPS)?;
            Ok((z, m))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum EditSource {
    Motion(MotionSequence),
    MotionFile(PathBuf),
    Text(String),
    Latent(LatentCode),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditTerm {
    pub coef: f64,
    pub source: EditSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditExpression {
    pub terms: Vec<EditTerm>,
    /// Normalize every term vector before weighting and the sum after.
    #[serde(default)]
    pub renormalize: bool,
}

fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n <= 1e-12 {
        return Err(Error::DegenerateVector("edit vector"));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Weighted sum of the resolved term vectors.
pub fn resolve_edit(
    model: &MotionAutoEncoder,
    provider: &dyn EmbeddingProvider,
    expr: &EditExpression,
) -> Result<LatentCode> {
    if expr.terms.is_empty() {
        return Err(Error::input("edit expression has no terms"));
    }
    let d = model.config().d_model;
    let mut sum = vec![0.0; d];
    for (index, term) in expr.terms.iter().enumerate() {
        let fail = |e: Error| Error::Resolution {
            index,
            message: e.to_string(),
        };
        if !term.coef.is_finite() {
            return Err(fail(Error::NonFinite("coefficient".into())));
        }
        let v = match &term.source {
            EditSource::Motion(m) => model.encode(m).map_err(fail)?,
            EditSource::MotionFile(p) => {
                let m = read_motion_file(p).map_err(fail)?;
                model.encode(&m).map_err(fail)?
            }
            EditSource::Text(t) => provider.embed_text(t).map(LatentCode::from).map_err(fail)?,
            EditSource::Latent(z) => z.clone(),
        };
        if v.dim() != d {
            return Err(fail(Error::dim("edit term", &[v.dim()], &[d])));
        }
        let v = if expr.renormalize {
            unit(v.as_slice()).map_err(fail)?
        } else {
            v.into_vec()
        };
        for (s, x) in sum.iter_mut().zip(&v) {
            *s += term.coef * x;
        }
    }
    if expr.renormalize {
        sum = unit(&sum)?;
    }
    LatentCode::new(sum)
}

pub fn edit(
    model: &MotionAutoEncoder,
    provider: &dyn EmbeddingProvider,
    expr: &EditExpression,
    frames: usize,
) -> Result<(LatentCode, MotionSequence)> {
    let z = resolve_edit(model, provider, expr)?;
    let m = model.decode(&z, frames, TARGET_FPS)?;
    Ok((z, m))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    /// Class names in input order.
    pub classes: Vec<String>,
    pub probabilities: Vec<f64>,
    pub cosines: Vec<f64>,
}

impl ClassScores {
    /// Indices sorted by descending probability; ties keep input order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.classes.len()).collect();
        idx.sort_by(|&a, &b| self.probabilities[b].total_cmp(&self.probabilities[a]));
        idx
    }

    pub fn top_k(&self, k: usize) -> Vec<(String, f64)> {
        self.ranking()
            .into_iter()
            .take(k)
            .map(|i| (self.classes[i].clone(), self.probabilities[i]))
            .collect()
    }
}

/// Checks that classes are at least two and pairwise distinct.
pub fn check_classes<S: AsRef<str>>(classes: &[S]) -> Result<()> {
    if classes.len() < 2 {
        return Err(Error::input("classification needs at least two classes"));
    }
    for (i, c) in classes.iter().enumerate() {
        if classes[..i].iter().any(|p| p.as_ref() == c.as_ref()) {
            return Err(Error::input(format!(
                "duplicate class name {:?}",
                c.as_ref()
            )));
        }
    }
    Ok(())
}

/// Softmax over `cos(z, e_i) / temperature`.
pub fn classify_latent(
    z: &LatentCode,
    classes: &[String],
    embeddings: &[SemanticVector],
    temperature: f64,
) -> Result<ClassScores> {
    check_classes(classes)?;
    if embeddings.len() != classes.len() {
        return Err(Error::Contract(
            "one embedding per class is required".into(),
        ));
    }
    if !(temperature > 0.0) {
        return Err(Error::input("temperature must be positive"));
    }
    let cosines = embeddings
        .iter()
        .map(|e| cosine(z.as_slice(), e.as_slice()))
        .collect::<Result<Vec<_>>>()?;
    let logits: Vec<f64> = cosines.iter().map(|c| c / temperature).collect();
    Ok(ClassScores {
        classes: classes.to_vec(),
        probabilities: softmax(&logits),
        cosines,
    })
}

pub fn embed_classes(
    provider: &dyn EmbeddingProvider,
    classes: &[String],
) -> Result<Vec<SemanticVector>> {
    check_classes(classes)?;
    classes.iter().map(|c| provider.embed_text(c)).collect()
}

pub fn classify(
    model: &MotionAutoEncoder,
    provider: &dyn EmbeddingProvider,
    motion: &MotionSequence,
    classes: &[String],
    temperature: f64,
) -> Result<ClassScores> {
    check_classes(classes)?;
    let z = model.encode(motion)?;
    let emb = embed_classes(provider, classes)?;
    classify_latent(&z, classes, &emb, temperature)
}
