use serde::{Deserialize, Serialize};

use super::LatentCode;
use crate::embedding::SemanticVector;
use crate::error::{Error, Result};
use crate::skeleton::{graph_geometry, sequence_geometry, MotionSequence, SkeletonModel};
use crate::tensor::{Graph, Tensor, Var};
use crate::POSE_DIM;

/// Norm below which a vector has no direction.
pub const COSINE_EPS: f64 = 1e-12;

/// Guard used by the training-path Gram–Schmidt.
pub const GEOMETRY_EPS: f64 = 1e-8;

/// The three reconstruction terms. Their sum is the reconstruction loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReconBreakdown {
    pub pose: f64,
    pub vertex: f64,
    pub velocity: f64,
}

impl ReconBreakdown {
    pub fn total(&self) -> f64 {
        self.pose + self.vertex + self.velocity
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_text: f64,
    pub lambda_image: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_text: 0.01,
            lambda_image: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_text >= 0.0 && self.lambda_image >= 0.0) {
            return Err(Error::input("loss weights must be non-negative"));
        }
        Ok(())
    }
}

fn mean_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Reconstruction loss of `pred` against `target`, both with zero root translation.
pub fn loss_recon(
    m: &SkeletonModel,
    target: &MotionSequence,
    pred: &MotionSequence,
) -> Result<ReconBreakdown> {
    let t = target.len();
    if pred.len() != t {
        return Err(Error::Contract(format!(
            "sequence lengths differ: {t} and {}",
            pred.len()
        )));
    }
    if t < 2 {
        return Err(Error::input("reconstruction loss needs at least 2 frames"));
    }
    let (p, q) = (target.features(), pred.features());
    let pose = mean_sq(&p, &q);
    let vertex = mean_sq(
        &sequence_geometry(m, target)?.flat_vertices(),
        &sequence_geometry(m, pred)?.flat_vertices(),
    );
    let mut vel = 0.0;
    for i in 0..t - 1 {
        for k in 0..POSE_DIM {
            let a = i * POSE_DIM + k;
            let b = a + POSE_DIM;
            let diff = (p[b] - p[a]) - (q[b] - q[a]);
            vel += diff * diff;
        }
    }
    Ok(ReconBreakdown {
        pose,
        vertex,
        velocity: vel / (POSE_DIM * (t - 1)) as f64,
    })
}

fn cosine_distance(z: &[f64], e: &SemanticVector) -> Result<f64> {
    if z.len() != e.dim() {
        return Err(Error::dim("cosine distance", &[z.len()], &[e.dim()]));
    }
    let nz = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nz <= COSINE_EPS {
        return Err(Error::DegenerateVector("latent code"));
    }
    let dot: f64 = z.iter().zip(e.as_slice()).map(|(a, b)| a * b).sum();
    Ok(1.0 - dot / (nz * e.norm()))
}

/// `1 − cos(z, text embedding)`.
pub fn loss_text(z: &LatentCode, text: &SemanticVector) -> Result<f64> {
    cosine_distance(z.as_slice(), text)
}

/// `1 − cos(z, image embedding)`.
pub fn loss_image(z: &LatentCode, image: &SemanticVector) -> Result<f64> {
    cosine_distance(z.as_slice(), image)
}

/// `recon + λ_text·text + λ_image·image`; an absent term contributes 0.
pub fn loss_total(
    recon: f64,
    text: Option<f64>,
    image: Option<f64>,
    w: &LossWeights,
) -> Result<f64> {
    w.validate()?;
    Ok(recon + w.lambda_text * text.unwrap_or(0.0) + w.lambda_image * image.unwrap_or(0.0))
}

/// Graph reconstruction terms for `pred: [B, T, 144]` against constant targets.
///
/// `target_vertices` is `[B·T, 3V]`, as produced by [`target_vertices`].
pub fn recon_terms<'g>(
    m: &SkeletonModel,
    pred: Var<'g>,
    target: &Tensor,
    target_vertices: &Tensor,
) -> Result<(Var<'g>, Var<'g>, Var<'g>)> {
    let g = pred.graph();
    let s = pred.shape();
    if s != target.shape() {
        return Err(Error::Contract(format!(
            "prediction {:?} and target {:?} differ in shape",
            s,
            target.shape()
        )));
    }
    let (b, t) = (s[0], s[1]);
    if t < 2 {
        return Err(Error::input("reconstruction loss needs at least 2 frames"));
    }
    let tgt = g.constant(target.clone());
    let pose = pred.sub(tgt)?.square().mean();
    let geo = graph_geometry(m, g, pred.reshape(&[b * t, POSE_DIM])?, GEOMETRY_EPS)?;
    let vertex = geo
        .vertices
        .sub(g.constant(target_vertices.clone()))?
        .square()
        .mean();
    let step = |x: Var<'g>| -> Result<Var<'g>> { x.slice(1, 1, t - 1)?.sub(x.slice(1, 0, t - 1)?) };
    let velocity = step(pred)?.sub(step(tgt)?)?.square().mean();
    Ok((pose, vertex, velocity))
}

/// Proxy vertices of each target sequence, stacked as `[B·T, 3V]`.
pub fn target_vertices(m: &SkeletonModel, seqs: &[&MotionSequence]) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut rows = 0;
    for s in seqs {
        data.extend(sequence_geometry(m, s)?.flat_vertices());
        rows += s.len();
    }
    Tensor::new(&[rows, 3 * m.vertex_count()], data)
}

/// Masked mean of `1 − cos(z_b, e_b)` over rows with a target.
///
/// Returns `None` when no row has a target.
pub fn alignment_term<'g>(
    z: Var<'g>,
    targets: &[Option<&SemanticVector>],
) -> Result<Option<Var<'g>>> {
    let g: &'g Graph = z.graph();
    let s = z.shape();
    if s.len() != 2 || s[0] != targets.len() {
        return Err(Error::dim(
            "alignment_term",
            &s,
            &[targets.len(), s.get(1).copied().unwrap_or(0)],
        ));
    }
    let (b, d) = (s[0], s[1]);
    let count = targets.iter().filter(|t| t.is_some()).count();
    if count == 0 {
        return Ok(None);
    }
    let mut unit = vec![0.0; b * d];
    let mut mask = vec![0.0; b];
    for (i, t) in targets.iter().enumerate() {
        if let Some(e) = t {
            if e.dim() != d {
                return Err(Error::dim("alignment_term", &[d], &[e.dim()]));
            }
            let n = e.norm();
            for (u, v) in unit[i * d..(i + 1) * d].iter_mut().zip(e.as_slice()) {
                *u = v / n;
            }
            mask[i] = 1.0;
        }
    }
    let norms = z.l2_norm(1)?;
    if norms.value().data().iter().any(|&n| n <= COSINE_EPS) {
        return Err(Error::DegenerateVector("latent code"));
    }
    let cos = z
        .mul(g.constant(Tensor::new(&[b, d], unit)?))?
        .sum_axis(1)?
        .mul(norms.recip())?;
    let weighted = cos
        .neg()
        .add_scalar(1.0)
        .mul(g.constant(Tensor::new(&[b, 1], mask)?))?;
    Ok(Some(weighted.sum().scale(1.0 / count as f64)))
}
