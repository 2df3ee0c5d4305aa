//! Request and response shapes shared by the CLI and the HTTP service.
//!
//! Both front ends build the same request values, call the same [`Service`]
//! method and serialize the result with [`to_body`], so identical inputs give
//! identical bytes.

use std::path::{Path, PathBuf};

use base64::Engine;
use motionalign::data::TARGET_FPS;
use motionalign::embedding::EmbeddingProvider;
use motionalign::latent_ops::{
    classify_latent, embed_classes, interpolate, resolve_edit, text_to_motion, EditExpression,
    EditSource, EditTerm, DEFAULT_FRAMES, DEFAULT_TEMPERATURE,
};
use motionalign::model::{LatentCode, MotionAutoEncoder};
use motionalign::renderer::{rasterize, Camera, RenderStyle};
use motionalign::rotation::Rot6D;
use motionalign::skeleton::{forward_kinematics, MotionSequence, Pose, SkeletonModel};
use motionalign::trainer::load_model;
use motionalign::{Error, JOINTS};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// A motion on the wire: `frames` is `T × 24 × 6`; `joints`, when present,
/// holds `T × 24 × 3` world positions and is ignored on input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiMotionPayload {
    pub fps: f64,
    pub frames: Vec<Vec<[f64; 6]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joints: Option<Vec<Vec<[f64; 3]>>>,
}

impl ApiMotionPayload {
    pub fn from_motion(
        m: &MotionSequence,
        skeleton: Option<&SkeletonModel>,
    ) -> Result<Self, ApiError> {
        let frames = m
            .poses
            .iter()
            .map(|p| p.rotations.iter().map(|r| r.0).collect())
            .collect();
        let joints = match skeleton {
            Some(s) => Some(
                m.poses
                    .iter()
                    .map(|p| {
                        let fk = forward_kinematics(s, p)?;
                        Ok(fk.positions.iter().map(|v| [v.x, v.y, v.z]).collect())
                    })
                    .collect::<Result<Vec<_>, Error>>()?,
            ),
            None => None,
        };
        Ok(Self {
            fps: m.fps,
            frames,
            joints,
        })
    }

    pub fn to_motion(&self) -> Result<MotionSequence, ApiError> {
        if self.frames.is_empty() {
            return Err(ApiError::bad_request(
                "invalid_motion",
                "motion has no frames",
            ));
        }
        let mut poses = Vec::with_capacity(self.frames.len());
        for (t, f) in self.frames.iter().enumerate() {
            if f.len() != JOINTS {
                return Err(ApiError::bad_request(
                    "invalid_motion",
                    format!("frame {t} has {} joints, expected {JOINTS}", f.len()),
                ));
            }
            if f.iter().flatten().any(|v| !v.is_finite()) {
                return Err(ApiError::bad_request(
                    "invalid_motion",
                    format!("frame {t} is not finite"),
                ));
            }
            poses.push(Pose {
                rotations: f.iter().map(|r| Rot6D(*r)).collect(),
                translation: [0.0; 3],
            });
        }
        Ok(MotionSequence::new(self.fps, poses)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ff_width: usize,
    pub max_frames: usize,
    pub parameters: usize,
    pub provider_id: String,
    pub step: u64,
    pub epoch: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EncodeRequest {
    pub motion: ApiMotionPayload,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodeResponse {
    pub latent: Vec<f64>,
    pub norm: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecodeRequest {
    pub latent: Vec<f64>,
    #[serde(rename = "T", alias = "frames", default)]
    pub frames: Option<usize>,
}

/// A latent code and its decoded motion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedMotion {
    pub latent: Vec<f64>,
    pub motion: ApiMotionPayload,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TextToMotionRequest {
    pub text: String,
    #[serde(rename = "T", alias = "frames", default)]
    pub frames: Option<usize>,
}

/// An interpolation endpoint: a raw latent or an inline motion to encode.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Endpoint {
    Latent(Vec<f64>),
    Motion(ApiMotionPayload),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InterpolateRequest {
    pub a: Endpoint,
    pub b: Endpoint,
    pub steps: usize,
    #[serde(rename = "T", alias = "frames", default)]
    pub frames: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolationStep {
    pub alpha: f64,
    pub latent: Vec<f64>,
    pub motion: ApiMotionPayload,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolateResponse {
    pub steps: Vec<InterpolationStep>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TermKind {
    Text,
    Motion,
    Latent,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ApiEditTerm {
    pub coef: f64,
    pub kind: TermKind,
    pub value: Value,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EditRequest {
    pub terms: Vec<ApiEditTerm>,
    #[serde(default)]
    pub renormalize: bool,
    #[serde(rename = "T", alias = "frames", default)]
    pub frames: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassifyRequest {
    pub motion: ApiMotionPayload,
    pub classes: Vec<String>,
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default)]
    pub temperature: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedClass {
    pub class: String,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    /// Input order.
    pub classes: Vec<String>,
    pub probabilities: Vec<f64>,
    pub cosines: Vec<f64>,
    /// Highest probability first.
    pub top: Vec<RankedClass>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RenderFrameRequest {
    pub motion: ApiMotionPayload,
    #[serde(default)]
    pub frame: usize,
    #[serde(default)]
    pub width: Option<u32>,
    #[serde(default)]
    pub height: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderFrameResponse {
    pub width: u32,
    pub height: u32,
    /// Base64 PNG.
    pub png: String,
}

/// Error body `{code, message, detail}` plus the HTTP status it maps to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    pub fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self {
            status: 400,
            code: code.into(),
            message: message.into(),
            detail: Value::Null,
        }
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({})", self.message, self.code)
    }
}

impl std::error::Error for ApiError {}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, detail) = match &e {
            Error::Resolution { index, .. } => (400, serde_json::json!({ "term": index })),
            Error::Transport {
                attempts, status, ..
            } => (
                502,
                serde_json::json!({ "attempts": attempts, "status": status }),
            ),
            Error::Io(_) | Error::Integrity(_) | Error::Diverged { .. } => (500, Value::Null),
            _ => (400, Value::Null),
        };
        Self {
            status,
            code: e.code().into(),
            message: e.to_string(),
            detail,
        }
    }
}

/// Compact JSON, the exact bytes both front ends emit.
pub fn to_body<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("API values serialize")
}

/// Parses a request body, reporting failures as `invalid_json`.
pub fn parse_body<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request("invalid_json", e.to_string()))
}

/// A loaded checkpoint with its embedding provider; immutable once built.
pub struct Service {
    model: MotionAutoEncoder,
    provider: Box<dyn EmbeddingProvider>,
    skeleton: SkeletonModel,
    info: ModelInfo,
}

impl Service {
    pub fn new(
        model: MotionAutoEncoder,
        provider: Box<dyn EmbeddingProvider>,
        step: u64,
        epoch: u64,
    ) -> Result<Self, Error> {
        let c = model.config().clone();
        if provider.dimension() != c.d_model {
            return Err(Error::ConfigMismatch(format!(
                "provider dimension {} differs from d_model {}",
                provider.dimension(),
                c.d_model
            )));
        }
        let info = ModelInfo {
            layers: c.layers,
            d_model: c.d_model,
            heads: c.heads,
            ff_width: c.ff_width,
            max_frames: c.max_frames,
            parameters: model.param_count(),
            provider_id: provider.provider_id().to_string(),
            step,
            epoch,
        };
        Ok(Self {
            model,
            provider,
            skeleton: SkeletonModel::canonical(),
            info,
        })
    }

    /// Loads a checkpoint and builds the provider it was trained with.
    pub fn load(checkpoint: &Path, cache: Option<PathBuf>) -> Result<Self, Error> {
        let (model, ck) = load_model(checkpoint)?;
        let provider = ck.provider.build(cache)?;
        Self::new(model, provider, ck.step, ck.epoch)
    }

    pub fn info(&self) -> &ModelInfo {
        &self.info
    }

    pub fn model(&self) -> &MotionAutoEncoder {
        &self.model
    }

    pub fn provider(&self) -> &dyn EmbeddingProvider {
        self.provider.as_ref()
    }

    pub fn skeleton(&self) -> &SkeletonModel {
        &self.skeleton
    }

    fn frames(&self, requested: Option<usize>) -> Result<usize, ApiError> {
        let max = self.info.max_frames;
        let t = requested.unwrap_or(DEFAULT_FRAMES.min(max));
        if t == 0 || t > max {
            return Err(ApiError::bad_request(
                "invalid_input",
                format!("T must be in 1..={max}, got {t}"),
            ));
        }
        Ok(t)
    }

    fn payload(&self, m: &MotionSequence) -> Result<ApiMotionPayload, ApiError> {
        ApiMotionPayload::from_motion(m, Some(&self.skeleton))
    }

    fn generated(&self, z: LatentCode, m: &MotionSequence) -> Result<GeneratedMotion, ApiError> {
        Ok(GeneratedMotion {
            motion: self.payload(m)?,
            latent: z.into_vec(),
        })
    }

    pub fn encode(&self, req: &EncodeRequest) -> Result<EncodeResponse, ApiError> {
        let z = self.model.encode(&req.motion.to_motion()?)?;
        Ok(EncodeResponse {
            norm: z.norm(),
            latent: z.into_vec(),
        })
    }

    pub fn decode(&self, req: &DecodeRequest) -> Result<GeneratedMotion, ApiError> {
        let t = self.frames(req.frames)?;
        let z = LatentCode::new(req.latent.clone())?;
        let m = self.model.decode(&z, t, TARGET_FPS)?;
        self.generated(z, &m)
    }

    pub fn text_to_motion(&self, req: &TextToMotionRequest) -> Result<GeneratedMotion, ApiError> {
        let t = self.frames(req.frames)?;
        let (z, m) = text_to_motion(&self.model, self.provider(), &req.text, t)?;
        self.generated(z, &m)
    }

    fn endpoint(&self, e: &Endpoint) -> Result<LatentCode, ApiError> {
        Ok(match e {
            Endpoint::Latent(v) => LatentCode::new(v.clone())?,
            Endpoint::Motion(m) => self.model.encode(&m.to_motion()?)?,
        })
    }

    pub fn interpolate(&self, req: &InterpolateRequest) -> Result<InterpolateResponse, ApiError> {
        let t = self.frames(req.frames)?;
        let (a, b) = (self.endpoint(&req.a)?, self.endpoint(&req.b)?);
        let path = interpolate(&self.model, &a, &b, req.steps, t)?;
        let n = path.len();
        let steps = path
            .into_iter()
            .enumerate()
            .map(|(k, (z, m))| {
                Ok(InterpolationStep {
                    alpha: k as f64 / (n - 1) as f64,
                    motion: self.payload(&m)?,
                    latent: z.into_vec(),
                })
            })
            .collect::<Result<_, ApiError>>()?;
        Ok(InterpolateResponse { steps })
    }

    pub fn edit(&self, req: &EditRequest) -> Result<GeneratedMotion, ApiError> {
        let t = self.frames(req.frames)?;
        let terms = req
            .terms
            .iter()
            .enumerate()
            .map(|(index, term)| {
                let unresolved = |message: String| Error::Resolution { index, message };
                let source = match term.kind {
                    TermKind::Text => EditSource::Text(
                        term.value
                            .as_str()
                            .ok_or_else(|| unresolved("text term needs a string value".into()))?
                            .to_string(),
                    ),
                    TermKind::Latent => {
                        let v: Vec<f64> = serde_json::from_value(term.value.clone())
                            .map_err(|e| unresolved(e.to_string()))?;
                        EditSource::Latent(
                            LatentCode::new(v).map_err(|e| unresolved(e.to_string()))?,
                        )
                    }
                    TermKind::Motion => {
                        let p: ApiMotionPayload = serde_json::from_value(term.value.clone())
                            .map_err(|e| unresolved(e.to_string()))?;
                        EditSource::Motion(p.to_motion().map_err(|e| unresolved(e.message))?)
                    }
                };
                Ok(EditTerm {
                    coef: term.coef,
                    source,
                })
            })
            .collect::<Result<Vec<_>, Error>>()?;
        let expr = EditExpression {
            terms,
            renormalize: req.renormalize,
        };
        let z = resolve_edit(&self.model, self.provider(), &expr)?;
        let m = self.model.decode(&z, t, TARGET_FPS)?;
        self.generated(z, &m)
    }

    pub fn classify(&self, req: &ClassifyRequest) -> Result<ClassifyResponse, ApiError> {
        let motion = req.motion.to_motion()?;
        let emb = embed_classes(self.provider(), &req.classes)?;
        let z = self.model.encode(&motion)?;
        let s = classify_latent(
            &z,
            &req.classes,
            &emb,
            req.temperature.unwrap_or(DEFAULT_TEMPERATURE),
        )?;
        let k = req.top_k.unwrap_or(s.classes.len()).min(s.classes.len());
        let top = s
            .top_k(k)
            .into_iter()
            .map(|(class, probability)| RankedClass { class, probability })
            .collect();
        Ok(ClassifyResponse {
            classes: s.classes,
            probabilities: s.probabilities,
            cosines: s.cosines,
            top,
        })
    }

    pub fn render_frame(&self, req: &RenderFrameRequest) -> Result<RenderFrameResponse, ApiError> {
        render_frame(&self.skeleton, req)
    }
}

/// Rasterizes one frame; needs no model.
pub fn render_frame(
    skeleton: &SkeletonModel,
    req: &RenderFrameRequest,
) -> Result<RenderFrameResponse, ApiError> {
    let motion = req.motion.to_motion()?;
    let pose = motion.poses.get(req.frame).ok_or_else(|| {
        ApiError::bad_request(
            "invalid_input",
            format!(
                "frame {} out of range for {} frames",
                req.frame,
                motion.len()
            ),
        )
    })?;
    let mut camera = Camera::default();
    if let Some(w) = req.width {
        camera.width = w;
    }
    if let Some(h) = req.height {
        camera.height = h;
    }
    if camera.width > 2048 || camera.height > 2048 {
        return Err(ApiError::bad_request(
            "invalid_input",
            "image side is limited to 2048 pixels",
        ));
    }
    camera.validate()?;
    let img = rasterize(skeleton, pose, &camera, &RenderStyle::default())?;
    Ok(RenderFrameResponse {
        width: img.width(),
        height: img.height(),
        png: base64::engine::general_purpose::STANDARD.encode(img.to_png()?),
    })
}
