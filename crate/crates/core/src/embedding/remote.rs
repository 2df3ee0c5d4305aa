use std::thread;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{checked_text, Capabilities, EmbeddingProvider, SemanticVector};
use crate::error::{Error, Result};
use crate::renderer::FrameImage;

/// Connection settings for an HTTP embedding service.
///
/// The service answers `POST {endpoint}/embed_text` with body
/// `{"texts": [..]}` and `POST {endpoint}/embed_image` with body
/// `{"images": [<base64 PNG>..]}`; both respond
/// `{"vectors": [[..]..], "dim": n, "model": ".."}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Extra attempts after the first failure.
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_dim() -> usize {
    super::CANONICAL_DIM
}
fn default_model() -> String {
    "ViT-B/32".into()
}
fn default_timeout_ms() -> u64 {
    30_000
}
fn default_retries() -> u32 {
    2
}
fn default_backoff_ms() -> u64 {
    250
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            dim: default_dim(),
            model: default_model(),
            timeout_ms: default_timeout_ms(),
            retries: default_retries(),
            backoff_ms: default_backoff_ms(),
        }
    }
}

#[derive(Serialize)]
struct TextRequest<'a> {
    texts: Vec<&'a str>,
}

#[derive(Serialize)]
struct ImageRequest {
    images: Vec<String>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
    dim: usize,
    #[allow(dead_code)]
    model: String,
}

pub struct RemoteProvider {
    cfg: RemoteConfig,
    caps: Capabilities,
    agent: ureq::Agent,
}

impl RemoteProvider {
    pub fn new(cfg: RemoteConfig) -> Result<Self> {
        if !(cfg.endpoint.starts_with("http://") || cfg.endpoint.starts_with("https://")) {
            return Err(Error::input(format!(
                "endpoint {:?} is not an http(s) URL",
                cfg.endpoint
            )));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let caps = Capabilities {
            embeds_text: true,
            embeds_image: true,
            dimension: cfg.dim,
            provider_id: format!("remote-{}-d{}", cfg.model, cfg.dim),
        };
        Ok(Self { cfg, caps, agent })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    fn post<B: Serialize>(
        &self,
        route: &str,
        body: &B,
        expected: usize,
    ) -> Result<Vec<SemanticVector>> {
        let url = format!("{}/{route}", self.cfg.endpoint.trim_end_matches('/'));
        let attempts = self.cfg.retries + 1;
        let mut last_status = None;
        let mut last_message = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                thread::sleep(Duration::from_millis(
                    self.cfg.backoff_ms * u64::from(attempt - 1),
                ));
            }
            match self.agent.post(&url).send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if status == 200 {
                        let parsed: EmbedResponse =
                            resp.body_mut().read_json().map_err(|e| Error::Transport {
                                attempts: attempt,
                                status: Some(status),
                                message: format!("malformed response: {e}"),
                            })?;
                        return self.check_response(parsed, expected);
                    }
                    last_status = Some(status);
                    last_message = resp.body_mut().read_to_string().unwrap_or_default();
                    if (400..500).contains(&status) {
                        return Err(Error::Transport {
                            attempts: attempt,
                            status: last_status,
                            message: last_message,
                        });
                    }
                }
                Err(e) => last_message = e.to_string(),
            }
            log::warn!(
                "embedding request to {url} failed (attempt {attempt}/{attempts}): {last_message}"
            );
        }
        Err(Error::Transport {
            attempts,
            status: last_status,
            message: last_message,
        })
    }

    fn check_response(&self, resp: EmbedResponse, expected: usize) -> Result<Vec<SemanticVector>> {
        if resp.dim != self.cfg.dim || resp.vectors.iter().any(|v| v.len() != self.cfg.dim) {
            return Err(Error::ConfigMismatch(format!(
                "service returned dimension {}, configured {}",
                resp.dim, self.cfg.dim
            )));
        }
        if resp.vectors.len() != expected {
            return Err(Error::Transport {
                attempts: 1,
                status: Some(200),
                message: format!("expected {expected} vectors, got {}", resp.vectors.len()),
            });
        }
        resp.vectors.into_iter().map(SemanticVector::new).collect()
    }

    pub fn embed_texts(&self, texts: &[&str]) -> Result<Vec<SemanticVector>> {
        let texts = texts
            .iter()
            .map(|t| checked_text(t))
            .collect::<Result<Vec<_>>>()?;
        self.post(
            "embed_text",
            &TextRequest {
                texts: texts.clone(),
            },
            texts.len(),
        )
    }

    pub fn embed_images(&self, images: &[&FrameImage]) -> Result<Vec<SemanticVector>> {
        let engine = base64::engine::general_purpose::STANDARD;
        let images = images
            .iter()
            .map(|img| Ok(engine.encode(img.to_png()?)))
            .collect::<Result<Vec<_>>>()?;
        let n = images.len();
        self.post("embed_image", &ImageRequest { images }, n)
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn capabilities(&self) -> &Capabilities {
        &self.caps
    }

    fn embed_text(&self, text: &str) -> Result<SemanticVector> {
        Ok(self.embed_texts(&[text])?.remove(0))
    }

    fn embed_image(&self, image: &FrameImage) -> Result<SemanticVector> {
        Ok(self.embed_images(&[image])?.remove(0))
    }
}
