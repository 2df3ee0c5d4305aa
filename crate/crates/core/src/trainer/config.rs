use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::{ProviderSpec, RemoteConfig};
use crate::error::{Error, Result};
use crate::model::{LossWeights, ModelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lambda_text: f64,
    pub lambda_image: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip_norm: f64,
    /// Epochs between evaluation snapshots and checkpoints; 0 means only at the end.
    pub eval_interval: usize,
    /// Windows per class kept out of training for evaluation.
    pub holdout_per_class: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 16,
            epochs: 100,
            seed: 0,
            lambda_text: 0.01,
            lambda_image: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 1.0,
            eval_interval: 10,
            holdout_per_class: 0,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_text: self.lambda_text,
            lambda_image: self.lambda_image,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.learning_rate > 0.0
            && self.adam_eps > 0.0
            && self.batch_size > 0
            && self.epochs > 0;
        let betas = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2);
        if !positive || !betas || !(self.clip_norm >= 0.0) {
            return Err(Error::input(format!(
                "invalid training configuration {self:?}"
            )));
        }
        self.weights().validate()
    }
}

/// Everything a training run needs besides data: model, provider and optimizer settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub provider: ProviderSpec,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::canonical(),
            provider: ProviderSpec::default(),
            train: TrainConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::input(format!("config key {key}: cannot parse {value:?}")))
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.provider.dimension() != self.model.d_model {
            return Err(Error::ConfigMismatch(format!(
                "d_model {} differs from the embedding dimension {}",
                self.model.d_model,
                self.provider.dimension()
            )));
        }
        Ok(())
    }

    /// Parses the flat `key = value` format; `#` starts a comment.
    ///
    /// Keys not present keep their defaults. The provider's dimension always
    /// follows `d_model`.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::input(format!("config line {}: expected key = value", n + 1))
            })?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if kv.insert(k.clone(), v).is_some() {
                return Err(Error::input(format!("config key {k} given twice")));
            }
        }
        let mut c = RunConfig::default();
        let (mut kind, mut pseed) = ("stub".to_string(), crate::embedding::DEFAULT_STUB_SEED);
        let mut remote = RemoteConfig::new("");
        for (k, v) in &kv {
            let (k, v) = (k.as_str(), v.as_str());
            match k {
                "layers" => c.model.layers = parse(k, v)?,
                "d_model" => c.model.d_model = parse(k, v)?,
                "heads" => c.model.heads = parse(k, v)?,
                "ff_width" => c.model.ff_width = parse(k, v)?,
                "max_frames" => c.model.max_frames = parse(k, v)?,
                "provider" => kind = v.to_string(),
                "provider_seed" => pseed = parse(k, v)?,
                "endpoint" => remote.endpoint = v.to_string(),
                "remote_model" => remote.model = v.to_string(),
                "timeout_ms" => remote.timeout_ms = parse(k, v)?,
                "retries" => remote.retries = parse(k, v)?,
                "learning_rate" => c.train.learning_rate = parse(k, v)?,
                "batch_size" => c.train.batch_size = parse(k, v)?,
                "epochs" => c.train.epochs = parse(k, v)?,
                "seed" => c.train.seed = parse(k, v)?,
                "lambda_text" => c.train.lambda_text = parse(k, v)?,
                "lambda_image" => c.train.lambda_image = parse(k, v)?,
                "beta1" => c.train.beta1 = parse(k, v)?,
                "beta2" => c.train.beta2 = parse(k, v)?,
                "adam_eps" => c.train.adam_eps = parse(k, v)?,
                "clip_norm" => c.train.clip_norm = parse(k, v)?,
                "eval_interval" => c.train.eval_interval = parse(k, v)?,
                "holdout_per_class" => c.train.holdout_per_class = parse(k, v)?,
                _ => return Err(Error::input(format!("unknown config key {k}"))),
            }
        }
        c.provider = match kind.as_str() {
            "stub" => ProviderSpec::Stub {
                dim: c.model.d_model,
                seed: pseed,
            },
            "remote" => {
                remote.dim = c.model.d_model;
                ProviderSpec::Remote(remote)
            }
            other => return Err(Error::input(format!("unknown provider {other:?}"))),
        };
        c.validate()?;
        Ok(c)
    }

    /// Inverse of [`RunConfig::from_kv`].
    pub fn to_kv(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("layers", m.layers.to_string());
        put("d_model", m.d_model.to_string());
        put("heads", m.heads.to_string());
        put("ff_width", m.ff_width.to_string());
        put("max_frames", m.max_frames.to_string());
        match &self.provider {
            ProviderSpec::Stub { seed, .. } => {
                put("provider", "stub".into());
                put("provider_seed", seed.to_string());
            }
            ProviderSpec::Remote(r) => {
                put("provider", "remote".into());
                put("endpoint", r.endpoint.clone());
                put("remote_model", r.model.clone());
                put("timeout_ms", r.timeout_ms.to_string());
                put("retries", r.retries.to_string());
            }
        }
        put("learning_rate", format!("{:e}", t.learning_rate));
        put("batch_size", t.batch_size.to_string());
        put("epochs", t.epochs.to_string());
        put("seed", t.seed.to_string());
        put("lambda_text", t.lambda_text.to_string());
        put("lambda_image", t.lambda_image.to_string());
        put("beta1", t.beta1.to_string());
        put("beta2", t.beta2.to_string());
        put("adam_eps", format!("{:e}", t.adam_eps));
        put("clip_norm", t.clip_norm.to_string());
        put("eval_interval", t.eval_interval.to_string());
        put("holdout_per_class", t.holdout_per_class.to_string());
        s
    }
}
