use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::POSE_DIM;

/// Transformer sizes. `d_model` must equal the embedding provider's dimension.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Layers in each of the encoder and the decoder.
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ff_width: usize,
    pub max_frames: usize,
    #[serde(default = "pose_dim")]
    pub pose_dim: usize,
}

fn pose_dim() -> usize {
    POSE_DIM
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::canonical()
    }
}

impl ModelConfig {
    /// 8 layers per side, width 512, 8 heads, 4× feed-forward, 60 frames.
    pub fn canonical() -> Self {
        Self {
            layers: 8,
            d_model: 512,
            heads: 8,
            ff_width: 2048,
            max_frames: 60,
            pose_dim: POSE_DIM,
        }
    }

    pub fn small(
        layers: usize,
        d_model: usize,
        heads: usize,
        ff_width: usize,
        max_frames: usize,
    ) -> Self {
        Self {
            layers,
            d_model,
            heads,
            ff_width,
            max_frames,
            pose_dim: POSE_DIM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.d_model == 0 || self.heads == 0 || self.ff_width == 0 {
            return Err(Error::input("model sizes must be positive"));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::input(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.max_frames < 2 {
            return Err(Error::input("max_frames must be at least 2"));
        }
        if self.pose_dim != POSE_DIM {
            return Err(Error::input(format!("pose width must be {POSE_DIM}")));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    fn attention_params(&self) -> usize {
        4 * (self.d_model * self.d_model + self.d_model)
    }

    fn ff_params(&self) -> usize {
        2 * self.d_model * self.ff_width + self.ff_width + self.d_model
    }

    fn norm_params(&self) -> usize {
        2 * self.d_model
    }

    pub fn encoder_param_count(&self) -> usize {
        let d = self.d_model;
        let input = self.pose_dim * d + d;
        let prefix = d;
        let layer = 2 * self.norm_params() + self.attention_params() + self.ff_params();
        input + prefix + self.layers * layer + self.norm_params()
    }

    pub fn decoder_param_count(&self) -> usize {
        let d = self.d_model;
        let layer = 3 * self.norm_params() + 2 * self.attention_params() + self.ff_params();
        let output = d * self.pose_dim + self.pose_dim;
        self.layers * layer + self.norm_params() + output
    }
}
