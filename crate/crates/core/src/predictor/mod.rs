//! The target-prediction network `G(x_t, t, c; θ)`.
//!
//! Inputs are embedded as a context token (sinusoidal time features through a
//! two-layer perceptron, plus a learned condition row) and one token per
//! frame (linear projection of the noisy frame plus a learned positional
//! row). Two bodies are provided:
//!
//! * [`Variant::FrameMlp`] adds the context to every frame token and runs a
//!   residual per-frame perceptron, so frames never interact.
//! * [`Variant::AttentionEncoder`] prepends the context token to the frame
//!   tokens and runs a pre-norm transformer encoder; the context token is
//!   dropped before the output projection.
//!
//! Gradients are computed by hand-written reverse-mode passes in double
//! precision.

pub mod checkpoint;
mod network;
pub mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Model, ModelHeader};
pub use network::{backward, embed_inputs, forward, time_features};
pub use params::{count_params, ParamLayout, PredictorParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    FrameMlp,
    AttentionEncoder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorConfig {
    pub variant: Variant,
    pub hidden_dim: usize,
    pub layer_count: usize,
    #[serde(default = "default_heads")]
    pub head_count: usize,
    #[serde(default = "default_ff")]
    pub ff_dim: usize,
    #[serde(default = "default_max_frames")]
    pub max_frames: usize,
    /// Learned per-frame positional rows. Without them both bodies are
    /// equivariant to frame permutations.
    #[serde(default = "default_true")]
    pub positional_encoding: bool,
}

/// Upper bound on any single network dimension; keeps untrusted configs
/// from requesting absurd allocations.
pub const MAX_WIDTH: usize = 1 << 14;
pub const MAX_LAYERS: usize = 64;

fn default_heads() -> usize {
    4
}
fn default_ff() -> usize {
    128
}
fn default_max_frames() -> usize {
    196
}
fn default_true() -> bool {
    true
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig::frame_mlp()
    }
}

impl PredictorConfig {
    /// Desk-scale per-frame perceptron: 3 residual layers of width 128.
    pub fn frame_mlp() -> Self {
        PredictorConfig {
            variant: Variant::FrameMlp,
            hidden_dim: 128,
            layer_count: 3,
            head_count: 1,
            ff_dim: 128,
            max_frames: 196,
            positional_encoding: true,
        }
    }

    /// Desk-scale encoder: 2 layers, 4 heads, width 64, feed-forward 128.
    pub fn attention_encoder() -> Self {
        PredictorConfig {
            variant: Variant::AttentionEncoder,
            hidden_dim: 64,
            layer_count: 2,
            head_count: 4,
            ff_dim: 128,
            max_frames: 196,
            positional_encoding: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::InvalidConfig("hidden_dim must be positive".into()));
        }
        if self.hidden_dim > MAX_WIDTH || self.ff_dim > MAX_WIDTH || self.max_frames > MAX_WIDTH || self.layer_count > MAX_LAYERS {
            return Err(Error::InvalidConfig(format!(
                "widths and max_frames are capped at {MAX_WIDTH}, layers at {MAX_LAYERS}"
            )));
        }
        if self.max_frames == 0 {
            return Err(Error::InvalidConfig("max_frames must be positive".into()));
        }
        if self.variant == Variant::AttentionEncoder {
            if self.head_count == 0 || self.hidden_dim % self.head_count != 0 {
                return Err(Error::InvalidConfig(format!(
                    "hidden_dim {} must be divisible by head_count {}",
                    self.hidden_dim, self.head_count
                )));
            }
            if self.ff_dim == 0 {
                return Err(Error::InvalidConfig("ff_dim must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Data-dependent sizes of the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub feature_dim: usize,
    /// Rows of the condition table: prompt count plus one for ∅.
    pub condition_rows: usize,
}

impl ModelShape {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.condition_rows < 2 || self.feature_dim > MAX_WIDTH || self.condition_rows > MAX_WIDTH {
            return Err(Error::InvalidConfig(format!(
                "shape needs features and at least one prompt plus ∅, got {self:?}"
            )));
        }
        Ok(())
    }
}
