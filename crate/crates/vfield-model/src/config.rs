//! Architecture hyperparameters and presets.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Network sizes. `embed_dim` must be divisible by 4 (the four transition
/// feature projections) and by `heads`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub encoder_layers: usize,
    pub decoder_blocks: usize,
    pub heads: usize,
    /// Hidden width of the per-block feed-forward is `ffn_mult * embed_dim`.
    pub ffn_mult: usize,
    /// Hidden width of the two output heads (field and log-variance).
    pub mlp_hidden: usize,
    pub dropout: f64,
    pub max_dim: usize,
}

impl ModelConfig {
    /// Full-scale architecture.
    pub fn paper() -> Self {
        Self {
            embed_dim: 256,
            encoder_layers: 2,
            decoder_blocks: 8,
            heads: 8,
            ffn_mult: 4,
            mlp_hidden: 1024,
            dropout: 0.10,
            max_dim: 3,
        }
    }

    /// CPU-friendly preset used by smoke runs.
    pub fn desk() -> Self {
        Self {
            embed_dim: 64,
            encoder_layers: 2,
            decoder_blocks: 4,
            heads: 8,
            ffn_mult: 4,
            mlp_hidden: 256,
            dropout: 0.10,
            max_dim: 3,
        }
    }

    /// Minimal preset for gradient checks and fast unit tests.
    pub fn tiny() -> Self {
        Self {
            embed_dim: 16,
            encoder_layers: 1,
            decoder_blocks: 2,
            heads: 4,
            ffn_mult: 2,
            mlp_hidden: 24,
            dropout: 0.10,
            max_dim: 3,
        }
    }

    pub fn by_preset(name: &str) -> Option<Self> {
        match name {
            "paper" => Some(Self::paper()),
            "desk" => Some(Self::desk()),
            "tiny" => Some(Self::tiny()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.embed_dim == 0 || self.embed_dim % 4 != 0 {
            return Err(ModelError::BadConfig(format!(
                "embed_dim must be a positive multiple of 4, got {}",
                self.embed_dim
            )));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(ModelError::BadConfig(format!(
                "embed_dim {} must be divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.encoder_layers == 0 || self.decoder_blocks == 0 {
            return Err(ModelError::BadConfig(
                "need at least one encoder layer and one decoder block".into(),
            ));
        }
        if self.ffn_mult == 0 || self.mlp_hidden == 0 {
            return Err(ModelError::BadConfig("hidden widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::BadConfig(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.max_dim != 3 {
            return Err(ModelError::BadConfig(
                "the padding scheme is fixed at max_dim = 3".into(),
            ));
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn feature_width(&self) -> usize {
        self.embed_dim / 4
    }

    pub fn ffn_hidden(&self) -> usize {
        self.ffn_mult * self.embed_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for cfg in [ModelConfig::paper(), ModelConfig::desk(), ModelConfig::tiny()] {
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn bad_head_split_is_rejected() {
        let mut cfg = ModelConfig::tiny();
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
    }
}
