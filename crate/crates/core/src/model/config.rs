use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::decompose::DecompositionMode;

/// Whether a mixing weight is the fixed sum of the base model or a trainable scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MixMode {
    #[default]
    Fixed,
    Trainable,
}

impl FromStr for MixMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(MixMode::Fixed),
            "trainable" => Ok(MixMode::Trainable),
            other => Err(Error::Param(format!("unknown mix mode `{other}` (fixed, trainable)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub nodes: usize,
    pub channels: usize,
    pub input_len: usize,
    pub output_len: usize,
    pub steps_per_day: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub blocks: usize,
    pub spectral_k: usize,
    /// Spatial MLP hidden width; `None` means the model width.
    pub spatial_hidden: Option<usize>,
    pub graph_embed_dim: usize,
    pub graph_hops: usize,
    pub alpha_mode: MixMode,
    pub beta_mode: MixMode,
    pub decomposition: DecompositionMode,
}

impl ModelConfig {
    /// Defaults for the given data shape: 8 heads of 16, two blocks,
    /// `k_r = 32`, `D_g = 16`, two hops.
    pub fn for_data(nodes: usize, channels: usize, steps_per_day: usize) -> Self {
        ModelConfig {
            nodes,
            channels,
            input_len: 12,
            output_len: 12,
            steps_per_day,
            heads: 8,
            head_dim: 16,
            blocks: 2,
            spectral_k: 32,
            spatial_hidden: None,
            graph_embed_dim: 16,
            graph_hops: 2,
            alpha_mode: MixMode::Fixed,
            beta_mode: MixMode::Fixed,
            decomposition: DecompositionMode::Masked,
        }
    }

    /// Model width `D = heads · head_dim`.
    pub fn model_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    /// Per-head width inside the decoder, whose attention runs over `3D`.
    pub fn decoder_head_dim(&self) -> usize {
        3 * self.model_dim() / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("nodes", self.nodes),
            ("channels", self.channels),
            ("input_len", self.input_len),
            ("output_len", self.output_len),
            ("steps_per_day", self.steps_per_day),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("blocks", self.blocks),
            ("spectral_k", self.spectral_k),
            ("graph_embed_dim", self.graph_embed_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Param(format!("{name} must be positive")));
            }
        }
        if self.spatial_hidden == Some(0) {
            return Err(Error::Param("spatial_hidden must be positive".into()));
        }
        // The fused embedding only feeds the masked decomposition.
        if self.decomposition == DecompositionMode::Passthrough && self.alpha_mode == MixMode::Trainable {
            return Err(Error::Param("a trainable alpha has no effect with passthrough decomposition".into()));
        }
        Ok(())
    }
}
