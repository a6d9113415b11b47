use serde::{Deserialize, Serialize};

use crate::codec::{ModelKind, TokenVocab};
use crate::error::{Error, Result};
use crate::scene::MAX_OBJECTS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Conditioning {
    #[serde(alias = "unconditional")]
    None,
    Shape,
    Text,
}

impl Conditioning {
    pub fn name(self) -> &'static str {
        match self {
            Conditioning::None => "none",
            Conditioning::Shape => "shape",
            Conditioning::Text => "text",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub kind: ModelKind,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    /// Inner width of the feed-forward layers.
    pub ffn_dim: usize,
    pub max_objects: usize,
    pub num_categories: usize,
    pub conditioning: Conditioning,
    /// Side of the floor mask fed to the encoder; a multiple of 32.
    pub floor_resolution: usize,
    /// Channels of the three residual stages of the floor encoder.
    pub encoder_channels: [usize; 3],
    /// Width of the static word vectors.
    pub text_dim: usize,
    pub max_text_len: usize,
    pub dropout: f64,
}

impl TransformerConfig {
    /// Small configuration for single-core training.
    pub fn desk(kind: ModelKind, num_categories: usize, conditioning: Conditioning) -> Self {
        let e = 64;
        Self {
            kind,
            embed_dim: e,
            n_heads: 4,
            n_blocks: 2,
            ffn_dim: e,
            max_objects: MAX_OBJECTS,
            num_categories,
            conditioning,
            floor_resolution: 64,
            encoder_channels: [e / 4, e / 2, e],
            text_dim: 100,
            max_text_len: 40,
            dropout: 0.0,
        }
    }

    /// Published configuration: E = 256 (1024 for location), 8 heads, 8 blocks.
    pub fn full(kind: ModelKind, num_categories: usize, conditioning: Conditioning) -> Self {
        let e = if kind == ModelKind::Location { 1024 } else { 256 };
        Self {
            kind,
            embed_dim: e,
            n_heads: 8,
            n_blocks: 8,
            ffn_dim: e,
            max_objects: MAX_OBJECTS,
            num_categories,
            conditioning,
            floor_resolution: 512,
            encoder_channels: [64, 128, 256],
            text_dim: 100,
            max_text_len: 40,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
            return Err(Error::invalid(format!(
                "embed_dim {} must be a positive multiple of n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        if self.n_blocks == 0 || self.ffn_dim == 0 {
            return Err(Error::invalid("n_blocks and ffn_dim must be positive"));
        }
        if self.num_categories < 3 {
            return Err(Error::invalid("need at least door, window and one furniture category"));
        }
        if self.conditioning == Conditioning::Shape
            && (self.floor_resolution < 32 || self.floor_resolution % 32 != 0)
        {
            return Err(Error::invalid(format!(
                "floor resolution {} must be a positive multiple of 32",
                self.floor_resolution
            )));
        }
        if self.encoder_channels.iter().any(|&c| c == 0) || self.text_dim == 0 || self.max_text_len == 0 {
            return Err(Error::invalid("encoder widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn vocab(&self) -> TokenVocab {
        TokenVocab::new(self.num_categories)
    }

    pub fn output_size(&self) -> usize {
        self.vocab().size(self.kind.output_space())
    }

    /// Object-position table rows: START, up to `max_objects` objects, STOP.
    pub fn position_rows(&self) -> usize {
        self.max_objects + 2
    }

    pub fn max_stream_len(&self) -> usize {
        self.position_rows() * self.kind.slots_per_row()
    }

    /// Whether the decoder blocks carry cross-attention.
    pub fn has_cross_attention(&self) -> bool {
        match self.conditioning {
            Conditioning::None => false,
            Conditioning::Shape => true,
            Conditioning::Text => matches!(self.kind, ModelKind::Category | ModelKind::Location),
        }
    }

    /// Side of the encoder output grid.
    pub fn floor_grid(&self) -> usize {
        self.floor_resolution / 32
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }
}
