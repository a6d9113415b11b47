//! Run configuration files for `train` and `make-data`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use sceneformer_core::codec::ModelKind;
use sceneformer_core::model::train::TrainConfig;
use sceneformer_core::model::{Conditioning, TransformerConfig};

use crate::api::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Full,
}

/// Preset plus optional overrides of the transformer shape.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOptions {
    pub preset: Preset,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embed_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_heads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_blocks: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub floor_resolution: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
}

impl ModelOptions {
    pub fn transformer(&self, kind: ModelKind, num_categories: usize, mode: Conditioning) -> TransformerConfig {
        let mut cfg = match self.preset {
            Preset::Desk => TransformerConfig::desk(kind, num_categories, mode),
            Preset::Full => TransformerConfig::full(kind, num_categories, mode),
        };
        if let Some(e) = self.embed_dim {
            cfg.embed_dim = e;
            cfg.ffn_dim = e;
            cfg.encoder_channels = [e / 4, e / 2, e];
        }
        if let Some(h) = self.n_heads {
            cfg.n_heads = h;
        }
        if let Some(b) = self.n_blocks {
            cfg.n_blocks = b;
        }
        if let Some(r) = self.floor_resolution {
            cfg.floor_resolution = r;
        }
        if let Some(p) = self.dropout {
            cfg.dropout = p;
        }
        cfg
    }
}

fn default_descriptions_per_scene() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub model: ModelOptions,
    #[serde(default)]
    pub train: TrainConfig,
    /// Step count of the location model when it differs from `train.steps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location_steps: Option<u64>,
    /// Dataset directory written by `make-data`.
    pub data: PathBuf,
    /// `descriptions.jsonl`; text mode only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptions: Option<PathBuf>,
    /// Word-vector table; text mode only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    #[serde(default = "default_descriptions_per_scene")]
    pub descriptions_per_scene: usize,
    #[serde(default)]
    pub seed: u64,
    /// Checkpoint directory.
    pub out: PathBuf,
}

impl RunConfig {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| anyhow::anyhow!("config field `{}`: {}", e.path(), e.inner()))
    }

    /// Pretty JSON with fields in declaration order.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Reads `path`, resolves relative paths against its directory and
    /// checks that every input exists.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.check_inputs()?;
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data);
        fix(&mut self.out);
        if let Some(p) = &mut self.descriptions {
            fix(p);
        }
        if let Some(p) = &mut self.embeddings {
            fix(p);
        }
    }

    pub fn check_inputs(&self) -> anyhow::Result<()> {
        if !self.data.is_dir() {
            bail!("data directory {} does not exist", self.data.display());
        }
        if self.mode == Mode::Text {
            for (name, p) in [("descriptions", &self.descriptions), ("embeddings", &self.embeddings)] {
                match p {
                    None => bail!("text mode needs `{name}`"),
                    Some(p) if !p.is_file() => bail!("{name} file {} does not exist", p.display()),
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }

    pub fn train_for(&self, kind: ModelKind) -> TrainConfig {
        let mut cfg = self.train.clone();
        if kind == ModelKind::Location {
            if let Some(steps) = self.location_steps {
                // The cosine period follows the step count.
                if cfg.schedule.restart_period == cfg.steps {
                    cfg.schedule.restart_period = steps;
                }
                cfg.steps = steps;
            }
        }
        cfg.seed = cfg.seed.wrapping_add(self.seed);
        cfg
    }
}
