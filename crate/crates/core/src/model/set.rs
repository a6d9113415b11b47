//! The four property models trained together, saved as one directory.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::ModelKind;
use crate::error::{Error, Result};
use crate::model::checkpoint::{load_checkpoint, save_checkpoint};
use crate::model::train::{train_model, StepLog, TrainConfig, TrainingExample};
use crate::model::{Conditioning, PropertyModel, TransformerConfig};
use crate::scene::CategoryTable;

pub const SET_FILE: &str = "set.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SetFile {
    conditioning: Conditioning,
    extent: f64,
    table: CategoryTable,
}

/// Category, orientation, location and dimension models sharing one
/// category table, scene extent and conditioning mode.
#[derive(Debug, Clone)]
pub struct ModelSet {
    pub table: CategoryTable,
    pub extent: f64,
    pub conditioning: Conditioning,
    /// Indexed like `ModelKind::ALL`.
    pub models: [PropertyModel; 4],
}

fn kind_index(kind: ModelKind) -> usize {
    ModelKind::ALL.iter().position(|&k| k == kind).expect("kind listed in ALL")
}

impl ModelSet {
    pub fn new(table: CategoryTable, extent: f64, models: [PropertyModel; 4]) -> Result<Self> {
        if !(extent > 0.0) {
            return Err(Error::invalid(format!("extent must be positive, got {extent}")));
        }
        let conditioning = models[0].config.conditioning;
        for (m, kind) in models.iter().zip(ModelKind::ALL) {
            if m.config.kind != kind {
                return Err(Error::invalid(format!("slot for the {} model holds a {} model", kind.name(), m.config.kind.name())));
            }
            if m.config.conditioning != conditioning {
                return Err(Error::ModeMismatch("models of one set must share a conditioning mode".into()));
            }
            if m.config.num_categories != table.len() {
                return Err(Error::invalid(format!(
                    "the {} model has {} categories, the table {}",
                    kind.name(),
                    m.config.num_categories,
                    table.len()
                )));
            }
        }
        Ok(Self { table, extent, conditioning, models })
    }

    /// Freshly initialized models built from `make_config`.
    pub fn init(
        table: CategoryTable,
        extent: f64,
        seed: u64,
        make_config: impl Fn(ModelKind) -> TransformerConfig,
    ) -> Result<Self> {
        let mut models = Vec::with_capacity(4);
        for (i, kind) in ModelKind::ALL.into_iter().enumerate() {
            models.push(PropertyModel::new(make_config(kind), seed.wrapping_add(i as u64))?);
        }
        let models: [PropertyModel; 4] = models.try_into().map_err(|_| Error::invalid("need four models"))?;
        Self::new(table, extent, models)
    }

    pub fn model(&self, kind: ModelKind) -> &PropertyModel {
        &self.models[kind_index(kind)]
    }

    pub fn model_mut(&mut self, kind: ModelKind) -> &mut PropertyModel {
        &mut self.models[kind_index(kind)]
    }

    /// Trains the four models one after another on the same examples,
    /// each with its own `cfg_for(kind)`.
    pub fn train(
        &mut self,
        examples: &[TrainingExample],
        cfg_for: impl Fn(ModelKind) -> TrainConfig,
        mut on_step: impl FnMut(ModelKind, &StepLog),
    ) -> Result<()> {
        let table = self.table.clone();
        for kind in ModelKind::ALL {
            train_model(self.model_mut(kind), examples, &table, &cfg_for(kind), |log| on_step(kind, log))?;
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path, with_optimizer: bool) -> Result<()> {
        fs::create_dir_all(dir)?;
        let file = SetFile { conditioning: self.conditioning, extent: self.extent, table: self.table.clone() };
        fs::write(dir.join(SET_FILE), serde_json::to_string_pretty(&file)? + "\n")?;
        for m in &self.models {
            save_checkpoint(&dir.join(format!("{}.ckpt", m.config.kind.name())), m, with_optimizer)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(SET_FILE);
        let text = fs::read_to_string(&path)?;
        let file: SetFile =
            serde_json::from_str(&text).map_err(|e| Error::Format { path: path.clone(), reason: e.to_string() })?;
        let mut models = Vec::with_capacity(4);
        for kind in ModelKind::ALL {
            models.push(load_checkpoint(&dir.join(format!("{}.ckpt", kind.name())))?);
        }
        let models: [PropertyModel; 4] = models.try_into().map_err(|_| Error::invalid("need four models"))?;
        let set = Self::new(file.table, file.extent, models)?;
        if set.conditioning != file.conditioning {
            return Err(Error::ModeMismatch(format!(
                "{} declares {} conditioning but its checkpoints use {}",
                path.display(),
                file.conditioning.name(),
                set.conditioning.name()
            )));
        }
        Ok(set)
    }
}
