//! Generation, completion and description on loaded models, producing the
//! wire responses used by both the CLI and the service.

use sceneformer_core::assembly::{complete_assembled, generate_assembled, AssembledScene, AssemblyConfig, Catalog};
use sceneformer_core::model::set::ModelSet;
use sceneformer_core::model::{Condition, Conditioning};
use sceneformer_core::sampler::{SamplerConfig, SceneCondition};
use sceneformer_core::scene::io::SceneFile;
use sceneformer_core::scene::synth::default_table;
use sceneformer_core::scene::CategoryTable;
use sceneformer_core::text::{
    extract_relations, generate_description, text_condition, tokenize, DescribeConfig, EmbeddingTable,
};
use sceneformer_core::{Error, Result};

use crate::api::{CompleteResponse, DescribeResponse, FloorFile, GenerateResponse, Mode, PlacedRecord};

/// Sampling and placement settings of a generation request.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    pub sampler: SamplerConfig,
    pub assembly: AssemblyConfig,
}

/// Word vectors of `text` as the models' text condition.
pub fn text_to_condition(text: &str, embeddings: Option<&EmbeddingTable>, set: &ModelSet) -> Result<Condition> {
    let table = embeddings
        .ok_or_else(|| Error::ModeMismatch("text conditioning needs a word-vector table, none is loaded".into()))?;
    let max_len = set.models.iter().map(|m| m.config.max_text_len).min().unwrap_or(0);
    text_condition(&tokenize(text), table, max_len)
}

fn check_mode(set: &ModelSet, mode: Mode) -> Result<()> {
    let want = Conditioning::from(mode);
    if set.conditioning != want {
        return Err(Error::ModeMismatch(format!(
            "request mode `{}` but the models are {}-conditioned",
            mode.name(),
            set.conditioning.name()
        )));
    }
    Ok(())
}

fn warnings(a: &AssembledScene, table: &CategoryTable) -> Vec<String> {
    let mut out = Vec::new();
    for o in &a.dropped {
        out.push(format!(
            "dropped {} at ({:.2}, {:.2}): every catalog candidate collides",
            table.name(o.category),
            o.center[0],
            o.center[1]
        ));
    }
    for p in a.placed.iter().filter(|p| p.out_of_bounds) {
        out.push(format!("{} at ({:.2}, {:.2}) lies outside the floor polygon", table.name(p.category), p.center[0], p.center[1]));
    }
    if a.generation.budget_exhausted {
        out.push("object budget exhausted before any model stopped".into());
    }
    if a.generation.order_violations > 0 {
        out.push(format!("{} adjacent objects out of canonical order", a.generation.order_violations));
    }
    out
}

fn placed_records(a: &AssembledScene, table: &CategoryTable) -> Vec<PlacedRecord> {
    a.placed.iter().map(|p| PlacedRecord::new(p, table)).collect()
}

#[allow(clippy::too_many_arguments)]
pub fn generate(
    set: &ModelSet,
    embeddings: Option<&EmbeddingTable>,
    catalog: &Catalog,
    mode: Mode,
    floor: Option<&FloorFile>,
    text: Option<&str>,
    settings: &Settings,
    seed: u64,
) -> Result<GenerateResponse> {
    check_mode(set, mode)?;
    let cond = match mode {
        Mode::Unconditional => SceneCondition::None,
        Mode::Shape => {
            let floor = floor.ok_or_else(|| Error::InvalidArgument("shape mode needs a floor".into()))?;
            SceneCondition::Floor(floor.to_plan(&set.table)?)
        }
        Mode::Text => {
            let text = text.ok_or_else(|| Error::InvalidArgument("text mode needs a text".into()))?;
            SceneCondition::Text(text_to_condition(text, embeddings, set)?)
        }
    };
    let a = generate_assembled(set, &cond, catalog, &settings.sampler, &settings.assembly, seed)?;
    Ok(GenerateResponse {
        seed,
        scene: SceneFile::from_scene(&a.generation.scene, &set.table),
        placed_objects: placed_records(&a, &set.table),
        warnings: warnings(&a, &set.table),
    })
}

#[allow(clippy::too_many_arguments)]
pub fn complete(
    set: &ModelSet,
    embeddings: Option<&EmbeddingTable>,
    catalog: &Catalog,
    mode: Mode,
    scene: &SceneFile,
    text: Option<&str>,
    max_new: Option<usize>,
    settings: &Settings,
    seed: u64,
) -> Result<CompleteResponse> {
    check_mode(set, mode)?;
    let partial = scene.to_scene(&set.table)?;
    let cond = match (mode, text) {
        (Mode::Text, Some(t)) => Some(text_to_condition(t, embeddings, set)?),
        (Mode::Text, None) => return Err(Error::InvalidArgument("text mode needs condition.text".into())),
        (_, Some(_)) => return Err(Error::ModeMismatch(format!("condition.text given in `{}` mode", mode.name()))),
        (_, None) => None,
    };
    let a = complete_assembled(set, &partial, cond.as_ref(), max_new, catalog, &settings.sampler, &settings.assembly, seed)?;
    let given = a.generation.given;
    let total = a.generation.scene.objects.len();
    Ok(CompleteResponse {
        seed,
        scene: SceneFile::from_scene(&a.generation.scene, &set.table),
        added_indices: (given..total).collect(),
        placed_objects: placed_records(&a, &set.table),
        warnings: warnings(&a, &set.table),
    })
}

/// The category table a scene file refers to: `fallback` unless the file
/// lists a different vocabulary.
pub fn table_for(scene: &SceneFile, fallback: &CategoryTable) -> Result<CategoryTable> {
    if scene.categories.is_empty() || scene.categories == fallback.names() {
        return Ok(fallback.clone());
    }
    let find = |name: &str| {
        scene.categories.iter().position(|c| c == name).ok_or_else(|| Error::UnknownCategory(name.to_string()))
    };
    CategoryTable::new(scene.categories.clone(), vec![0; scene.categories.len()], find("door")?, find("window")?)
}

pub fn describe(scene: &SceneFile, fallback: Option<&CategoryTable>, seed: u64) -> Result<DescribeResponse> {
    let default;
    let fallback = match fallback {
        Some(t) => t,
        None => {
            default = default_table();
            &default
        }
    };
    let table = table_for(scene, fallback)?;
    let s = scene.to_scene(&table)?;
    let cfg = DescribeConfig::default();
    let d = generate_description(&s, &table, &extract_relations(&s, cfg.threshold), &cfg, seed)?;
    let record = sceneformer_core::text::describe::DescriptionRecord::new("", &d);
    Ok(DescribeResponse { seed, sentences: d.sentences, mentioned: record.mentioned })
}
