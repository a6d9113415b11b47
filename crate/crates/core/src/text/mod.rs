//! Spatial relations, rule-based scene descriptions, tokenization and
//! static word embeddings.

pub mod describe;
pub mod embedding;
pub mod relation;

pub use describe::{
    description_vocabulary, generate_description, DescribeConfig, Description, DescriptionRecord, Mention, Templates,
};
pub use embedding::{load_embedding_table, text_condition, EmbeddingTable};
pub use relation::{classify_relation, extract_relations, Relation, RelationType, RELATION_DISTANCE};

use crate::error::Result;
use crate::model::train::TrainingExample;
use crate::scene::{sub_seed, CategoryTable, Scene};

/// Sentences kept from a description.
pub const TEXT_SENTENCES: usize = 3;

fn words(sentence: &str) -> impl Iterator<Item = String> + '_ {
    sentence.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase)
}

/// Lowercase words of every sentence, punctuation dropped.
pub fn tokenize_all(text: &str) -> Vec<String> {
    words(text).collect()
}

/// Lowercase words of the first three sentences, punctuation dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(['.', '!', '?'])
        .filter(|s| words(s).next().is_some())
        .take(TEXT_SENTENCES)
        .flat_map(words)
        .collect()
}

/// Training examples carrying `per_scene` embedded descriptions each.
pub fn description_examples(
    scenes: &[Scene],
    table: &CategoryTable,
    embeddings: &EmbeddingTable,
    max_len: usize,
    per_scene: usize,
    cfg: &DescribeConfig,
    seed: u64,
) -> Result<Vec<TrainingExample>> {
    scenes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let relations = extract_relations(s, cfg.threshold);
            let texts = (0..per_scene)
                .map(|k| {
                    let d = generate_description(s, table, &relations, cfg, sub_seed(seed, (i * per_scene + k) as u64))?;
                    text_condition(&tokenize(&d.text()), embeddings, max_len)
                })
                .collect::<Result<_>>()?;
            Ok(TrainingExample { scene: s.clone(), texts })
        })
        .collect()
}
