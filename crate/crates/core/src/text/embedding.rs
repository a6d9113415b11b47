use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::Condition;

/// Static word vectors of one width.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, vectors: HashMap<String, Vec<f32>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding width must be positive"));
        }
        if let Some((w, v)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::invalid(format!("vector for `{w}` has {} values, expected {dim}", v.len())));
        }
        Ok(Self { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// `None` for words outside the table.
    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// GloVe text layout: a word then its values, space separated.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, reason: String| Error::Format { path: path.into(), reason: format!("line {line}: {reason}") };
        let mut dim = None;
        let mut vectors = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let values = parts
                .map(|p| p.parse::<f32>().map_err(|e| err(n + 1, format!("`{p}`: {e}"))))
                .collect::<Result<Vec<f32>>>()?;
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(err(n + 1, format!("`{word}` has {} values, expected {d}", values.len())));
                }
                _ => {}
            }
            vectors.insert(word.to_string(), values);
        }
        let dim = dim.ok_or_else(|| err(0, "no vectors".into()))?;
        Self::new(dim, vectors).map_err(|e| err(0, e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut words: Vec<&String> = self.vectors.keys().collect();
        words.sort();
        let mut out = String::new();
        for w in words {
            out.push_str(w);
            for v in &self.vectors[w] {
                write!(out, " {v}").expect("write to string");
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Random unit-scale vectors for `words`; stands in for pretrained GloVe.
    pub fn synthetic(words: &[String], dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (dim as f32).sqrt();
        let vectors = words
            .iter()
            .map(|w| {
                let v: Vec<f32> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).map(|x: f32| x * scale).collect();
                (w.clone(), v)
            })
            .collect();
        Self::new(dim, vectors)
    }
}

pub fn load_embedding_table(path: &Path) -> Result<EmbeddingTable> {
    EmbeddingTable::parse(&fs::read_to_string(path)?, path)
}

/// Word vectors for `words`, cut to `max_len`; unknown words get zeros.
pub fn text_condition(words: &[String], table: &EmbeddingTable, max_len: usize) -> Result<Condition> {
    if words.is_empty() {
        return Err(Error::invalid("text is empty"));
    }
    let len = words.len().min(max_len);
    let mut vectors = vec![0.0f32; len * table.dim()];
    for (row, w) in vectors.chunks_mut(table.dim()).zip(words) {
        if let Some(v) = table.get(w) {
            row.copy_from_slice(v);
        }
    }
    Ok(Condition::Text { vectors, len, dim: table.dim() })
}
