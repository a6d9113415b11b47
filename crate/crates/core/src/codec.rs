//! Scene ⇄ token sequences, and the aligned per-model training streams.
//!
//! A bundle holds eight sequences `(c, x, y, z, θ, l, w, h)`, each of length
//! `N + 2`: row 0 is START, rows `1..=N` are objects and row `N + 1` is STOP.
//! An *open* bundle replaces the STOP row by a partially known object whose
//! unknown tokens are PAD; the sampler reads logits at the slot that predicts
//! the first unknown token.
//!
//! Slot `t` of every model stream predicts a property of row `t + 1`. The
//! location and dimension streams have three slots per row, one per
//! coordinate, so their length is `3 (N + 2)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{
    dequantize_value, first_unsorted, quantize_value, CategoryTable, ObjectInstance, PropertyKind, Scene,
    LOCATION_BINS, MAX_OBJECTS, ORIENTATION_BINS,
};

pub const SEQ_C: usize = 0;
pub const SEQ_X: usize = 1;
pub const SEQ_Y: usize = 2;
pub const SEQ_Z: usize = 3;
pub const SEQ_THETA: usize = 4;
pub const SEQ_L: usize = 5;
pub const SEQ_W: usize = 6;
pub const SEQ_H: usize = 7;
pub const SEQUENCE_NAMES: [&str; 8] = ["c", "x", "y", "z", "theta", "l", "w", "h"];

/// Value space of one token sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenSpace {
    Category,
    Orientation,
    Location,
    Dimension,
}

impl TokenSpace {
    pub fn of_sequence(seq: usize) -> TokenSpace {
        match seq {
            SEQ_C => TokenSpace::Category,
            SEQ_X | SEQ_Y | SEQ_Z => TokenSpace::Location,
            SEQ_THETA => TokenSpace::Orientation,
            _ => TokenSpace::Dimension,
        }
    }
}

/// Token layout: values `0..range`, then START, STOP, PAD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenVocab {
    pub categories: u32,
}

impl TokenVocab {
    pub fn new(categories: usize) -> Self {
        Self { categories: categories as u32 }
    }

    pub fn range(&self, space: TokenSpace) -> u32 {
        match space {
            TokenSpace::Category => self.categories,
            TokenSpace::Orientation => ORIENTATION_BINS,
            TokenSpace::Location | TokenSpace::Dimension => LOCATION_BINS,
        }
    }

    pub fn start(&self, space: TokenSpace) -> u32 {
        self.range(space)
    }

    pub fn stop(&self, space: TokenSpace) -> u32 {
        self.range(space) + 1
    }

    pub fn pad(&self, space: TokenSpace) -> u32 {
        self.range(space) + 2
    }

    /// Logit width for a head over this space.
    pub fn size(&self, space: TokenSpace) -> usize {
        self.range(space) as usize + 3
    }

    pub fn is_value(&self, space: TokenSpace, token: u32) -> bool {
        token < self.range(space)
    }
}

/// Quantized properties of one object, indexed like the bundle sequences.
pub type TokenRow = [u32; 8];

pub fn marker_row(vocab: &TokenVocab, marker: fn(&TokenVocab, TokenSpace) -> u32) -> TokenRow {
    std::array::from_fn(|s| marker(vocab, TokenSpace::of_sequence(s)))
}

pub fn quantize_object(o: &ObjectInstance, extent: f64) -> Result<TokenRow> {
    let loc = |v| quantize_value(v, PropertyKind::Location, extent);
    let dim = |v| quantize_value(v, PropertyKind::Dimension, extent);
    Ok([
        o.category as u32,
        loc(o.center[0])?,
        loc(o.center[1])?,
        loc(o.center[2])?,
        quantize_value(o.theta, PropertyKind::Orientation, extent)?,
        dim(o.dims[0])?,
        dim(o.dims[1])?,
        dim(o.dims[2])?,
    ])
}

pub fn dequantize_row(row: &TokenRow, extent: f64) -> Result<ObjectInstance> {
    let loc = |t| dequantize_value(t, PropertyKind::Location, extent);
    let dim = |t| dequantize_value(t, PropertyKind::Dimension, extent);
    ObjectInstance::new(
        row[SEQ_C] as usize,
        [loc(row[SEQ_X])?, loc(row[SEQ_Y])?, loc(row[SEQ_Z])?],
        dequantize_value(row[SEQ_THETA], PropertyKind::Orientation, extent)?,
        [dim(row[SEQ_L])?, dim(row[SEQ_W])?, dim(row[SEQ_H])?],
    )
}

/// The eight token sequences of a scene.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceBundle {
    pub sequences: [Vec<u32>; 8],
}

impl SequenceBundle {
    /// Closed bundle `[START, rows…, STOP]`.
    pub fn from_rows(vocab: &TokenVocab, rows: &[TokenRow]) -> Self {
        Self::build(vocab, rows, marker_row(vocab, TokenVocab::stop))
    }

    /// Open bundle whose final row is `partial` (unknown entries PAD).
    pub fn open(vocab: &TokenVocab, rows: &[TokenRow], partial: TokenRow) -> Self {
        Self::build(vocab, rows, partial)
    }

    fn build(vocab: &TokenVocab, rows: &[TokenRow], last: TokenRow) -> Self {
        let start = marker_row(vocab, TokenVocab::start);
        let sequences = std::array::from_fn(|s| {
            std::iter::once(start[s]).chain(rows.iter().map(|r| r[s])).chain(std::iter::once(last[s])).collect()
        });
        Self { sequences }
    }

    /// Rows including START and the final (STOP or partial) row.
    pub fn row_count(&self) -> usize {
        self.sequences[0].len()
    }

    pub fn row(&self, i: usize) -> TokenRow {
        std::array::from_fn(|s| self.sequences[s][i])
    }

    /// Right-pads every sequence with PAD up to `len` rows.
    pub fn pad_to(&mut self, vocab: &TokenVocab, len: usize) {
        for (s, seq) in self.sequences.iter_mut().enumerate() {
            let pad = vocab.pad(TokenSpace::of_sequence(s));
            while seq.len() < len {
                seq.push(pad);
            }
        }
    }

    /// Object rows of a well-formed closed bundle (padding allowed).
    pub fn object_rows(&self, vocab: &TokenVocab) -> Result<Vec<TokenRow>> {
        let len = self.sequences[0].len();
        if self.sequences.iter().any(|s| s.len() != len) {
            return Err(Error::MalformedBundle("sequences differ in length".into()));
        }
        let mut stop_at = None;
        for (s, seq) in self.sequences.iter().enumerate() {
            let space = TokenSpace::of_sequence(s);
            if seq.first() != Some(&vocab.start(space)) {
                return Err(Error::MalformedBundle(format!("sequence {} does not begin with START", SEQUENCE_NAMES[s])));
            }
            let stop = seq
                .iter()
                .position(|&t| t == vocab.stop(space))
                .ok_or_else(|| Error::MalformedBundle(format!("sequence {} has no STOP", SEQUENCE_NAMES[s])))?;
            if seq[1..stop].iter().any(|&t| !vocab.is_value(space, t)) {
                return Err(Error::MalformedBundle(format!(
                    "sequence {} has a non-value token before STOP",
                    SEQUENCE_NAMES[s]
                )));
            }
            if seq[stop + 1..].iter().any(|&t| t != vocab.pad(space)) {
                return Err(Error::MalformedBundle(format!("sequence {} has tokens after STOP", SEQUENCE_NAMES[s])));
            }
            match stop_at {
                None => stop_at = Some(stop),
                Some(first) if first != stop => {
                    return Err(Error::MalformedBundle(format!(
                        "STOP at index {first} in c but at index {stop} in {}",
                        SEQUENCE_NAMES[s]
                    )))
                }
                _ => {}
            }
        }
        Ok((1..stop_at.unwrap_or(1)).map(|i| self.row(i)).collect())
    }

    /// One line per sequence, space-separated token ids.
    pub fn debug_dump(&self) -> String {
        let mut out = String::new();
        for seq in &self.sequences {
            let line: Vec<String> = seq.iter().map(|t| t.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

pub fn encode_scene(scene: &Scene, table: &CategoryTable, vocab: &TokenVocab) -> Result<SequenceBundle> {
    if scene.objects.len() > MAX_OBJECTS {
        return Err(Error::TooManyObjects { count: scene.objects.len(), max: MAX_OBJECTS });
    }
    if let Some(i) = first_unsorted(&scene.objects, table)? {
        return Err(Error::Unsorted(i));
    }
    let rows = scene.objects.iter().map(|o| quantize_object(o, scene.extent)).collect::<Result<Vec<_>>>()?;
    Ok(SequenceBundle::from_rows(vocab, &rows))
}

/// Bin-center scene; the floor polygon is supplied by the caller.
pub fn decode_bundle(bundle: &SequenceBundle, vocab: &TokenVocab, extent: f64) -> Result<Vec<ObjectInstance>> {
    bundle
        .object_rows(vocab)?
        .iter()
        .map(|r| {
            if r[SEQ_C] >= vocab.categories {
                return Err(Error::MalformedBundle(format!("category token {} out of range", r[SEQ_C])));
            }
            dequantize_row(r, extent)
        })
        .collect()
}

/// `scene` with every property snapped to its bin center.
pub fn quantize_scene(scene: &Scene) -> Result<Scene> {
    let objects = scene
        .objects
        .iter()
        .map(|o| dequantize_row(&quantize_object(o, scene.extent)?, scene.extent))
        .collect::<Result<_>>()?;
    Ok(Scene { objects, polygon: scene.polygon.clone(), extent: scene.extent })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Category,
    Orientation,
    Location,
    Dimension,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Category, ModelKind::Orientation, ModelKind::Location, ModelKind::Dimension];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Category => "category",
            ModelKind::Orientation => "orientation",
            ModelKind::Location => "location",
            ModelKind::Dimension => "dimension",
        }
    }

    pub fn output_space(self) -> TokenSpace {
        match self {
            ModelKind::Category => TokenSpace::Category,
            ModelKind::Orientation => TokenSpace::Orientation,
            ModelKind::Location => TokenSpace::Location,
            ModelKind::Dimension => TokenSpace::Dimension,
        }
    }

    /// Location and dimension streams hold three slots per row.
    pub fn is_triple(self) -> bool {
        matches!(self, ModelKind::Location | ModelKind::Dimension)
    }

    /// Stream slots per bundle row.
    pub fn slots_per_row(self) -> usize {
        if self.is_triple() {
            3
        } else {
            1
        }
    }

    /// Input channels, each with its own embedding table.
    pub fn channels(self) -> &'static [Channel] {
        use Channel::*;
        match self {
            ModelKind::Category => &[Category, Orientation, X, Y, Z],
            ModelKind::Orientation => &[NextCategory, Orientation, X, Y, Z],
            ModelKind::Location => &[NextCategory, NextOrientation, LocationStream],
            ModelKind::Dimension => {
                &[NextCategory, NextOrientation, NextX, NextY, NextZ, DimensionStream]
            }
        }
    }
}

/// One aligned input stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    /// Property of the row the slot belongs to.
    Category,
    Orientation,
    X,
    Y,
    Z,
    /// Property of the row being predicted (left shift by one row).
    NextCategory,
    NextOrientation,
    NextX,
    NextY,
    NextZ,
    /// Interleaved `(x, y, z)` stream, one token behind the target.
    LocationStream,
    /// Interleaved `(l, w, h)` stream, one token behind the target.
    DimensionStream,
}

impl Channel {
    pub fn space(self) -> TokenSpace {
        match self {
            Channel::Category | Channel::NextCategory => TokenSpace::Category,
            Channel::Orientation | Channel::NextOrientation => TokenSpace::Orientation,
            Channel::DimensionStream => TokenSpace::Dimension,
            _ => TokenSpace::Location,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Category => "category",
            Channel::Orientation => "orientation",
            Channel::X => "x",
            Channel::Y => "y",
            Channel::Z => "z",
            Channel::NextCategory => "next_category",
            Channel::NextOrientation => "next_orientation",
            Channel::NextX => "next_x",
            Channel::NextY => "next_y",
            Channel::NextZ => "next_z",
            Channel::LocationStream => "location_stream",
            Channel::DimensionStream => "dimension_stream",
        }
    }
}

/// Aligned streams for one model; all vectors have the same length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelInput {
    pub kind: ModelKind,
    /// One token stream per entry of `kind.channels()`.
    pub tokens: Vec<Vec<u32>>,
    /// Object-position index (bundle row) per slot.
    pub positions: Vec<usize>,
    /// Coordinate index 0..3 per slot; all zero for scalar streams.
    pub coords: Vec<usize>,
    pub targets: Vec<u32>,
    pub loss_mask: Vec<bool>,
}

impl ModelInput {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Right-pads with PAD inputs and masked targets.
    pub fn pad_to(&mut self, vocab: &TokenVocab, len: usize) {
        for (stream, ch) in self.tokens.iter_mut().zip(self.kind.channels()) {
            stream.resize(len.max(stream.len()), vocab.pad(ch.space()));
        }
        let n = len.max(self.targets.len());
        self.positions.resize(n, 0);
        self.coords.resize(n, 0);
        self.targets.resize(n, vocab.pad(self.kind.output_space()));
        self.loss_mask.resize(n, false);
    }
}

/// Stream slot that predicts property `coord` of bundle row `row` (row ≥ 1).
pub fn prediction_slot(kind: ModelKind, row: usize, coord: usize) -> usize {
    (row - 1) * kind.slots_per_row() + coord
}

/// Builds the aligned streams of `kind` from `bundle`.
///
/// `openings` is the number of leading door/window rows; their targets are
/// excluded from the loss, as are PAD targets.
pub fn build_model_input(bundle: &SequenceBundle, kind: ModelKind, vocab: &TokenVocab, openings: usize) -> ModelInput {
    let rows = bundle.row_count();
    let per = kind.slots_per_row();
    let len = rows * per;
    let seq = |s: usize, r: usize| -> u32 {
        bundle.sequences[s].get(r).copied().unwrap_or_else(|| vocab.pad(TokenSpace::of_sequence(s)))
    };
    let interleaved = |base: usize, i: usize| -> u32 {
        if i < len {
            seq(base + i % 3, i / 3)
        } else {
            vocab.pad(TokenSpace::of_sequence(base))
        }
    };
    let channels = kind.channels();
    let mut tokens = vec![Vec::with_capacity(len); channels.len()];
    let mut positions = Vec::with_capacity(len);
    let mut coords = Vec::with_capacity(len);
    let mut targets = Vec::with_capacity(len);
    let mut loss_mask = Vec::with_capacity(len);
    let out_space = kind.output_space();
    for slot in 0..len {
        let (t, k) = (slot / per, slot % per);
        for (stream, ch) in tokens.iter_mut().zip(channels) {
            stream.push(match ch {
                Channel::Category => seq(SEQ_C, t),
                Channel::Orientation => seq(SEQ_THETA, t),
                Channel::X => seq(SEQ_X, t),
                Channel::Y => seq(SEQ_Y, t),
                Channel::Z => seq(SEQ_Z, t),
                Channel::NextCategory => seq(SEQ_C, t + 1),
                Channel::NextOrientation => seq(SEQ_THETA, t + 1),
                Channel::NextX => seq(SEQ_X, t + 1),
                Channel::NextY => seq(SEQ_Y, t + 1),
                Channel::NextZ => seq(SEQ_Z, t + 1),
                Channel::LocationStream => interleaved(SEQ_X, slot + 2),
                Channel::DimensionStream => interleaved(SEQ_L, slot + 2),
            });
        }
        positions.push(t);
        coords.push(k);
        let target = match kind {
            ModelKind::Category => seq(SEQ_C, t + 1),
            ModelKind::Orientation => seq(SEQ_THETA, t + 1),
            ModelKind::Location => interleaved(SEQ_X, slot + 3),
            ModelKind::Dimension => interleaved(SEQ_L, slot + 3),
        };
        targets.push(target);
        loss_mask.push(t >= openings && target != vocab.pad(out_space));
    }
    ModelInput { kind, tokens, positions, coords, targets, loss_mask }
}
