//! Autoregressive decoding across the four chained models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{
    build_model_input, dequantize_row, marker_row, prediction_slot, quantize_object, ModelInput, ModelKind,
    SequenceBundle, TokenRow, TokenSpace, TokenVocab, SEQ_C, SEQ_L, SEQ_THETA, SEQ_X,
};
use crate::error::{Error, Result};
use crate::model::set::ModelSet;
use crate::model::{Condition, Conditioning, EncodedMemory};
use crate::scene::{first_unsorted, order_violations, sort_scene, FloorPlan, ObjectInstance, Scene, MAX_OBJECTS};

pub const DEFAULT_TOP_P: f64 = 0.9;

/// Probability of every token after removing `banned` and renormalizing.
pub fn softmax_excluding(logits: &[f32], banned: &[u32]) -> Vec<f64> {
    let allowed = |i: usize| !banned.contains(&(i as u32));
    let max = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| allowed(i))
        .fold(f64::NEG_INFINITY, |m, (_, &x)| m.max(x as f64));
    let mut p: Vec<f64> =
        logits.iter().enumerate().map(|(i, &x)| if allowed(i) { (x as f64 - max).exp() } else { 0.0 }).collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= sum);
    p
}

/// Smallest set of tokens, by descending probability (ties to the lower
/// id), whose cumulative probability reaches `p`.
pub fn nucleus_candidates(probs: &[f64], p: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut cumulative = 0.0;
    let mut out = Vec::new();
    for i in order {
        out.push(i);
        cumulative += probs[i];
        if cumulative >= p - 1e-12 {
            break;
        }
    }
    out
}

/// Top-p sample from `logits`; `banned` tokens (at least PAD) never occur.
pub fn nucleus_sample<R: Rng>(logits: &[f32], p: f64, banned: &[u32], rng: &mut R) -> Result<u32> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!("top-p must lie in (0, 1], got {p}")));
    }
    if logits.iter().any(|x| x.is_nan()) {
        return Err(Error::invalid("NaN logit"));
    }
    let probs = softmax_excluding(logits, banned);
    let candidates = nucleus_candidates(&probs, p);
    let mass: f64 = candidates.iter().map(|&i| probs[i]).sum();
    if candidates.is_empty() || !(mass > 0.0) {
        return Err(Error::invalid("every token is banned"));
    }
    let mut u = rng.gen::<f64>() * mass;
    for &i in &candidates {
        u -= probs[i];
        if u < 0.0 {
            return Ok(i as u32);
        }
    }
    Ok(*candidates.last().expect("non-empty") as u32)
}

/// Highest logit outside `banned`; ties go to the lowest id.
pub fn argmax_excluding(logits: &[f32], banned: &[u32]) -> Result<u32> {
    let mut best: Option<(usize, f32)> = None;
    for (i, &x) in logits.iter().enumerate() {
        if banned.contains(&(i as u32)) || x.is_nan() {
            continue;
        }
        if best.map_or(true, |(_, b)| x > b) {
            best = Some((i, x));
        }
    }
    best.map(|(i, _)| i as u32).ok_or_else(|| Error::invalid("every token is banned"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub top_p: f64,
    /// Object budget including the given prefix.
    pub max_objects: usize,
    /// STOP is withheld until this many new objects exist.
    pub min_new_objects: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { top_p: DEFAULT_TOP_P, max_objects: MAX_OBJECTS, min_new_objects: 0 }
    }
}

/// What the models are conditioned on.
#[derive(Debug, Clone, PartialEq)]
pub enum SceneCondition {
    None,
    Floor(FloorPlan),
    /// Must hold a `Condition::Text`.
    Text(Condition),
}

impl SceneCondition {
    pub fn mode(&self) -> Conditioning {
        match self {
            SceneCondition::None => Conditioning::None,
            SceneCondition::Floor(_) => Conditioning::Shape,
            SceneCondition::Text(_) => Conditioning::Text,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepOutcome {
    Added,
    Stopped,
}

/// Decoding state over one open bundle.
pub struct GenerationState<'a> {
    set: &'a ModelSet,
    config: SamplerConfig,
    /// Object rows so far, START excluded.
    pub rows: Vec<TokenRow>,
    /// Leading rows that were given rather than generated.
    pub given: usize,
    pub stopped: bool,
    pub budget_exhausted: bool,
    pub stopped_by: Option<ModelKind>,
    rng: ChaCha8Rng,
    memories: [Option<EncodedMemory>; 4],
}

fn banned(vocab: &TokenVocab, space: TokenSpace, allow_stop: bool) -> Vec<u32> {
    let mut b = vec![vocab.pad(space), vocab.start(space)];
    if !allow_stop {
        b.push(vocab.stop(space));
    }
    b
}

impl<'a> GenerationState<'a> {
    pub fn new(set: &'a ModelSet, rows: Vec<TokenRow>, cond: &Condition, config: SamplerConfig, seed: u64) -> Result<Self> {
        if !(config.top_p > 0.0 && config.top_p <= 1.0) {
            return Err(Error::invalid(format!("top-p must lie in (0, 1], got {}", config.top_p)));
        }
        let limit = set.models.iter().map(|m| m.config.max_objects).min().unwrap_or(MAX_OBJECTS).min(MAX_OBJECTS);
        if config.max_objects > limit {
            return Err(Error::invalid(format!("object budget {} exceeds the model limit {limit}", config.max_objects)));
        }
        if rows.len() > config.max_objects {
            return Err(Error::TooManyObjects { count: rows.len(), max: config.max_objects });
        }
        let mut memories: [Option<EncodedMemory>; 4] = Default::default();
        for (slot, m) in memories.iter_mut().zip(&set.models) {
            let cond = match (cond, m.config.conditioning) {
                (Condition::Floor(mask), Conditioning::Shape) if mask.resolution() != m.config.floor_resolution => {
                    return Err(Error::shape("floor mask resolution differs between models"));
                }
                _ => cond,
            };
            *slot = m.encode_condition(cond)?;
        }
        let given = rows.len();
        Ok(Self {
            set,
            config,
            rows,
            given,
            stopped: false,
            budget_exhausted: false,
            stopped_by: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
            memories,
        })
    }

    fn logits(&self, kind: ModelKind, partial: &TokenRow, coord: usize) -> Result<Vec<f32>> {
        let m = self.set.model(kind);
        let vocab = m.config.vocab();
        let bundle = SequenceBundle::open(&vocab, &self.rows, *partial);
        let row = self.rows.len() + 1;
        let slot = prediction_slot(kind, row, coord);
        let mut input = build_model_input(&bundle, kind, &vocab, 0);
        truncate(&mut input, slot + 1);
        let idx = ModelKind::ALL.iter().position(|&k| k == kind).expect("kind listed in ALL");
        let logits = m.logits_with_memory(&input, self.memories[idx].as_ref())?;
        let v = m.config.output_size();
        Ok(logits.data()[slot * v..(slot + 1) * v].to_vec())
    }

    fn stop(&mut self, by: Option<ModelKind>) {
        self.stopped = true;
        self.stopped_by = by;
    }

    /// Samples and appends one object.
    pub fn next_object(&mut self) -> Result<StepOutcome> {
        match self.propose()? {
            Some(row) => {
                self.commit(row);
                Ok(StepOutcome::Added)
            }
            None => Ok(StepOutcome::Stopped),
        }
    }

    pub fn commit(&mut self, row: TokenRow) {
        self.rows.push(row);
    }

    /// Samples the next object without appending it: category by nucleus
    /// sampling, then orientation, location and dimensions by argmax. Any
    /// STOP (or an exhausted budget) ends generation and yields `None`.
    pub fn propose(&mut self) -> Result<Option<TokenRow>> {
        if self.stopped {
            return Err(Error::invalid("generation has already stopped"));
        }
        if self.rows.len() >= self.config.max_objects {
            self.budget_exhausted = true;
            self.stop(None);
            return Ok(None);
        }
        let vocab = self.set.model(ModelKind::Category).config.vocab();
        let allow_stop = self.rows.len() - self.given >= self.config.min_new_objects;
        let mut partial = marker_row(&vocab, TokenVocab::pad);

        let logits = self.logits(ModelKind::Category, &partial, 0)?;
        let c = nucleus_sample(&logits, self.config.top_p, &banned(&vocab, TokenSpace::Category, allow_stop), &mut self.rng)?;
        if c == vocab.stop(TokenSpace::Category) {
            self.stop(Some(ModelKind::Category));
            return Ok(None);
        }
        partial[SEQ_C] = c;

        let logits = self.logits(ModelKind::Orientation, &partial, 0)?;
        let o = argmax_excluding(&logits, &banned(&vocab, TokenSpace::Orientation, allow_stop))?;
        if o == vocab.stop(TokenSpace::Orientation) {
            self.stop(Some(ModelKind::Orientation));
            return Ok(None);
        }
        partial[SEQ_THETA] = o;

        for (kind, base, space) in
            [(ModelKind::Location, SEQ_X, TokenSpace::Location), (ModelKind::Dimension, SEQ_L, TokenSpace::Dimension)]
        {
            for k in 0..3 {
                let logits = self.logits(kind, &partial, k)?;
                let t = argmax_excluding(&logits, &banned(&vocab, space, allow_stop))?;
                if t == vocab.stop(space) {
                    self.stop(Some(kind));
                    return Ok(None);
                }
                partial[base + k] = t;
            }
        }
        Ok(Some(partial))
    }

    pub fn new_objects(&self) -> usize {
        self.rows.len() - self.given
    }
}

fn truncate(input: &mut ModelInput, len: usize) {
    for s in &mut input.tokens {
        s.truncate(len);
    }
    input.positions.truncate(len);
    input.coords.truncate(len);
    input.targets.truncate(len);
    input.loss_mask.truncate(len);
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub scene: Scene,
    /// Closed bundle of every row, given ones included.
    pub bundle: SequenceBundle,
    pub given: usize,
    pub budget_exhausted: bool,
    pub stopped_by: Option<ModelKind>,
    /// Adjacent objects out of canonical order (flagged only).
    pub order_violations: usize,
}

fn model_condition(set: &ModelSet, cond: &SceneCondition, polygon: &[[f64; 2]]) -> Result<Condition> {
    if cond.mode() != set.conditioning {
        return Err(Error::ModeMismatch(format!(
            "{} input given to {}-conditioned models",
            cond.mode().name(),
            set.conditioning.name()
        )));
    }
    Ok(match cond {
        SceneCondition::None => Condition::None,
        SceneCondition::Floor(_) => {
            let res = set.model(ModelKind::Category).config.floor_resolution;
            Condition::Floor(crate::scene::rasterize_floor(polygon, set.extent, res)?)
        }
        SceneCondition::Text(c @ Condition::Text { .. }) => c.clone(),
        SceneCondition::Text(_) => return Err(Error::invalid("text condition without word vectors")),
    })
}

fn square(extent: f64) -> Vec<[f64; 2]> {
    vec![[0.0, 0.0], [extent, 0.0], [extent, extent], [0.0, extent]]
}

/// Given objects, output polygon and model condition of one request.
pub(crate) struct Prepared {
    pub given: Vec<ObjectInstance>,
    pub polygon: Vec<[f64; 2]>,
    pub cond: Condition,
}

impl Prepared {
    pub fn rows(&self, set: &ModelSet) -> Result<Vec<TokenRow>> {
        self.given.iter().map(|o| quantize_object(o, set.extent)).collect()
    }
}

pub(crate) fn prepare_generate(set: &ModelSet, cond: &SceneCondition) -> Result<Prepared> {
    let (given, polygon) = match cond {
        SceneCondition::Floor(plan) => {
            plan.validate()?;
            if let Some(o) = plan.openings.iter().find(|o| !set.table.is_opening(o.category)) {
                return Err(Error::invalid(format!(
                    "floor plan opening has category `{}`",
                    set.table.names().get(o.category).map_or("?", String::as_str)
                )));
            }
            let openings = Scene { objects: plan.openings.clone(), polygon: plan.polygon.clone(), extent: set.extent };
            (sort_scene(&openings, &set.table)?.objects, plan.polygon.clone())
        }
        _ => (Vec::new(), square(set.extent)),
    };
    let cond = model_condition(set, cond, &polygon)?;
    Ok(Prepared { given, polygon, cond })
}

pub(crate) fn prepare_complete(set: &ModelSet, partial: &Scene, text: Option<&Condition>) -> Result<Prepared> {
    if (partial.extent - set.extent).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "scene extent {} differs from the models' extent {}",
            partial.extent, set.extent
        )));
    }
    if let Some(i) = first_unsorted(&partial.objects, &set.table)? {
        return Err(Error::Unsorted(i));
    }
    let cond = match (set.conditioning, text) {
        (Conditioning::Text, Some(t)) => SceneCondition::Text(t.clone()),
        (Conditioning::Text, None) => return Err(Error::ModeMismatch("text-conditioned models need a description".into())),
        (_, Some(_)) => {
            return Err(Error::ModeMismatch(format!("text given to {}-conditioned models", set.conditioning.name())))
        }
        (Conditioning::Shape, None) => {
            let plan = FloorPlan { polygon: partial.polygon.clone(), openings: Vec::new() };
            plan.validate()?;
            SceneCondition::Floor(plan)
        }
        (Conditioning::None, None) => SceneCondition::None,
    };
    let cond = model_condition(set, &cond, &partial.polygon)?;
    Ok(Prepared { given: partial.objects.clone(), polygon: partial.polygon.clone(), cond })
}

pub(crate) fn finish(set: &ModelSet, state: &GenerationState<'_>, prepared: Prepared) -> Result<Generation> {
    let vocab = set.model(ModelKind::Category).config.vocab();
    let mut objects = prepared.given;
    for row in &state.rows[state.given..] {
        objects.push(dequantize_row(row, set.extent)?);
    }
    let violations = order_violations(&objects, &set.table)?;
    Ok(Generation {
        scene: Scene { objects, polygon: prepared.polygon, extent: set.extent },
        bundle: SequenceBundle::from_rows(&vocab, &state.rows),
        given: state.given,
        budget_exhausted: state.budget_exhausted,
        stopped_by: state.stopped_by,
        order_violations: violations,
    })
}

fn run(set: &ModelSet, prepared: Prepared, max_new: Option<usize>, config: &SamplerConfig, seed: u64) -> Result<Generation> {
    let mut state = GenerationState::new(set, prepared.rows(set)?, &prepared.cond, config.clone(), seed)?;
    while max_new.map_or(true, |n| state.new_objects() < n) {
        if state.next_object()? == StepOutcome::Stopped {
            break;
        }
    }
    finish(set, &state, prepared)
}

/// New scene for `cond`. In shape mode the bundle starts with the floor
/// plan's doors and windows.
pub fn generate_scene(set: &ModelSet, cond: &SceneCondition, config: &SamplerConfig, seed: u64) -> Result<Generation> {
    run(set, prepare_generate(set, cond)?, None, config, seed)
}

/// Extends `partial` by at most `max_new` objects; its objects are kept
/// verbatim as the prefix of the result.
pub fn complete_scene(
    set: &ModelSet,
    partial: &Scene,
    text: Option<&Condition>,
    max_new: Option<usize>,
    config: &SamplerConfig,
    seed: u64,
) -> Result<Generation> {
    run(set, prepare_complete(set, partial, text)?, max_new, config, seed)
}
