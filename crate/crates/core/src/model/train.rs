//! Teacher-forced training of one property model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{build_model_input, encode_scene, ModelInput, ModelKind};
use crate::error::{Error, Result};
use crate::model::{Condition, Conditioning, ModelBatch, PropertyModel};
use crate::numerics::{adam_step, lr_at, Graph, ScheduleConfig};
use crate::scene::{augment_scene, rasterize_floor, sub_seed, CategoryTable, Scene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub schedule: ScheduleConfig,
    pub seed: u64,
    /// Random quarter turns plus a small shift per draw.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 2000, batch_size: 16, schedule: ScheduleConfig::default(), seed: 0, augment: true }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        self.schedule.validate()
    }
}

/// One training scene with the descriptions used in text mode.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub scene: Scene,
    /// Pre-embedded descriptions; one is drawn per step.
    pub texts: Vec<Condition>,
}

impl TrainingExample {
    pub fn new(scene: Scene) -> Self {
        Self { scene, texts: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub loss: f32,
}

/// Scene as seen by a model in `mode`: text and unconditioned models are
/// trained without the door/window prefix.
pub fn scene_for_mode(scene: &Scene, table: &CategoryTable, mode: Conditioning) -> Scene {
    match mode {
        Conditioning::Shape => scene.clone(),
        Conditioning::None | Conditioning::Text => scene.without_openings(table),
    }
}

/// Number of leading objects given to a model in `mode` rather than predicted.
pub fn prefix_len(scene: &Scene, table: &CategoryTable, mode: Conditioning) -> usize {
    match mode {
        Conditioning::Shape => scene.opening_count(table),
        Conditioning::None | Conditioning::Text => 0,
    }
}

pub fn floor_condition(scene: &Scene, resolution: usize) -> Result<Condition> {
    Ok(Condition::Floor(rasterize_floor(&scene.polygon, scene.extent, resolution)?))
}

/// Model input and condition of one (already augmented) example.
pub fn prepare_example(
    model: &PropertyModel,
    table: &CategoryTable,
    scene: &Scene,
    text: Option<&Condition>,
) -> Result<(ModelInput, Condition)> {
    let cfg = &model.config;
    let mode = cfg.conditioning;
    let scene = scene_for_mode(scene, table, mode);
    let bundle = encode_scene(&scene, table, &cfg.vocab())?;
    let input = build_model_input(&bundle, cfg.kind, &cfg.vocab(), prefix_len(&scene, table, mode));
    let cond = match mode {
        Conditioning::None => Condition::None,
        Conditioning::Shape => floor_condition(&scene, cfg.floor_resolution)?,
        Conditioning::Text => text.cloned().ok_or_else(|| Error::invalid("text-conditioned training needs descriptions"))?,
    };
    Ok((input, cond))
}

/// Trains `model` in place; `on_step` sees every step's loss.
pub fn train_model(
    model: &mut PropertyModel,
    examples: &[TrainingExample],
    table: &CategoryTable,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepLog),
) -> Result<Vec<StepLog>> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if model.config.conditioning == Conditioning::Text {
        if let Some(i) = examples.iter().position(|e| e.texts.is_empty()) {
            return Err(Error::invalid(format!("example {i} has no description")));
        }
    }
    let kind_salt = ModelKind::ALL.iter().position(|&k| k == model.config.kind).unwrap_or(0) as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, kind_salt));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed ^ 0x5eed, kind_salt));
    let use_dropout = model.config.dropout > 0.0;
    let mut log = Vec::with_capacity(cfg.steps as usize);
    for step in 0..cfg.steps {
        let mut inputs = Vec::with_capacity(cfg.batch_size);
        let mut conds = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let ex = &examples[rng.gen_range(0..examples.len())];
            let scene = if cfg.augment { augment_scene(&ex.scene, table, &mut rng)? } else { ex.scene.clone() };
            let text = if ex.texts.is_empty() { None } else { Some(&ex.texts[rng.gen_range(0..ex.texts.len())]) };
            let (input, cond) = prepare_example(model, table, &scene, text)?;
            inputs.push(input);
            conds.push(cond);
        }
        let batch = ModelBatch::new(&model.config, &inputs)?;
        let cond_refs: Vec<&Condition> = conds.iter().collect();
        let (loss, grads) = {
            let mut g = Graph::new(&model.params);
            let loss = model.loss(&mut g, &batch, &cond_refs, use_dropout.then_some(&mut dropout_rng))?;
            let value = g.value(loss)[0];
            if !value.is_finite() {
                return Err(Error::Diverged(format!(
                    "{} model loss is {value} at step {step}",
                    model.config.kind.name()
                )));
            }
            (value, g.backward(loss)?)
        };
        model.params.zero_grad();
        model.params.accumulate(&grads);
        let lr = lr_at(step, &cfg.schedule);
        adam_step(&mut model.params, lr, cfg.schedule.weight_decay)?;
        let entry = StepLog { step, lr, loss };
        on_step(&entry);
        log.push(entry);
    }
    Ok(log)
}

/// Fraction of supervised targets whose argmax logit is correct.
pub fn teacher_forced_accuracy(
    model: &PropertyModel,
    examples: &[TrainingExample],
    table: &CategoryTable,
) -> Result<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for ex in examples {
        let text = ex.texts.first();
        let (input, cond) = prepare_example(model, table, &ex.scene, text)?;
        let logits = model.logits(std::slice::from_ref(&input), &[&cond])?;
        let v = model.config.output_size();
        for (t, (&target, &keep)) in input.targets.iter().zip(&input.loss_mask).enumerate() {
            if !keep {
                continue;
            }
            let row = &logits.data()[t * v..(t + 1) * v];
            let best = row
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc })
                .0;
            hit += (best as u32 == target) as usize;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::invalid("no supervised targets"));
    }
    Ok(hit as f64 / total as f64)
}
