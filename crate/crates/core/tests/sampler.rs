use sceneformer_core::codec::{build_model_input, ModelKind, TokenSpace, SEQ_C};
use sceneformer_core::model::set::ModelSet;
use sceneformer_core::model::{Condition, Conditioning, TransformerConfig};
use sceneformer_core::sampler::{
    complete_scene, generate_scene, GenerationState, SamplerConfig, SceneCondition, StepOutcome,
};
use sceneformer_core::scene::{make_synthetic_dataset, Dataset, FloorPlan, ObjectInstance, SyntheticConfig};
use sceneformer_core::Error;

fn data() -> Dataset {
    make_synthetic_dataset(&SyntheticConfig::default(), 4, 17).unwrap()
}

fn set(d: &Dataset, mode: Conditioning) -> ModelSet {
    ModelSet::init(d.table.clone(), 6.0, 5, |k| TransformerConfig::desk(k, d.table.len(), mode)).unwrap()
}

/// Adds `bias` to the STOP logit of `kind`.
fn bias_stop(set: &mut ModelSet, kind: ModelKind, bias: f32) {
    let m = set.model_mut(kind);
    let vocab = m.config.vocab();
    let stop = vocab.stop(kind.output_space()) as usize;
    let id = m.params.id("head.b").unwrap();
    m.params.get_mut(id).value.data_mut()[stop] += bias;
}

fn never_stop(set: &mut ModelSet) {
    for kind in ModelKind::ALL {
        bias_stop(set, kind, -1e4);
    }
}

fn plan(d: &Dataset) -> FloorPlan {
    d.scenes[0].floor_plan(&d.table)
}

#[test]
fn generation_is_deterministic_per_seed() {
    let d = data();
    let s = set(&d, Conditioning::Shape);
    let cond = SceneCondition::Floor(plan(&d));
    let cfg = SamplerConfig { max_objects: 12, ..Default::default() };
    let a = generate_scene(&s, &cond, &cfg, 7).unwrap();
    let b = generate_scene(&s, &cond, &cfg, 7).unwrap();
    assert_eq!(a, b);
    let others: Vec<_> = (8..14).map(|seed| generate_scene(&s, &cond, &cfg, seed).unwrap().bundle).collect();
    assert!(others.iter().any(|o| *o != a.bundle));
}

#[test]
fn shape_generation_starts_with_openings() {
    let d = data();
    let s = set(&d, Conditioning::Shape);
    let door = ObjectInstance::new(d.table.door(), [1.0, 0.05, 1.0], 0.0, [0.9, 0.1, 2.0]).unwrap();
    let window = ObjectInstance::new(d.table.window(), [0.05, 2.0, 1.7], 90.0, [1.0, 0.1, 1.2]).unwrap();
    let plan = FloorPlan { polygon: vec![[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0]], openings: vec![window.clone(), door.clone()] };
    let g = generate_scene(&s, &SceneCondition::Floor(plan), &SamplerConfig { max_objects: 8, ..Default::default() }, 1).unwrap();
    let vocab = s.model(ModelKind::Category).config.vocab();
    let c = &g.bundle.sequences[SEQ_C];
    assert_eq!(c[0], vocab.start(TokenSpace::Category));
    assert_eq!(c[1] as usize, d.table.door());
    assert_eq!(c[2] as usize, d.table.window());
    assert_eq!(g.given, 2);
    assert_eq!(&g.scene.objects[..2], &[door, window]);
}

#[test]
fn category_stop_ends_generation_before_other_models() {
    let d = data();
    let mut s = set(&d, Conditioning::Shape);
    bias_stop(&mut s, ModelKind::Category, 1e4);
    let g = generate_scene(&s, &SceneCondition::Floor(plan(&d)), &SamplerConfig::default(), 3).unwrap();
    assert_eq!(g.stopped_by, Some(ModelKind::Category));
    assert_eq!(g.scene.objects.len(), g.given);
}

#[test]
fn stop_from_any_model_terminates() {
    let d = data();
    for kind in [ModelKind::Orientation, ModelKind::Location, ModelKind::Dimension] {
        let mut s = set(&d, Conditioning::None);
        never_stop(&mut s);
        bias_stop(&mut s, kind, 2e4);
        let g = generate_scene(&s, &SceneCondition::None, &SamplerConfig::default(), 3).unwrap();
        assert_eq!(g.stopped_by, Some(kind));
        assert!(g.scene.objects.is_empty());
    }
}

#[test]
fn one_step_adds_one_row_and_three_stream_slots() {
    let d = data();
    let mut s = set(&d, Conditioning::None);
    never_stop(&mut s);
    let mut state = GenerationState::new(&s, Vec::new(), &Condition::None, SamplerConfig::default(), 4).unwrap();
    let vocab = s.model(ModelKind::Category).config.vocab();
    for n in 1..=4 {
        assert_eq!(state.next_object().unwrap(), StepOutcome::Added);
        assert_eq!(state.rows.len(), n);
        let bundle = sceneformer_core::codec::SequenceBundle::from_rows(&vocab, &state.rows);
        let cat = build_model_input(&bundle, ModelKind::Category, &vocab, 0);
        let loc = build_model_input(&bundle, ModelKind::Location, &vocab, 0);
        let dim = build_model_input(&bundle, ModelKind::Dimension, &vocab, 0);
        assert_eq!(loc.len(), 3 * cat.len());
        assert_eq!(dim.len(), 3 * cat.len());
        assert_eq!(cat.len(), n + 2);
    }
}

#[test]
fn budget_exhaustion_forces_stop() {
    let d = data();
    let mut s = set(&d, Conditioning::None);
    never_stop(&mut s);
    let g = generate_scene(&s, &SceneCondition::None, &SamplerConfig { max_objects: 5, ..Default::default() }, 9).unwrap();
    assert!(g.budget_exhausted);
    assert_eq!(g.stopped_by, None);
    assert_eq!(g.scene.objects.len(), 5);
    let mut state = GenerationState::new(&s, Vec::new(), &Condition::None, SamplerConfig { max_objects: 1, ..Default::default() }, 1).unwrap();
    state.next_object().unwrap();
    assert_eq!(state.next_object().unwrap(), StepOutcome::Stopped);
    assert!(state.next_object().is_err());
}

#[test]
fn min_new_objects_withholds_stop() {
    let d = data();
    let mut s = set(&d, Conditioning::None);
    bias_stop(&mut s, ModelKind::Category, 1e4);
    let cfg = SamplerConfig { min_new_objects: 3, ..Default::default() };
    let g = generate_scene(&s, &SceneCondition::None, &cfg, 2).unwrap();
    assert_eq!(g.scene.objects.len(), 3);
    assert_eq!(g.stopped_by, Some(ModelKind::Category));
}

#[test]
fn completion_with_zero_budget_is_identity() {
    let d = data();
    let s = set(&d, Conditioning::Shape);
    for scene in &d.scenes {
        let g = complete_scene(&s, scene, None, Some(0), &SamplerConfig::default(), 5).unwrap();
        assert_eq!(&g.scene, scene);
    }
}

#[test]
fn completion_keeps_input_as_prefix() {
    let d = data();
    let mut s = set(&d, Conditioning::Shape);
    never_stop(&mut s);
    let mut partial = d.scenes[1].clone();
    partial.objects.truncate(4);
    let g = complete_scene(&s, &partial, None, Some(3), &SamplerConfig::default(), 5).unwrap();
    assert_eq!(&g.scene.objects[..4], &partial.objects[..]);
    assert_eq!(g.scene.objects.len(), 7);
    assert_eq!(g.given, 4);
}

#[test]
fn completion_rejects_unsorted_input() {
    let d = data();
    let s = set(&d, Conditioning::Shape);
    let mut scene = d.scenes[0].clone();
    scene.objects.reverse();
    assert!(matches!(complete_scene(&s, &scene, None, None, &SamplerConfig::default(), 1), Err(Error::Unsorted(_))));
}

#[test]
fn mode_mismatch_rejected() {
    let d = data();
    let shape = set(&d, Conditioning::Shape);
    let text = Condition::Text { vectors: vec![0.1; 300], len: 3, dim: 100 };
    let cfg = SamplerConfig::default();
    assert!(matches!(generate_scene(&shape, &SceneCondition::Text(text.clone()), &cfg, 1), Err(Error::ModeMismatch(_))));
    assert!(matches!(complete_scene(&shape, &d.scenes[0], Some(&text), None, &cfg, 1), Err(Error::ModeMismatch(_))));
    let texted = set(&d, Conditioning::Text);
    assert!(matches!(generate_scene(&texted, &SceneCondition::Floor(plan(&d)), &cfg, 1), Err(Error::ModeMismatch(_))));
    assert!(generate_scene(&texted, &SceneCondition::Text(text), &SamplerConfig { max_objects: 6, ..cfg }, 1).is_ok());
}

#[test]
fn degenerate_floor_rejected() {
    let d = data();
    let s = set(&d, Conditioning::Shape);
    let flat = FloorPlan { polygon: vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]], openings: vec![] };
    assert!(matches!(
        generate_scene(&s, &SceneCondition::Floor(flat), &SamplerConfig::default(), 1),
        Err(Error::DegeneratePolygon(_))
    ));
}

#[test]
fn model_set_round_trips_through_a_directory() {
    let d = data();
    let s = set(&d, Conditioning::Shape);
    let dir = tempfile::tempdir().unwrap();
    s.save(dir.path(), false).unwrap();
    let back = ModelSet::load(dir.path()).unwrap();
    assert_eq!(back.table, s.table);
    assert_eq!(back.conditioning, s.conditioning);
    let cond = SceneCondition::Floor(plan(&d));
    let cfg = SamplerConfig { max_objects: 10, ..Default::default() };
    assert_eq!(generate_scene(&s, &cond, &cfg, 4).unwrap(), generate_scene(&back, &cond, &cfg, 4).unwrap());
}
