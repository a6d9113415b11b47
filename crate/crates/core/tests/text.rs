use proptest::prelude::*;
use sceneformer_core::model::Condition;
use sceneformer_core::scene::geometry::rotate_quarter;
use sceneformer_core::scene::synth::default_table;
use sceneformer_core::scene::{make_synthetic_dataset, ObjectInstance, Scene, SyntheticConfig};
use sceneformer_core::text::describe::describe_with;
use sceneformer_core::text::{
    classify_relation, description_vocabulary, extract_relations, generate_description, load_embedding_table, text_condition,
    tokenize, DescribeConfig, EmbeddingTable, RelationType, Templates,
};
use sceneformer_core::Error;

const OPENERS: [&str; 6] =
    ["The room has", "In the room there are", "The room contains", "This room has", "There are", "In the room we see"];

fn obj(category: usize, center: [f64; 3], theta: f64, dims: [f64; 3]) -> ObjectInstance {
    ObjectInstance::new(category, center, theta, dims).unwrap()
}

fn scene(objects: Vec<ObjectInstance>) -> Scene {
    Scene { objects, polygon: vec![[0.0, 0.0], [6.0, 0.0], [6.0, 6.0], [0.0, 6.0]], extent: 6.0 }
}

#[test]
fn lamp_on_table() {
    let table = obj(6, [2.0, 2.0, 0.375], 0.0, [1.2, 0.6, 0.75]);
    let lamp = obj(14, [2.2, 2.1, 0.95], 30.0, [0.2, 0.2, 0.4]);
    assert_eq!(classify_relation(&lamp, &table).0, RelationType::On);
}

#[test]
fn stacked_boxes_are_above() {
    let low = obj(6, [1.0, 1.0, 0.5], 0.0, [1.0, 1.0, 1.0]);
    let high = obj(8, [1.0, 1.0, 2.5], 0.0, [1.0, 1.0, 1.0]);
    let (kind, d) = classify_relation(&high, &low);
    assert_eq!(kind, RelationType::Above);
    assert!((d - 2.0).abs() < 1e-12);
}

#[test]
fn containment() {
    let rug = obj(2, [1.0, 1.0, 0.3], 0.0, [2.0, 2.0, 0.6]);
    let small = obj(10, [1.2, 0.8, 1.0], 0.0, [0.4, 0.4, 0.3]);
    assert_eq!(classify_relation(&rug, &small).0, RelationType::Surrounding);
    let low = obj(10, [1.2, 0.8, 0.1], 0.0, [0.4, 0.4, 0.2]);
    assert_eq!(classify_relation(&low, &rug).0, RelationType::Inside);
}

#[test]
fn directions_in_reference_frame() {
    let b = obj(6, [0.0, 0.0, 0.5], 0.0, [0.5, 0.5, 1.0]);
    let at = |x: f64, y: f64| classify_relation(&obj(7, [x, y, 0.5], 0.0, [0.3, 0.3, 1.0]), &b).0;
    assert_eq!(at(1.0, 0.0), RelationType::RightOf);
    assert_eq!(at(0.0, 1.0), RelationType::InFrontOf);
    assert_eq!(at(-1.0, 0.0), RelationType::LeftOf);
    assert_eq!(at(0.0, -1.0), RelationType::Behind);
    // Quadrant edges: [-45, 45) is in front.
    assert_eq!(at(1.0, 1.0), RelationType::InFrontOf);
    assert_eq!(at(-1.0, 1.0), RelationType::LeftOf);
    let turned = obj(6, [0.0, 0.0, 0.5], 90.0, [0.5, 0.5, 1.0]);
    assert_eq!(classify_relation(&obj(7, [-1.0, 0.0, 0.5], 0.0, [0.3, 0.3, 1.0]), &turned).0, RelationType::InFrontOf);
}

fn next_clockwise(r: RelationType) -> RelationType {
    match r {
        RelationType::RightOf => RelationType::Behind,
        RelationType::Behind => RelationType::LeftOf,
        RelationType::LeftOf => RelationType::InFrontOf,
        RelationType::InFrontOf => RelationType::RightOf,
        other => other,
    }
}

proptest! {
    #[test]
    fn directional_labels_cycle_under_quarter_turns(
        x in -2.0f64..2.0, y in -2.0f64..2.0, theta in 0u32..4, q in 0u32..4,
    ) {
        let edge = (x.abs() - y.abs()).abs() < 1e-6;
        prop_assume!(!edge && x.hypot(y) > 0.6);
        let b = obj(6, [0.0, 0.0, 0.5], 90.0 * theta as f64, [0.4, 0.4, 1.0]);
        let a = obj(7, [x, y, 0.5], 0.0, [0.2, 0.2, 1.0]);
        let (kind, d) = classify_relation(&a, &b);
        prop_assert!(kind.is_directional());
        // Turning a about b clockwise while b keeps its heading advances the label.
        let p = rotate_quarter([x, y], 3);
        let moved = obj(7, [p[0], p[1], 0.5], 0.0, [0.2, 0.2, 1.0]);
        let (next, d2) = classify_relation(&moved, &b);
        prop_assert_eq!(next, next_clockwise(kind));
        prop_assert!((d - d2).abs() < 1e-12);
        // Turning the whole scene, headings included, changes nothing.
        let r = |o: &ObjectInstance| {
            let c = rotate_quarter(o.xy(), q);
            obj(o.category, [c[0], c[1], o.center[2]], (o.theta + 90.0 * q as f64) % 360.0, o.dims)
        };
        prop_assert_eq!(classify_relation(&r(&a), &r(&b)).0, kind);
    }
}

#[test]
fn far_pairs_are_dropped() {
    let s = scene(vec![obj(2, [1.0, 1.0, 0.3], 0.0, [0.5; 3]), obj(6, [4.0, 1.0, 0.3], 0.0, [0.5; 3])]);
    assert!(extract_relations(&s, 2.5).is_empty());
}

#[test]
fn collinear_triple() {
    let s = scene((0..3).map(|i| obj(2 + i, [1.0 + i as f64, 1.0, 0.3], 0.0, [0.5; 3])).collect());
    let rel = extract_relations(&s, 2.5);
    let pairs: Vec<(usize, usize, f64)> = rel.iter().map(|r| (r.subject, r.object, r.distance)).collect();
    assert_eq!(pairs.len(), 3);
    for want in [(1, 0, 1.0), (2, 0, 2.0), (2, 1, 1.0)] {
        assert!(pairs.iter().any(|p| p.0 == want.0 && p.1 == want.1 && (p.2 - want.2).abs() < 1e-12), "{want:?}");
    }
}

#[test]
fn relations_point_backwards_on_synthetic_scenes() {
    let d = make_synthetic_dataset(&SyntheticConfig::default(), 30, 3).unwrap();
    for s in &d.scenes {
        for r in extract_relations(s, 2.5) {
            assert!(r.subject > r.object);
            assert!(r.distance >= 0.0 && r.distance < 2.5);
        }
    }
}

#[test]
fn single_object_description() {
    let table = default_table();
    let s = scene(vec![obj(2, [2.0, 2.0, 0.3], 0.0, [2.0, 1.6, 0.6])]);
    for seed in 0..20 {
        let d = generate_description(&s, &table, &[], &DescribeConfig::default(), seed).unwrap();
        assert_eq!(d.sentences.len(), 1);
        let opener = OPENERS.iter().find(|o| d.sentences[0].starts_with(*o)).expect("known opener");
        assert_eq!(d.sentences[0], format!("{opener} a double bed ."));
    }
}

#[test]
fn repeated_categories_get_ordinals() {
    let table = default_table();
    let bed = |x: f64| obj(2, [x, 2.0, 0.3], 0.0, [2.0, 1.6, 0.6]);
    let desk = obj(6, [1.0, 4.0, 0.37], 0.0, [1.2, 0.6, 0.74]);
    let s = scene(vec![desk.clone(), obj(13, [2.5, 4.0, 0.4], 0.0, [0.8, 0.8, 0.8]), bed(1.5), bed(3.5)]);
    let rel = extract_relations(&s, 2.5);
    let cfg = DescribeConfig { p_desc: 1.0, ..Default::default() };
    let mut saw_second = false;
    for seed in 0..50 {
        let d = generate_description(&s, &table, &rel, &cfg, seed).unwrap();
        let beds: Vec<_> = d.mentioned.iter().filter(|m| m.category == "double bed").collect();
        if beds.len() == 2 {
            assert_eq!(beds[1].ordinal, 2);
            assert!(d.sentences.iter().any(|t| t.contains("a second double bed")), "{:?}", d.sentences);
            saw_second = true;
        }
    }
    assert!(saw_second);
}

#[test]
fn first_sentence_counts_repeats() {
    let table = default_table();
    let stand = |x: f64| obj(3, [x, 1.0, 0.25], 0.0, [0.5, 0.4, 0.5]);
    let s = scene(vec![stand(1.0), stand(2.0), stand(3.0)]);
    let d = describe_with(&s, &table, &[], &DescribeConfig::default(), Templates::bundled(), 1).unwrap();
    assert!(d.sentences[0].ends_with(" stands .") || d.sentences[0].ends_with(" a stand ."));
    assert!(d.sentences[0].contains("two stands") || d.sentences[0].contains("three stands"));
}

#[test]
fn seeded_descriptions_are_backed_by_relations() {
    let d = make_synthetic_dataset(&SyntheticConfig::default(), 10, 8).unwrap();
    let cfg = DescribeConfig::default();
    let mut relational = 0;
    for seed in 0..500u64 {
        let s = &d.scenes[seed as usize % d.scenes.len()];
        let rel = extract_relations(s, 2.5);
        let desc = generate_description(s, &d.table, &rel, &cfg, seed).unwrap();
        assert_eq!(desc, generate_description(s, &d.table, &rel, &cfg, seed).unwrap());
        assert_eq!(desc.sentences.len(), 1 + desc.relations.len());
        let first = desc.mentioned.len() - desc.relations.len();
        assert!((2..=3).contains(&first));
        for (k, r) in desc.relations.iter().enumerate() {
            relational += 1;
            assert!(r.distance < 2.5 && r.subject > r.object);
            assert!(rel.contains(r));
            assert_ne!(s.objects[r.subject].category, s.objects[r.object].category);
            // The subject is introduced by this sentence, the object already was.
            assert_eq!(desc.mentioned[first + k].index, r.subject);
            assert!(desc.mentioned[..first + k].iter().any(|m| m.index == r.object));
        }
        for m in &desc.mentioned {
            let o = &s.objects[m.index];
            assert_eq!(d.table.name(o.category), m.category);
            assert!(!d.table.is_opening(o.category));
        }
    }
    assert!(relational > 500);
}

#[test]
fn truncation_keeps_mentions_of_kept_sentences() {
    let d = make_synthetic_dataset(&SyntheticConfig::default(), 10, 8).unwrap();
    let cfg = DescribeConfig { p_desc: 1.0, ..Default::default() };
    let mut checked = 0;
    for (seed, s) in d.scenes.iter().enumerate() {
        let desc = generate_description(s, &d.table, &extract_relations(s, 2.5), &cfg, seed as u64).unwrap();
        if desc.sentences.len() < 4 {
            continue;
        }
        checked += 1;
        let t = desc.truncated(3);
        assert_eq!(t.sentences, desc.sentences[..3]);
        assert_eq!(t.relations, desc.relations[..2]);
        let first = desc.mentioned.len() - desc.relations.len();
        assert_eq!(t.mentioned, desc.mentioned[..first + 2]);
        assert_eq!(desc.truncated(99), desc);
    }
    assert!(checked > 0);
}

#[test]
fn p_desc_zero_keeps_only_the_opening_sentence() {
    let d = make_synthetic_dataset(&SyntheticConfig::default(), 5, 2).unwrap();
    let cfg = DescribeConfig { p_desc: 0.0, ..Default::default() };
    for s in &d.scenes {
        let desc = generate_description(s, &d.table, &extract_relations(s, 2.5), &cfg, 4).unwrap();
        assert_eq!(desc.sentences.len(), 1);
    }
    assert!(generate_description(&d.scenes[0], &d.table, &[], &DescribeConfig { p_desc: 1.5, ..Default::default() }, 0).is_err());
}

#[test]
fn empty_scene_cannot_be_described() {
    assert!(generate_description(&scene(vec![]), &default_table(), &[], &DescribeConfig::default(), 0).is_err());
}

#[test]
fn templates_are_pinned() {
    let t = Templates::bundled();
    assert_eq!(t.openers, OPENERS);
    assert_eq!(t.relations["next to"], "There is {subject} next to {object} .");
    assert_eq!(t.relations["right of"], "There is {subject} to the right of {object} .");
    assert_eq!(t.relations.len(), 9);
}

#[test]
fn tokenizer_rules() {
    assert_eq!(tokenize("There is a table ."), ["there", "is", "a", "table"]);
    assert_eq!(tokenize("A b. C, d! E? F."), ["a", "b", "c", "d", "e"]);
    assert!(tokenize("...").is_empty());
}

#[test]
fn embedding_table_round_trip() {
    let words = description_vocabulary(&default_table(), Templates::bundled());
    let t = EmbeddingTable::synthetic(&words, 100, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("glove.txt");
    t.save(&path).unwrap();
    let back = load_embedding_table(&path).unwrap();
    assert_eq!(back.dim(), 100);
    assert_eq!(back.len(), words.len());
    assert!(back.get("bed").is_some());
    assert!(back.get("spaceship").is_none());
    for w in &words {
        assert_eq!(back.get(w), t.get(w));
    }
}

#[test]
fn ragged_embedding_file_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.txt");
    std::fs::write(&path, "a 1 2 3\nb 1 2\n").unwrap();
    assert!(matches!(load_embedding_table(&path), Err(Error::Format { .. })));
}

#[test]
fn text_condition_truncates_and_zeroes_unknown_words() {
    let words: Vec<String> = ["bed", "zzz"].iter().map(|s| s.to_string()).collect();
    let t = EmbeddingTable::synthetic(&words[..1], 100, 2).unwrap();
    let long: Vec<String> = (0..41).map(|i| words[i % 2].clone()).collect();
    let Condition::Text { vectors, len, dim } = text_condition(&long, &t, 40).unwrap() else { panic!() };
    assert_eq!((len, dim, vectors.len()), (40, 100, 4000));
    assert_eq!(&vectors[..100], t.get("bed").unwrap());
    assert!(vectors[100..200].iter().all(|&v| v == 0.0));
    assert!(text_condition(&[], &t, 40).is_err());
}
