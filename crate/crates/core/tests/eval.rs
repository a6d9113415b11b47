use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sceneformer_core::eval::{
    baseline_sampler, baseline_weights, category_accuracy, pair_accuracy, pairwise_heatmap, timing_benchmark, Baseline,
    MetricReport,
};
use sceneformer_core::scene::synth::default_table;
use sceneformer_core::scene::{augment_with, make_synthetic_dataset, ObjectInstance, Scene, SyntheticConfig};
use sceneformer_core::text::{extract_relations, generate_description, DescribeConfig};

fn obj(category: usize, center: [f64; 3], theta: f64) -> ObjectInstance {
    ObjectInstance::new(category, center, theta, [0.5, 0.5, 0.5]).unwrap()
}

fn scene(objects: Vec<ObjectInstance>) -> Scene {
    Scene { objects, polygon: vec![[0.0, 0.0], [6.0, 0.0], [6.0, 6.0], [0.0, 6.0]], extent: 6.0 }
}

#[test]
fn fixed_offset_lands_in_one_bin() {
    let scenes: Vec<Scene> = (0..40)
        .map(|i| {
            let theta = 90.0 * (i % 4) as f64;
            let f = sceneformer_core::scene::geometry::rotate([0.0, 1.0], theta);
            let c = [2.0 + 0.02 * i as f64, 3.0];
            scene(vec![obj(2, [c[0], c[1], 0.3], theta), obj(3, [c[0] + f[0], c[1] + f[1], 0.3], 0.0)])
        })
        .collect();
    let h = pairwise_heatmap(&scenes, 2, 3, 64, 3.0).unwrap();
    assert_eq!(h.samples, 40);
    assert_eq!(h.get(32, 42), 40);
    assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
    assert!(pairwise_heatmap(&scenes, 2, 3, 1, 3.0).is_err());
}

#[test]
fn heatmap_ignores_whole_scene_rotation() {
    let d = make_synthetic_dataset(&SyntheticConfig::default(), 60, 4).unwrap();
    let bed = d.table.index("double bed").unwrap();
    let stand = d.table.index("stand").unwrap();
    let base = pairwise_heatmap(&d.scenes, bed, stand, 64, 3.0).unwrap();
    for q in 1..4 {
        let turned: Vec<Scene> = d.scenes.iter().map(|s| augment_with(s, &d.table, q, [0.0, 0.0]).unwrap()).collect();
        let h = pairwise_heatmap(&turned, bed, stand, 64, 3.0).unwrap();
        assert_eq!(h.samples + h.dropped, base.samples + base.dropped);
        let moved: u64 = h.counts.iter().zip(&base.counts).map(|(a, b)| a.abs_diff(*b)).sum::<u64>() / 2;
        assert!(moved as f64 <= 0.01 * base.samples as f64, "{moved} of {}", base.samples);
    }
}

#[test]
fn stands_flank_the_bed_symmetrically() {
    let d = make_synthetic_dataset(&SyntheticConfig::default(), 200, 11).unwrap();
    let bed = d.table.index("double bed").unwrap();
    let stand = d.table.index("stand").unwrap();
    let h = pairwise_heatmap(&d.scenes, bed, stand, 64, 3.0).unwrap();
    let half = h.bins / 2;
    let left = h.peak_where(|ix, _| ix < half).unwrap();
    let right = h.peak_where(|ix, _| ix >= half).unwrap();
    assert!((left.0 + right.0).abs_diff(h.bins - 1) <= 1, "{left:?} {right:?}");
    assert!(left.1.abs_diff(right.1) <= 1, "{left:?} {right:?}");
    // Both modes sit beside the bed, not in front of it.
    assert!(h.cell_center(left.0, left.1)[0] < -0.5 && h.cell_center(right.0, right.1)[0] > 0.5);
}

proptest! {
    #[test]
    fn bin_sum_is_conserved(seed in 0u64..500, bins in 2usize..40, range in 0.5f64..4.0) {
        let d = make_synthetic_dataset(&SyntheticConfig::default(), 3, seed).unwrap();
        let pairs: u64 = d.scenes.iter().map(|s| {
            let n = |c: usize| s.objects.iter().filter(|o| o.category == c).count() as u64;
            n(2) * n(3)
        }).sum();
        let h = pairwise_heatmap(&d.scenes, 2, 3, bins, range).unwrap();
        prop_assert_eq!(h.counts.iter().sum::<u64>(), h.samples);
        prop_assert_eq!(h.samples + h.dropped, pairs);
    }

    #[test]
    fn accuracy_is_bounded_and_monotone(m in prop::collection::vec(0usize..6, 1..8), g in prop::collection::vec(0usize..6, 0..10), extra in 0usize..6) {
        let a = pair_accuracy(&m.iter().map(|c| c.to_string()).collect::<Vec<_>>(), &g.iter().map(|c| c.to_string()).collect::<Vec<_>>()).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let mut more = g.clone();
        more.push(m[extra % m.len()]);
        let b = pair_accuracy(&m.iter().map(|c| c.to_string()).collect::<Vec<_>>(), &more.iter().map(|c| c.to_string()).collect::<Vec<_>>()).unwrap();
        prop_assert!(b >= a);
    }
}

#[test]
fn accuracy_examples() {
    let acc = category_accuracy(&[(vec!["bed", "desk", "chair"], vec!["bed", "chair", "lamp"])]);
    assert!((acc.percent - 200.0 / 3.0).abs() < 1e-9);
    assert_eq!(category_accuracy(&[(vec!["bed", "desk"], vec!["lamp", "desk", "bed"])]).percent, 100.0);
    // Two mentioned beds need two generated beds.
    assert_eq!(pair_accuracy(&["bed", "bed"], &["bed"]), Some(0.5));
    let acc = category_accuracy(&[(vec![], vec!["bed"]), (vec!["bed"], vec![])]);
    assert_eq!((acc.percent, acc.scored, acc.skipped), (0.0, 1, 1));
}

/// Expected multiset accuracy of the uniform baseline: the sequence length
/// is geometric with stop chance 1/(C+1), capped at 50, and given length `n`
/// each category count is Binomial(n, 1/C).
fn uniform_expectation(mentioned: &[usize], c: usize) -> f64 {
    let q = c as f64 / (c as f64 + 1.0);
    let p_len = |n: usize| if n < 50 { q.powi(n as i32) * (1.0 - q) } else { q.powi(50) };
    let binom_tail = |n: usize, k: usize| -> f64 {
        if k > n {
            return 0.0;
        }
        let p = 1.0 / c as f64;
        let mut pmf = (1.0 - p).powi(n as i32);
        let mut below = 0.0;
        for j in 0..k {
            below += pmf;
            pmf *= (n - j) as f64 / (j + 1) as f64 * p / (1.0 - p);
        }
        1.0 - below
    };
    let mut counts = std::collections::HashMap::new();
    for &m in mentioned {
        *counts.entry(m).or_insert(0usize) += 1;
    }
    let mut hits = 0.0;
    for n in 0..=50 {
        let w = p_len(n);
        for &k in counts.values() {
            hits += w * (1..=k).map(|j| binom_tail(n, j)).sum::<f64>();
        }
    }
    hits / mentioned.len() as f64
}

#[test]
fn uniform_baseline_matches_closed_form() {
    let d = make_synthetic_dataset(&SyntheticConfig::default(), 200, 5).unwrap();
    let mentioned: Vec<Vec<usize>> = d
        .scenes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let desc = generate_description(s, &d.table, &extract_relations(s, 2.5), &DescribeConfig::default(), i as u64).unwrap();
            desc.mentioned.iter().map(|m| d.table.index(&m.category).unwrap()).collect()
        })
        .collect();
    let c = d.table.object_categories().count();
    let expected = 100.0 * mentioned.iter().map(|m| uniform_expectation(m, c)).sum::<f64>() / mentioned.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut pairs = Vec::new();
    for m in &mentioned {
        for _ in 0..100 {
            let g = baseline_sampler(Baseline::Uniform, &d.table, &mut rng).unwrap();
            pairs.push((m.iter().map(|c| c.to_string()).collect::<Vec<_>>(), g.iter().map(|c| c.to_string()).collect::<Vec<_>>()));
        }
    }
    let got = category_accuracy(&pairs).percent;
    assert!((got - expected).abs() < 1.0, "monte carlo {got:.2} vs closed form {expected:.2}");
}

#[test]
fn uniform_stop_probability() {
    let t = default_table();
    let (cats, w) = baseline_weights(Baseline::Uniform, &t);
    assert_eq!(cats.len(), 14);
    assert!((w[cats.len()] / w.iter().sum::<f64>() - 1.0 / 15.0).abs() < 1e-15);
}

#[test]
fn gt_baseline_follows_frequencies() {
    let base = default_table();
    let mut freq = vec![1u64; base.len()];
    freq[2] = 50;
    let t = base.with_frequencies(freq).unwrap();
    let (cats, w) = baseline_weights(Baseline::GtFrequency, &t);
    let total: f64 = w.iter().sum();
    let p = w[cats.iter().position(|&c| c == 2).unwrap()] / total;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut draws, mut hits) = (0u64, 0u64);
    while draws < 100_000 {
        let seq = baseline_sampler(Baseline::GtFrequency, &t, &mut rng).unwrap();
        draws += seq.len() as u64 + u64::from(seq.len() < 50);
        hits += seq.iter().filter(|&&c| c == 2).count() as u64;
    }
    let sigma = (p * (1.0 - p) / draws as f64).sqrt();
    assert!((hits as f64 / draws as f64 - p).abs() < 3.0 * sigma);
    let a = baseline_sampler(Baseline::GtFrequency, &t, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let b = baseline_sampler(Baseline::GtFrequency, &t, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn single_run_timing_has_zero_sd() {
    let t = timing_benchmark(1, |_| Ok(())).unwrap();
    assert_eq!((t.runs, t.sd), (1, 0.0));
    assert!(timing_benchmark(0, |_| Ok(())).is_err());
}

#[test]
fn reports_append_as_json_lines() {
    assert!(MetricReport::new("x", f64::NAN, 1, "h").is_err());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    MetricReport::new("a", 1.5, 3, "abc").unwrap().append_jsonl(&path).unwrap();
    MetricReport::new("b", 2.0, 4, "abc").unwrap().append_jsonl(&path).unwrap();
    let lines: Vec<MetricReport> =
        std::fs::read_to_string(&path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1].metric, "b");
}
