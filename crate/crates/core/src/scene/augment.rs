use rand::Rng;

use crate::error::Result;
use crate::scene::geometry::rotate_quarter;
use crate::scene::{sort_scene, CategoryTable, Scene};

const MAX_JITTER: f64 = 0.5;
const JITTER_TRIES: usize = 10;

/// Rotation by `quarters`·90° about the center of the normalization square,
/// then translation by `shift`; orientations follow the rotation.
pub fn augment_with(scene: &Scene, table: &CategoryTable, quarters: u32, shift: [f64; 2]) -> Result<Scene> {
    let c = scene.extent * 0.5;
    let transform = |p: [f64; 2]| {
        if quarters % 4 == 0 {
            return [p[0] + shift[0], p[1] + shift[1]];
        }
        let r = rotate_quarter([p[0] - c, p[1] - c], quarters);
        [r[0] + c + shift[0], r[1] + c + shift[1]]
    };
    let mut out = scene.clone();
    for o in &mut out.objects {
        let p = transform([o.center[0], o.center[1]]);
        o.center[0] = p[0];
        o.center[1] = p[1];
        o.theta = (o.theta + 90.0 * (quarters % 4) as f64).rem_euclid(360.0);
    }
    out.polygon = out.polygon.iter().map(|&p| transform(p)).collect();
    sort_scene(&out, table)
}

fn fits(scene: &Scene) -> bool {
    let inside = |v: f64| (0.0..scene.extent).contains(&v);
    scene.objects.iter().all(|o| inside(o.center[0]) && inside(o.center[1]))
        && scene.polygon.iter().all(|p| (0.0..=scene.extent).contains(&p[0]) && (0.0..=scene.extent).contains(&p[1]))
}

/// Random right-angle rotation plus a non-negative jitter in `[0, 0.5)` m per
/// axis. Jitter is redrawn up to ten times if the scene would leave the
/// normalization square, and dropped after that.
pub fn augment_scene<R: Rng>(scene: &Scene, table: &CategoryTable, rng: &mut R) -> Result<Scene> {
    let quarters = rng.gen_range(0..4u32);
    for _ in 0..JITTER_TRIES {
        let shift = [rng.gen_range(0.0..MAX_JITTER), rng.gen_range(0.0..MAX_JITTER)];
        let out = augment_with(scene, table, quarters, shift)?;
        if fits(&out) {
            return Ok(out);
        }
    }
    augment_with(scene, table, quarters, [0.0, 0.0])
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::scene::raster::rasterize_floor;
    use crate::scene::synth::{make_synthetic_dataset, SyntheticConfig};
    use crate::scene::ObjectInstance;

    fn dist(a: &ObjectInstance, b: &ObjectInstance) -> f64 {
        (0..3).map(|i| (a.center[i] - b.center[i]).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn identity_augmentation() {
        let data = make_synthetic_dataset(&SyntheticConfig::default(), 3, 1).unwrap();
        for s in &data.scenes {
            assert_eq!(&augment_with(s, &data.table, 0, [0.0, 0.0]).unwrap(), s);
        }
    }

    #[test]
    fn quarter_turn_about_center() {
        let names = ["door", "window", "bed"].map(String::from).to_vec();
        let table = CategoryTable::new(names, vec![1, 1, 1], 0, 1).unwrap();
        let s = Scene {
            objects: vec![ObjectInstance::new(2, [4.0, 3.0, 0.5], 10.0, [1.0; 3]).unwrap()],
            polygon: vec![[1.0, 1.0], [5.0, 1.0], [5.0, 5.0], [1.0, 5.0]],
            extent: 6.0,
        };
        let r = augment_with(&s, &table, 1, [0.0, 0.0]).unwrap();
        // (1, 0) relative to the center maps to (0, 1)
        assert!((r.objects[0].center[0] - 3.0).abs() < 1e-12);
        assert!((r.objects[0].center[1] - 4.0).abs() < 1e-12);
        assert_eq!(r.objects[0].theta, 100.0);
    }

    #[test]
    fn isometry_preserves_contents() {
        let data = make_synthetic_dataset(&SyntheticConfig::default(), 20, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for s in &data.scenes {
            let a = augment_scene(s, &data.table, &mut rng).unwrap();
            assert_eq!(a.objects.len(), s.objects.len());
            let mut cats_a: Vec<_> = a.objects.iter().map(|o| o.category).collect();
            let mut cats_s: Vec<_> = s.objects.iter().map(|o| o.category).collect();
            cats_a.sort();
            cats_s.sort();
            assert_eq!(cats_a, cats_s);
            let mut dims_a: Vec<String> = a.objects.iter().map(|o| format!("{:?}", o.dims)).collect();
            let mut dims_s: Vec<String> = s.objects.iter().map(|o| format!("{:?}", o.dims)).collect();
            dims_a.sort();
            dims_s.sort();
            assert_eq!(dims_a, dims_s);
            let pairwise = |sc: &Scene| {
                let mut d = Vec::new();
                for i in 0..sc.objects.len() {
                    for j in 0..i {
                        d.push(dist(&sc.objects[i], &sc.objects[j]));
                    }
                }
                d.sort_by(f64::total_cmp);
                d
            };
            for (x, y) in pairwise(&a).iter().zip(pairwise(s)) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rotated_mask_matches_rotated_polygon() {
        let data = make_synthetic_dataset(&SyntheticConfig::default(), 6, 3).unwrap();
        let res = 128;
        for s in &data.scenes {
            let original = rasterize_floor(&s.polygon, s.extent, res).unwrap();
            let rotated = augment_with(s, &data.table, 1, [0.0, 0.0]).unwrap();
            let mask = rasterize_floor(&rotated.polygon, s.extent, res).unwrap();
            let turned = original.rotate_quarter(1);
            let disagree = (0..res * res).filter(|&i| mask.pixels()[i] != turned.pixels()[i]).count();
            assert!((disagree as f64) / ((res * res) as f64) <= 0.02, "{disagree} pixels differ");
        }
    }
}
