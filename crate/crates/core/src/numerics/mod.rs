//! Dense tensors, reverse-mode differentiation, Adam and the learning-rate
//! schedule.

pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod tensor;

use std::sync::Arc;

pub use graph::{Gradients, Graph, Var};
pub use optim::{adam_step, lr_at, ScheduleConfig};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::{AttentionMask, Scalar, Tensor};

use crate::error::Result;

/// Scaled dot-product attention on plain tensors `[B, H, T, D]`.
pub fn scaled_dot_product_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    mask: Option<&AttentionMask>,
) -> Result<Tensor<T>> {
    let store = ParamStore::new();
    let mut g = Graph::inference(&store);
    let (q, k, v) = (g.input(q.clone()), g.input(k.clone()), g.input(v.clone()));
    let out = g.attention(q, k, v, mask.cloned().map(Arc::new))?;
    Ok(g.tensor(out))
}

/// Mean cross-entropy of `logits [N, V]` over the non-ignored targets.
pub fn cross_entropy_loss<T: Scalar>(logits: &Tensor<T>, targets: &[u32], ignore_id: u32) -> Result<T> {
    let store = ParamStore::new();
    let mut g = Graph::inference(&store);
    let l = g.input(logits.clone());
    let loss = g.cross_entropy(l, targets, ignore_id)?;
    Ok(g.value(loss)[0])
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f32> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Per-element double loop, independent of the fused kernel.
    fn naive_attention(q: &Tensor<f32>, k: &Tensor<f32>, v: &Tensor<f32>, mask: Option<&AttentionMask>) -> Vec<f64> {
        let [b, h, tq, d] = q.shape().try_into().unwrap();
        let tk = k.shape()[2];
        let at = |t: &Tensor<f32>, bi: usize, hi: usize, i: usize, j: usize, len: usize| {
            t.data()[((bi * h + hi) * len + i) * d + j] as f64
        };
        let mut out = vec![0.0; b * h * tq * d];
        for bi in 0..b {
            for hi in 0..h {
                for i in 0..tq {
                    let mut scores = vec![f64::NEG_INFINITY; tk];
                    for (j, s) in scores.iter_mut().enumerate() {
                        if mask.map_or(true, |m| m.allowed[i * tk + j]) {
                            *s = (0..d).map(|x| at(q, bi, hi, i, x, tq) * at(k, bi, hi, j, x, tk)).sum::<f64>()
                                / (d as f64).sqrt();
                        }
                    }
                    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let w: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                    let z: f64 = w.iter().sum();
                    for x in 0..d {
                        out[((bi * h + hi) * tq + i) * d + x] =
                            (0..tk).map(|j| w[j] / z * at(v, bi, hi, j, x, tk)).sum();
                    }
                }
            }
        }
        out
    }

    #[test]
    fn attention_single_key_returns_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random(&mut rng, &[1, 2, 3, 4]);
        let k = random(&mut rng, &[1, 2, 1, 4]);
        let v = random(&mut rng, &[1, 2, 1, 4]);
        let out = scaled_dot_product_attention(&q, &k, &v, None).unwrap();
        for hi in 0..2 {
            for i in 0..3 {
                let row = &out.data()[(hi * 3 + i) * 4..(hi * 3 + i + 1) * 4];
                assert_eq!(row, &v.data()[hi * 4..(hi + 1) * 4]);
            }
        }
    }

    #[test]
    fn attention_causal_first_position_sees_only_itself() {
        // orthonormal rows as q = k
        let eye: Vec<f32> = (0..9).map(|i| if i % 4 == 0 { 1.0 } else { 0.0 }).collect();
        let q = Tensor::new(vec![1, 1, 3, 3], eye).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = random(&mut rng, &[1, 1, 3, 3]);
        let out = scaled_dot_product_attention(&q, &q, &v, Some(&AttentionMask::causal(3))).unwrap();
        assert_eq!(&out.data()[..3], &v.data()[..3]);
    }

    #[test]
    fn attention_matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (q, k, v) = (random(&mut rng, &[1, 2, 4, 8]), random(&mut rng, &[1, 2, 4, 8]), random(&mut rng, &[1, 2, 4, 8]));
        for mask in [None, Some(AttentionMask::causal(4))] {
            let fast = scaled_dot_product_attention(&q, &k, &v, mask.as_ref()).unwrap();
            let slow = naive_attention(&q, &k, &v, mask.as_ref());
            for (a, b) in fast.data().iter().zip(&slow) {
                assert!((*a as f64 - b).abs() < 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn attention_fully_masked_row_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (q, k, v) = (random(&mut rng, &[1, 1, 2, 4]), random(&mut rng, &[1, 1, 3, 4]), random(&mut rng, &[1, 1, 3, 4]));
        let mask = AttentionMask::from_matrix(2, 3, vec![false, false, false, true, true, false]).unwrap();
        let out = scaled_dot_product_attention(&q, &k, &v, Some(&mask)).unwrap();
        assert!(out.data()[..4].iter().all(|&x| x == 0.0));
        assert!(out.data()[4..].iter().any(|&x| x != 0.0));
    }

    #[test]
    fn attention_rejects_mismatched_shapes() {
        let q = Tensor::<f32>::zeros(vec![1, 2, 3, 4]);
        let k = Tensor::<f32>::zeros(vec![1, 2, 3, 5]);
        assert!(matches!(scaled_dot_product_attention(&q, &k, &k, None), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn attention_rows_sum_to_one_over_attendable_keys() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let store = ParamStore::<f32>::new();
        let mut g = Graph::inference(&store);
        let q = g.input(random(&mut rng, &[2, 2, 5, 4]));
        let k = g.input(random(&mut rng, &[2, 2, 5, 4]));
        let v = g.input(random(&mut rng, &[2, 2, 5, 4]));
        let out = g.attention(q, k, v, Some(Arc::new(AttentionMask::causal(5)))).unwrap();
        let w = g.attention_weights(out).unwrap();
        for (r, row) in w.chunks(5).enumerate() {
            let i = r % 5;
            let s: f32 = row[..=i].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(row[i + 1..].iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let uniform = Tensor::<f64>::zeros(vec![3, 50]);
        let loss = cross_entropy_loss(&uniform, &[0, 7, 49], 50).unwrap();
        assert!((loss - 50f64.ln()).abs() < 1e-12);

        let mut confident = Tensor::<f64>::zeros(vec![1, 4]);
        confident.data_mut()[2] = 1000.0;
        assert!(cross_entropy_loss(&confident, &[2], 9).unwrap().abs() < 1e-12);

        let logits = Tensor::<f64>::from_f64(vec![1, 3], &[1.0, 2.0, 3.0]).unwrap();
        let expected = -(3f64.exp() / (1f64.exp() + 2f64.exp() + 3f64.exp())).ln();
        assert!((cross_entropy_loss(&logits, &[2], 9).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.4076).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_all_ignored_is_an_error() {
        let logits = Tensor::<f32>::zeros(vec![2, 3]);
        assert!(cross_entropy_loss(&logits, &[3, 3], 3).is_err());
    }

    #[test]
    fn forward_is_bit_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (q, k, v) = (random(&mut rng, &[2, 2, 6, 8]), random(&mut rng, &[2, 2, 6, 8]), random(&mut rng, &[2, 2, 6, 8]));
        let a = scaled_dot_product_attention(&q, &k, &v, Some(&AttentionMask::causal(6))).unwrap();
        let b = scaled_dot_product_attention(&q, &k, &v, Some(&AttentionMask::causal(6))).unwrap();
        assert_eq!(a, b);
    }
}
