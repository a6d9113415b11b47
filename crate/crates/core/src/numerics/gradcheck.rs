//! Central finite-difference checks of analytic gradients, in f64.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-3;
/// Absolute slack for gradients that vanish analytically.
pub const ABS_FLOOR: f64 = 1e-7;

/// Outcome of comparing analytic and numeric derivatives element by element.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    /// Largest `|a - n| / max(|a|, |n|)` over elements above the floor.
    pub max_rel_error: f64,
    pub first_failure: Option<String>,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.first_failure.is_none() && self.checked > 0
    }

    /// Records one comparison under `REL_TOL * max(|a|, |n|) + floor`.
    pub fn record(&mut self, label: impl FnOnce() -> String, analytic: f64, numeric: f64, floor: f64) {
        self.checked += 1;
        let scale = analytic.abs().max(numeric.abs());
        let err = (analytic - numeric).abs();
        if scale > floor {
            self.max_rel_error = self.max_rel_error.max(err / scale);
        }
        if !(err <= REL_TOL * scale + floor) && self.first_failure.is_none() {
            self.first_failure = Some(format!("{}: analytic {analytic} vs numeric {numeric}", label()));
        }
    }

    pub fn merge(&mut self, other: &GradCheck) {
        self.checked += other.checked;
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        if self.first_failure.is_none() {
            self.first_failure.clone_from(&other.first_failure);
        }
    }
}

pub type Build<'a> = dyn Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var> + 'a;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape matches data")
}

/// Reduces an arbitrary output to a scalar with fixed random weights.
pub fn weighted_sum(g: &mut Graph<'_, f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random_tensor(&mut rng, g.shape(out));
    let w = g.input(w);
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

/// Analytic gradients of the scalar `build` at `inputs` against central
/// differences, for every element of every input.
pub fn check_inputs(inputs: &[Tensor<f64>], build: &Build<'_>) -> Result<GradCheck> {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build(&mut g, &leaves)?;
    let grads = g.backward(loss)?;

    let mut report = GradCheck::default();
    for (li, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(leaves[li]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; input.numel()]);
        for (e, &a) in analytic.iter().enumerate() {
            let eval = |delta: f64| -> Result<f64> {
                let mut perturbed = inputs.to_vec();
                perturbed[li].data_mut()[e] += delta;
                let mut g = Graph::new(&store);
                let leaves: Vec<Var> = perturbed.into_iter().map(|t| g.leaf(t)).collect();
                let out = build(&mut g, &leaves)?;
                Ok(g.value(out)[0])
            };
            let numeric = (eval(STEP)? - eval(-STEP)?) / (2.0 * STEP);
            report.record(|| format!("input {li} element {e}"), a, numeric, ABS_FLOOR);
        }
    }
    Ok(report)
}

/// Names accepted by `check_operation`, one per differentiable operation.
pub const OPERATIONS: [&str; 21] = [
    "add",
    "add_broadcast",
    "mul",
    "scale",
    "matmul",
    "linear",
    "gelu",
    "relu",
    "softmax",
    "layer_norm",
    "group_norm",
    "embedding",
    "split_merge_heads",
    "attention",
    "cross_entropy",
    "conv2d",
    "nchw_to_seq",
    "reshape",
    "sum",
    "mean",
    "dropout",
];

/// Checks operation `name` on shapes and values drawn from `seed`.
pub fn check_operation(name: &str, seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dim = |lo: usize, hi: usize| rng.gen_range(lo..=hi);
    let (a, b, c, d) = (dim(1, 4), dim(1, 4), dim(1, 4), dim(1, 3));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let r = &mut rng;
    match name {
        "add" => check_inputs(&[random_tensor(r, &[a, b]), random_tensor(r, &[a, b])], &|g, v| {
            let y = g.add(v[0], v[1])?;
            weighted_sum(g, y, seed)
        }),
        "add_broadcast" => check_inputs(&[random_tensor(r, &[2, a, b]), random_tensor(r, &[a, b])], &|g, v| {
            let y = g.add_broadcast(v[0], v[1])?;
            weighted_sum(g, y, seed)
        }),
        "mul" => check_inputs(&[random_tensor(r, &[a, b]), random_tensor(r, &[a, b])], &|g, v| {
            let y = g.mul(v[0], v[1])?;
            weighted_sum(g, y, seed)
        }),
        "scale" => check_inputs(&[random_tensor(r, &[a, b])], &|g, v| {
            let y = g.scale(v[0], -1.75);
            weighted_sum(g, y, seed)
        }),
        "matmul" => check_inputs(&[random_tensor(r, &[a, b]), random_tensor(r, &[b, c])], &|g, v| {
            let y = g.matmul(v[0], v[1])?;
            weighted_sum(g, y, seed)
        }),
        "linear" => {
            let inputs = [random_tensor(r, &[2, a, b]), random_tensor(r, &[b, c]), random_tensor(r, &[c])];
            check_inputs(&inputs, &|g, v| {
                let y = g.linear(v[0], v[1], Some(v[2]))?;
                weighted_sum(g, y, seed)
            })
        }
        "gelu" => check_inputs(&[random_tensor(r, &[a, b + 3])], &|g, v| {
            let y = g.gelu(v[0]);
            weighted_sum(g, y, seed)
        }),
        "relu" => {
            // Kept away from the kink, where the derivative is undefined.
            let mut x = random_tensor(r, &[a, b + 3]);
            x.data_mut().iter_mut().for_each(|v| *v += v.signum() * 0.05);
            check_inputs(&[x], &|g, v| {
                let y = g.relu(v[0]);
                weighted_sum(g, y, seed)
            })
        }
        "softmax" => check_inputs(&[random_tensor(r, &[a, b + 1])], &|g, v| {
            let y = g.softmax(v[0])?;
            weighted_sum(g, y, seed)
        }),
        "layer_norm" => {
            let n = b + 1;
            let inputs = [random_tensor(r, &[a, n]), random_tensor(r, &[n]), random_tensor(r, &[n])];
            check_inputs(&inputs, &|g, v| {
                let y = g.layer_norm(v[0], v[1], v[2])?;
                weighted_sum(g, y, seed)
            })
        }
        "group_norm" => {
            let groups = d.min(2);
            let ch = groups * a.min(2);
            let inputs = [random_tensor(r, &[2, ch, b, c + 1]), random_tensor(r, &[ch]), random_tensor(r, &[ch])];
            check_inputs(&inputs, &|g, v| {
                let y = g.group_norm(v[0], v[1], v[2], groups)?;
                let s = g.nchw_to_seq(y)?;
                weighted_sum(g, s, seed)
            })
        }
        "embedding" => {
            let vocab = a + 1;
            let ids: Vec<u32> = (0..7).map(|_| r.gen_range(0..vocab as u32)).collect();
            check_inputs(&[random_tensor(r, &[vocab, b])], &move |g, v| {
                let y = g.embedding(v[0], &ids)?;
                weighted_sum(g, y, seed)
            })
        }
        "split_merge_heads" => {
            let heads = d.min(2);
            check_inputs(&[random_tensor(r, &[2, a, heads * b])], &move |g, v| {
                let s = g.split_heads(v[0], heads)?;
                let s = g.scale(s, 0.5);
                let m = g.merge_heads(s)?;
                weighted_sum(g, m, seed)
            })
        }
        "attention" => {
            let causal = seed % 2 == 0;
            let (tq, tk) = (a, if causal { a } else { b });
            let heads = d.min(2);
            let inputs = [
                random_tensor(r, &[2, heads, tq, c]),
                random_tensor(r, &[2, heads, tk, c]),
                random_tensor(r, &[2, heads, tk, c]),
            ];
            let mask = causal.then(|| Arc::new(AttentionMask::causal(tq)));
            check_inputs(&inputs, &move |g, v| {
                let y = g.attention(v[0], v[1], v[2], mask.clone())?;
                weighted_sum(g, y, seed)
            })
        }
        "cross_entropy" => {
            let (rows, vocab) = (a + 1, b + 1);
            let ignore = vocab as u32;
            let mut targets: Vec<u32> = (0..rows).map(|_| r.gen_range(0..vocab as u32)).collect();
            targets[rows - 1] = ignore;
            check_inputs(&[random_tensor(r, &[rows, vocab])], &move |g, v| g.cross_entropy(v[0], &targets, ignore))
        }
        "conv2d" => {
            let (cin, cout, size, stride) = (d.min(2), a.min(2), b + 2, c.min(2));
            let inputs = [
                random_tensor(r, &[2, cin, size, size + 1]),
                random_tensor(r, &[cout, cin, 3, 3]),
                random_tensor(r, &[cout]),
            ];
            check_inputs(&inputs, &move |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), stride, 1)?;
                let s = g.nchw_to_seq(y)?;
                weighted_sum(g, s, seed)
            })
        }
        "nchw_to_seq" => check_inputs(&[random_tensor(r, &[2, a, b, c])], &|g, v| {
            let s = g.nchw_to_seq(v[0])?;
            weighted_sum(g, s, seed)
        }),
        "reshape" => check_inputs(&[random_tensor(r, &[a, b, c])], &move |g, v| {
            let y = g.reshape(v[0], &[a * b, c])?;
            weighted_sum(g, y, seed)
        }),
        "sum" => check_inputs(&[random_tensor(r, &[a, b])], &|g, v| {
            let w = weighted_sum(g, v[0], seed)?;
            let sq = g.mul(w, w)?;
            Ok(g.sum(sq))
        }),
        "mean" => check_inputs(&[random_tensor(r, &[a, b])], &|g, v| {
            let sq = g.mul(v[0], v[0])?;
            Ok(g.mean(sq))
        }),
        "dropout" => check_inputs(&[random_tensor(r, &[a, b + 4])], &|g, v| {
            // A fresh generator per evaluation keeps the mask fixed.
            let mut mask_rng = ChaCha8Rng::seed_from_u64(seed);
            let y = g.dropout(v[0], 0.4, &mut mask_rng);
            weighted_sum(g, y, seed)
        }),
        other => Err(crate::Error::invalid(format!("no gradient check for operation `{other}`"))),
    }
}
