//! Seeded finite-difference suite over every differentiable primitive.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{finite_diff_check_many, GradCheckReport, Tensor, BCE_EPS};
use crate::vit::{self_attention, transformer_block, BlockParams, LN_EPS};

pub const GRADCHECK_OPS: [&str; 9] = [
    "matmul",
    "softmax_rows",
    "layer_norm",
    "gelu",
    "concat",
    "cross_entropy",
    "binary_cross_entropy",
    "attention",
    "transformer_block",
];

pub const GRADCHECK_H: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-4;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape matches")
}

/// `Σ wᵢ·yᵢ` with fixed random weights, so no output direction is favoured.
fn weighted_sum(y: &Tensor, w: &Tensor) -> Result<Tensor> {
    Ok(y.mul(w)?.sum())
}

/// One finite-difference check of `op` on inputs drawn from `seed`.
pub fn gradcheck_op(op: &str, seed: u64, h: f64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    match op {
        "matmul" => {
            let (a, b, w) = (
                uniform(r, &[3, 4], -1.0, 1.0),
                uniform(r, &[4, 2], -1.0, 1.0),
                uniform(r, &[3, 2], -1.0, 1.0),
            );
            finite_diff_check_many(op, |x| weighted_sum(&x[0].matmul(&x[1])?, &w), &[a, b], h, tol)
        }
        "softmax_rows" => {
            let (x, w) = (uniform(r, &[3, 5], -3.0, 3.0), uniform(r, &[3, 5], -1.0, 1.0));
            finite_diff_check_many(op, |x| weighted_sum(&x[0].softmax_rows()?, &w), &[x], h, tol)
        }
        "layer_norm" => {
            let x = uniform(r, &[3, 6], -2.0, 2.0);
            let g = uniform(r, &[6], 0.5, 1.5);
            let b = uniform(r, &[6], -0.5, 0.5);
            let w = uniform(r, &[3, 6], -1.0, 1.0);
            finite_diff_check_many(
                op,
                |x| weighted_sum(&x[0].layer_norm(&x[1], &x[2], LN_EPS)?, &w),
                &[x, g, b],
                h,
                tol,
            )
        }
        "gelu" => {
            let (x, w) = (uniform(r, &[2, 5], -3.0, 3.0), uniform(r, &[2, 5], -1.0, 1.0));
            finite_diff_check_many(op, |x| weighted_sum(&x[0].gelu(), &w), &[x], h, tol)
        }
        "concat" => {
            let (a, b, c) = (
                uniform(r, &[3, 2], -1.0, 1.0),
                uniform(r, &[3, 3], -1.0, 1.0),
                uniform(r, &[1, 5], -1.0, 1.0),
            );
            let w = uniform(r, &[4, 5], -1.0, 1.0);
            finite_diff_check_many(
                op,
                |x| weighted_sum(&Tensor::concat_rows(&[x[0].concat_cols(&x[1])?, x[2].clone()])?, &w),
                &[a, b, c],
                h,
                tol,
            )
        }
        "cross_entropy" => {
            let logits = uniform(r, &[4, 3], -2.0, 2.0);
            let labels: Vec<usize> = (0..4).map(|_| r.random_range(0..3)).collect();
            finite_diff_check_many(op, |x| x[0].cross_entropy(&labels), &[logits], h, tol)
        }
        "binary_cross_entropy" => {
            // Probabilities kept clear of the clamp so the loss is smooth.
            let p = uniform(r, &[5, 1], 0.05, 0.95);
            let t = Tensor::new(&[5, 1], (0..5).map(|_| r.random_range(0..2) as f64).collect())?;
            finite_diff_check_many(op, |x| x[0].binary_cross_entropy(&t, BCE_EPS), &[p], h, tol)
        }
        "attention" => {
            let q = uniform(r, &[3, 4], -1.0, 1.0);
            let k = uniform(r, &[5, 4], -1.0, 1.0);
            let v = uniform(r, &[5, 2], -1.0, 1.0);
            let w = uniform(r, &[3, 2], -1.0, 1.0);
            finite_diff_check_many(
                op,
                |x| weighted_sum(&self_attention(&x[0], &x[1], &x[2])?, &w),
                &[q, k, v],
                h,
                tol,
            )
        }
        "transformer_block" => {
            let (n, d, hid) = (3, 4, 8);
            let mut inputs = vec![uniform(r, &[n, d], -1.0, 1.0)];
            let shapes: [&[usize]; 13] = [
                &[d],
                &[d],
                &[d, d],
                &[d, d],
                &[d, d],
                &[d, d],
                &[d],
                &[d],
                &[d],
                &[d, hid],
                &[hid],
                &[hid, d],
                &[d],
            ];
            for (i, s) in shapes.iter().enumerate() {
                // LayerNorm gains near 1, everything else centred.
                let t = if i == 0 || i == 7 {
                    uniform(r, s, 0.5, 1.5)
                } else {
                    uniform(r, s, -0.6, 0.6)
                };
                inputs.push(t);
            }
            let w = uniform(r, &[n, d], -1.0, 1.0);
            let f = |x: &[Tensor]| {
                let block = BlockParams {
                    ln1_gamma: x[1].clone(),
                    ln1_beta: x[2].clone(),
                    w_q: x[3].clone(),
                    w_k: x[4].clone(),
                    w_v: x[5].clone(),
                    w_o: x[6].clone(),
                    b_o: x[7].clone(),
                    ln2_gamma: x[8].clone(),
                    ln2_beta: x[9].clone(),
                    mlp_w1: x[10].clone(),
                    mlp_b1: x[11].clone(),
                    mlp_w2: x[12].clone(),
                    mlp_b2: x[13].clone(),
                };
                weighted_sum(&transformer_block(&x[0], &block, 2)?, &w)
            };
            finite_diff_check_many(op, f, &inputs, h, tol)
        }
        other => Err(Error::Config(format!(
            "unknown primitive '{other}' (expected one of {})",
            GRADCHECK_OPS.join(", ")
        ))),
    }
}

/// Worst case for one primitive over a range of seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct OpSummary {
    pub op: &'static str,
    pub seeds: u64,
    pub failures: u64,
    pub worst_rel_error: f64,
    pub worst_seed: u64,
}

impl OpSummary {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Runs every primitive for seeds `0..seeds`.
pub fn gradcheck_suite(seeds: u64, h: f64, tol: f64) -> Result<Vec<OpSummary>> {
    GRADCHECK_OPS
        .iter()
        .map(|&op| {
            let mut s = OpSummary {
                op,
                seeds,
                failures: 0,
                worst_rel_error: 0.0,
                worst_seed: 0,
            };
            for seed in 0..seeds {
                let r = gradcheck_op(op, seed, h, tol)?;
                if !r.passed {
                    s.failures += 1;
                }
                if r.max_rel_error > s.worst_rel_error {
                    s.worst_rel_error = r.max_rel_error;
                    s.worst_seed = seed;
                }
            }
            Ok(s)
        })
        .collect()
}
