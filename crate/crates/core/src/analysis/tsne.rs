//! Exact O(n²) t-SNE.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EmbeddingSet, Projection2D, ProjectionMethod};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const BISECTION_STEPS: usize = 50;
const BISECTION_TOL: f64 = 1e-5;
const LEARNING_RATE: f64 = 200.0;
const EXAGGERATION: f64 = 4.0;
pub const EXAGGERATION_ITERS: usize = 100;
const MOMENTUM_SWITCH: usize = 250;
const INIT_STD: f64 = 1e-4;
/// Per-coordinate step gains: +0.2 when the gradient opposes the running
/// update, ×0.8 when it agrees, floored at 0.01.
const GAIN_UP: f64 = 0.2;
const GAIN_DOWN: f64 = 0.8;
const MIN_GAIN: f64 = 0.01;
/// Floor on P and Q entries inside logarithms and ratios.
const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            seed: 0,
        }
    }
}

/// Symmetrised joint probabilities and the per-point precisions
/// `β_i = 1/(2σ_i²)` found by bisection.
#[derive(Debug, Clone)]
pub struct Affinities {
    pub n: usize,
    /// Row-major `n×n`, zero diagonal, sums to 1.
    pub p: Vec<f64>,
    pub betas: Vec<f64>,
    /// Achieved perplexity of each conditional row.
    pub row_perplexity: Vec<f64>,
}

fn squared_distances(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// `p_{j|i}` for one row at precision `beta`, with its Shannon entropy in nats.
fn conditional_row(dist: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    // Shift by the nearest neighbour so exp() cannot underflow the whole row.
    let dmin = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, (o, &d)) in out.iter_mut().zip(dist).enumerate() {
        *o = if j == i { 0.0 } else { (-beta * (d - dmin)).exp() };
        sum += *o;
    }
    let mut h = 0.0;
    for o in out.iter_mut() {
        *o /= sum;
        if *o > 0.0 {
            h -= *o * o.ln();
        }
    }
    h
}

/// Bisection on each row's precision so its perplexity hits the target,
/// then `P = (P_cond + P_condᵀ) / 2n`.
pub fn joint_probabilities(x: &[Vec<f64>], perplexity: f64) -> Result<Affinities> {
    let n = x.len();
    check_perplexity(n, perplexity)?;
    let dist = squared_distances(x);
    let target = perplexity.ln();
    let mut cond = vec![0.0; n * n];
    let mut betas = vec![1.0; n];
    let mut row_perplexity = vec![0.0; n];
    for i in 0..n {
        let row = &dist[i * n..(i + 1) * n];
        let out = &mut cond[i * n..(i + 1) * n];
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut beta = 1.0;
        let mut h = conditional_row(row, i, beta, out);
        for _ in 0..BISECTION_STEPS {
            if (h - target).abs() < BISECTION_TOL {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
            h = conditional_row(row, i, beta, out);
        }
        betas[i] = beta;
        row_perplexity[i] = h.exp();
    }
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64);
        }
    }
    Ok(Affinities {
        n,
        p,
        betas,
        row_perplexity,
    })
}

fn check_perplexity(n: usize, perplexity: f64) -> Result<()> {
    if n < 4 {
        return Err(Error::Config(format!("t-SNE needs at least 4 points, got {n}")));
    }
    let limit = (n as f64 - 1.0) / 3.0;
    if !(perplexity > 0.0 && perplexity < limit) {
        return Err(Error::Config(format!(
            "perplexity {perplexity} infeasible for {n} points (must be in (0, {limit:.3}))"
        )));
    }
    Ok(())
}

/// Student-t affinities `q_ij` and the unnormalised kernel `(1+|y_i−y_j|²)⁻¹`.
fn q_matrix(y: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut num = vec![0.0; n * n];
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[2 * i] - y[2 * j];
            let dy = y[2 * i + 1] - y[2 * j + 1];
            let k = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = k;
            num[j * n + i] = k;
            sum += 2.0 * k;
        }
    }
    let q = num.iter().map(|k| k / sum).collect();
    (q, num)
}

/// `KL(P‖Q)` for a layout `y` (`[n×2]` row-major).
pub fn kl_divergence(p: &[f64], y: &[f64], n: usize) -> f64 {
    let (q, _) = q_matrix(y, n);
    p.iter()
        .zip(&q)
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &qij)| pij * (pij.max(PROB_FLOOR) / qij.max(PROB_FLOOR)).ln())
        .sum()
}

/// Momentum gradient descent with adaptive gains on KL(P‖Q), recording KL (against the
/// unexaggerated P) after every iteration.
pub fn tsne_project(set: &EmbeddingSet, params: &TsneParams) -> Result<Projection2D> {
    let n = set.len();
    check_perplexity(n, params.perplexity)?;
    let x: Vec<Vec<f64>> = (0..n).map(|i| set.row(i).to_vec()).collect();
    let aff = joint_probabilities(&x, params.perplexity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut y: Vec<f64> = (0..2 * n).map(|_| normal.sample(&mut rng)).collect();
    let mut update = vec![0.0; 2 * n];
    let mut gains = vec![1.0; 2 * n];
    let mut grad = vec![0.0; 2 * n];
    let mut kl_trace = Vec::with_capacity(params.iterations);

    for iter in 0..params.iterations {
        let exaggeration = if iter < EXAGGERATION_ITERS { EXAGGERATION } else { 1.0 };
        let momentum = if iter < MOMENTUM_SWITCH { 0.5 } else { 0.8 };
        let (q, num) = q_matrix(&y, n);
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = (exaggeration * aff.p[i * n + j] - q[i * n + j]) * num[i * n + j];
                gx += w * (y[2 * i] - y[2 * j]);
                gy += w * (y[2 * i + 1] - y[2 * j + 1]);
            }
            grad[2 * i] = 4.0 * gx;
            grad[2 * i + 1] = 4.0 * gy;
        }
        for (((u, g), k), yi) in update.iter_mut().zip(&grad).zip(gains.iter_mut()).zip(y.iter_mut()) {
            *k = if (*g > 0.0) != (*u > 0.0) {
                *k + GAIN_UP
            } else {
                (*k * GAIN_DOWN).max(MIN_GAIN)
            };
            *u = momentum * *u - LEARNING_RATE * *k * g;
            *yi += *u;
        }
        for c in 0..2 {
            let mean = (0..n).map(|i| y[2 * i + c]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[2 * i + c] -= mean);
        }
        kl_trace.push(kl_divergence(&aff.p, &y, n));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericDomain {
            op: "tsne_project",
            detail: "layout diverged to non-finite coordinates".into(),
        });
    }
    Ok(Projection2D {
        points: Tensor::new(&[n, 2], y)?,
        method: ProjectionMethod::Tsne {
            params: *params,
            kl_trace,
        },
    })
}

/// KL at the end of early exaggeration and at the last iteration, when the
/// run was long enough to have both.
pub fn kl_after_exaggeration(kl_trace: &[f64]) -> Option<(f64, f64)> {
    if kl_trace.len() <= EXAGGERATION_ITERS {
        return None;
    }
    Some((kl_trace[EXAGGERATION_ITERS - 1], *kl_trace.last().expect("non-empty")))
}
