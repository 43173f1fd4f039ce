#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vtada_core::adversarial::{
    conditioning_probs, vtada_step_objective_with, AdaptationMode, AdversarialModel, ModelConfig,
};
use vtada_core::vit::ViTConfig;
use vtada_core::{Result, Tensor};

/// 4×4 single-channel images, 2×2 patches, width 4: 212 extractor parameters.
pub fn tiny_model_config(mode: AdaptationMode, seed: u64) -> ModelConfig {
    ModelConfig {
        vit: ViTConfig {
            image_h: 4,
            image_w: 4,
            channels: 1,
            patch: 2,
            embed_dim: 4,
            heads: 2,
            depth: 1,
            mlp_ratio: 2.0,
            feature_dim: 4,
            init_seed: seed,
            init: vtada_core::vit::InitScheme::Lecun,
        },
        num_classes: 3,
        classifier_hidden: 5,
        disc_hidden: 4,
        mode,
        head_seed: seed + 1,
    }
}

pub fn random_images(n: usize, h: usize, w: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Tensor::new(&[h, w, 1], (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap())
        .collect()
}

/// Model with `params[p][e]` moved by `delta`, everything else shared.
pub fn perturbed(model: &AdversarialModel, p: usize, e: usize, delta: f64) -> AdversarialModel {
    let mut params: Vec<Tensor> = model.params();
    let mut data = params[p].data().to_vec();
    data[e] += delta;
    params[p] = params[p].with_data(data).unwrap();
    model.with_params(&params).unwrap()
}

/// Result of the explicit two-term finite-difference check of the full
/// adversarial objective.
#[derive(Debug)]
pub struct MinimaxCheck {
    pub extractor_params: usize,
    pub total_params: usize,
    pub max_rel_error: f64,
}

/// Analytic gradient of `total` (one backward pass through the reversal
/// layer) against central differences of `l_c + c·l_d`, where `c = −λ` for
/// extractor parameters and `c = 1` elsewhere. Conditioning probabilities
/// are frozen at the unperturbed model so the detached path stays fixed.
pub fn minimax_fd_check(mode: AdaptationMode, seed: u64, lambda: f64, h: f64) -> Result<MinimaxCheck> {
    minimax_fd_check_signed(mode, seed, lambda, h, -1.0)
}

/// As [`minimax_fd_check`] with the oracle's extractor sign as a parameter,
/// so a negative control can show the check notices a wrong sign.
pub fn minimax_fd_check_signed(
    mode: AdaptationMode,
    seed: u64,
    lambda: f64,
    h: f64,
    extractor_sign: f64,
) -> Result<MinimaxCheck> {
    let model = AdversarialModel::new(tiny_model_config(mode, seed))?;
    let src = random_images(2, 4, 4, seed + 10);
    let tgt = random_images(2, 4, 4, seed + 11);
    let labels = [0usize, 2];
    let probs = conditioning_probs(&model, &src, &tgt)?;
    let cond = mode.is_conditional().then_some(&probs);

    model.zero_grad();
    let bundle = vtada_step_objective_with(&model, &src, &labels, &tgt, lambda, cond)?;
    bundle.total.backward()?;
    let params = model.params();
    let named = model.named_params();

    let mut worst = 0.0f64;
    let mut extractor_params = 0;
    for (p, (name, t)) in named.iter().enumerate() {
        let is_extractor = name.starts_with("extractor.");
        if is_extractor {
            extractor_params += t.numel();
        }
        let c = if is_extractor { extractor_sign * lambda } else { 1.0 };
        let analytic = params[p].grad().unwrap_or_else(|| vec![0.0; t.numel()]);
        for e in 0..t.numel() {
            let eval = |delta: f64| -> Result<f64> {
                let m = perturbed(&model, p, e, delta);
                let b = vtada_step_objective_with(&m, &src, &labels, &tgt, lambda, cond)?;
                Ok(b.l_c.item() + c * b.l_d.item())
            };
            let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
            let err = (analytic[e] - numeric).abs() / analytic[e].abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(MinimaxCheck {
        extractor_params,
        total_params: model.param_count(),
        max_rel_error: worst,
    })
}

/// Eight points in ℝ⁵: two seeded Gaussian blobs of four, centred at 0 and
/// at 6 on every axis.
pub fn two_blobs(seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
    (0..8)
        .map(|i| {
            let c = if i < 4 { 0.0 } else { 6.0 };
            (0..5).map(|_| c + rng.sample(normal)).collect()
        })
        .collect()
}

/// `P` straight from the definition: for each row,
/// `p_{j|i} = exp(−β_i‖x_i−x_j‖²) / Σ_{k≠i} exp(−β_i‖x_i−x_k‖²)`, then
/// `p_ij = (p_{j|i} + p_{i|j}) / 2n`.
pub fn p_matrix_oracle(x: &[Vec<f64>], betas: &[f64]) -> Vec<f64> {
    let n = x.len();
    let d2 = |i: usize, j: usize| x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let mut cond = vec![0.0; n * n];
    for i in 0..n {
        let z: f64 = (0..n).filter(|&k| k != i).map(|k| (-betas[i] * d2(i, k)).exp()).sum();
        for j in (0..n).filter(|&j| j != i) {
            cond[i * n + j] = (-betas[i] * d2(i, j)).exp() / z;
        }
    }
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64);
        }
    }
    p
}

/// Perplexity `2^H` of row `i` at precision `beta`, with `H` in bits.
pub fn row_perplexity_bits(x: &[Vec<f64>], i: usize, beta: f64) -> f64 {
    let n = x.len();
    let d2 = |j: usize| x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let w: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| (-beta * d2(j)).exp()).collect();
    let z: f64 = w.iter().sum();
    let h: f64 = w
        .iter()
        .map(|v| v / z)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.log2())
        .sum();
    h.exp2()
}

/// Independent precision search: geometric bisection on `β` over a fixed
/// bracket until the perplexity (computed in bits) matches.
pub fn bisect_beta(x: &[Vec<f64>], i: usize, perplexity: f64) -> f64 {
    let (mut lo, mut hi) = (1e-12f64, 1e12f64);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        // Perplexity falls as β rises.
        if row_perplexity_bits(x, i, mid) > perplexity {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo * hi).sqrt()
}
