//! Classifier `C`, domain discriminator `D`, and the adversarial objective.
//!
//! The discriminator output is read as P(sample is from the source domain):
//! BCE target 1 for source rows, 0 for target rows. The minimax is folded
//! into one backward pass with a gradient-reversal layer placed between the
//! (conditioned) features and `D`, so `D` descends on the domain loss while
//! the extractor receives `-lambda_d` times that gradient.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tensor, BCE_EPS};
use crate::vit::{vit_forward_batch, ViTConfig, ViTParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptationMode {
    /// Classification loss only; the domain loss is reported but detached.
    SourceOnly,
    Dann,
    /// Discriminator sees `[F(x), softmax(C(F(x)))]`.
    CdanConcat,
    /// Discriminator sees the flattened outer product `F(x) ⊗ softmax(C(F(x)))`.
    CdanMultilinear,
}

impl AdaptationMode {
    pub const ALL: [AdaptationMode; 4] = [
        AdaptationMode::SourceOnly,
        AdaptationMode::Dann,
        AdaptationMode::CdanConcat,
        AdaptationMode::CdanMultilinear,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AdaptationMode::SourceOnly => "source_only",
            AdaptationMode::Dann => "dann",
            AdaptationMode::CdanConcat => "cdan_concat",
            AdaptationMode::CdanMultilinear => "cdan_multilinear",
        }
    }

    pub fn is_conditional(self) -> bool {
        matches!(self, AdaptationMode::CdanConcat | AdaptationMode::CdanMultilinear)
    }

    /// Discriminator input width for feature width `m` and `k` classes.
    pub fn disc_input_dim(self, m: usize, k: usize) -> usize {
        match self {
            AdaptationMode::SourceOnly | AdaptationMode::Dann => m,
            AdaptationMode::CdanConcat => m + k,
            AdaptationMode::CdanMultilinear => m * k,
        }
    }
}

impl fmt::Display for AdaptationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AdaptationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown adaptation.mode '{s}' (expected dann, cdan_concat, cdan_multilinear or source_only)"
            ))
        })
    }
}

/// Fully connected stack with GELU between layers and a linear last layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init(widths: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let (mut weights, mut biases) = (Vec::new(), Vec::new());
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect();
            weights.push(Tensor::param(&[fan_in, fan_out], w).expect("sized"));
            biases.push(Tensor::param(&[fan_out], vec![0.0; fan_out]).expect("sized"));
        }
        Self { weights, biases }
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().expect("non-empty").shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, w) = x.dims2("mlp")?;
        if w != self.input_dim() {
            return Err(Error::shape("mlp", x.shape(), self.weights[0].shape()));
        }
        let last = self.weights.len() - 1;
        let mut h = x.clone();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = h.matmul(w)?.add_row(b)?;
            if i < last {
                h = h.gelu();
            }
        }
        Ok(h)
    }

    fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            out.push((format!("{prefix}.w{i}"), w));
            out.push((format!("{prefix}.b{i}"), b));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vit: ViTConfig,
    pub num_classes: usize,
    pub classifier_hidden: usize,
    pub disc_hidden: usize,
    pub mode: AdaptationMode,
    /// Seed for the classifier and discriminator weights.
    pub head_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vit: ViTConfig::default(),
            num_classes: 4,
            classifier_hidden: 64,
            disc_hidden: 64,
            mode: AdaptationMode::Dann,
            head_seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.vit.validate()?;
        if self.num_classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if self.classifier_hidden == 0 || self.disc_hidden == 0 {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }

    pub fn disc_input_dim(&self) -> usize {
        self.mode.disc_input_dim(self.vit.feature_dim, self.num_classes)
    }
}

/// Which player a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Extractor,
    Classifier,
    Discriminator,
}

/// The triple `(F, C, D)` plus its conditioning mode.
#[derive(Debug, Clone)]
pub struct AdversarialModel {
    pub config: ModelConfig,
    pub extractor: ViTParams,
    pub classifier: Mlp,
    pub discriminator: Mlp,
}

impl AdversarialModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let extractor = ViTParams::init(&config.vit)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.head_seed);
        let m = config.vit.feature_dim;
        let classifier = Mlp::init(&[m, config.classifier_hidden, config.num_classes], &mut rng);
        let h = config.disc_hidden;
        let discriminator = Mlp::init(&[config.disc_input_dim(), h, h, 1], &mut rng);
        Ok(Self {
            config,
            extractor,
            classifier,
            discriminator,
        })
    }

    pub fn mode(&self) -> AdaptationMode {
        self.config.mode
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// All parameters with `extractor.` / `classifier.` / `discriminator.`
    /// prefixes, in a fixed order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .extractor
            .named_params()
            .into_iter()
            .map(|(n, t)| (format!("extractor.{n}"), t))
            .collect();
        out.extend(self.classifier.named_params("classifier"));
        out.extend(self.discriminator.named_params("discriminator"));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.extractor.params_mut();
        out.extend(self.classifier.params_mut());
        out.extend(self.discriminator.params_mut());
        out
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t.clone()).collect()
    }

    /// Group of each parameter, aligned with [`AdversarialModel::named_params`].
    pub fn param_groups(&self) -> Vec<ParamGroup> {
        self.named_params()
            .iter()
            .map(|(n, _)| {
                if n.starts_with("extractor.") {
                    ParamGroup::Extractor
                } else if n.starts_with("classifier.") {
                    ParamGroup::Classifier
                } else {
                    ParamGroup::Discriminator
                }
            })
            .collect()
    }

    /// Copy of the model whose parameters are `params` (same order and shapes
    /// as [`AdversarialModel::named_params`]).
    pub fn with_params(&self, params: &[Tensor]) -> Result<Self> {
        let mut out = self.clone();
        let slots = out.params_mut();
        if slots.len() != params.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter tensors, got {}",
                slots.len(),
                params.len()
            )));
        }
        for (slot, p) in slots.into_iter().zip(params) {
            if slot.shape() != p.shape() {
                return Err(Error::shape("with_params", slot.shape(), p.shape()));
            }
            *slot = p.clone();
        }
        Ok(out)
    }

    pub fn zero_grad(&self) {
        for (_, p) in self.named_params() {
            p.zero_grad();
        }
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Snapshot whose parameters do not require grad, so forward passes
    /// record no graph. Cheap to send to another thread.
    pub fn frozen(&self) -> Self {
        let params: Vec<Tensor> = self.params().iter().map(Tensor::detach).collect();
        self.with_params(&params).expect("same layout")
    }

    pub fn features(&self, images: &[Tensor]) -> Result<Tensor> {
        vit_forward_batch(images, &self.config.vit, &self.extractor)
    }

    /// Argmax class predictions.
    pub fn predict(&self, images: &[Tensor]) -> Result<Vec<usize>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        classify(&self.features(images)?, &self.classifier)?.argmax_rows()
    }
}

/// Class logits `[n×K]`.
pub fn classify(features: &Tensor, classifier: &Mlp) -> Result<Tensor> {
    classifier.forward(features)
}

/// Per-row source-domain probability `[n×1]`.
pub fn discriminate(input: &Tensor, discriminator: &Mlp) -> Result<Tensor> {
    Ok(discriminator.forward(input)?.sigmoid())
}

/// Discriminator input for `mode`. Conditional modes use `softmax(logits)`.
pub fn condition(features: &Tensor, logits: &Tensor, mode: AdaptationMode) -> Result<Tensor> {
    let (n, _) = features.dims2("condition")?;
    let (n2, _) = logits.dims2("condition")?;
    if n != n2 {
        return Err(Error::shape("condition", features.shape(), logits.shape()));
    }
    match mode {
        AdaptationMode::SourceOnly | AdaptationMode::Dann => Ok(features.clone()),
        AdaptationMode::CdanConcat => features.concat_cols(&logits.softmax_rows()?),
        AdaptationMode::CdanMultilinear => features.outer_rows(&logits.softmax_rows()?),
    }
}

/// `−(mean log D(src) + mean log(1 − D(tgt)))`, the quantity `D` minimizes.
pub fn dann_domain_loss(d_src: &Tensor, d_tgt: &Tensor) -> Result<Tensor> {
    if d_src.numel() == 0 || d_tgt.numel() == 0 {
        return Err(Error::Data(
            "domain loss needs non-empty source and target batches".into(),
        ));
    }
    let ones = Tensor::new(d_src.shape(), vec![1.0; d_src.numel()])?;
    let zeros = Tensor::zeros(d_tgt.shape());
    d_src
        .binary_cross_entropy(&ones, BCE_EPS)?
        .add(&d_tgt.binary_cross_entropy(&zeros, BCE_EPS)?)
}

#[derive(Debug, Clone)]
pub struct LossBundle {
    pub l_c: Tensor,
    /// Minimized (BCE) form of the domain loss.
    pub l_d: Tensor,
    /// `l_c + l_d` in value; backward through it applies the reversal.
    pub total: Tensor,
    pub lambda_d: f64,
    pub disc_accuracy: f64,
}

/// Fraction of rows `D` places on the right side of 0.5; exactly 0.5 counts
/// as source.
pub fn discriminator_accuracy(d_src: &[f64], d_tgt: &[f64]) -> f64 {
    let n = d_src.len() + d_tgt.len();
    if n == 0 {
        return 0.0;
    }
    let correct = d_src.iter().filter(|&&p| p >= 0.5).count() + d_tgt.iter().filter(|&&p| p < 0.5).count();
    correct as f64 / n as f64
}

/// Softmax class probabilities used to condition the discriminator, rows
/// ordered source then target. Computed without gradient.
pub fn conditioning_probs(model: &AdversarialModel, src: &[Tensor], tgt: &[Tensor]) -> Result<Tensor> {
    let feats = Tensor::concat_rows(&[model.features(src)?, model.features(tgt)?])?;
    classify(&feats, &model.classifier)?.detach().softmax_rows()
}

/// One step's objective: source cross-entropy plus the reversed domain loss.
pub fn vtada_step_objective(
    model: &AdversarialModel,
    src_images: &[Tensor],
    src_labels: &[usize],
    tgt_images: &[Tensor],
    lambda_d: f64,
) -> Result<LossBundle> {
    vtada_step_objective_with(model, src_images, src_labels, tgt_images, lambda_d, None)
}

/// As [`vtada_step_objective`], optionally overriding the conditioning
/// probabilities (rows: source then target). The override lets a
/// finite-difference oracle hold the detached pseudo-label path fixed.
pub fn vtada_step_objective_with(
    model: &AdversarialModel,
    src_images: &[Tensor],
    src_labels: &[usize],
    tgt_images: &[Tensor],
    lambda_d: f64,
    conditioning: Option<&Tensor>,
) -> Result<LossBundle> {
    if src_images.is_empty() || tgt_images.is_empty() {
        return Err(Error::Data(
            "adaptation step needs non-empty source and target batches".into(),
        ));
    }
    if !(0.0..=1.0).contains(&lambda_d) {
        return Err(Error::Contract(format!("lambda_d must be in [0, 1], got {lambda_d}")));
    }
    let n_s = src_images.len();
    let f_s = model.features(src_images)?;
    let f_t = model.features(tgt_images)?;
    let logits_s = classify(&f_s, &model.classifier)?;
    let l_c = logits_s.cross_entropy(src_labels)?;

    let mode = model.mode();
    let feats = Tensor::concat_rows(&[f_s.clone(), f_t.clone()])?;
    let disc_in = if mode.is_conditional() {
        let probs = match conditioning {
            Some(p) => p.detach(),
            None => {
                let logits_t = classify(&f_t, &model.classifier)?;
                Tensor::concat_rows(&[logits_s.detach(), logits_t.detach()])?.softmax_rows()?
            }
        };
        let (rows, k) = probs.dims2("condition")?;
        if rows != feats.shape()[0] || k != model.num_classes() {
            return Err(Error::shape("condition", feats.shape(), probs.shape()));
        }
        match mode {
            AdaptationMode::CdanConcat => feats.concat_cols(&probs)?,
            _ => feats.outer_rows(&probs)?,
        }
    } else {
        feats
    };

    let (l_d, d_all, total) = if mode == AdaptationMode::SourceOnly {
        let d_all = discriminate(&disc_in.detach(), &detached(&model.discriminator))?;
        let l_d = split_domain_loss(&d_all, n_s)?;
        (l_d, d_all, l_c.clone())
    } else {
        let d_all = discriminate(&disc_in.grad_reverse(lambda_d)?, &model.discriminator)?;
        let l_d = split_domain_loss(&d_all, n_s)?;
        let total = l_c.add(&l_d)?;
        (l_d, d_all, total)
    };
    let (d_src, d_tgt) = d_all.data().split_at(n_s);
    Ok(LossBundle {
        disc_accuracy: discriminator_accuracy(d_src, d_tgt),
        l_c,
        l_d,
        total,
        lambda_d,
    })
}

fn split_domain_loss(d_all: &Tensor, n_s: usize) -> Result<Tensor> {
    let n = d_all.shape()[0];
    dann_domain_loss(&d_all.slice_rows(0, n_s)?, &d_all.slice_rows(n_s, n)?)
}

fn detached(mlp: &Mlp) -> Mlp {
    Mlp {
        weights: mlp.weights.iter().map(Tensor::detach).collect(),
        biases: mlp.biases.iter().map(Tensor::detach).collect(),
    }
}
