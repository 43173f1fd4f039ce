//! Vision Transformer feature extractor.
//!
//! An `H×W×C` image is cut into `N = HW/P²` non-overlapping patches, each
//! flattened in (row, col, channel) order and linearly projected to the model
//! width. A learned class token is prepended, positional embeddings added, and
//! the sequence passes through `depth` pre-norm transformer blocks. The final
//! layer-normed class-token row, optionally mapped by a linear head, is the
//! feature vector `F(x)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-6;
const INIT_STD: f64 = 0.02;

/// How weight matrices are drawn. Positional embeddings always use σ=0.02;
/// biases, β and the class token start at zero, γ at one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Truncated normal, σ = 0.02.
    #[default]
    Std002,
    /// Truncated normal, σ = 1/√fan_in.
    Lecun,
    /// Truncated normal, σ = 2/√fan_in.
    Wide,
}

impl InitScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            InitScheme::Std002 => "std002",
            InitScheme::Lecun => "lecun",
            InitScheme::Wide => "wide",
        }
    }

    fn std(self, fan_in: usize) -> f64 {
        match self {
            InitScheme::Std002 => INIT_STD,
            InitScheme::Lecun => 1.0 / (fan_in as f64).sqrt(),
            InitScheme::Wide => 2.0 / (fan_in as f64).sqrt(),
        }
    }
}

impl std::fmt::Display for InitScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "std002" => Ok(InitScheme::Std002),
            "lecun" => Ok(InitScheme::Lecun),
            "wide" => Ok(InitScheme::Wide),
            other => Err(Error::Config(format!(
                "unknown init scheme '{other}' (std002|lecun|wide)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViTConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub channels: usize,
    pub patch: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub depth: usize,
    pub mlp_ratio: f64,
    /// Width `m` of `F(x)`. A linear head is added when it differs from
    /// `embed_dim`.
    pub feature_dim: usize,
    pub init_seed: u64,
    #[serde(default)]
    pub init: InitScheme,
}

impl Default for ViTConfig {
    fn default() -> Self {
        Self {
            image_h: 16,
            image_w: 16,
            channels: 1,
            patch: 4,
            embed_dim: 32,
            heads: 4,
            depth: 2,
            mlp_ratio: 4.0,
            feature_dim: 32,
            init_seed: 42,
            init: InitScheme::Std002,
        }
    }
}

impl ViTConfig {
    pub fn validate(&self) -> Result<()> {
        let nonzero = [
            ("image_h", self.image_h),
            ("image_w", self.image_w),
            ("channels", self.channels),
            ("patch", self.patch),
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("feature_dim", self.feature_dim),
        ];
        if let Some((name, _)) = nonzero.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        if !self.image_h.is_multiple_of(self.patch) || !self.image_w.is_multiple_of(self.patch) {
            return Err(Error::Config(format!(
                "image {}x{} is not divisible by patch size {}",
                self.image_h, self.image_w, self.patch
            )));
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if !(self.mlp_ratio > 0.0) || self.mlp_hidden() == 0 {
            return Err(Error::Config(format!("mlp_ratio {} too small", self.mlp_ratio)));
        }
        Ok(())
    }

    /// `N = HW/P²`.
    pub fn num_patches(&self) -> usize {
        (self.image_h / self.patch) * (self.image_w / self.patch)
    }

    pub fn patch_len(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.mlp_ratio * self.embed_dim as f64).round() as usize
    }

    pub fn has_feature_head(&self) -> bool {
        self.feature_dim != self.embed_dim
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.image_h, self.image_w, self.channels]
    }

    /// Number of scalar parameters implied by this configuration.
    pub fn param_count(&self) -> usize {
        let (d, h, n) = (self.embed_dim, self.mlp_hidden(), self.num_patches());
        let block = 2 * d + 4 * d * d + d + 2 * d + d * h + h + h * d + d;
        let head = if self.has_feature_head() {
            d * self.feature_dim + self.feature_dim
        } else {
            0
        };
        self.patch_len() * d + d + (n + 1) * d + d + self.depth * block + 2 * d + head
    }
}

#[derive(Debug, Clone)]
pub struct BlockParams {
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub b_o: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
    pub mlp_w1: Tensor,
    pub mlp_b1: Tensor,
    pub mlp_w2: Tensor,
    pub mlp_b2: Tensor,
}

#[derive(Debug, Clone)]
pub struct ViTParams {
    pub patch_projection: Tensor,
    pub patch_bias: Tensor,
    pub positional: Tensor,
    pub class_token: Tensor,
    pub blocks: Vec<BlockParams>,
    pub norm_gamma: Tensor,
    pub norm_beta: Tensor,
    pub head: Option<(Tensor, Tensor)>,
}

/// Samples `N(0, σ²)` truncated to `±2σ` by rejection.
pub(crate) fn trunc_normal(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    let dist = Normal::new(0.0, std).expect("positive std");
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let v: f64 = dist.sample(rng);
        if v.abs() <= 2.0 * std {
            out.push(v);
        }
    }
    out
}

fn param(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::param(shape, data).expect("shape matches generated data")
}

fn filled(shape: &[usize], v: f64) -> Tensor {
    param(shape, vec![v; shape.iter().product()])
}

impl ViTParams {
    /// Deterministic initialization from `config.init_seed`.
    pub fn init(config: &ViTConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let d = config.embed_dim;
        let h = config.mlp_hidden();
        let scheme = config.init;
        let mut draw = |shape: &[usize], std: f64| {
            let n = shape.iter().product();
            param(shape, trunc_normal(&mut rng, n, std))
        };
        let patch_projection = draw(&[config.patch_len(), d], scheme.std(config.patch_len()));
        let positional = draw(&[config.num_patches() + 1, d], INIT_STD);
        let mut w = |shape: &[usize]| draw(shape, scheme.std(shape[0]));
        let blocks = (0..config.depth)
            .map(|_| BlockParams {
                ln1_gamma: filled(&[d], 1.0),
                ln1_beta: filled(&[d], 0.0),
                w_q: w(&[d, d]),
                w_k: w(&[d, d]),
                w_v: w(&[d, d]),
                w_o: w(&[d, d]),
                b_o: filled(&[d], 0.0),
                ln2_gamma: filled(&[d], 1.0),
                ln2_beta: filled(&[d], 0.0),
                mlp_w1: w(&[d, h]),
                mlp_b1: filled(&[h], 0.0),
                mlp_w2: w(&[h, d]),
                mlp_b2: filled(&[d], 0.0),
            })
            .collect();
        let head = config
            .has_feature_head()
            .then(|| (w(&[d, config.feature_dim]), filled(&[config.feature_dim], 0.0)));
        Ok(Self {
            patch_projection,
            patch_bias: filled(&[d], 0.0),
            positional,
            class_token: filled(&[1, d], 0.0),
            blocks,
            norm_gamma: filled(&[d], 1.0),
            norm_beta: filled(&[d], 0.0),
            head,
        })
    }

    /// Parameters with stable names, in a fixed order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("patch_projection".to_string(), &self.patch_projection),
            ("patch_bias".to_string(), &self.patch_bias),
            ("positional".to_string(), &self.positional),
            ("class_token".to_string(), &self.class_token),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (n, t) in [
                ("ln1_gamma", &b.ln1_gamma),
                ("ln1_beta", &b.ln1_beta),
                ("w_q", &b.w_q),
                ("w_k", &b.w_k),
                ("w_v", &b.w_v),
                ("w_o", &b.w_o),
                ("b_o", &b.b_o),
                ("ln2_gamma", &b.ln2_gamma),
                ("ln2_beta", &b.ln2_beta),
                ("mlp_w1", &b.mlp_w1),
                ("mlp_b1", &b.mlp_b1),
                ("mlp_w2", &b.mlp_w2),
                ("mlp_b2", &b.mlp_b2),
            ] {
                out.push((format!("block{i}.{n}"), t));
            }
        }
        out.push(("norm_gamma".to_string(), &self.norm_gamma));
        out.push(("norm_beta".to_string(), &self.norm_beta));
        if let Some((w, b)) = &self.head {
            out.push(("head_w".to_string(), w));
            out.push(("head_b".to_string(), b));
        }
        out
    }

    /// Mutable view in the same order as [`ViTParams::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.patch_projection,
            &mut self.patch_bias,
            &mut self.positional,
            &mut self.class_token,
        ];
        for b in &mut self.blocks {
            out.extend([
                &mut b.ln1_gamma,
                &mut b.ln1_beta,
                &mut b.w_q,
                &mut b.w_k,
                &mut b.w_v,
                &mut b.w_o,
                &mut b.b_o,
                &mut b.ln2_gamma,
                &mut b.ln2_beta,
                &mut b.mlp_w1,
                &mut b.mlp_b1,
                &mut b.mlp_w2,
                &mut b.mlp_b2,
            ]);
        }
        out.push(&mut self.norm_gamma);
        out.push(&mut self.norm_beta);
        if let Some((w, b)) = &mut self.head {
            out.push(w);
            out.push(b);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Checks every tensor shape against `config`.
    pub fn check_shapes(&self, config: &ViTConfig) -> Result<()> {
        let expected = ViTParams::init(config)?;
        let ours = self.named_params();
        let theirs = expected.named_params();
        if ours.len() != theirs.len() {
            return Err(Error::Config(format!(
                "parameter set has {} tensors, config implies {}",
                ours.len(),
                theirs.len()
            )));
        }
        for ((name, a), (_, b)) in ours.iter().zip(&theirs) {
            if a.shape() != b.shape() {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {:?}, config implies {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Splits an `[H×W×C]` image into `[N × (P²·C)]` row-major patches.
pub fn patchify(image: &Tensor, patch: usize) -> Result<Tensor> {
    let &[h, w, c] = image.shape() else {
        return Err(Error::shape("patchify", image.shape(), &[0, 0, 0]));
    };
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::Config(format!(
            "image {h}x{w} is not divisible by patch size {patch}"
        )));
    }
    let (ph, pw) = (h / patch, w / patch);
    let plen = patch * patch * c;
    // index[k] = flat source index of output element k
    let mut index = Vec::with_capacity(h * w * c);
    for pr in 0..ph {
        for pc in 0..pw {
            for r in 0..patch {
                for col in 0..patch {
                    let base = ((pr * patch + r) * w + pc * patch + col) * c;
                    index.extend(base..base + c);
                }
            }
        }
    }
    let src = image.data();
    let data = index.iter().map(|&i| src[i]).collect();
    Ok(Tensor::from_op(
        "patchify",
        vec![ph * pw, plen],
        data,
        vec![image.clone()],
        Box::new(move |g, _, _| {
            let mut out = vec![0.0; index.len()];
            for (&i, &v) in index.iter().zip(g) {
                out[i] = v;
            }
            vec![Some(out)]
        }),
    ))
}

/// `softmax(QKᵀ/√d_k)·V`, also returning the attention weights.
pub fn self_attention_with_weights(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
    let (_, dk) = q.dims2("self_attention")?;
    let (nk, dk2) = k.dims2("self_attention")?;
    let (nv, _) = v.dims2("self_attention")?;
    if dk != dk2 {
        return Err(Error::shape("self_attention", q.shape(), k.shape()));
    }
    if nk != nv {
        return Err(Error::shape("self_attention", k.shape(), v.shape()));
    }
    let scores = q.matmul(&k.transpose()?)?.scale(1.0 / (dk as f64).sqrt());
    let weights = scores.softmax_rows()?;
    let out = weights.matmul(v)?;
    Ok((out, weights))
}

pub fn self_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    self_attention_with_weights(q, k, v).map(|(o, _)| o)
}

/// `Concat(head₁, …, head_k)·W^O` with `headᵢ = SA(xW^Qᵢ, xW^Kᵢ, xW^Vᵢ)`,
/// the per-head projections being column blocks of the packed matrices.
pub fn multi_head_attention(x: &Tensor, block: &BlockParams, heads: usize) -> Result<Tensor> {
    let (_, d) = x.dims2("multi_head_attention")?;
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!(
            "embed_dim {d} is not divisible by heads {heads}"
        )));
    }
    let dk = d / heads;
    let q = x.matmul(&block.w_q)?;
    let k = x.matmul(&block.w_k)?;
    let v = x.matmul(&block.w_v)?;
    let mut concat: Option<Tensor> = None;
    for hd in 0..heads {
        let (a, b) = (hd * dk, (hd + 1) * dk);
        let head = self_attention(&q.slice_cols(a, b)?, &k.slice_cols(a, b)?, &v.slice_cols(a, b)?)?;
        concat = Some(match concat {
            None => head,
            Some(c) => c.concat_cols(&head)?,
        });
    }
    concat.expect("heads > 0").matmul(&block.w_o)?.add_row(&block.b_o)
}

/// Pre-norm block: `x + MSA(LN₁(x))`, then `+ MLP(LN₂(·))`.
pub fn transformer_block(x: &Tensor, block: &BlockParams, heads: usize) -> Result<Tensor> {
    let attn = multi_head_attention(&x.layer_norm(&block.ln1_gamma, &block.ln1_beta, LN_EPS)?, block, heads)?;
    let x = x.add(&attn)?;
    let hidden = x
        .layer_norm(&block.ln2_gamma, &block.ln2_beta, LN_EPS)?
        .matmul(&block.mlp_w1)?
        .add_row(&block.mlp_b1)?
        .gelu();
    let mlp = hidden.matmul(&block.mlp_w2)?.add_row(&block.mlp_b2)?;
    x.add(&mlp)
}

/// Token sequence after the final norm, `[(N+1) × embed_dim]`.
pub fn encode_tokens(image: &Tensor, config: &ViTConfig, params: &ViTParams) -> Result<Tensor> {
    if image.shape() != config.image_shape() {
        return Err(Error::shape("vit_forward", image.shape(), &config.image_shape()));
    }
    let patches = patchify(image, config.patch)?;
    let tokens = patches.matmul(&params.patch_projection)?.add_row(&params.patch_bias)?;
    let mut x = Tensor::concat_rows(&[params.class_token.clone(), tokens])?.add(&params.positional)?;
    for block in &params.blocks {
        x = transformer_block(&x, block, config.heads)?;
    }
    x.layer_norm(&params.norm_gamma, &params.norm_beta, LN_EPS)
}

/// `F(x)` as a `[1 × m]` row.
pub fn vit_forward_row(image: &Tensor, config: &ViTConfig, params: &ViTParams) -> Result<Tensor> {
    let cls = encode_tokens(image, config, params)?.slice_rows(0, 1)?;
    match &params.head {
        Some((w, b)) => cls.matmul(w)?.add_row(b),
        None => Ok(cls),
    }
}

/// `F(x)` as a length-`m` vector.
pub fn vit_forward(image: &Tensor, config: &ViTConfig, params: &ViTParams) -> Result<Tensor> {
    vit_forward_row(image, config, params)?.reshape(&[config.feature_dim])
}

/// Features of a batch of images, `[n × m]`.
pub fn vit_forward_batch(images: &[Tensor], config: &ViTConfig, params: &ViTParams) -> Result<Tensor> {
    let rows = images
        .iter()
        .map(|img| vit_forward_row(img, config, params))
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Ok(Tensor::zeros(&[0, config.feature_dim]));
    }
    Tensor::concat_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_counts() {
        let img = Tensor::zeros(&[32, 32, 3]);
        let p = patchify(&img, 16).unwrap();
        assert_eq!(p.shape(), &[4, 768]);
        let img = Tensor::zeros(&[224, 224, 3]);
        assert_eq!(patchify(&img, 16).unwrap().shape()[0], 196);
    }

    #[test]
    fn unit_patches_keep_scan_order() {
        let img = Tensor::new(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = patchify(&img, 1).unwrap();
        assert_eq!(p.shape(), &[4, 1]);
        assert_eq!(p.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn patch_flattening_is_row_col_channel() {
        // 2x4 image, 2 channels, P=2: patch 1 covers columns 2..4.
        let data: Vec<f64> = (0..16).map(f64::from).collect();
        let img = Tensor::new(&[2, 4, 2], data).unwrap();
        let p = patchify(&img, 2).unwrap();
        assert_eq!(p.shape(), &[2, 8]);
        assert_eq!(&p.data()[8..], &[4.0, 5.0, 6.0, 7.0, 12.0, 13.0, 14.0, 15.0]);
    }

    #[test]
    fn indivisible_patch_is_config_error() {
        let img = Tensor::zeros(&[10, 8, 1]);
        let err = patchify(&img, 4).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("10x8"));
    }

    #[test]
    fn attention_with_zero_queries_averages_values() {
        let q = Tensor::zeros(&[3, 2]);
        let k = Tensor::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5], vec![3.0, 0.0]]);
        let v = Tensor::from_rows(&[vec![1.0, 10.0], vec![2.0, 20.0], vec![6.0, 60.0]]);
        let out = self_attention(&q, &k, &v).unwrap();
        for row in out.data().chunks(2) {
            assert!((row[0] - 3.0).abs() < 1e-12 && (row[1] - 30.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_token_attention_returns_v() {
        let q = Tensor::from_rows(&[vec![0.3, -0.7]]);
        let v = Tensor::from_rows(&[vec![4.0, 5.0, 6.0]]);
        assert_eq!(self_attention(&q, &q, &v).unwrap().data(), v.data());
    }

    #[test]
    fn attention_shape_errors() {
        let q = Tensor::zeros(&[2, 3]);
        let k = Tensor::zeros(&[2, 4]);
        assert!(self_attention(&q, &k, &k).is_err());
        let k = Tensor::zeros(&[2, 3]);
        let v = Tensor::zeros(&[3, 3]);
        assert!(self_attention(&q, &k, &v).is_err());
    }

    #[test]
    fn param_count_matches_init() {
        for cfg in [
            ViTConfig::default(),
            ViTConfig {
                feature_dim: 7,
                depth: 3,
                mlp_ratio: 2.0,
                ..ViTConfig::default()
            },
        ] {
            assert_eq!(ViTParams::init(&cfg).unwrap().param_count(), cfg.param_count());
        }
    }

    #[test]
    fn config_validation() {
        let bad = ViTConfig {
            embed_dim: 30,
            heads: 4,
            ..ViTConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ViTConfig {
            patch: 5,
            ..ViTConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn named_and_mut_orders_agree() {
        let mut p = ViTParams::init(&ViTConfig {
            feature_dim: 5,
            ..ViTConfig::default()
        })
        .unwrap();
        let ids: Vec<u64> = p.named_params().iter().map(|(_, t)| t.id()).collect();
        let ids_mut: Vec<u64> = p.params_mut().iter().map(|t| t.id()).collect();
        assert_eq!(ids, ids_mut);
    }
}
