//! Oriented-bar images and the synthetic domain shift.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Domain, DomainDataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Geometry of one rasterized bar. Angles are counter-clockwise as seen on
/// screen (x right, y down), in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bar {
    pub angle: f64,
    pub center_x: f64,
    pub center_y: f64,
    pub half_length: f64,
    pub half_thickness: f64,
}

/// Renders a bar onto a `size×size` canvas; intensity falls off linearly over
/// one pixel outside the bar's half-thickness.
pub fn rasterize_bar(bar: &Bar, size: usize) -> Vec<f64> {
    let (ux, uy) = (bar.angle.cos(), -bar.angle.sin());
    let mut out = vec![0.0; size * size];
    for r in 0..size {
        for c in 0..size {
            let dx = c as f64 + 0.5 - bar.center_x;
            let dy = r as f64 + 0.5 - bar.center_y;
            let along = dx * ux + dy * uy;
            let across = (dx * uy - dy * ux).abs();
            let fall_across = (bar.half_thickness + 0.5 - across).clamp(0.0, 1.0);
            let fall_along = (bar.half_length + 0.5 - along.abs()).clamp(0.0, 1.0);
            out[r * size + c] = fall_across * fall_along;
        }
    }
    out
}

/// Bar angle of class `j` out of `k`: `j·180°/k`.
pub fn class_angle(j: usize, k: usize) -> f64 {
    j as f64 * PI / k as f64
}

/// Balanced labeled set of single-channel bar images, `n_per_class·K`
/// samples ordered round-robin over classes.
pub fn gen_oriented_bars(n_per_class: usize, classes: usize, size: usize, seed: u64) -> Result<DomainDataset> {
    if classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
    }
    if size < 8 {
        return Err(Error::Config(format!("image size must be >= 8, got {size}")));
    }
    if classes > size {
        return Err(Error::Config(format!(
            "{classes} classes exceed the {size} distinguishable bar angles of a {size}px image"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let mut images = Vec::with_capacity(n_per_class * classes);
    let mut labels = Vec::with_capacity(n_per_class * classes);
    for _ in 0..n_per_class {
        for j in 0..classes {
            let bar = Bar {
                angle: class_angle(j, classes),
                center_x: s / 2.0 + rng.random_range(-s / 8.0..=s / 8.0),
                center_y: s / 2.0 + rng.random_range(-s / 8.0..=s / 8.0),
                half_length: s * 0.3,
                half_thickness: rng.random_range(0.5..=1.0),
            };
            images.push(Tensor::new(&[size, size, 1], rasterize_bar(&bar, size))?);
            labels.push(j);
        }
    }
    DomainDataset::new(images, Some(labels), Domain::Source, classes)
}

/// Covariate shift applied per image: rotation, affine intensity change,
/// background lift and Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    /// Counter-clockwise on screen, degrees.
    pub rotation_deg: f64,
    pub intensity_gain: f64,
    pub intensity_bias: f64,
    pub noise_sigma: f64,
    pub background_level: f64,
    pub seed: u64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self::identity()
    }
}

impl ShiftSpec {
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            intensity_gain: 1.0,
            intensity_bias: 0.0,
            noise_sigma: 0.0,
            background_level: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [
            ("rotation_deg", self.rotation_deg),
            ("intensity_gain", self.intensity_gain),
            ("intensity_bias", self.intensity_bias),
            ("noise_sigma", self.noise_sigma),
            ("background_level", self.background_level),
        ];
        if let Some((k, v)) = vals.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Config(format!("data.shift.{k} must be finite, got {v}")));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("data.shift.noise_sigma must be >= 0".into()));
        }
        Ok(())
    }

    fn is_identity(&self) -> bool {
        self.rotation_deg == 0.0
            && self.intensity_gain == 1.0
            && self.intensity_bias == 0.0
            && self.noise_sigma == 0.0
            && self.background_level == 0.0
    }
}

/// Rotates each channel about the image center with bilinear sampling;
/// samples falling outside the image read as zero.
pub fn rotate_bilinear(image: &Tensor, degrees: f64) -> Result<Tensor> {
    let &[h, w, c] = image.shape() else {
        return Err(Error::shape("rotate", image.shape(), &[0, 0, 0]));
    };
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let src = image.data();
    let at = |r: isize, col: isize, ch: usize| -> f64 {
        if r < 0 || col < 0 || r >= h as isize || col >= w as isize {
            0.0
        } else {
            src[(r as usize * w + col as usize) * c + ch]
        }
    };
    let mut out = vec![0.0; h * w * c];
    for r in 0..h {
        for col in 0..w {
            // Inverse map. On screen (y down) a counter-clockwise turn by θ
            // sends (dx, dy) to (dx·cosθ + dy·sinθ, −dx·sinθ + dy·cosθ).
            let (dx, dy) = (col as f64 - cx, r as f64 - cy);
            let sx = cx + dx * cos - dy * sin;
            let sy = cy + dx * sin + dy * cos;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for ch in 0..c {
                let v = (1.0 - fy) * ((1.0 - fx) * at(y0, x0, ch) + fx * at(y0, x0 + 1, ch))
                    + fy * ((1.0 - fx) * at(y0 + 1, x0, ch) + fx * at(y0 + 1, x0 + 1, ch));
                out[(r * w + col) * c + ch] = v;
            }
        }
    }
    Tensor::new(&[h, w, c], out)
}

/// Applies `spec` to every image. With `as_target` the result is an
/// unlabeled target-domain set; otherwise labels and tag are kept.
pub fn apply_shift(ds: &DomainDataset, spec: &ShiftSpec, as_target: bool) -> Result<DomainDataset> {
    spec.validate()?;
    let finish = |images| {
        if as_target {
            DomainDataset::new(images, None, Domain::Target, ds.num_classes)
        } else {
            DomainDataset::new(images, ds.labels.clone(), ds.domain, ds.num_classes)
        }
    };
    if spec.is_identity() {
        return finish(ds.images.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = (spec.noise_sigma > 0.0).then(|| Normal::new(0.0, spec.noise_sigma).expect("sigma > 0"));
    let offset = spec.intensity_bias + spec.background_level;
    let mut images = Vec::with_capacity(ds.len());
    for img in &ds.images {
        let rotated = if spec.rotation_deg != 0.0 {
            rotate_bilinear(img, spec.rotation_deg)?
        } else {
            img.clone()
        };
        let data = rotated
            .data()
            .iter()
            .map(|&p| {
                let n = noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
                (spec.intensity_gain * p + offset + n).clamp(0.0, 1.0)
            })
            .collect();
        images.push(Tensor::new(img.shape(), data)?);
    }
    finish(images)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_balanced() {
        let a = gen_oriented_bars(10, 4, 16, 9).unwrap();
        let b = gen_oriented_bars(10, 4, 16, 9).unwrap();
        assert_eq!(a.len(), 40);
        for (x, y) in a.images.iter().zip(&b.images) {
            assert_eq!(x.data(), y.data());
        }
        let labels = a.labels.as_ref().unwrap();
        for j in 0..4 {
            assert_eq!(labels.iter().filter(|&&l| l == j).count(), 10);
        }
        let c = gen_oriented_bars(10, 4, 16, 10).unwrap();
        assert_ne!(a.images[0].data(), c.images[0].data());
    }

    #[test]
    fn generation_guards() {
        assert!(gen_oriented_bars(1, 1, 16, 0).is_err());
        assert!(gen_oriented_bars(1, 4, 4, 0).is_err());
        assert!(gen_oriented_bars(1, 17, 16, 0).is_err());
    }

    #[test]
    fn pixels_in_unit_interval() {
        let ds = gen_oriented_bars(3, 4, 16, 1).unwrap();
        let spec = ShiftSpec {
            rotation_deg: 35.0,
            intensity_gain: 1.3,
            intensity_bias: 0.15,
            noise_sigma: 0.2,
            background_level: 0.05,
            seed: 3,
        };
        let shifted = apply_shift(&ds, &spec, true).unwrap();
        for img in ds.images.iter().chain(&shifted.images) {
            assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(shifted.labels.is_none());
        assert_eq!(shifted.domain, Domain::Target);
    }

    #[test]
    fn identity_shift_is_bit_exact() {
        let ds = gen_oriented_bars(2, 4, 16, 5).unwrap();
        let out = apply_shift(&ds, &ShiftSpec::identity(), false).unwrap();
        for (a, b) in ds.images.iter().zip(&out.images) {
            assert_eq!(a.data(), b.data());
        }
        assert_eq!(out.labels, ds.labels);
    }

    #[test]
    fn bias_on_constant_image() {
        let img = Tensor::new(&[8, 8, 1], vec![0.5; 64]).unwrap();
        let ds = DomainDataset::new(vec![img], Some(vec![0]), Domain::Source, 2).unwrap();
        let spec = ShiftSpec {
            intensity_bias: 0.2,
            ..ShiftSpec::identity()
        };
        let out = apply_shift(&ds, &spec, false).unwrap();
        assert!(out.images[0].data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn negative_sigma_rejected() {
        let spec = ShiftSpec {
            noise_sigma: -1.0,
            ..ShiftSpec::identity()
        };
        assert!(spec.validate().is_err());
    }
}
