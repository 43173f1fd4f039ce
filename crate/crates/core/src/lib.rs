//! Vision-transformer feature extractor trained under DANN / CDAN adversarial
//! domain adaptation, built on a small reverse-mode autodiff engine.

pub mod adversarial;
pub mod analysis;
pub mod checks;
pub mod data;
pub mod error;
pub mod tensor;
pub mod train;
pub mod vit;

pub use error::{Error, Result};
pub use tensor::Tensor;
