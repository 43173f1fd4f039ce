//! Checkpoint files.
//!
//! Layout: `VTCK`, `u32` version, `u64` header length, JSON header, one
//! `VTAT` tensor per parameter followed by one per momentum buffer, then the
//! SHA-256 of everything before it. All integers little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::MetricsRecord;
use super::TrainState;
use crate::adversarial::{AdversarialModel, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{read_tensor, write_tensor, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VTCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;
const PREFIX_LEN: usize = 16;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: AdversarialModel,
    pub state: TrainState,
    /// Canonical text of the training config, empty when unknown.
    pub config_text: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    config_text: String,
    progress: f64,
    step: usize,
    epoch: usize,
    rng_seed: u64,
    /// CSV rows; NaN accuracies have no JSON number form.
    metrics: Vec<String>,
    params: Vec<String>,
    buffers: usize,
}

impl Checkpoint {
    pub fn new(model: AdversarialModel, state: TrainState, config_text: String) -> Self {
        Self {
            model,
            state,
            config_text,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let named = self.model.named_params();
        let header = Header {
            model: self.model.config.clone(),
            config_text: self.config_text.clone(),
            progress: self.state.progress,
            step: self.state.step,
            epoch: self.state.epoch,
            rng_seed: self.state.rng_seed,
            metrics: self.state.metrics.iter().map(MetricsRecord::to_csv_row).collect(),
            params: named.iter().map(|(n, _)| n.clone()).collect(),
            buffers: self.state.momentum_buffers.len(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Contract(format!("header encode: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &named {
            write_tensor(&mut out, t).expect("write to Vec");
        }
        for b in &self.state.momentum_buffers {
            let t = Tensor::new(&[b.len()], b.clone())?;
            write_tensor(&mut out, &t).expect("write to Vec");
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(digest.as_slice());
        Ok(out)
    }

    /// Checks magic, then version, then checksum before decoding anything.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fmt = |detail: String| Error::Format {
            path: path.to_path_buf(),
            detail,
        };
        if bytes.len() < 8 {
            return Err(Error::Truncated(format!(
                "{} bytes, too short for a header",
                bytes.len()
            )));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(fmt(format!("not a checkpoint (magic {:?})", &bytes[..4])));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "checkpoint",
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        if bytes.len() < PREFIX_LEN + DIGEST_LEN {
            return Err(Error::Truncated(format!("{} bytes", bytes.len())));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let body_end = bytes.len() - DIGEST_LEN;
        let (body, stored) = bytes.split_at(body_end);
        let computed = Sha256::digest(body);
        if computed.as_slice() != stored {
            if (header_len as usize).saturating_add(PREFIX_LEN) > body_end {
                return Err(Error::Truncated(format!(
                    "header claims {header_len} bytes, file holds {}",
                    bytes.len()
                )));
            }
            return Err(Error::Checksum {
                stored: hex(stored),
                computed: hex(computed.as_slice()),
            });
        }
        let header_end = PREFIX_LEN + header_len as usize;
        if header_end > body_end {
            return Err(Error::Truncated("header runs past the data".into()));
        }
        let header: Header =
            serde_json::from_slice(&bytes[PREFIX_LEN..header_end]).map_err(|e| fmt(format!("header: {e}")))?;

        let mut model = AdversarialModel::new(header.model)?;
        let mut cursor = &bytes[header_end..body_end];
        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        if names != header.params {
            return Err(fmt("parameter list does not match the model config".into()));
        }
        for (slot, name) in model.params_mut().into_iter().zip(&names) {
            let t = read_tensor(&mut cursor)?;
            if t.shape() != slot.shape() {
                return Err(fmt(format!(
                    "{name}: stored shape {:?}, config implies {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.detach_param();
        }
        let mut momentum_buffers = Vec::with_capacity(header.buffers);
        for _ in 0..header.buffers {
            momentum_buffers.push(read_tensor(&mut cursor)?.data().to_vec());
        }
        if !cursor.is_empty() {
            return Err(fmt(format!("{} trailing bytes after tensors", cursor.len())));
        }
        let metrics = header
            .metrics
            .iter()
            .enumerate()
            .map(|(i, row)| MetricsRecord::from_csv_row(row, i + 1, path))
            .collect::<Result<_>>()?;
        Ok(Self {
            model,
            state: TrainState {
                progress: header.progress,
                step: header.step,
                epoch: header.epoch,
                momentum_buffers,
                rng_seed: header.rng_seed,
                metrics,
            },
            config_text: header.config_text,
        })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn checkpoint_save(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversarial::AdaptationMode;
    use crate::vit::ViTConfig;

    fn sample() -> Checkpoint {
        let config = ModelConfig {
            vit: ViTConfig {
                image_h: 4,
                image_w: 4,
                channels: 1,
                patch: 2,
                embed_dim: 4,
                heads: 2,
                depth: 1,
                mlp_ratio: 1.0,
                feature_dim: 4,
                init_seed: 5,
                init: Default::default(),
            },
            num_classes: 2,
            classifier_hidden: 3,
            disc_hidden: 3,
            mode: AdaptationMode::CdanConcat,
            head_seed: 6,
        };
        let model = AdversarialModel::new(config).unwrap();
        let mut state = TrainState::new(9);
        state.epoch = 2;
        state.step = 14;
        state.progress = 0.2;
        state.momentum_buffers = model.params().iter().map(|p| vec![0.125; p.numel()]).collect();
        state.metrics.push(MetricsRecord {
            epoch: 1,
            l_c: 0.7,
            l_d: 1.3,
            src_acc: 0.5,
            tgt_acc: f64::NAN,
            disc_acc: 0.625,
            eta_p: 0.01,
            lambda_d: 0.0,
            wall_ms: 0,
        });
        Checkpoint::new(model, state, "adaptation.mode = cdan_concat\n".into())
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        for ((na, a), (nb, b)) in ck.model.named_params().iter().zip(back.model.named_params().iter()) {
            assert_eq!(na, nb);
            assert!(
                a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()),
                "{na}"
            );
        }
        assert_eq!(back.state.step, 14);
        assert_eq!(back.state.momentum_buffers, ck.state.momentum_buffers);
        assert!(back.state.metrics[0].tgt_acc.is_nan());
        assert_eq!(back.config_text, ck.config_text);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let mut bytes = sample().to_bytes().unwrap();
        let i = bytes.len() - 40;
        bytes[i] ^= 1;
        let err = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap_err();
        assert!(matches!(err, Error::Checksum { .. }), "{err}");
    }

    #[test]
    fn old_version_is_rejected_before_checksum() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[4..8].copy_from_slice(&0u32.to_le_bytes());
        let err = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap_err();
        assert!(
            matches!(
                err,
                Error::UnsupportedVersion {
                    found: 0,
                    expected: 1,
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn truncation_is_reported() {
        let bytes = sample().to_bytes().unwrap();
        let err = Checkpoint::from_bytes(&bytes[..40], Path::new("mem")).unwrap_err();
        assert!(matches!(err, Error::Truncated(_)), "{err}");
        let err = Checkpoint::from_bytes(&bytes[..6], Path::new("mem")).unwrap_err();
        assert!(matches!(err, Error::Truncated(_)), "{err}");
        let err = Checkpoint::from_bytes(b"NOPE\x01\0\0\0", Path::new("mem")).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }
}
