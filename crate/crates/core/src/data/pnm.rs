//! Binary netpbm: `P5` (grayscale) and `P6` (RGB), maxval ≤ 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PnmImage {
    pub width: usize,
    pub height: usize,
    /// 1 for P5, 3 for P6.
    pub channels: usize,
    pub maxval: u16,
    /// Row-major, channel-interleaved samples.
    pub samples: Vec<u8>,
}

impl PnmImage {
    /// `[H×W×C]` tensor scaled to `[0, 1]` by `maxval`.
    pub fn to_tensor(&self) -> Tensor {
        let scale = f64::from(self.maxval);
        let data = self.samples.iter().map(|&b| f64::from(b) / scale).collect();
        Tensor::new(&[self.height, self.width, self.channels], data).expect("sample count checked at parse")
    }

    /// Quantizes an `[H×W×C]` tensor with values in `[0, 1]` to maxval 255.
    pub fn from_tensor(image: &Tensor) -> Result<Self> {
        let &[height, width, channels] = image.shape() else {
            return Err(Error::shape("pnm", image.shape(), &[0, 0, 1]));
        };
        if channels != 1 && channels != 3 {
            return Err(Error::Data(format!("netpbm holds 1 or 3 channels, not {channels}")));
        }
        let samples = image
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Ok(Self {
            width,
            height,
            channels,
            maxval: 255,
            samples,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        out.extend_from_slice(&self.samples);
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let fmt_err = |detail: String| Error::Format {
            path: path.to_path_buf(),
            detail,
        };
        if bytes.len() < 2 {
            return Err(fmt_err("file too short for a netpbm header".into()));
        }
        let channels = match &bytes[..2] {
            b"P5" => 1,
            b"P6" => 3,
            other => {
                return Err(fmt_err(format!(
                    "unsupported magic bytes {:?} (expected P5 or P6)",
                    String::from_utf8_lossy(other)
                )))
            }
        };
        let mut pos = 2;
        let mut fields = [0usize; 3];
        for field in &mut fields {
            // whitespace and comments
            loop {
                match bytes.get(pos) {
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    _ => break,
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
                pos += 1;
            }
            if start == pos {
                return Err(fmt_err(format!("malformed header at byte {start}")));
            }
            *field = std::str::from_utf8(&bytes[start..pos])
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| fmt_err("header number out of range".into()))?;
        }
        let [width, height, maxval] = fields;
        if width == 0 || height == 0 {
            return Err(fmt_err(format!("degenerate size {width}x{height}")));
        }
        if maxval == 0 || maxval > 255 {
            return Err(fmt_err(format!("maxval {maxval} unsupported (need 1..=255)")));
        }
        if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(fmt_err("missing whitespace after maxval".into()));
        }
        pos += 1;
        let need = width * height * channels;
        let body = &bytes[pos..];
        if body.len() < need {
            return Err(fmt_err(format!("expected {need} sample bytes, found {}", body.len())));
        }
        let samples = body[..need].to_vec();
        if let Some(&bad) = samples.iter().find(|&&s| usize::from(s) > maxval) {
            return Err(fmt_err(format!("sample {bad} exceeds maxval {maxval}")));
        }
        Ok(Self {
            width,
            height,
            channels,
            maxval: maxval as u16,
            samples,
        })
    }
}

pub fn read_pnm(path: &Path) -> Result<PnmImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    PnmImage::decode(&bytes, path)
}

pub fn write_pnm(path: &Path, image: &PnmImage) -> Result<()> {
    fs::write(path, image.encode()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p5_byte_scaling() {
        let bytes = b"P5\n1 1\n255\n\x80";
        let img = PnmImage::decode(bytes, Path::new("x.pgm")).unwrap();
        let t = img.to_tensor();
        assert!((t.data()[0] - 128.0 / 255.0).abs() < 1e-15);
        assert!((t.data()[0] - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn header_comments_and_small_maxval() {
        let bytes = b"P5 # made by hand\n2 1 # size\n15\n\x0f\x05";
        let img = PnmImage::decode(bytes, Path::new("x.pgm")).unwrap();
        assert_eq!((img.width, img.height, img.maxval), (2, 1, 15));
        assert_eq!(img.to_tensor().data(), &[1.0, 5.0 / 15.0]);
    }

    #[test]
    fn p6_shape() {
        let bytes = b"P6\n2 1\n255\n\x01\x02\x03\x04\x05\x06";
        let img = PnmImage::decode(bytes, Path::new("x.ppm")).unwrap();
        assert_eq!(img.to_tensor().shape(), &[1, 2, 3]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = Path::new("bad");
        assert!(matches!(
            PnmImage::decode(b"P2\n1 1\n255\n0", p),
            Err(Error::Format { .. })
        ));
        assert!(PnmImage::decode(b"P5\n2 2\n255\n\x00", p).is_err());
        assert!(PnmImage::decode(b"P5\n1 1\n65535\n\x00\x00", p).is_err());
        assert!(PnmImage::decode(b"P5\n1 1\n10\n\x0b", p).is_err());
    }

    #[test]
    fn encode_decode_round_trip() {
        let img = PnmImage {
            width: 3,
            height: 2,
            channels: 1,
            maxval: 255,
            samples: vec![0, 1, 2, 127, 128, 255],
        };
        let back = PnmImage::decode(&img.encode(), Path::new("rt.pgm")).unwrap();
        assert_eq!(back, img);
    }
}
