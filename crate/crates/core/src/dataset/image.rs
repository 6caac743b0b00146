//! 8-bit grayscale images and binary PGM (P5) I/O.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Codec block size; loaded images are cropped to multiples of it.
pub const BLOCK: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    samples: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, samples: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || samples.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "{}x{} image needs {} samples, got {}",
                width,
                height,
                width * height,
                samples.len()
            )));
        }
        Ok(GrayImage { width, height, samples })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage {
            width,
            height,
            samples: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.samples[y * self.width + x]
    }

    /// Top-left anchored crop.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if x0 + width > self.width || y0 + height > self.height || width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "crop {}x{}+{}+{} outside {}x{}",
                width, height, x0, y0, self.width, self.height
            )));
        }
        let mut samples = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            samples.extend_from_slice(&self.samples[y * self.width + x0..y * self.width + x0 + width]);
        }
        Ok(GrayImage { width, height, samples })
    }

    /// Crop to the largest multiple of the block size on each axis.
    pub fn crop_to_blocks(&self) -> Result<Self> {
        if self.width < BLOCK || self.height < BLOCK {
            return Err(Error::InvalidArgument(format!(
                "{}x{} image is smaller than one {}x{} block",
                self.width, self.height, BLOCK, BLOCK
            )));
        }
        self.crop(0, 0, self.width / BLOCK * BLOCK, self.height / BLOCK * BLOCK)
    }

    /// `(1, 1, h, w)` tensor with values in `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            &[1, 1, self.height, self.width],
            self.samples.iter().map(|&v| v as f64 / 255.0).collect(),
        )
        .expect("extents match samples")
    }

    /// Inverse of [`GrayImage::to_tensor`]: clamp to `[0, 1]`, scale, round.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let [b, c, h, w] = t.dims4()?;
        if b != 1 || c != 1 {
            return Err(Error::shape("from_tensor", format!("expected one plane, got {:?}", t.shape())));
        }
        Self::new(w, h, t.data().iter().map(|&v| to_u8(v)).collect())
    }

    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.samples);
        out
    }

    pub fn from_pgm_bytes(buf: &[u8]) -> Result<Self> {
        let mut p = HeaderParser { buf, pos: 0 };
        if buf.len() < 2 || &buf[..2] != b"P5" {
            return Err(Error::format("PGM", 0, "expected P5 magic"));
        }
        p.pos = 2;
        let width = p.number("width")?;
        let height = p.number("height")?;
        let maxval = p.number("maxval")?;
        if maxval != 255 {
            return Err(Error::format("PGM", p.pos, format!("maxval {} unsupported (need 255)", maxval)));
        }
        match buf.get(p.pos) {
            Some(c) if c.is_ascii_whitespace() => p.pos += 1,
            _ => return Err(Error::format("PGM", p.pos, "missing whitespace after maxval")),
        }
        if width == 0 || height == 0 {
            return Err(Error::format("PGM", p.pos, "zero extent"));
        }
        let n = width * height;
        let payload = &buf[p.pos..];
        if payload.len() < n {
            return Err(Error::format(
                "PGM",
                buf.len(),
                format!("truncated payload: {} of {} samples", payload.len(), n),
            ));
        }
        Self::new(width, height, payload[..n].to_vec())
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_pgm_bytes())?;
        Ok(())
    }
}

/// `round(255 * clamp(v, 0, 1))`.
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

struct HeaderParser<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl HeaderParser<'_> {
    fn skip_space(&mut self) {
        while let Some(&c) = self.buf.get(self.pos) {
            if c == b'#' {
                while self.buf.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let before = self.pos;
        self.skip_space();
        if self.pos == before {
            return Err(Error::format("PGM", self.pos, format!("expected whitespace before {}", what)));
        }
        let start = self.pos;
        while self.buf.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.buf[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("PGM", start, format!("expected decimal {}", what)))
    }
}

/// Read a P5 file and crop it to whole 8x8 blocks.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    GrayImage::from_pgm_bytes(&fs::read(path)?)?.crop_to_blocks()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> GrayImage {
        GrayImage::new(w, h, (0..w * h).map(|i| (i % 251) as u8).collect()).unwrap()
    }

    #[test]
    fn pgm_roundtrip() {
        let img = ramp(16, 24);
        assert_eq!(GrayImage::from_pgm_bytes(&img.to_pgm_bytes()).unwrap(), img);
    }

    #[test]
    fn header_comments_allowed() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[7, 9]);
        let img = GrayImage::from_pgm_bytes(&bytes).unwrap();
        assert_eq!(img.samples(), &[7, 9]);
    }

    #[test]
    fn malformed_inputs_report_position() {
        let err = GrayImage::from_pgm_bytes(b"P2\n1 1\n255\n0").unwrap_err();
        assert!(matches!(err, Error::Format { pos: 0, .. }));
        let err = GrayImage::from_pgm_bytes(b"P5\n4 4\n65535\n").unwrap_err();
        assert!(err.to_string().contains("maxval"));
        let err = GrayImage::from_pgm_bytes(b"P5\n4 4\n255\n\x01\x02").unwrap_err();
        assert!(err.to_string().contains("truncated"));
        assert!(GrayImage::from_pgm_bytes(b"P5\nx 4\n255\n").is_err());
    }

    #[test]
    fn crop_to_blocks() {
        let img = ramp(163, 161).crop_to_blocks().unwrap();
        assert_eq!((img.width(), img.height()), (160, 160));
        assert_eq!(img.get(5, 3), ramp(163, 161).get(5, 3));
        assert!(ramp(7, 7).crop_to_blocks().is_err());
    }

    #[test]
    fn normalisation_roundtrip() {
        let img = GrayImage::new(16, 16, (0..=255).collect()).unwrap();
        assert_eq!(GrayImage::from_tensor(&img.to_tensor()).unwrap(), img);
    }
}
