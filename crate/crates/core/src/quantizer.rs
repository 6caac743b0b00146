//! Feature-space quantiser for the DNNC path.
//!
//! Codes are mapped to integer symbols in `[0, beta]` over a range frozen
//! from the pretrained encoder's outputs, and mapped back onto the
//! reconstruction lattice `y_min + s * (y_max - y_min) / beta`.

use log::warn;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_BETA: u32 = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantizerSpec {
    pub beta: u32,
    pub y_min: f64,
    pub y_max: f64,
}

impl QuantizerSpec {
    pub fn new(beta: u32, y_min: f64, y_max: f64) -> Result<Self> {
        if beta == 0 || beta > u16::MAX as u32 {
            return Err(Error::InvalidArgument(format!("beta must be in 1..=65535, got {}", beta)));
        }
        if !(y_min.is_finite() && y_max.is_finite()) || y_min >= y_max {
            return Err(Error::InvalidArgument(format!(
                "quantiser range needs y_min < y_max, got [{}, {}]",
                y_min, y_max
            )));
        }
        Ok(QuantizerSpec { beta, y_min, y_max })
    }

    /// Global min/max over every value of every code tensor.
    pub fn fit<'a>(beta: u32, codes: impl IntoIterator<Item = &'a Tensor>) -> Result<Self> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut seen = false;
        for t in codes {
            if !t.is_finite() {
                return Err(Error::NonFinite("quantiser range fit".into()));
            }
            if t.is_empty() {
                continue;
            }
            seen = true;
            lo = lo.min(t.min());
            hi = hi.max(t.max());
        }
        if !seen {
            return Err(Error::InvalidArgument("no code values to fit the quantiser range".into()));
        }
        if lo == hi {
            return Err(Error::InvalidArgument(format!("degenerate code range: all values equal {}", lo)));
        }
        if lo > 0.0 || hi < 0.0 {
            warn!("code range [{lo}, {hi}] does not straddle zero; proceeding");
        }
        Self::new(beta, lo, hi)
    }

    pub fn alphabet_size(&self) -> usize {
        self.beta as usize + 1
    }

    /// Half of one reconstruction step.
    pub fn max_error(&self) -> f64 {
        (self.y_max - self.y_min) / (2.0 * self.beta as f64)
    }

    pub fn symbol(&self, y: f64) -> u32 {
        let s = (self.beta as f64 * (y - self.y_min) / (self.y_max - self.y_min)).round();
        s.clamp(0.0, self.beta as f64) as u32
    }

    pub fn level(&self, s: u32) -> f64 {
        s as f64 / self.beta as f64 * (self.y_max - self.y_min) + self.y_min
    }

    pub fn quantize_symbols(&self, y: &Tensor) -> Vec<u32> {
        y.data().iter().map(|&v| self.symbol(v)).collect()
    }

    pub fn dequantize(&self, symbols: &[u32], shape: &[usize]) -> Result<Tensor> {
        if let Some(&bad) = symbols.iter().find(|&&s| s > self.beta) {
            return Err(Error::InvalidArgument(format!("symbol {} exceeds beta {}", bad, self.beta)));
        }
        Tensor::new(shape, symbols.iter().map(|&s| self.level(s)).collect())
    }

    /// `q(Y)`: quantise then dequantise.
    pub fn apply(&self, y: &Tensor) -> Tensor {
        y.map(|v| self.level(self.symbol(v)))
    }
}
