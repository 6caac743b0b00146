//! Orthonormal 8x8 DCT-II and its inverse.

use std::f64::consts::PI;
use std::sync::OnceLock;

pub type Block = [f64; 64];

fn basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut c = [[0.0; 8]; 8];
        for (u, row) in c.iter_mut().enumerate() {
            let alpha = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for (x, v) in row.iter_mut().enumerate() {
                *v = alpha * ((2 * x + 1) as f64 * u as f64 * PI / 16.0).cos();
            }
        }
        c
    })
}

/// `C * X * C^T`.
pub fn dct8(block: &Block) -> Block {
    let c = basis();
    let mut tmp = [0.0; 64];
    for u in 0..8 {
        for x in 0..8 {
            tmp[u * 8 + x] = (0..8).map(|y| c[u][y] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for u in 0..8 {
        for v in 0..8 {
            out[u * 8 + v] = (0..8).map(|x| tmp[u * 8 + x] * c[v][x]).sum();
        }
    }
    out
}

/// `C^T * F * C`.
pub fn idct8(coeffs: &Block) -> Block {
    let c = basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for v in 0..8 {
            tmp[y * 8 + v] = (0..8).map(|u| c[u][y] * coeffs[u * 8 + v]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|v| tmp[y * 8 + v] * c[v][x]).sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_block_has_only_dc() {
        let b = [3.5; 64];
        let f = dct8(&b);
        assert!((f[0] - 28.0).abs() < 1e-12);
        assert!(f[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn inverse_roundtrip() {
        let b: Block = std::array::from_fn(|i| ((i * 29) % 61) as f64 - 30.0);
        let back = idct8(&dct8(&b));
        for (x, y) in b.iter().zip(&back) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}
