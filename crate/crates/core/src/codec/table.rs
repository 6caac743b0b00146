use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Luminance base table, natural (row-major) order.
pub const BASE_LUMA: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// 8x8 quantisation steps in natural order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuantTable(pub [u16; 64]);

impl QuantTable {
    /// Quality-scaled base table: scale `5000/QF` below 50, `200 - 2 QF` from
    /// 50 up; entries `round(base * scale / 100)` clamped to `[1, 255]`.
    pub fn for_quality(qf: u8) -> Result<Self> {
        if !(1..=100).contains(&qf) {
            return Err(Error::InvalidArgument(format!("quality factor {} outside 1..=100", qf)));
        }
        let qf = qf as u32;
        let scale = if qf < 50 { 5000 / qf } else { 200 - 2 * qf };
        Ok(QuantTable(std::array::from_fn(|i| {
            ((BASE_LUMA[i] as u32 * scale + 50) / 100).clamp(1, 255) as u16
        })))
    }

    pub fn step(&self, i: usize) -> f64 {
        self.0[i] as f64
    }
}

/// Natural index of each zigzag scan position.
pub fn zigzag() -> &'static [usize; 64] {
    static ORDER: OnceLock<[usize; 64]> = OnceLock::new();
    ORDER.get_or_init(|| {
        let mut order = [0; 64];
        let mut n = 0;
        for diag in 0..15usize {
            let cells: Vec<(usize, usize)> = (0..=diag)
                .filter(|&r| r < 8 && diag - r < 8)
                .map(|r| (r, diag - r))
                .collect();
            // even diagonals run bottom-left to top-right
            let it: Box<dyn Iterator<Item = &(usize, usize)>> =
                if diag % 2 == 0 { Box::new(cells.iter().rev()) } else { Box::new(cells.iter()) };
            for &(r, c) in it {
                order[n] = r * 8 + c;
                n += 1;
            }
        }
        order
    })
}
