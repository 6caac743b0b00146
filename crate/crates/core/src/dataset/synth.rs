//! Deterministic synthetic scenes: smooth shading, hard-edged shapes,
//! oriented gratings and a little sensor noise.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::GrayImage;
use crate::error::Result;

enum Shape {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64, angle: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Ellipse { cx, cy, rx, ry, angle } => {
                let (s, c) = angle.sin_cos();
                let (dx, dy) = (x - cx, y - cy);
                let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
        }
    }
}

struct Layer {
    shape: Shape,
    level: f64,
    grating: Option<(f64, f64, f64)>,
}

pub fn scene(width: usize, height: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.3..2.0) * PI / w,
                rng.gen_range(0.3..2.0) * PI / h,
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(10.0..35.0),
            )
        })
        .collect();
    let base = rng.gen_range(80.0..170.0);
    let layers: Vec<Layer> = (0..rng.gen_range(4..9))
        .map(|_| {
            let shape = if rng.gen_bool(0.5) {
                Shape::Ellipse {
                    cx: rng.gen_range(0.0..w),
                    cy: rng.gen_range(0.0..h),
                    rx: rng.gen_range(0.05..0.3) * w,
                    ry: rng.gen_range(0.05..0.3) * h,
                    angle: rng.gen_range(0.0..PI),
                }
            } else {
                let (x0, y0) = (rng.gen_range(0.0..w * 0.8), rng.gen_range(0.0..h * 0.8));
                Shape::Rect {
                    x0,
                    y0,
                    x1: x0 + rng.gen_range(0.1..0.5) * w,
                    y1: y0 + rng.gen_range(0.1..0.5) * h,
                }
            };
            let grating = rng
                .gen_bool(0.35)
                .then(|| (rng.gen_range(0.15..0.9), rng.gen_range(0.0..PI), rng.gen_range(10.0..40.0)));
            Layer {
                shape,
                level: rng.gen_range(15.0..240.0),
                grating,
            }
        })
        .collect();
    let noise = rng.gen_range(0.5..4.0);
    let samples = (0..width * height)
        .map(|i| {
            let (x, y) = ((i % width) as f64, (i / width) as f64);
            let mut v = base
                + waves
                    .iter()
                    .map(|&(fx, fy, ph, a)| a * (fx * x + fy * y + ph).cos())
                    .sum::<f64>();
            for l in &layers {
                if l.shape.contains(x, y) {
                    v = l.level;
                    if let Some((freq, dir, amp)) = l.grating {
                        v += amp * (freq * (x * dir.cos() + y * dir.sin())).sin();
                    }
                }
            }
            let n: f64 = rng.gen_range(-1.0..1.0) + rng.gen_range(-1.0..1.0);
            (v + noise * n).round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage::new(width, height, samples).expect("extents match")
}

/// Write `count` scenes named `scene_00.pgm`, `scene_01.pgm`, ...
pub fn write_corpus(dir: impl AsRef<Path>, count: usize, size: usize, seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for i in 0..count {
        scene(size, size, seed.wrapping_add(i as u64)).write_pgm(dir.join(format!("scene_{:02}.pgm", i)))?;
    }
    Ok(())
}
