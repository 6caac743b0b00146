//! Oracles shared by the integration tests. Everything here is computed
//! directly from definitions, never through the library routine under test.

#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vcn_core::dataset::{self, GrayImage};
use vcn_core::tensor::{Graph, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_img(seed: u64, h: usize, w: usize) -> Tensor {
    Tensor::uniform(&[1, 1, h, w], 0.0, 1.0, &mut rng(seed))
}

pub fn corpus() -> Vec<(String, GrayImage)> {
    dataset::load_dir(dataset::bundled_corpus_dir()).expect("bundled corpus")
}

#[derive(Debug, Clone, Copy)]
pub struct Fd {
    pub rel: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl Fd {
    pub fn ok(&self, tol: f64) -> bool {
        self.rel < tol && self.checked > 0 && self.skipped * 10 <= self.checked
    }
}

/// Central differences (step `h`) against autodiff for every coordinate of
/// every input. Relative error is `|a - n| / max(|a|, |n|)` in the 2-norm
/// over each input tensor; perturbations that flip any ReLU or |x| sign
/// are skipped.
pub fn fd_check(inputs: &[Tensor], h: f64, build: impl Fn(&mut Graph, &[Tensor]) -> (Var, Vec<Var>)) -> Fd {
    let mut g = Graph::new();
    let (out, vars) = build(&mut g, inputs);
    let kinks = g.kink_fingerprint();
    let grads = g.backward(out).unwrap();
    let f = |xs: &[Tensor]| {
        let mut g = Graph::new();
        let (o, _) = build(&mut g, xs);
        (g.value(o).data()[0], g.kink_fingerprint())
    };
    let mut work = inputs.to_vec();
    let mut fd = Fd {
        rel: 0.0,
        checked: 0,
        skipped: 0,
    };
    for (i, &v) in vars.iter().enumerate() {
        let a = grads.wrt(v);
        let (mut d2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + h;
            let (fp, kp) = f(&work);
            work[i].data_mut()[j] = x0 - h;
            let (fm, km) = f(&work);
            work[i].data_mut()[j] = x0;
            if kp != kinks || km != kinks {
                fd.skipped += 1;
                continue;
            }
            let n = (fp - fm) / (2.0 * h);
            d2 += (a.data()[j] - n).powi(2);
            a2 += a.data()[j].powi(2);
            n2 += n * n;
            fd.checked += 1;
        }
        let scale = a2.sqrt().max(n2.sqrt());
        if scale > 0.0 {
            fd.rel = fd.rel.max(d2.sqrt() / scale);
        }
    }
    fd
}

/// `sum(r * y)` with fixed random `r`.
pub fn readout(g: &mut Graph, y: Var, seed: u64) -> Var {
    let r = Tensor::uniform(g.shape(y), -1.0, 1.0, &mut rng(seed));
    let rv = g.constant(r);
    let p = g.mul(y, rv).unwrap();
    g.sum(p)
}

pub fn l1_oracle(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

pub fn gradient_diff_oracle(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..h as isize {
        for j in 0..w as isize {
            for di in -1..=1isize {
                for dj in -1..=1isize {
                    let (ni, nj) = (i + di, j + dj);
                    if (di, dj) == (0, 0) || ni < 0 || nj < 0 || ni >= h as isize || nj >= w as isize {
                        continue;
                    }
                    let p = (i * w as isize + j) as usize;
                    let q = (ni * w as isize + nj) as usize;
                    s += ((a[p] - a[q]) - (b[p] - b[q])).abs();
                }
            }
        }
    }
    s / (h * w) as f64
}

fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        i = if i < 0 { -i - 1 } else { 2 * n - 1 - i };
    }
    i as usize
}

/// Per-pixel SSIM over an 8x8 window (offsets -3..=4, mirrored borders).
pub fn ssim_oracle(a: &[f64], b: &[f64], h: usize, w: usize, c1: f64, c2: f64) -> Vec<f64> {
    let n = 64.0;
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h as isize {
        for j in 0..w as isize {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for di in -3..=4 {
                for dj in -3..=4 {
                    let k = mirror(i + di, h) * w + mirror(j + dj, w);
                    sa += a[k];
                    sb += b[k];
                    saa += a[k] * a[k];
                    sbb += b[k] * b[k];
                    sab += a[k] * b[k];
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let (va, vb, cov) = (saa / n - ma * ma, sbb / n - mb * mb, sab / n - ma * mb);
            out.push(((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)));
        }
    }
    out
}

pub fn mse(a: &GrayImage, b: &GrayImage) -> f64 {
    a.samples()
        .iter()
        .zip(b.samples())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.samples().len() as f64
}
