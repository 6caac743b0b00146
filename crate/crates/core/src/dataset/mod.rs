//! Image ingestion, patch extraction, augmentation and batching.

mod image;
pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use image::{load_image, to_u8, GrayImage, BLOCK};

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_PATCH: usize = 160;

/// Square normalised patches, each stored as a `(1, 1, p, p)` tensor.
#[derive(Clone, Debug)]
pub struct PatchSet {
    pub size: usize,
    pub patches: Vec<Tensor>,
    pub sources: Vec<String>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// First `n` patches (or all of them).
    pub fn truncated(&self, n: usize) -> PatchSet {
        let n = n.min(self.len());
        PatchSet {
            size: self.size,
            patches: self.patches[..n].to_vec(),
            sources: self.sources[..n].to_vec(),
        }
    }
}

/// Number of sliding-window positions along one axis.
pub fn window_count(extent: usize, patch: usize, stride: usize) -> usize {
    if extent < patch {
        0
    } else {
        (extent - patch) / stride + 1
    }
}

/// Slide a `patch`-sized window with `stride` over every image. Images
/// smaller than the patch are skipped with a warning.
pub fn extract_patches(images: &[(String, GrayImage)], patch: usize, stride: usize) -> Result<PatchSet> {
    if patch == 0 || stride == 0 {
        return Err(Error::InvalidArgument("patch size and stride must be positive".into()));
    }
    let mut set = PatchSet {
        size: patch,
        patches: Vec::new(),
        sources: Vec::new(),
    };
    for (name, img) in images {
        let (nx, ny) = (window_count(img.width(), patch, stride), window_count(img.height(), patch, stride));
        if nx == 0 || ny == 0 {
            warn!("{}: {}x{} is smaller than a {} patch; skipped", name, img.width(), img.height(), patch);
            continue;
        }
        for j in 0..ny {
            for i in 0..nx {
                let crop = img.crop(i * stride, j * stride, patch, patch)?;
                set.patches.push(crop.to_tensor());
                set.sources.push(format!("{}@{},{}", name, i * stride, j * stride));
            }
        }
    }
    if set.is_empty() {
        return Err(Error::InvalidArgument(format!("no image is at least {}x{}", patch, patch)));
    }
    Ok(set)
}

/// One of the 8 dihedral transforms of a square `(.., .., p, p)` tensor:
/// `t % 4` quarter turns counter-clockwise, then a horizontal flip if `t >= 4`.
pub fn dihedral(x: &Tensor, t: u8) -> Result<Tensor> {
    let [b, c, h, w] = x.dims4()?;
    if h != w {
        return Err(Error::shape("dihedral", format!("patch must be square, got {}x{}", h, w)));
    }
    let n = h;
    let src = x.data();
    Ok(Tensor::from_fn(&[b, c, n, n], |i| {
        let plane = i / (n * n);
        let (mut r, mut col) = ((i % (n * n)) / n, i % n);
        if t >= 4 {
            col = n - 1 - col;
        }
        for _ in 0..t % 4 {
            // output (r, c) of a CCW turn reads input (c, n-1-r)
            (r, col) = (col, n - 1 - r);
        }
        src[plane * n * n + r * n + col]
    }))
}

/// Uniformly random dihedral transform.
pub fn augment<R: Rng + ?Sized>(patch: &Tensor, rng: &mut R) -> Result<Tensor> {
    dihedral(patch, rng.gen_range(0..8))
}

/// Seeded epoch plan: shuffled, `floor(n/m)` batches, leftovers dropped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub seed: u64,
    pub augment: bool,
}

/// One draw: patch index and the dihedral transform applied to it.
pub type Draw = (usize, u8);

impl BatchPlan {
    pub fn batches_per_epoch(&self, n: usize) -> Result<usize> {
        if self.batch_size == 0 || self.batch_size > n {
            return Err(Error::InvalidArgument(format!(
                "batch size {} must be in 1..={} (patch count)",
                self.batch_size, n
            )));
        }
        Ok(n / self.batch_size)
    }

    /// Draws for `epoch` (any counter the caller keeps unique per epoch).
    pub fn epoch(&self, n: usize, epoch: u64) -> Result<Vec<Vec<Draw>>> {
        let count = self.batches_per_epoch(n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Ok(order[..count * self.batch_size]
            .chunks(self.batch_size)
            .map(|chunk| {
                chunk
                    .iter()
                    .map(|&i| (i, if self.augment { rng.gen_range(0..8) } else { 0 }))
                    .collect()
            })
            .collect())
    }
}

/// Stack the drawn patches of `set` (transformed) into one batch tensor.
pub fn assemble(patches: &[Tensor], draws: &[Draw]) -> Result<Tensor> {
    let items = draws
        .iter()
        .map(|&(i, t)| dihedral(&patches[i], t))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&items)
}

/// All batches of one epoch as `(m, 1, p, p)` tensors.
pub fn batches(set: &PatchSet, plan: &BatchPlan, epoch: u64) -> Result<Vec<Tensor>> {
    plan.epoch(set.len(), epoch)?
        .iter()
        .map(|draws| assemble(&set.patches, draws))
        .collect()
}

/// Every `.pgm` in a directory, sorted by file name, cropped to blocks.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<(String, GrayImage)>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!("no .pgm files in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, load_image(p)?))
        })
        .collect()
}

/// Images shipped with the crate.
pub fn bundled_corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join("corpus")
}

/// Bundled images used for validation when no `val_dir` is given.
pub const BUNDLED_HOLDOUT: usize = 5;

/// Where training and validation images come from.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub patch: usize,
    pub patch_stride: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            train_dir: None,
            val_dir: None,
            patch: DEFAULT_PATCH,
            patch_stride: DEFAULT_PATCH,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = DatasetConfig::default();
        Ok(DatasetConfig {
            train_dir: kv.get_str("train_dir").map(PathBuf::from),
            val_dir: kv.get_str("val_dir").map(PathBuf::from),
            patch: kv.parse_or("patch", d.patch)?,
            patch_stride: kv.parse_or("patch_stride", d.patch_stride)?,
            seed: kv.parse_or("seed", d.seed)?,
        })
    }

    /// `(train, validation)` images. Without directories the bundled
    /// corpus is split, holding out its last [`BUNDLED_HOLDOUT`] images.
    pub fn load(&self) -> Result<(Vec<(String, GrayImage)>, Vec<(String, GrayImage)>)> {
        match (&self.train_dir, &self.val_dir) {
            (Some(t), Some(v)) => Ok((load_dir(t)?, load_dir(v)?)),
            (Some(t), None) => {
                let all = load_dir(t)?;
                let (_, val) = split_holdout(load_dir(bundled_corpus_dir())?);
                Ok((all, val))
            }
            (None, v) => {
                let (train, val) = split_holdout(load_dir(bundled_corpus_dir())?);
                Ok((train, if let Some(v) = v { load_dir(v)? } else { val }))
            }
        }
    }
}

pub fn split_holdout(mut all: Vec<(String, GrayImage)>) -> (Vec<(String, GrayImage)>, Vec<(String, GrayImage)>) {
    let k = all.len().saturating_sub(BUNDLED_HOLDOUT);
    let val = all.split_off(k);
    (all, val)
}
