//! Quality metrics and rate-distortion sweeps.

mod svg;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::codec::{decode_scic, encode_scic};
use crate::dataset::GrayImage;
use crate::error::{Error, Result};
use crate::losses::{self, SsimParams};
use crate::pipeline::Model;

pub use svg::rd_svg;

/// Reported PSNR of identical images.
pub const PSNR_CAP: f64 = 99.0;

fn same_extents(a: &GrayImage, b: &GrayImage) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::shape(
            "metric",
            format!("{}x{} vs {}x{}", a.width(), a.height(), b.width(), b.height()),
        ));
    }
    Ok(())
}

/// `10 log10(255^2 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    same_extents(a, b)?;
    let se: f64 = a
        .samples()
        .iter()
        .zip(b.samples())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    let mse = se / a.samples().len() as f64;
    Ok(if mse == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP)
    })
}

/// Mean SSIM on `[0, 1]` intensities, same window and constants as the loss.
pub fn ssim_metric(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    same_extents(a, b)?;
    Ok(losses::value::ssim_map(&a.to_tensor(), &b.to_tensor(), &SsimParams::default())?.mean())
}

/// `8 * bytes / (width * height)`.
pub fn bpp(total_bytes: usize, width: usize, height: usize) -> f64 {
    (8 * total_bytes) as f64 / (width * height) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    JpegLike,
    Scic,
    Dnnc,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::JpegLike => "jpeg-like",
            Method::Scic => "scic",
            Method::Dnnc => "dnnc",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jpeg-like" => Ok(Method::JpegLike),
            "scic" => Ok(Method::Scic),
            "dnnc" => Ok(Method::Dnnc),
            _ => Err(Error::InvalidArgument(format!("unknown method '{}' (jpeg-like|scic|dnnc)", s))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RdRecord {
    pub method: Method,
    pub image: String,
    /// QF for the block codec paths, N for DNNC.
    pub knob: u32,
    pub bpp: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Requested operating points and the checkpoints that serve them.
#[derive(Clone, Debug, Default)]
pub struct SweepPlan {
    pub methods: Vec<Method>,
    pub qfs: Vec<u8>,
    pub ns: Vec<u32>,
    /// SCIC model per QF.
    pub scic: BTreeMap<u8, Model>,
    /// DNNC model per N.
    pub dnnc: BTreeMap<u32, Model>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sweep {
    pub records: Vec<RdRecord>,
    /// `(method, knob)` pairs skipped for lack of a checkpoint.
    pub missing: Vec<(Method, u32)>,
}

/// Code one image at one operating point; `None` if no checkpoint serves it.
fn point(plan: &SweepPlan, method: Method, knob: u32, name: &str, img: &GrayImage) -> Result<Option<RdRecord>> {
    let (bits, decoded) = match method {
        Method::JpegLike => {
            let bs = encode_scic(img, knob as u8)?;
            (bs.byte_len(), decode_scic(&bs)?)
        }
        Method::Scic => match plan.scic.get(&(knob as u8)) {
            None => return Ok(None),
            Some(m) => {
                let bs = m.compress(img, knob as u8)?;
                (bs.byte_len(), m.decompress(&bs)?)
            }
        },
        Method::Dnnc => match plan.dnnc.get(&knob) {
            None => return Ok(None),
            Some(m) => {
                let bs = m.compress(img, 0)?;
                (bs.byte_len(), m.decompress(&bs)?)
            }
        },
    };
    Ok(Some(RdRecord {
        method,
        image: name.to_string(),
        knob,
        bpp: bpp(bits, img.width(), img.height()),
        psnr: psnr(img, &decoded)?,
        ssim: ssim_metric(img, &decoded)?,
    }))
}

/// Worker count from `VCN_THREADS`, if set.
pub fn thread_limit() -> Result<Option<usize>> {
    match std::env::var("VCN_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("VCN_THREADS must be a positive integer, got '{}'", v))),
        },
    }
}

/// Every `(image, method, knob)` point, images in parallel. Records come
/// back sorted by method, image, bpp.
pub fn rd_sweep(plan: &SweepPlan, images: &[(String, GrayImage)]) -> Result<Sweep> {
    let mut points: Vec<(Method, u32)> = Vec::new();
    for &m in &plan.methods {
        match m {
            Method::JpegLike | Method::Scic => points.extend(plan.qfs.iter().map(|&q| (m, q as u32))),
            Method::Dnnc => points.extend(plan.ns.iter().map(|&n| (m, n))),
        }
    }
    let missing: Vec<(Method, u32)> = points
        .iter()
        .copied()
        .filter(|&(m, k)| match m {
            Method::JpegLike => false,
            Method::Scic => !plan.scic.contains_key(&(k as u8)),
            Method::Dnnc => !plan.dnnc.contains_key(&k),
        })
        .collect();
    let run = || -> Result<Vec<RdRecord>> {
        let per_image: Vec<Vec<RdRecord>> = images
            .par_iter()
            .map(|(name, img)| {
                let mut out = Vec::new();
                for &(m, k) in &points {
                    out.extend(point(plan, m, k, name, img)?);
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        Ok(per_image.into_iter().flatten().collect())
    };
    let mut records = match thread_limit()? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {}", e)))?
            .install(run)?,
        None => run()?,
    };
    records.sort_by(|a, b| {
        (a.method, &a.image)
            .cmp(&(b.method, &b.image))
            .then(a.bpp.total_cmp(&b.bpp))
            .then(a.knob.cmp(&b.knob))
    });
    Ok(Sweep { records, missing })
}

/// `v` with 6 significant digits, fixed notation where reasonable.
pub fn sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{}", v);
    }
    let exp = v.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        format!("{:.*}", (5 - exp).max(0) as usize, v)
    } else {
        format!("{:.5e}", v)
    }
}

pub fn write_csv(records: &[RdRecord], mut w: impl Write) -> Result<()> {
    writeln!(w, "method,image,knob,bpp,psnr,ssim")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.method,
            r.image,
            r.knob,
            sig6(r.bpp),
            sig6(r.psnr),
            sig6(r.ssim)
        )?;
    }
    Ok(())
}
