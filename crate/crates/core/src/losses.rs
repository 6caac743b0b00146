//! Loss functionals and the per-network training objectives.
//!
//! Every loss is built on a [`Graph`] so the same code serves both the
//! training path (gradients) and evaluation (values only).

use crate::error::{Error, Result};
use crate::networks::{Framework, ResolutionMode};
use crate::tensor::{Graph, Tensor, Var};

/// The 8-neighbourhood used by the gradient-difference loss.
pub const NEIGHBORHOOD: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub c1: f64,
    pub c2: f64,
    /// Side of the square uniform window, stride 1.
    pub window: usize,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            c1: 0.0001,
            c2: 0.0009,
            window: 8,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c2 > 0.0) || self.window == 0 {
            return Err(Error::InvalidArgument(format!("bad SSIM parameters {:?}", self)));
        }
        Ok(())
    }
}

/// Term weights of one objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub data: f64,
    pub grad: f64,
    pub dssim: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            data: 1.0,
            grad: 1.0,
            dssim: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.data, self.grad, self.dssim].iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(format!("loss weights must be >= 0, got {:?}", self)));
        }
        Ok(())
    }
}

/// Weights for the three networks' objectives.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RoleWeights {
    pub idn: LossWeights,
    pub vcn: LossWeights,
    pub rsn: LossWeights,
}

fn same_shape(g: &Graph, a: Var, b: Var, op: &'static str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(op, format!("{:?} vs {:?}", g.shape(a), g.shape(b))));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn l1_data(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    same_shape(g, a, b, "l1_data")?;
    let d = g.sub(a, b)?;
    let ad = g.abs(d);
    Ok(g.mean(ad))
}

/// Sum over the 8-neighbourhood of |grad_k A - grad_k B|, normalised by the
/// pixel count. Neighbours falling outside the image are skipped.
pub fn gradient_diff(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    same_shape(g, a, b, "gradient_diff")?;
    let pixels = g.value(a).len() as f64;
    let d = g.sub(a, b)?;
    let mut total: Option<Var> = None;
    for &(dy, dx) in &NEIGHBORHOOD {
        let nd = g.neighbor_diff(d, dy, dx)?;
        let ad = g.abs(nd);
        let s = g.sum(ad);
        total = Some(match total {
            Some(t) => g.add(t, s)?,
            None => s,
        });
    }
    Ok(g.scale(total.expect("non-empty neighbourhood"), 1.0 / pixels))
}

/// Per-pixel SSIM from windowed means, variances and covariance.
pub fn ssim_map(g: &mut Graph, a: Var, b: Var, p: &SsimParams) -> Result<Var> {
    same_shape(g, a, b, "ssim_map")?;
    p.validate()?;
    let mu_a = g.window_mean(a, p.window)?;
    let mu_b = g.window_mean(b, p.window)?;
    let var_a = g.window_variance(a, p.window)?;
    let var_b = g.window_variance(b, p.window)?;
    let cov = g.window_covariance(a, b, p.window)?;

    let mu_ab = g.mul(mu_a, mu_b)?;
    let n1 = g.scale(mu_ab, 2.0);
    let n1 = g.add_scalar(n1, p.c1);
    let n2 = g.scale(cov, 2.0);
    let n2 = g.add_scalar(n2, p.c2);
    let num = g.mul(n1, n2)?;

    let mu_a2 = g.mul(mu_a, mu_a)?;
    let mu_b2 = g.mul(mu_b, mu_b)?;
    let d1 = g.add(mu_a2, mu_b2)?;
    let d1 = g.add_scalar(d1, p.c1);
    let d2 = g.add(var_a, var_b)?;
    let d2 = g.add_scalar(d2, p.c2);
    let den = g.mul(d1, d2)?;
    g.div(num, den)
}

/// `1 - mean(ssim_map)`, averaged over the whole batch.
pub fn dssim(g: &mut Graph, a: Var, b: Var, p: &SsimParams) -> Result<Var> {
    let map = ssim_map(g, a, b, p)?;
    let m = g.mean(map);
    let neg = g.scale(m, -1.0);
    Ok(g.add_scalar(neg, 1.0))
}

/// Linear upsampling back to image size: bilinear x2 in low mode, identity
/// in full mode.
pub fn upsample_s(g: &mut Graph, y: Var, mode: ResolutionMode) -> Result<Var> {
    match mode {
        ResolutionMode::Full => Ok(y),
        ResolutionMode::Low => g.upsample2x(y),
    }
}

fn weighted_sum(g: &mut Graph, terms: &[(f64, Var)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &(w, t) in terms {
        let wt = g.scale(t, w);
        acc = Some(match acc {
            Some(a) => g.add(a, wt)?,
            None => wt,
        });
    }
    acc.ok_or_else(|| Error::InvalidArgument("empty objective".into()))
}

/// `data + gradient-difference` pair shared by the SCIC decoding objectives.
fn fidelity(g: &mut Graph, framework: Framework, out: Var, target: Var, w: &LossWeights) -> Result<Var> {
    let data = l1_data(g, out, target)?;
    match framework {
        Framework::Scic => {
            let grad = gradient_diff(g, out, target)?;
            weighted_sum(g, &[(w.data, data), (w.grad, grad)])
        }
        Framework::Dnnc => weighted_sum(g, &[(w.data, data)]),
    }
}

/// Objective of the image decoder: decoded image `decoded` against the
/// original `target`.
pub fn idn_loss(g: &mut Graph, framework: Framework, decoded: Var, target: Var, w: &LossWeights) -> Result<Var> {
    fidelity(g, framework, decoded, target, w)
}

/// Objective of the virtual codec: its output against the decoder's output.
/// The low-resolution SCIC path adds a DSSIM term.
pub fn vcn_loss(
    g: &mut Graph,
    framework: Framework,
    mode: ResolutionMode,
    virtual_out: Var,
    decoded: Var,
    w: &LossWeights,
    ssim: &SsimParams,
) -> Result<Var> {
    let base = fidelity(g, framework, virtual_out, decoded, w)?;
    if framework == Framework::Scic && mode == ResolutionMode::Low {
        let d = dssim(g, virtual_out, decoded, ssim)?;
        weighted_sum(g, &[(1.0, base), (w.dssim, d)])
    } else {
        Ok(base)
    }
}

/// Objective of the re-sampling network, evaluated through the frozen
/// virtual codec. SCIC adds DSSIM between the upsampled re-sampled image and
/// the original.
#[allow(clippy::too_many_arguments)]
pub fn rsn_loss(
    g: &mut Graph,
    framework: Framework,
    mode: ResolutionMode,
    virtual_out: Var,
    target: Var,
    resampled: Var,
    w: &LossWeights,
    ssim: &SsimParams,
) -> Result<Var> {
    let base = fidelity(g, framework, virtual_out, target, w)?;
    match framework {
        Framework::Scic => {
            let up = upsample_s(g, resampled, mode)?;
            let d = dssim(g, up, target, ssim)?;
            weighted_sum(g, &[(1.0, base), (w.dssim, d)])
        }
        Framework::Dnnc => Ok(base),
    }
}

/// Value-only helpers over plain tensors.
pub mod value {
    use super::*;

    fn eval(a: &Tensor, b: &Tensor, f: impl FnOnce(&mut Graph, Var, Var) -> Result<Var>) -> Result<Tensor> {
        let mut g = Graph::new();
        let va = g.constant(a.clone());
        let vb = g.constant(b.clone());
        let out = f(&mut g, va, vb)?;
        Ok(g.value(out).clone())
    }

    pub fn l1_data(a: &Tensor, b: &Tensor) -> Result<f64> {
        Ok(eval(a, b, super::l1_data)?.data()[0])
    }

    pub fn gradient_diff(a: &Tensor, b: &Tensor) -> Result<f64> {
        Ok(eval(a, b, super::gradient_diff)?.data()[0])
    }

    pub fn ssim_map(a: &Tensor, b: &Tensor, p: &SsimParams) -> Result<Tensor> {
        eval(a, b, |g, x, y| super::ssim_map(g, x, y, p))
    }

    pub fn dssim(a: &Tensor, b: &Tensor, p: &SsimParams) -> Result<f64> {
        Ok(eval(a, b, |g, x, y| super::dssim(g, x, y, p))?.data()[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_img(seed: u64, h: usize, w: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(&[1, 1, h, w], 0.0, 1.0, &mut rng)
    }

    #[test]
    fn l1_basic_values() {
        let a = rand_img(1, 8, 8);
        assert_eq!(value::l1_data(&a, &a).unwrap(), 0.0);
        let b = a.map(|v| v + 0.5);
        assert!((value::l1_data(&b, &a).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gradient_diff_of_constants_vanishes() {
        let a = Tensor::full(&[1, 1, 6, 6], 0.2);
        let b = Tensor::full(&[1, 1, 6, 6], 0.9);
        assert_eq!(value::gradient_diff(&a, &b).unwrap(), 0.0);
        let r = rand_img(2, 6, 6);
        assert_eq!(value::gradient_diff(&r, &r).unwrap(), 0.0);
    }

    #[test]
    fn ssim_identical_is_one() {
        let a = rand_img(3, 16, 16);
        let map = value::ssim_map(&a, &a, &SsimParams::default()).unwrap();
        assert!(map.data().iter().all(|&v| v == 1.0));
        assert_eq!(value::dssim(&a, &a, &SsimParams::default()).unwrap(), 0.0);
    }

    #[test]
    fn ssim_of_black_against_white() {
        let p = SsimParams::default();
        let a = Tensor::zeros(&[1, 1, 8, 8]);
        let b = Tensor::ones(&[1, 1, 8, 8]);
        let map = value::ssim_map(&a, &b, &p).unwrap();
        // means 0 and 1, all variances zero
        let expect = (p.c1 * p.c2) / ((1.0 + p.c1) * p.c2);
        for &v in map.data() {
            assert!((v - expect).abs() < 1e-15, "{v} vs {expect}");
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = Tensor::zeros(&[1, 1, 8, 8]);
        let b = Tensor::zeros(&[1, 1, 8, 6]);
        assert!(value::l1_data(&a, &b).is_err());
        assert!(value::gradient_diff(&a, &b).is_err());
        assert!(value::dssim(&a, &b, &SsimParams::default()).is_err());
    }

    #[test]
    fn full_mode_upsample_is_identity() {
        let mut g = Graph::new();
        let y = g.constant(rand_img(4, 4, 4));
        assert_eq!(upsample_s(&mut g, y, ResolutionMode::Full).unwrap(), y);
        let up = upsample_s(&mut g, y, ResolutionMode::Low).unwrap();
        assert_eq!(g.shape(up), &[1, 1, 8, 8]);
    }

    #[test]
    fn scic_terms_vanish_at_perfect_reconstruction() {
        let x = rand_img(5, 16, 16);
        let w = LossWeights::default();
        let p = SsimParams::default();
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let dec = g.constant(x.clone());
        let virt = g.constant(x.clone());
        let l_idn = idn_loss(&mut g, Framework::Scic, dec, xv, &w).unwrap();
        let l_vcn = vcn_loss(&mut g, Framework::Scic, ResolutionMode::Low, virt, dec, &w, &p).unwrap();
        let l_rsn = rsn_loss(&mut g, Framework::Scic, ResolutionMode::Full, virt, xv, xv, &w, &p).unwrap();
        for l in [l_idn, l_vcn, l_rsn] {
            assert_eq!(g.value(l).data()[0], 0.0);
        }
    }

    #[test]
    fn negative_weight_rejected() {
        let w = LossWeights {
            data: -1.0,
            ..Default::default()
        };
        assert!(w.validate().is_err());
    }
}
