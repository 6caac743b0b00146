//! Autoencoder initialisation and the alternating training schedule.
//!
//! After pretraining, every outer iteration runs, in order: decoder epochs
//! on the real channel output, virtual-codec epochs imitating channel plus
//! decoder, and re-sampler epochs whose gradients come through the frozen
//! virtual codec. A last round of decoder epochs follows the loop. Only the
//! re-sampler and decoder are returned.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::g_map;
use crate::config::KeyValues;
use crate::dataset::{assemble, BatchPlan, PatchSet};
use crate::error::{Error, Result};
use crate::losses::{self, idn_loss, rsn_loss, vcn_loss, LossWeights, RoleWeights, SsimParams};
use crate::networks::{
    check_code_channels, Architecture, Framework, Network, ResolutionMode, Role, DNNC_WIDTH, SCIC_WIDTH,
};
use crate::pipeline::{f32_exact, Model};
use crate::quantizer::{QuantizerSpec, DEFAULT_BETA};
use crate::tensor::{AdamState, Graph, Tensor, DEFAULT_LR};

/// Learning rate at `step` of a phase lasting `total` steps: the initial
/// rate until 3/5 of the phase, half of it until 4/5, a quarter after.
pub fn lr_at(step: usize, total: usize, initial: f64) -> f64 {
    if 5 * step < 3 * total {
        initial
    } else if 5 * step < 4 * total {
        initial / 2.0
    } else {
        initial / 4.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub framework: Framework,
    pub mode: ResolutionMode,
    /// Outer iterations `K`.
    pub outer: usize,
    /// Decoder and virtual-codec epochs per iteration (also the final refresh).
    pub p: usize,
    /// Re-sampler epochs per iteration.
    pub q: usize,
    pub batch: usize,
    /// SCIC rate knob.
    pub qf: u8,
    /// DNNC rate knob `N`.
    pub code_channels: usize,
    pub beta: u32,
    /// Conv feature width; `None` uses the framework default.
    pub width: Option<usize>,
    pub pretrain_epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub augment: bool,
    pub weights: RoleWeights,
    pub ssim: SsimParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            framework: Framework::Scic,
            mode: ResolutionMode::Full,
            outer: 3,
            p: 2,
            q: 2,
            batch: 8,
            qf: 10,
            code_channels: 4,
            beta: DEFAULT_BETA,
            width: None,
            pretrain_epochs: 10,
            lr: DEFAULT_LR,
            seed: 0,
            augment: true,
            weights: RoleWeights::default(),
            ssim: SsimParams::default(),
        }
    }
}

/// Keys accepted by [`TrainConfig::from_kv`].
pub const TRAIN_KEYS: &[&str] = &[
    "framework",
    "mode",
    "outer",
    "p",
    "q",
    "batch",
    "qf",
    "n",
    "beta",
    "width",
    "pretrain_epochs",
    "lr",
    "seed",
    "augment",
    "dssim_weight",
    "grad_weight",
];

impl TrainConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = TrainConfig::default();
        let mut weights = d.weights;
        let dssim = kv.parse_or("dssim_weight", 1.0)?;
        let grad = kv.parse_or("grad_weight", 1.0)?;
        for w in [&mut weights.idn, &mut weights.vcn, &mut weights.rsn] {
            *w = LossWeights { data: 1.0, grad, dssim };
        }
        let width = match kv.get_str("width") {
            None => None,
            Some(v) => Some(v.parse().map_err(|e| Error::Config(format!("width: {}", e)))?),
        };
        let cfg = TrainConfig {
            framework: kv.parse_or("framework", d.framework)?,
            mode: kv.parse_or("mode", d.mode)?,
            outer: kv.parse_or("outer", d.outer)?,
            p: kv.parse_or("p", d.p)?,
            q: kv.parse_or("q", d.q)?,
            batch: kv.parse_or("batch", d.batch)?,
            qf: kv.parse_or("qf", d.qf)?,
            code_channels: kv.parse_or("n", d.code_channels)?,
            beta: kv.parse_or("beta", d.beta)?,
            width,
            pretrain_epochs: kv.parse_or("pretrain_epochs", d.pretrain_epochs)?,
            lr: kv.parse_or("lr", d.lr)?,
            seed: kv.parse_or("seed", d.seed)?,
            augment: kv.parse_or("augment", d.augment)?,
            weights,
            ssim: d.ssim,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.outer == 0 || self.p == 0 || self.q == 0 {
            return bad(format!("K, p and q must be >= 1 (got {}, {}, {})", self.outer, self.p, self.q));
        }
        if self.batch == 0 {
            return bad("batch size must be >= 1".into());
        }
        if !(1..=100).contains(&self.qf) {
            return bad(format!("qf {} outside 1..=100", self.qf));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if self.width == Some(0) {
            return bad("width must be positive".into());
        }
        if self.framework == Framework::Dnnc {
            check_code_channels(self.code_channels)?;
            if self.mode != ResolutionMode::Full {
                return bad("DNNC has no low-resolution mode".into());
            }
        }
        QuantizerSpec::new(self.beta, 0.0, 1.0)?;
        for w in [self.weights.idn, self.weights.vcn, self.weights.rsn] {
            w.validate()?;
        }
        self.ssim.validate()
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            framework: self.framework,
            mode: self.mode,
            width: self.width.unwrap_or(match self.framework {
                Framework::Scic => SCIC_WIDTH,
                Framework::Dnnc => DNNC_WIDTH,
            }),
            code_channels: self.code_channels,
        }
    }

    fn plan(&self) -> BatchPlan {
        BatchPlan {
            batch_size: self.batch,
            seed: self.seed ^ 0x5EED_BA7C,
            augment: self.augment,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Idn,
    Vcn,
    Rsn,
    Refresh,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Pretrain => "pretrain",
            Phase::Idn => "idn",
            Phase::Vcn => "vcn",
            Phase::Rsn => "rsn",
            Phase::Refresh => "refresh",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub phase: Phase,
    pub k: usize,
    pub epoch: usize,
    pub loss: f64,
}

/// Which parameter sets a phase changed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PhaseCheck {
    pub phase: Phase,
    pub k: usize,
    pub rsn_changed: bool,
    pub idn_changed: bool,
    pub vcn_changed: bool,
}

/// Validation `L1(v(Y), h(g(Y)))` around one virtual-codec phase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fidelity {
    pub k: usize,
    pub before: f64,
    pub after: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<EpochLoss>,
    pub checks: Vec<PhaseCheck>,
    pub fidelity: Vec<Fidelity>,
    /// Validation `L1(h(g(f(X))), X)` after iteration `k` (0 = before the loop).
    pub end_to_end: Vec<(usize, f64)>,
    pub seconds: f64,
}

impl TrainReport {
    /// `record,k,phase,epoch,value` rows.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "record,k,phase,epoch,value")?;
        for l in &self.losses {
            writeln!(w, "loss,{},{},{},{:.6e}", l.k, l.phase, l.epoch, l.loss)?;
        }
        for f in &self.fidelity {
            writeln!(w, "vcn_fidelity_before,{},vcn,,{:.6e}", f.k, f.before)?;
            writeln!(w, "vcn_fidelity_after,{},vcn,,{:.6e}", f.k, f.after)?;
        }
        for (k, v) in &self.end_to_end {
            writeln!(w, "end_to_end_l1,{},,,{:.6e}", k, v)?;
        }
        writeln!(w, "wall_clock_s,,,,{:.3}", self.seconds)?;
        Ok(())
    }
}

fn finite(v: f64, phase: Phase, k: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{} loss at iteration {}", phase, k)))
    }
}

/// The lossy channel `Z = g(Y)` (SCIC) or `Z = q(Y)` (DNNC). Never part of
/// a graph.
pub fn channel(cfg: &TrainConfig, quantizer: Option<&QuantizerSpec>, y: &Tensor) -> Result<Tensor> {
    match cfg.framework {
        Framework::Scic => g_map(y, cfg.qf, cfg.mode),
        Framework::Dnnc => Ok(quantizer
            .ok_or_else(|| Error::Contract("DNNC channel used before the quantiser was frozen".into()))?
            .apply(y)),
    }
}

/// Re-sampler loss evaluated through the frozen virtual codec, and its
/// gradient with respect to the re-sampler parameters only.
pub fn gradient_bridge(
    x: &Tensor,
    rsn: &Network,
    vcn: &Network,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let (y, alpha) = rsn.forward_graph(&mut g, xv, true)?;
    let (out, theta) = vcn.forward_graph(&mut g, y, false)?;
    if theta.iter().any(|&v| g.is_tracked(v)) {
        return Err(Error::Contract("virtual codec parameters must be frozen in the bridge".into()));
    }
    let loss = rsn_loss(
        &mut g,
        cfg.framework,
        cfg.mode,
        out,
        xv,
        y,
        &cfg.weights.rsn,
        &cfg.ssim,
    )?;
    let grads = g.backward(loss)?;
    if theta.iter().any(|&v| grads.get(v).is_some()) {
        return Err(Error::Contract("gradient reached the virtual codec parameters".into()));
    }
    Ok((g.value(loss).data()[0], alpha.iter().map(|&v| grads.wrt(v)).collect()))
}

/// Train `f` and `h` jointly as a plain autoencoder (no channel), then
/// freeze the DNNC quantiser range over the training codes.
pub fn pretrain_autoencoder(cfg: &TrainConfig, data: &PatchSet) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let start = Instant::now();
    let arch = cfg.architecture();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rsn = arch.build(Role::Rsn, &mut rng)?;
    let mut idn = arch.build(Role::Idn, &mut rng)?;
    let mut opt = AdamState::new(rsn.params().into_iter().chain(idn.params()));
    let plan = cfg.plan();
    let per_epoch = plan.batches_per_epoch(data.len())?;
    let total = per_epoch * cfg.pretrain_epochs;
    let mut report = TrainReport::default();
    let mut step = 0;
    for epoch in 0..cfg.pretrain_epochs {
        let mut acc = 0.0;
        for draws in plan.epoch(data.len(), epoch as u64)? {
            let x = assemble(&data.patches, &draws)?;
            let mut g = Graph::new();
            let xv = g.constant(x);
            let (y, mut vars) = rsn.forward_graph(&mut g, xv, true)?;
            let (out, gamma) = idn.forward_graph(&mut g, y, true)?;
            vars.extend(gamma);
            let loss = idn_loss(&mut g, cfg.framework, out, xv, &cfg.weights.idn)?;
            acc += finite(g.value(loss).data()[0], Phase::Pretrain, 0)?;
            let grads = g.backward(loss)?;
            let grads: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
            opt.lr = lr_at(step, total, cfg.lr);
            let mut params = rsn.params_mut();
            params.extend(idn.params_mut());
            opt.step(&mut params, &grads)?;
            step += 1;
        }
        let loss = acc / per_epoch as f64;
        info!("pretrain epoch {} loss {:.5}", epoch + 1, loss);
        report.losses.push(EpochLoss {
            phase: Phase::Pretrain,
            k: 0,
            epoch,
            loss,
        });
    }
    let quantizer = match cfg.framework {
        Framework::Scic => None,
        Framework::Dnnc => {
            let codes = data.patches.iter().map(|p| rsn.forward(p)).collect::<Result<Vec<_>>>()?;
            let fit = QuantizerSpec::fit(cfg.beta, &codes)?;
            // stored as f32 in checkpoints; freeze the value that will be stored
            Some(QuantizerSpec::new(cfg.beta, f32_exact(fit.y_min), f32_exact(fit.y_max))?)
        }
    };
    report.seconds = start.elapsed().as_secs_f64();
    Ok((Model::new(arch, rsn, idn, quantizer)?, report))
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    rsn: Network,
    idn: Network,
    vcn: Network,
    quantizer: Option<QuantizerSpec>,
    opt_rsn: AdamState,
    opt_idn: AdamState,
    opt_vcn: AdamState,
    data: &'a PatchSet,
    val: Vec<Tensor>,
    plan: BatchPlan,
    epoch_counter: u64,
    report: TrainReport,
}

impl Trainer<'_> {
    fn checksums(&self) -> [u64; 3] {
        [self.rsn.checksum(), self.idn.checksum(), self.vcn.checksum()]
    }

    fn channel(&self, y: &Tensor) -> Result<Tensor> {
        channel(self.cfg, self.quantizer.as_ref(), y)
    }

    fn idn_step(&mut self, x: &Tensor, lr: f64) -> Result<f64> {
        let z = self.channel(&self.rsn.forward(x)?)?;
        let mut g = Graph::new();
        let zv = g.constant(z);
        let xv = g.constant(x.clone());
        let (out, gamma) = self.idn.forward_graph(&mut g, zv, true)?;
        let loss = idn_loss(&mut g, self.cfg.framework, out, xv, &self.cfg.weights.idn)?;
        let grads = g.backward(loss)?;
        let grads: Vec<Tensor> = gamma.iter().map(|&v| grads.wrt(v)).collect();
        self.opt_idn.lr = lr;
        self.opt_idn.step(&mut self.idn.params_mut(), &grads)?;
        Ok(g.value(loss).data()[0])
    }

    fn vcn_step(&mut self, x: &Tensor, lr: f64) -> Result<f64> {
        let y = self.rsn.forward(x)?;
        let decoded = self.idn.forward(&self.channel(&y)?)?;
        let mut g = Graph::new();
        let yv = g.constant(y);
        let dv = g.constant(decoded);
        let (out, theta) = self.vcn.forward_graph(&mut g, yv, true)?;
        let loss = vcn_loss(
            &mut g,
            self.cfg.framework,
            self.cfg.mode,
            out,
            dv,
            &self.cfg.weights.vcn,
            &self.cfg.ssim,
        )?;
        let grads = g.backward(loss)?;
        let grads: Vec<Tensor> = theta.iter().map(|&v| grads.wrt(v)).collect();
        self.opt_vcn.lr = lr;
        self.opt_vcn.step(&mut self.vcn.params_mut(), &grads)?;
        Ok(g.value(loss).data()[0])
    }

    fn rsn_step(&mut self, x: &Tensor, lr: f64) -> Result<f64> {
        let (loss, grads) = gradient_bridge(x, &self.rsn, &self.vcn, self.cfg)?;
        self.opt_rsn.lr = lr;
        self.opt_rsn.step(&mut self.rsn.params_mut(), &grads)?;
        Ok(loss)
    }

    fn run_phase(&mut self, phase: Phase, k: usize, epochs: usize) -> Result<()> {
        let before = self.checksums();
        let n = self.data.len();
        let per_epoch = self.plan.batches_per_epoch(n)?;
        let total = per_epoch * epochs;
        let mut step = 0;
        for epoch in 0..epochs {
            let draws = self.plan.epoch(n, self.epoch_counter)?;
            self.epoch_counter += 1;
            let mut acc = 0.0;
            for d in draws {
                let x = assemble(&self.data.patches, &d)?;
                let lr = lr_at(step, total, self.cfg.lr);
                let loss = match phase {
                    Phase::Idn | Phase::Refresh => self.idn_step(&x, lr)?,
                    Phase::Vcn => self.vcn_step(&x, lr)?,
                    Phase::Rsn => self.rsn_step(&x, lr)?,
                    Phase::Pretrain => unreachable!("pretraining has its own loop"),
                };
                acc += finite(loss, phase, k)?;
                step += 1;
            }
            let loss = acc / per_epoch as f64;
            info!("iteration {} {} epoch {} loss {:.5}", k, phase, epoch + 1, loss);
            self.report.losses.push(EpochLoss { phase, k, epoch, loss });
        }
        let after = self.checksums();
        let check = PhaseCheck {
            phase,
            k,
            rsn_changed: before[0] != after[0],
            idn_changed: before[1] != after[1],
            vcn_changed: before[2] != after[2],
        };
        let allowed = match phase {
            Phase::Idn | Phase::Refresh => [false, true, false],
            Phase::Vcn => [false, false, true],
            Phase::Rsn => [true, false, false],
            Phase::Pretrain => [true, true, false],
        };
        let changed = [check.rsn_changed, check.idn_changed, check.vcn_changed];
        if changed.iter().zip(&allowed).any(|(&c, &a)| c && !a) {
            return Err(Error::Contract(format!("{} phase changed a frozen parameter set: {:?}", phase, check)));
        }
        self.report.checks.push(check);
        Ok(())
    }

    /// Mean over validation patches of `L1(v(Y), h(g(Y)))` and
    /// `L1(h(g(Y)), X)`.
    fn validate(&self) -> Result<(f64, f64)> {
        let (mut fid, mut e2e, mut count) = (0.0, 0.0, 0.0);
        for x in &self.val {
            let y = self.rsn.forward(x)?;
            let decoded = self.idn.forward(&self.channel(&y)?)?;
            let virt = self.vcn.forward(&y)?;
            let n = x.shape()[0] as f64;
            fid += n * losses::value::l1_data(&virt, &decoded)?;
            e2e += n * losses::value::l1_data(&decoded, x)?;
            count += n;
        }
        Ok((fid / count, e2e / count))
    }
}

/// Alternating training from a pretrained model. The virtual codec starts
/// as a copy of the pretrained decoder and is discarded at the end.
pub fn train(cfg: &TrainConfig, init: &Model, data: &PatchSet, val: &PatchSet) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    if init.arch != cfg.architecture() {
        return Err(Error::Config(format!(
            "pretrained architecture {:?} does not match config {:?}",
            init.arch,
            cfg.architecture()
        )));
    }
    if data.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be non-empty".into()));
    }
    let start = Instant::now();
    let vcn = init.idn.with_role(Role::Vcn);
    let mut t = Trainer {
        cfg,
        opt_rsn: AdamState::new(init.rsn.params()),
        opt_idn: AdamState::new(init.idn.params()),
        opt_vcn: AdamState::new(vcn.params()),
        rsn: init.rsn.clone(),
        idn: init.idn.clone(),
        vcn,
        quantizer: init.quantizer,
        data,
        val: val
            .patches
            .chunks(cfg.batch)
            .map(Tensor::stack)
            .collect::<Result<Vec<_>>>()?,
        plan: cfg.plan(),
        epoch_counter: 1 << 32,
        report: TrainReport::default(),
    };
    t.report.end_to_end.push((0, t.validate()?.1));
    for k in 1..=cfg.outer {
        t.run_phase(Phase::Idn, k, cfg.p)?;
        let before = t.validate()?.0;
        t.run_phase(Phase::Vcn, k, cfg.p)?;
        let after = t.validate()?.0;
        info!("iteration {} virtual codec fidelity {:.5} -> {:.5}", k, before, after);
        t.report.fidelity.push(Fidelity { k, before, after });
        t.run_phase(Phase::Rsn, k, cfg.q)?;
        let e2e = t.validate()?.1;
        t.report.end_to_end.push((k, e2e));
    }
    t.run_phase(Phase::Refresh, cfg.outer, cfg.p)?;
    let e2e = t.validate()?.1;
    t.report.end_to_end.push((cfg.outer + 1, e2e));
    t.report.seconds = start.elapsed().as_secs_f64();
    let model = Model::new(init.arch, t.rsn, t.idn, t.quantizer)?;
    Ok((model, t.report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{extract_patches, synth::scene};

    #[test]
    fn schedule_breakpoints() {
        assert_eq!(lr_at(0, 100, 1e-4), 1e-4);
        assert_eq!(lr_at(59, 100, 1e-4), 1e-4);
        assert_eq!(lr_at(60, 100, 1e-4), 5e-5);
        assert_eq!(lr_at(79, 100, 1e-4), 5e-5);
        assert_eq!(lr_at(80, 100, 1e-4), 2.5e-5);
        assert_eq!(lr_at(99, 100, 1e-4), 2.5e-5);
        let total = 7;
        assert_eq!(lr_at((0.6f64 * total as f64).ceil() as usize, total, 1e-4), 5e-5);
    }

    #[test]
    fn config_validation() {
        let kv = KeyValues::parse("framework = dnnc\nn = 3").unwrap();
        assert!(TrainConfig::from_kv(&kv).is_err());
        let kv = KeyValues::parse("outer = 0").unwrap();
        assert!(TrainConfig::from_kv(&kv).is_err());
        let kv = KeyValues::parse("framework = scic\nmode = low\nqf = 6\nwidth = 8").unwrap();
        let cfg = TrainConfig::from_kv(&kv).unwrap();
        assert_eq!(cfg.architecture().width, 8);
        assert_eq!(cfg.mode, ResolutionMode::Low);
    }

    fn tiny() -> (TrainConfig, PatchSet) {
        let cfg = TrainConfig {
            outer: 1,
            p: 1,
            q: 1,
            batch: 2,
            width: Some(4),
            pretrain_epochs: 1,
            lr: 1e-3,
            ..TrainConfig::default()
        };
        let imgs = vec![("a".to_string(), scene(32, 32, 1))];
        (cfg, extract_patches(&imgs, 16, 16).unwrap())
    }

    #[test]
    fn phases_touch_only_their_network() {
        let (cfg, data) = tiny();
        let (init, _) = pretrain_autoencoder(&cfg, &data).unwrap();
        let (_, report) = train(&cfg, &init, &data, &data).unwrap();
        let phases: Vec<Phase> = report.checks.iter().map(|c| c.phase).collect();
        assert_eq!(phases, [Phase::Idn, Phase::Vcn, Phase::Rsn, Phase::Refresh]);
        for c in &report.checks {
            let n = [c.rsn_changed, c.idn_changed, c.vcn_changed].iter().filter(|&&b| b).count();
            assert_eq!(n, 1, "{:?}", c);
        }
    }

    #[test]
    fn bridge_with_zero_vcn_has_no_data_gradient() {
        let (mut cfg, data) = tiny();
        cfg.weights.rsn = LossWeights {
            data: 1.0,
            grad: 1.0,
            dssim: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let arch = cfg.architecture();
        let rsn = arch.build(Role::Rsn, &mut rng).unwrap();
        let mut vcn = arch.build(Role::Vcn, &mut rng).unwrap();
        vcn.zero_params();
        let (_, grads) = gradient_bridge(&data.patches[0], &rsn, &vcn, &cfg).unwrap();
        assert!(grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
    }
}
