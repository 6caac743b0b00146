//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criterion 7 is a desk-scale trend. Its line is printed like the others
//! but it does not decide the exit status.

mod common;

use std::time::Instant;

use common::*;
use vcn_core::codec::{self, arith_decode, arith_encode, dct8, encode_scic, QuantTable};
use vcn_core::dataset::{extract_patches, split_holdout, synth, GrayImage, PatchSet};
use vcn_core::eval::{rd_sweep, Method, RdRecord, SweepPlan};
use vcn_core::losses::{self, SsimParams};
use vcn_core::networks::{
    build_dnnc, build_idn, build_rsn, build_vcn, Architecture, Framework, Network, ResolutionMode, Role,
};
use vcn_core::pipeline::{f32_exact, Model};
use vcn_core::quantizer::QuantizerSpec;
use vcn_core::tensor::{Graph, Tensor, Var};
use vcn_core::trainer::{gradient_bridge, lr_at, pretrain_autoencoder, train, Phase, TrainConfig, TrainReport};

const H: f64 = 1e-6;
const FD_TOL: f64 = 1e-4;
const LOSS_TOL: f64 = 1e-10;
const DCT_TOL: f64 = 1e-10;
const ENTROPY_SLACK: f64 = 0.05;

/// Seeds of the criterion 6 runs.
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn fail_list(fails: &[String]) -> String {
    fails.iter().take(4).cloned().collect::<Vec<_>>().join("; ")
}

// ---- 1: autodiff ----

fn network_fd(net: &Network, input: &Tensor) -> Fd {
    let mut tensors = vec![input.clone()];
    tensors.extend(net.params().into_iter().cloned());
    fd_check(&tensors, H, |g, xs| {
        let mut n = net.clone();
        for (dst, src) in n.params_mut().into_iter().zip(&xs[1..]) {
            dst.data_mut().copy_from_slice(src.data());
        }
        let xv = g.param(xs[0].clone());
        let (y, mut vars) = n.forward_graph(g, xv, true).unwrap();
        vars.insert(0, xv);
        (readout(g, y, 1), vars)
    })
}

fn criterion_1() -> Outcome {
    let mut fails = Vec::new();
    let mut worst = 0.0f64;
    let mut record = |name: String, fd: Fd| {
        worst = worst.max(fd.rel);
        if !fd.ok(FD_TOL) {
            fails.push(format!("{} rel {:.2e} ({} checked, {} skipped)", name, fd.rel, fd.checked, fd.skipped));
        }
    };
    let mut r = rng(100);
    let x = Tensor::uniform(&[2, 2, 5, 5], -1.0, 1.0, &mut r);
    let w = Tensor::uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut r);
    let wt = Tensor::uniform(&[2, 3, 3, 3], -1.0, 1.0, &mut r);
    let b = Tensor::uniform(&[3], -1.0, 1.0, &mut r);
    for stride in [1, 2] {
        for pad in [0, 1] {
            let fd = fd_check(&[x.clone(), w.clone(), b.clone()], H, |g, xs| {
                let v: Vec<Var> = xs.iter().map(|t| g.param(t.clone())).collect();
                let y = g.conv2d(v[0], v[1], v[2], stride, pad).unwrap();
                (readout(g, y, 2), v)
            });
            record(format!("conv2d s{} p{}", stride, pad), fd);
            let fd = fd_check(&[x.clone(), wt.clone(), b.clone()], H, |g, xs| {
                let v: Vec<Var> = xs.iter().map(|t| g.param(t.clone())).collect();
                let y = g.conv_transpose2d(v[0], v[1], v[2], stride, pad + 1, stride - 1).unwrap();
                (readout(g, y, 3), v)
            });
            record(format!("conv_transpose2d s{} p{}", stride, pad + 1), fd);
        }
    }
    let a = Tensor::uniform(&[1, 2, 6, 6], 0.5, 1.5, &mut r);
    let c = Tensor::uniform(&[1, 2, 6, 6], 0.5, 1.5, &mut r);
    type Bin = fn(&mut Graph, Var, Var) -> Var;
    let binaries: [(&str, Bin); 5] = [
        ("add", |g, a, b| g.add(a, b).unwrap()),
        ("sub", |g, a, b| g.sub(a, b).unwrap()),
        ("mul", |g, a, b| g.mul(a, b).unwrap()),
        ("div", |g, a, b| g.div(a, b).unwrap()),
        ("window_covariance", |g, a, b| g.window_covariance(a, b, 4).unwrap()),
    ];
    for (name, op) in binaries {
        let fd = fd_check(&[a.clone(), c.clone()], H, |g, xs| {
            let v: Vec<Var> = xs.iter().map(|t| g.param(t.clone())).collect();
            let y = op(g, v[0], v[1]);
            (readout(g, y, 4), v)
        });
        record(name.into(), fd);
    }
    let s = Tensor::uniform(&[1, 2, 6, 6], -1.0, 1.0, &mut r);
    type Un = fn(&mut Graph, Var) -> Var;
    let unaries: [(&str, Un); 11] = [
        ("relu", |g, x| g.relu(x)),
        ("abs", |g, x| g.abs(x)),
        ("scale", |g, x| g.scale(x, 0.3)),
        ("add_scalar", |g, x| g.add_scalar(x, -0.2)),
        ("sum", |g, x| g.sum(x)),
        ("mean", |g, x| g.mean(x)),
        ("window_mean", |g, x| g.window_mean(x, 8).unwrap()),
        ("window_variance", |g, x| g.window_variance(x, 3).unwrap()),
        ("neighbor_diff", |g, x| g.neighbor_diff(x, -1, 1).unwrap()),
        ("upsample2x", |g, x| g.upsample2x(x).unwrap()),
        ("upsample2x(odd)", |g, x| {
            let y = g.neighbor_diff(x, 1, 1).unwrap();
            g.upsample2x(y).unwrap()
        }),
    ];
    for (name, op) in unaries {
        let fd = fd_check(&[s.clone()], H, |g, xs| {
            let v = g.param(xs[0].clone());
            let y = op(g, v);
            (readout(g, y, 5), vec![v])
        });
        record(name.into(), fd);
    }
    // losses
    let (p, q) = (rand_img(101, 16, 16), rand_img(102, 16, 16));
    let sp = SsimParams::default();
    type Loss = fn(&mut Graph, Var, Var) -> Var;
    let loss_ops: [(&str, Loss); 3] = [
        ("l1_data", |g, a, b| losses::l1_data(g, a, b).unwrap()),
        ("gradient_diff", |g, a, b| losses::gradient_diff(g, a, b).unwrap()),
        ("dssim", |g, a, b| losses::dssim(g, a, b, &SsimParams::default()).unwrap()),
    ];
    for (name, op) in loss_ops {
        let fd = fd_check(&[p.clone(), q.clone()], H, |g, xs| {
            let v: Vec<Var> = xs.iter().map(|t| g.param(t.clone())).collect();
            (op(g, v[0], v[1]), v)
        });
        record(name.into(), fd);
    }
    let fd = fd_check(&[p.clone(), q.clone()], H, |g, xs| {
        let v: Vec<Var> = xs.iter().map(|t| g.param(t.clone())).collect();
        let m = losses::ssim_map(g, v[0], v[1], &sp).unwrap();
        (readout(g, m, 6), v)
    });
    record("ssim_map".into(), fd);
    // full stacks at 16x16 (8x8 into the low-mode decoders)
    let mut r = rng(103);
    let x16 = rand_img(104, 16, 16);
    let x8 = rand_img(105, 8, 8);
    let ae = build_dnnc(4, 3, &mut r).unwrap();
    let code = ae.encoder.forward(&x16).unwrap();
    let stacks: Vec<(&str, Network, &Tensor)> = vec![
        ("rsn full", build_rsn(ResolutionMode::Full, 3, &mut r), &x16),
        ("rsn low", build_rsn(ResolutionMode::Low, 3, &mut r), &x16),
        ("idn full", build_idn(ResolutionMode::Full, 3, &mut r), &x16),
        ("idn low", build_idn(ResolutionMode::Low, 3, &mut r), &x8),
        ("vcn full", build_vcn(ResolutionMode::Full, 3, &mut r), &x16),
        ("vcn low", build_vcn(ResolutionMode::Low, 3, &mut r), &x8),
        ("dnnc encoder", ae.encoder.clone(), &x16),
        ("dnnc decoder", ae.decoder.clone(), &code),
    ];
    let mut coords = 0;
    for (name, net, input) in &stacks {
        let fd = network_fd(net, input);
        coords += fd.checked;
        record(name.to_string(), fd);
    }
    // re-sampler gradient through the frozen virtual codec
    for mode in [ResolutionMode::Full, ResolutionMode::Low] {
        let cfg = TrainConfig {
            mode,
            width: Some(3),
            ..TrainConfig::default()
        };
        let rsn = build_rsn(mode, 3, &mut r);
        let vcn = build_vcn(mode, 3, &mut r);
        let (_, analytic) = gradient_bridge(&x16, &rsn, &vcn, &cfg).unwrap();
        let params: Vec<Tensor> = rsn.params().into_iter().cloned().collect();
        let mut work = params.clone();
        let eval = |ps: &[Tensor]| {
            let mut n = rsn.clone();
            for (dst, src) in n.params_mut().into_iter().zip(ps) {
                dst.data_mut().copy_from_slice(src.data());
            }
            let mut g = Graph::new();
            let xv = g.constant(x16.clone());
            let (y, _) = n.forward_graph(&mut g, xv, false).unwrap();
            let (out, _) = vcn.forward_graph(&mut g, y, false).unwrap();
            let l = losses::rsn_loss(&mut g, Framework::Scic, mode, out, xv, y, &cfg.weights.rsn, &cfg.ssim).unwrap();
            (g.value(l).data()[0], g.kink_fingerprint())
        };
        let base = eval(&params).1;
        let mut fd = Fd {
            rel: 0.0,
            checked: 0,
            skipped: 0,
        };
        let (mut d2, mut a2) = (0.0, 0.0);
        for i in 0..params.len() {
            for j in 0..params[i].len() {
                let x0 = params[i].data()[j];
                work[i].data_mut()[j] = x0 + H;
                let (fp, kp) = eval(&work);
                work[i].data_mut()[j] = x0 - H;
                let (fm, km) = eval(&work);
                work[i].data_mut()[j] = x0;
                if kp != base || km != base {
                    fd.skipped += 1;
                    continue;
                }
                let n = (fp - fm) / (2.0 * H);
                d2 += (analytic[i].data()[j] - n).powi(2);
                a2 += analytic[i].data()[j].powi(2);
                fd.checked += 1;
            }
        }
        fd.rel = d2.sqrt() / a2.sqrt();
        record(format!("bridge {}", mode), fd);
    }
    outcome(
        fails.is_empty(),
        if fails.is_empty() {
            format!("worst relative error {:.2e} (stacks: {} coordinates)", worst, coords)
        } else {
            fail_list(&fails)
        },
    )
}

// ---- 2: loss oracles ----

fn criterion_2() -> Outcome {
    let sp = SsimParams::default();
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let (a, b) = (rand_img(200 + 2 * seed, 16, 16), rand_img(201 + 2 * seed, 16, 16));
        let l1 = losses::value::l1_data(&a, &b).unwrap();
        worst = worst.max((l1 - l1_oracle(a.data(), b.data())).abs());
        let gd = losses::value::gradient_diff(&a, &b).unwrap();
        worst = worst.max((gd - gradient_diff_oracle(a.data(), b.data(), 16, 16)).abs());
        let map = losses::value::ssim_map(&a, &b, &sp).unwrap();
        let want = ssim_oracle(a.data(), b.data(), 16, 16, sp.c1, sp.c2);
        for (x, y) in map.data().iter().zip(&want) {
            worst = worst.max((x - y).abs());
        }
        let d = losses::value::dssim(&a, &b, &sp).unwrap();
        worst = worst.max((d - (1.0 - want.iter().sum::<f64>() / want.len() as f64)).abs());
    }
    let a = rand_img(210, 16, 16);
    let self_dssim = losses::value::dssim(&a, &a, &sp).unwrap();
    let consts = losses::value::gradient_diff(
        &Tensor::full(&[1, 1, 16, 16], 0.25),
        &Tensor::full(&[1, 1, 16, 16], 0.75),
    )
    .unwrap();
    outcome(
        worst < LOSS_TOL && self_dssim == 0.0 && consts == 0.0,
        format!(
            "max oracle deviation {:.2e}; dssim(A,A) = {}; gradient_diff(const, const) = {}",
            worst, self_dssim, consts
        ),
    )
}

// ---- 3: quantizer ----

fn criterion_3() -> Outcome {
    let mut fails = Vec::new();
    let mut worst_ratio = 0.0f64;
    for (lo, hi) in [(-1.0, 1.0), (f32_exact(-0.318), f32_exact(2.071)), (0.0, 1e-3)] {
        let q = QuantizerSpec::new(64, lo, hi).unwrap();
        let bound = (hi - lo) / (2.0 * 64.0);
        let n = 100_000;
        let mut prev_sym = 0;
        let mut prev_rec = f64::NEG_INFINITY;
        for i in 0..n {
            let y = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            let s = q.symbol(y);
            let rec = q.level(s);
            if q.level(q.symbol(rec)) != rec {
                fails.push(format!("not idempotent at {}", y));
            }
            if s < prev_sym || rec < prev_rec {
                fails.push(format!("not monotone at {}", y));
            }
            let err = (rec - y).abs();
            if err > bound * (1.0 + 1e-12) {
                fails.push(format!("error {:.3e} > {:.3e} at {}", err, bound, y));
            }
            worst_ratio = worst_ratio.max(err / bound);
            prev_sym = s;
            prev_rec = rec;
        }
    }
    outcome(
        fails.is_empty(),
        if fails.is_empty() {
            format!("3 ranges x 1e5 points; worst error {:.6} of the bound", worst_ratio)
        } else {
            fail_list(&fails)
        },
    )
}

// ---- 4: codec ----

fn criterion_4() -> Outcome {
    let mut fails = Vec::new();
    // basis orthonormality from the images of the unit blocks
    let cols: Vec<[f64; 64]> = (0..64)
        .map(|j| {
            let mut e = [0.0; 64];
            e[j] = 1.0;
            dct8(&e)
        })
        .collect();
    let mut dct_dev = 0.0f64;
    for i in 0..64 {
        for j in 0..64 {
            let dot: f64 = (0..64).map(|k| cols[i][k] * cols[j][k]).sum();
            dct_dev = dct_dev.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    if dct_dev >= DCT_TOL {
        fails.push(format!("DCT Gram deviation {:.2e}", dct_dev));
    }
    // arithmetic coder
    let mut r = rng(400);
    for (alphabet, seed) in [(2usize, 1u64), (16, 2), (65, 3), (256, 4)] {
        let mut rr = rng(seed);
        let syms: Vec<u32> = (0..10_000).map(|_| rand::Rng::gen_range(&mut rr, 0..alphabet as u32)).collect();
        let bytes = arith_encode(&syms, alphabet).unwrap();
        if arith_decode(&bytes, syms.len(), alphabet).unwrap() != syms {
            fails.push(format!("random roundtrip failed, alphabet {}", alphabet));
        }
    }
    let mut exhaustive = 0;
    for len in 0..=4u32 {
        for code in 0..3u32.pow(len) {
            let syms: Vec<u32> = (0..len).map(|i| code / 3u32.pow(i) % 3).collect();
            let bytes = arith_encode(&syms, 3).unwrap();
            if arith_decode(&bytes, syms.len(), 3).unwrap() != syms {
                fails.push(format!("exhaustive roundtrip failed on {:?}", syms));
            }
            exhaustive += 1;
        }
    }
    let uniform: Vec<u32> = (0..10_000).map(|_| rand::Rng::gen_range(&mut r, 0..65)).collect();
    let bytes = arith_encode(&uniform, 65).unwrap().len() as f64;
    let entropy = uniform.len() as f64 * 65f64.log2() / 8.0;
    let overhead = bytes / entropy - 1.0;
    if overhead > ENTROPY_SLACK {
        fails.push(format!("uniform stream {:.1}% above entropy", 100.0 * overhead));
    }
    // tables
    for qf in 1..100u8 {
        let (a, b) = (QuantTable::for_quality(qf).unwrap(), QuantTable::for_quality(qf + 1).unwrap());
        if a.0.iter().zip(&b.0).any(|(x, y)| y > x) {
            fails.push(format!("table grows from QF {} to {}", qf, qf + 1));
        }
    }
    // distortion order on the corpus
    let images = corpus();
    for (name, img) in &images {
        let d = |qf| mse(img, &codec::decode_scic(&encode_scic(img, qf).unwrap()).unwrap());
        let (d6, d60) = (d(6), d(60));
        if d60 > d6 {
            fails.push(format!("{}: MSE {:.2} at QF 60 > {:.2} at QF 6", name, d60, d6));
        }
    }
    outcome(
        fails.is_empty(),
        if fails.is_empty() {
            format!(
                "DCT Gram dev {:.1e}; 4x1e4 random + {} exhaustive roundtrips; uniform +{:.2}%; tables monotone; {} images",
                dct_dev,
                exhaustive,
                100.0 * overhead,
                images.len()
            )
        } else {
            fail_list(&fails)
        },
    )
}

// ---- 5: alternating-training mechanics ----

fn toy() -> (TrainConfig, PatchSet, PatchSet) {
    let cfg = TrainConfig {
        outer: 2,
        p: 1,
        q: 1,
        batch: 4,
        width: Some(4),
        pretrain_epochs: 3,
        lr: 1e-3,
        seed: 7,
        ..TrainConfig::default()
    };
    let imgs: Vec<(String, GrayImage)> = (0..2).map(|i| (format!("t{i}"), synth::scene(32, 32, 50 + i))).collect();
    let data = extract_patches(&imgs, 16, 16).unwrap();
    let val = extract_patches(&[("v".into(), synth::scene(32, 32, 60))], 16, 16).unwrap();
    (cfg, data, val)
}

fn criterion_5() -> Outcome {
    let mut fails = Vec::new();
    let (cfg, data, val) = toy();
    let run = || {
        let (init, _) = pretrain_autoencoder(&cfg, &data).unwrap();
        let (model, report) = train(&cfg, &init, &data, &val).unwrap();
        (init, model, report)
    };
    let (init, model, report) = run();
    let expected: Vec<Phase> = (0..cfg.outer)
        .flat_map(|_| [Phase::Idn, Phase::Vcn, Phase::Rsn])
        .chain([Phase::Refresh])
        .collect();
    let phases: Vec<Phase> = report.checks.iter().map(|c| c.phase).collect();
    if phases != expected {
        fails.push(format!("phase order {:?}", phases));
    }
    for c in &report.checks {
        let want = match c.phase {
            Phase::Idn | Phase::Refresh => [false, true, false],
            Phase::Vcn => [false, false, true],
            Phase::Rsn => [true, false, false],
            Phase::Pretrain => [true, true, false],
        };
        if [c.rsn_changed, c.idn_changed, c.vcn_changed] != want {
            fails.push(format!("{} phase at k={} changed {:?}", c.phase, c.k, c));
        }
    }
    // both returned networks moved away from the initialisation
    if model.rsn.checksum() == init.rsn.checksum() || model.idn.checksum() == init.idn.checksum() {
        fails.push("trained networks equal their initialisation".into());
    }
    let ckpt = model.to_checkpoint().unwrap();
    let leaked: Vec<&str> = ckpt.names().filter(|n| n.starts_with("vcn")).collect();
    if !leaked.is_empty() {
        fails.push(format!("checkpoint carries {:?}", leaked));
    }
    let prefixes_ok = ckpt.names().all(|n| n == "meta" || n.starts_with("rsn.") || n.starts_with("idn."));
    if !prefixes_ok {
        fails.push("unexpected checkpoint record".into());
    }
    for (step, total, want) in [
        (0, 100, 1e-4),
        (59, 100, 1e-4),
        (60, 100, 5e-5),
        (79, 100, 5e-5),
        (80, 100, 2.5e-5),
        (99, 100, 2.5e-5),
        (0, 5, 1e-4),
        (3, 5, 5e-5),
        (4, 5, 2.5e-5),
    ] {
        if lr_at(step, total, 1e-4) != want {
            fails.push(format!("lr_at({}, {}) = {}", step, total, lr_at(step, total, 1e-4)));
        }
    }
    let (_, again, _) = run();
    let (a, b) = (ckpt.to_bytes(), again.to_checkpoint().unwrap().to_bytes());
    if a != b {
        fails.push("same seed gave different checkpoints".into());
    }
    outcome(
        fails.is_empty(),
        if fails.is_empty() {
            format!(
                "{} phases isolated; no virtual-codec tensors; lr breakpoints; {}-byte checkpoints identical",
                report.checks.len(),
                a.len()
            )
        } else {
            fail_list(&fails)
        },
    )
}

// ---- 6 and 7: desk-scale training ----

fn desk_config(seed: u64) -> TrainConfig {
    TrainConfig {
        framework: Framework::Scic,
        mode: ResolutionMode::Full,
        qf: 10,
        outer: 2,
        p: 2,
        q: 2,
        batch: 2,
        width: Some(16),
        pretrain_epochs: 12,
        lr: 1e-3,
        seed,
        augment: true,
        ..TrainConfig::default()
    }
}

struct SeedRun {
    seed: u64,
    model: Model,
    report: TrainReport,
}

fn desk_training(train_set: &PatchSet, val_set: &PatchSet) -> Vec<SeedRun> {
    SEEDS
        .iter()
        .map(|&seed| {
            let cfg = desk_config(seed);
            let (init, _) = pretrain_autoencoder(&cfg, train_set).unwrap();
            let (model, report) = train(&cfg, &init, train_set, val_set).unwrap();
            SeedRun { seed, model, report }
        })
        .collect()
}

fn criterion_6(runs: &[SeedRun], patches: usize) -> Outcome {
    let mut fails = Vec::new();
    if patches < 64 {
        fails.push(format!("only {} training patches", patches));
    }
    let mut improved = 0;
    let mut lines = Vec::new();
    for run in runs {
        for f in &run.report.fidelity {
            if f.after >= f.before {
                fails.push(format!(
                    "seed {} k={}: VCN fidelity {:.4} -> {:.4}",
                    run.seed, f.k, f.before, f.after
                ));
            }
        }
        let e2e = &run.report.end_to_end;
        let (pre, fin) = (e2e[0].1, e2e.last().unwrap().1);
        if fin < pre {
            improved += 1;
        }
        lines.push(format!("s{} {:.4}->{:.4}", run.seed, pre, fin));
    }
    if improved < 4 {
        fails.push(format!("end-to-end improved in {} of {} seeds", improved, runs.len()));
    }
    outcome(
        fails.is_empty(),
        format!(
            "{} patches; VCN fidelity improved in every phase: {}; end-to-end L1 improved in {}/{} [{}]{}",
            patches,
            if fails.iter().any(|f| f.contains("fidelity")) { "no" } else { "yes" },
            improved,
            runs.len(),
            lines.join(", "),
            if fails.is_empty() { String::new() } else { format!("; {}", fail_list(&fails)) }
        ),
    )
}

/// Baseline record at the nearest bpp at or above `bpp`.
fn baseline_at<'a>(base: &'a [RdRecord], image: &str, bpp: f64) -> Option<&'a RdRecord> {
    base.iter()
        .filter(|r| r.image == image && r.bpp >= bpp)
        .min_by(|a, b| a.bpp.total_cmp(&b.bpp))
}

fn criterion_7(runs: &[SeedRun], holdout: &[(String, GrayImage)]) -> Outcome {
    let base = rd_sweep(
        &SweepPlan {
            methods: vec![Method::JpegLike],
            qfs: (1..=100).collect(),
            ..SweepPlan::default()
        },
        holdout,
    )
    .unwrap()
    .records;
    let mut seeds_won = 0;
    let mut lines = Vec::new();
    for run in runs {
        let plan = SweepPlan {
            methods: vec![Method::Scic],
            qfs: vec![10],
            scic: [(10u8, run.model.clone())].into_iter().collect(),
            ..SweepPlan::default()
        };
        let ours = rd_sweep(&plan, holdout).unwrap().records;
        let mut wins = 0;
        let mut gaps = Vec::new();
        for r in &ours {
            match baseline_at(&base, &r.image, r.bpp) {
                Some(b) => {
                    if r.ssim > b.ssim {
                        wins += 1;
                    }
                    gaps.push(r.ssim - b.ssim);
                }
                // no baseline point reaches this rate: the pipeline wins outright
                None => wins += 1,
            }
        }
        if 2 * wins > ours.len() {
            seeds_won += 1;
        }
        let mean_bpp = ours.iter().map(|r| r.bpp).sum::<f64>() / ours.len() as f64;
        let mean_gap = gaps.iter().sum::<f64>() / gaps.len().max(1) as f64;
        lines.push(format!(
            "s{} {}/{} images (mean {:.3} bpp, SSIM gap {:+.4})",
            run.seed,
            wins,
            ours.len(),
            mean_bpp,
            mean_gap
        ));
    }
    outcome(
        2 * seeds_won > runs.len(),
        format!("majority reached in {}/{} seeds: {}", seeds_won, runs.len(), lines.join(", ")),
    )
}

// ---- 8: DNNC rate knob ----

fn random_dnnc(n: usize, img: &GrayImage) -> Model {
    let width = 16;
    let ae = build_dnnc(n, width, &mut rng(800 + n as u64)).unwrap();
    let code = ae.encoder.forward(&img.to_tensor()).unwrap();
    let (lo, hi) = (code.min(), code.max());
    let q = QuantizerSpec::new(64, f32_exact(lo), f32_exact(hi)).unwrap();
    let arch = Architecture {
        framework: Framework::Dnnc,
        mode: ResolutionMode::Full,
        width,
        code_channels: n,
    };
    assert_eq!(ae.encoder.role(), Role::Rsn);
    Model::new(arch, ae.encoder, ae.decoder, Some(q)).unwrap()
}

fn criterion_8() -> Outcome {
    let mut fails = Vec::new();
    let images = corpus();
    let mut ratios = Vec::new();
    for (name, img) in &images {
        let bpp: Vec<f64> = [1, 4, 16]
            .iter()
            .map(|&n| random_dnnc(n, img).compress(img, 0).unwrap().bpp())
            .collect();
        if !(bpp[0] < bpp[1] && bpp[1] < bpp[2]) {
            fails.push(format!("{}: bpp {:?}", name, bpp));
        }
        ratios.push(bpp[2] / bpp[0]);
    }
    let min_ratio = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    outcome(
        fails.is_empty(),
        if fails.is_empty() {
            format!("{} images strictly increasing; min bpp(16)/bpp(1) = {:.2}", images.len(), min_ratio)
        } else {
            fail_list(&fails)
        },
    )
}

fn report(n: usize, name: &str, gating: bool, start: Instant, o: &Outcome) {
    println!(
        "criterion {} [{}]: {}{} ({:.1}s) {}",
        n,
        name,
        if o.passed { "PASS" } else { "FAIL" },
        if gating { "" } else { " (trend, reported)" },
        start.elapsed().as_secs_f64(),
        o.detail
    );
}

fn main() {
    // `cargo test -- --list` and filters from the harness are not supported;
    // answer list requests with nothing.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut gating_failures = 0;
    // `budget` is the runtime limit in seconds; going over it fails the criterion.
    let mut run = |n: usize, name: &str, gating: bool, budget: f64, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let mut o = f();
        let secs = t.elapsed().as_secs_f64();
        if secs > budget {
            o.passed = false;
            o.detail.push_str(&format!("; took {:.0}s > {:.0}s", secs, budget));
        }
        report(n, name, gating, t, &o);
        if gating && !o.passed {
            gating_failures += 1;
        }
    };
    run(1, "autodiff vs central differences", true, 60.0, &mut criterion_1);
    run(2, "loss oracles", true, 10.0, &mut criterion_2);
    run(3, "quantizer dense scan", true, 5.0, &mut criterion_3);
    run(4, "codec", true, 60.0, &mut criterion_4);
    run(5, "alternating-training mechanics", true, 120.0, &mut criterion_5);

    let t = Instant::now();
    let (train_imgs, holdout) = split_holdout(corpus());
    let train_set = extract_patches(&train_imgs, 32, 64).unwrap();
    let val_set = extract_patches(&holdout, 32, 32).unwrap();
    let runs = desk_training(&train_set, &val_set);
    let secs = t.elapsed().as_secs_f64();
    println!("desk-scale training: {} seeds in {:.1}s", runs.len(), secs);
    run(6, "virtual codec bridge efficacy", true, f64::INFINITY, &mut || {
        let mut o = criterion_6(&runs, train_set.len());
        if secs > 900.0 {
            o.passed = false;
            o.detail.push_str(&format!("; training took {:.0}s > 900s", secs));
        }
        o
    });
    run(7, "desk-scale RD sanity", false, 300.0, &mut || criterion_7(&runs, &holdout));
    run(8, "DNNC rate knob", true, 60.0, &mut criterion_8);

    if gating_failures > 0 {
        eprintln!("{} gating criteria failed", gating_failures);
        std::process::exit(1);
    }
}
