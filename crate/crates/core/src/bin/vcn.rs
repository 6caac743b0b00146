use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use vcn_core::codec::{decode_scic, encode_scic, Bitstream, Header};
use vcn_core::config::KeyValues;
use vcn_core::dataset::{self, extract_patches, load_dir, load_image, DatasetConfig};
use vcn_core::eval::{self, Method, SweepPlan};
use vcn_core::networks::{Framework, ResolutionMode};
use vcn_core::pipeline::Model;
use vcn_core::trainer::{self, TrainConfig, TrainReport, TRAIN_KEYS};
use vcn_core::{selftest, Error, Result};

#[derive(Parser)]
#[command(name = "vcn", version, about = "Re-sampling image compression with a virtual codec")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train re-sampler and decoder as a plain autoencoder.
    Pretrain {
        #[command(flatten)]
        train: TrainArgs,
        /// Output checkpoint.
        #[arg(long)]
        out: PathBuf,
    },
    /// Alternating training from a pretrained checkpoint.
    Train {
        #[command(flatten)]
        train: TrainArgs,
        /// Pretrained checkpoint.
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode a PGM image.
    Compress {
        /// scic, dnnc or jpeg-like.
        #[arg(long, default_value = "scic")]
        path: String,
        #[arg(long, default_value_t = 10)]
        qf: u8,
        /// Trained model; without one, scic codes the image directly.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        input: PathBuf,
        output: PathBuf,
    },
    /// Decode a bitstream to PGM.
    Decompress {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        input: PathBuf,
        output: PathBuf,
    },
    /// PSNR and SSIM of an image pair.
    Eval { reference: PathBuf, test: PathBuf },
    /// Rate-distortion sweep.
    Rd {
        #[arg(long, value_delimiter = ',', default_value = "jpeg-like")]
        methods: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "2,6,10,20,30,40,50,60")]
        qf: Vec<u8>,
        #[arg(long, value_delimiter = ',', default_value = "1,4,16")]
        n: Vec<u32>,
        /// SCIC checkpoint for one quality factor, as QF=PATH (repeatable).
        #[arg(long)]
        scic: Vec<String>,
        /// DNNC checkpoint for one feature-map count, as N=PATH (repeatable).
        #[arg(long)]
        dnnc: Vec<String>,
        /// Directory of PGM images (default: bundled corpus).
        #[arg(long)]
        images: Option<PathBuf>,
        /// CSV output (default: stdout).
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Run the built-in oracle checks.
    Selftest,
    /// Write a synthetic grayscale corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 160)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// key = value file with training and dataset keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    framework: Option<Framework>,
    #[arg(long)]
    mode: Option<ResolutionMode>,
    /// Outer iterations K.
    #[arg(long)]
    outer: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    qf: Option<u8>,
    /// DNNC feature-map count.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    beta: Option<u32>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_augment: bool,
    #[arg(long)]
    train_dir: Option<PathBuf>,
    #[arg(long)]
    val_dir: Option<PathBuf>,
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long)]
    patch_stride: Option<usize>,
    /// Per-epoch report CSV.
    #[arg(long)]
    report: Option<PathBuf>,
}

const DATASET_KEYS: &[&str] = &["train_dir", "val_dir", "patch", "patch_stride"];

impl TrainArgs {
    fn resolve(&self) -> Result<(TrainConfig, DatasetConfig)> {
        let kv = match &self.config {
            Some(p) => KeyValues::read(p)?,
            None => KeyValues::default(),
        };
        let known: Vec<&str> = TRAIN_KEYS.iter().chain(DATASET_KEYS).copied().collect();
        kv.reject_unknown(&known)?;
        let mut t = TrainConfig::from_kv(&kv)?;
        let mut d = DatasetConfig::from_kv(&kv)?;
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(self.framework => t.framework);
        set!(self.mode => t.mode);
        set!(self.outer => t.outer);
        set!(self.p => t.p);
        set!(self.q => t.q);
        set!(self.batch => t.batch);
        set!(self.qf => t.qf);
        set!(self.n => t.code_channels);
        set!(self.beta => t.beta);
        set!(self.pretrain_epochs => t.pretrain_epochs);
        set!(self.lr => t.lr);
        set!(self.seed => t.seed);
        set!(self.patch => d.patch);
        set!(self.patch_stride => d.patch_stride);
        if self.width.is_some() {
            t.width = self.width;
        }
        if self.no_augment {
            t.augment = false;
        }
        if self.train_dir.is_some() {
            d.train_dir = self.train_dir.clone();
        }
        if self.val_dir.is_some() {
            d.val_dir = self.val_dir.clone();
        }
        d.seed = t.seed;
        t.validate()?;
        Ok((t, d))
    }
}

fn write_report(path: &Option<PathBuf>, report: &TrainReport) -> Result<()> {
    if let Some(p) = path {
        report.write_csv(BufWriter::new(File::create(p)?))?;
    }
    Ok(())
}

fn load_patches(d: &DatasetConfig) -> Result<(dataset::PatchSet, dataset::PatchSet)> {
    let (train, val) = d.load()?;
    let train = extract_patches(&train, d.patch, d.patch_stride)?;
    let val = extract_patches(&val, d.patch, d.patch)?;
    info!("{} training patches, {} validation patches", train.len(), val.len());
    Ok((train, val))
}

fn parse_knob_paths<K: std::str::FromStr + Ord>(items: &[String]) -> Result<BTreeMap<K, Model>> {
    let mut out = BTreeMap::new();
    for item in items {
        let (k, p) = item
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("expected KNOB=PATH, got '{}'", item)))?;
        let k: K = k
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad knob in '{}'", item)))?;
        out.insert(k, Model::load(p)?);
    }
    Ok(out)
}

fn decode_plain_or_model(bs: &Bitstream, checkpoint: Option<&Path>) -> Result<dataset::GrayImage> {
    match (&bs.header, checkpoint) {
        (Header::Plain { .. }, _) => decode_scic(bs),
        (_, Some(p)) => Model::load(p)?.decompress(bs),
        (_, None) => Err(Error::InvalidArgument(
            "this stream needs the model checkpoint it was coded with (--checkpoint)".into(),
        )),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Pretrain { train, out } => {
            let (cfg, data) = train.resolve()?;
            let (patches, _) = load_patches(&data)?;
            let (model, report) = trainer::pretrain_autoencoder(&cfg, &patches)?;
            model.save(&out)?;
            write_report(&train.report, &report)?;
            println!("checkpoint {}", out.display());
        }
        Command::Train { train, init, out } => {
            let (cfg, data) = train.resolve()?;
            let (patches, val) = load_patches(&data)?;
            let init = Model::load(&init)?;
            let (model, report) = trainer::train(&cfg, &init, &patches, &val)?;
            model.save(&out)?;
            write_report(&train.report, &report)?;
            for (k, v) in &report.end_to_end {
                println!("end_to_end_l1 k={} {}", k, eval::sig6(*v));
            }
            println!("checkpoint {}", out.display());
        }
        Command::Compress {
            path,
            qf,
            checkpoint,
            input,
            output,
        } => {
            let img = load_image(&input)?;
            let bs = match (path.as_str(), checkpoint) {
                ("jpeg-like", _) => encode_scic(&img, qf)?,
                ("scic", None) => {
                    warn!("no checkpoint given; coding the image directly");
                    encode_scic(&img, qf)?
                }
                ("scic" | "dnnc", Some(p)) => {
                    let model = Model::load(p)?;
                    if model.arch.framework.to_string() != path {
                        return Err(Error::InvalidArgument(format!(
                            "checkpoint is a {} model, --path is {}",
                            model.arch.framework, path
                        )));
                    }
                    model.compress(&img, qf)?
                }
                ("dnnc", None) => return Err(Error::InvalidArgument("dnnc needs --checkpoint".into())),
                (other, _) => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown path '{}' (scic|dnnc|jpeg-like)",
                        other
                    )))
                }
            };
            bs.write(&output)?;
            let (w, h) = bs.header.extents();
            println!("{}x{} {} bytes {} bpp", w, h, bs.byte_len(), eval::sig6(bs.bpp()));
        }
        Command::Decompress {
            checkpoint,
            input,
            output,
        } => {
            let bs = Bitstream::read(&input)?;
            let img = decode_plain_or_model(&bs, checkpoint.as_deref())?;
            img.write_pgm(&output)?;
            println!("{}x{}", img.width(), img.height());
        }
        Command::Eval { reference, test } => {
            let a = dataset::GrayImage::from_pgm_bytes(&std::fs::read(&reference)?)?;
            let b = dataset::GrayImage::from_pgm_bytes(&std::fs::read(&test)?)?;
            println!("psnr {}", eval::sig6(eval::psnr(&a, &b)?));
            println!("ssim {}", eval::sig6(eval::ssim_metric(&a, &b)?));
        }
        Command::Rd {
            methods,
            qf,
            n,
            scic,
            dnnc,
            images,
            csv,
            svg,
        } => {
            let plan = SweepPlan {
                methods: methods.iter().map(|m| m.parse()).collect::<Result<Vec<Method>>>()?,
                qfs: qf,
                ns: n,
                scic: parse_knob_paths(&scic)?,
                dnnc: parse_knob_paths(&dnnc)?,
            };
            let imgs = load_dir(images.unwrap_or_else(dataset::bundled_corpus_dir))?;
            let sweep = eval::rd_sweep(&plan, &imgs)?;
            for (m, k) in &sweep.missing {
                eprintln!("missing checkpoint: {} knob {}", m, k);
            }
            match csv {
                Some(p) => eval::write_csv(&sweep.records, BufWriter::new(File::create(p)?))?,
                None => eval::write_csv(&sweep.records, io::stdout().lock())?,
            }
            if let Some(p) = svg {
                std::fs::write(p, eval::rd_svg(&sweep.records))?;
            }
        }
        Command::Selftest => {
            let checks = selftest::run_all();
            let mut out = io::stdout().lock();
            let mut failed = 0;
            for c in &checks {
                writeln!(out, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
                failed += !c.passed as usize;
            }
            if failed > 0 {
                return Err(Error::Contract(format!("{} of {} self-checks failed", failed, checks.len())));
            }
        }
        Command::Synth { out, count, size, seed } => {
            dataset::synth::write_corpus(&out, count, size, seed)?;
            println!("{} images in {}", count, out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string();
            let prefix = format!("{}: ", e.kind());
            eprintln!("error: {}: {}", e.kind(), msg.strip_prefix(&prefix).unwrap_or(&msg));
            ExitCode::FAILURE
        }
    }
}
