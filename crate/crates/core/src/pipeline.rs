//! Inference models: the re-sampler and decoder of either path, their
//! checkpoints, and image <-> bitstream conversion.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::bitstream::{Bitstream, Header};
use crate::codec::scic::{decode_payload, encode_payload};
use crate::codec::{decode_dnnc, encode_dnnc, QuantTable, SymbolMap};
use crate::dataset::GrayImage;
use crate::error::{Error, Result};
use crate::networks::{Architecture, Checkpoint, Framework, Network, ResolutionMode, Role};
use crate::quantizer::QuantizerSpec;
use crate::tensor::Tensor;

const META: &str = "meta";
const META_VERSION: f64 = 1.0;

/// Copy named tensors from `ckpt` into `net`, checking every shape.
pub fn load_params(net: &mut Network, ckpt: &Checkpoint) -> Result<()> {
    let names: Vec<String> = net.named_params().into_iter().map(|(n, _)| n).collect();
    for (name, dst) in names.iter().zip(net.params_mut()) {
        let src = ckpt.require(name)?;
        if src.shape() != dst.shape() {
            return Err(Error::shape(
                "load_params",
                format!("{}: checkpoint {:?} vs network {:?}", name, src.shape(), dst.shape()),
            ));
        }
        dst.data_mut().copy_from_slice(src.data());
    }
    Ok(())
}

pub fn push_params(ckpt: &mut Checkpoint, net: &Network) -> Result<()> {
    for (name, t) in net.named_params() {
        ckpt.push(name, t.clone())?;
    }
    Ok(())
}

/// Round to the nearest `f32`, matching what a checkpoint stores.
pub fn f32_exact(v: f64) -> f64 {
    v as f32 as f64
}

/// Re-sampler + decoder pair with everything needed to code an image.
#[derive(Clone, Debug)]
pub struct Model {
    pub arch: Architecture,
    pub rsn: Network,
    pub idn: Network,
    /// Frozen feature quantiser (DNNC only).
    pub quantizer: Option<QuantizerSpec>,
}

impl Model {
    pub fn new(arch: Architecture, rsn: Network, idn: Network, quantizer: Option<QuantizerSpec>) -> Result<Self> {
        if rsn.role() != Role::Rsn || idn.role() != Role::Idn {
            return Err(Error::InvalidArgument("model needs an RSN and an IDN".into()));
        }
        if arch.framework == Framework::Dnnc && quantizer.is_none() {
            return Err(Error::InvalidArgument("DNNC model needs a frozen quantiser".into()));
        }
        Ok(Model {
            arch,
            rsn,
            idn,
            quantizer,
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let q = self.quantizer.unwrap_or(QuantizerSpec {
            beta: 0,
            y_min: 0.0,
            y_max: 0.0,
        });
        let meta = vec![
            META_VERSION,
            match self.arch.framework {
                Framework::Scic => 0.0,
                Framework::Dnnc => 1.0,
            },
            match self.arch.mode {
                ResolutionMode::Full => 0.0,
                ResolutionMode::Low => 1.0,
            },
            self.arch.width as f64,
            self.arch.code_channels as f64,
            q.beta as f64,
            q.y_min,
            q.y_max,
        ];
        let mut ckpt = Checkpoint::new();
        ckpt.push(META, Tensor::new(&[meta.len()], meta)?)?;
        push_params(&mut ckpt, &self.rsn)?;
        push_params(&mut ckpt, &self.idn)?;
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if let Some(name) = ckpt.names().find(|n| n.starts_with("vcn.")) {
            return Err(Error::Contract(format!("inference checkpoint carries virtual codec tensor {}", name)));
        }
        let meta = ckpt.require(META)?.data();
        let bad = |what: &str| Error::format("checkpoint", 0, format!("meta record: {}", what));
        if meta.len() != 8 || meta[0] != META_VERSION {
            return Err(bad("unsupported version"));
        }
        let framework = match meta[1] {
            0.0 => Framework::Scic,
            1.0 => Framework::Dnnc,
            _ => return Err(bad("framework")),
        };
        let mode = match meta[2] {
            0.0 => ResolutionMode::Full,
            1.0 => ResolutionMode::Low,
            _ => return Err(bad("mode")),
        };
        let arch = Architecture {
            framework,
            mode,
            width: meta[3] as usize,
            code_channels: meta[4] as usize,
        };
        if arch.width == 0 {
            return Err(bad("width"));
        }
        let quantizer = match framework {
            Framework::Scic => None,
            Framework::Dnnc => Some(QuantizerSpec::new(meta[5] as u32, meta[6], meta[7])?),
        };
        // Parameters are overwritten below; the seed only fills shapes.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut rsn = arch.build(Role::Rsn, &mut rng)?;
        let mut idn = arch.build(Role::Idn, &mut rng)?;
        load_params(&mut rsn, ckpt)?;
        load_params(&mut idn, ckpt)?;
        let expected = 1 + rsn.named_params().len() + idn.named_params().len();
        if ckpt.len() != expected {
            return Err(Error::format(
                "checkpoint",
                0,
                format!("{} records, expected {}", ckpt.len(), expected),
            ));
        }
        Model::new(arch, rsn, idn, quantizer)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }

    /// `Y = f(X)` for one image.
    pub fn resample(&self, img: &GrayImage) -> Result<Tensor> {
        self.rsn.forward(&img.to_tensor())
    }

    /// `qf` is used by SCIC only.
    pub fn compress(&self, img: &GrayImage, qf: u8) -> Result<Bitstream> {
        let y = self.resample(img)?;
        let [_, c, h, w] = y.dims4()?;
        match self.arch.framework {
            Framework::Scic => {
                let table = QuantTable::for_quality(qf)?;
                let y8 = GrayImage::from_tensor(&y)?;
                Ok(Bitstream {
                    header: Header::Scic {
                        mode: self.arch.mode,
                        width: img.width() as u32,
                        height: img.height() as u32,
                        qf,
                        inner_width: w as u32,
                        inner_height: h as u32,
                    },
                    payload: encode_payload(&y8, &table)?,
                })
            }
            Framework::Dnnc => {
                let q = self.quantizer.as_ref().expect("checked at construction");
                let map = SymbolMap::new(c, h, w, q.quantize_symbols(&y))?;
                encode_dnnc(&map, q, (img.width(), img.height()))
            }
        }
    }

    /// Channel output `Z` carried by a stream, as the decoder's input.
    pub fn channel_output(&self, bs: &Bitstream) -> Result<Tensor> {
        match (&bs.header, self.arch.framework) {
            (
                &Header::Scic {
                    mode,
                    qf,
                    inner_width,
                    inner_height,
                    ..
                },
                Framework::Scic,
            ) => {
                if mode != self.arch.mode {
                    return Err(Error::Codec(format!("stream is {} mode, model is {}", mode, self.arch.mode)));
                }
                let table = QuantTable::for_quality(qf)?;
                Ok(decode_payload(&bs.payload, inner_width as usize, inner_height as usize, &table)?.to_tensor())
            }
            (Header::Dnnc { .. }, Framework::Dnnc) => {
                let (map, spec) = decode_dnnc(bs)?;
                if map.channels != self.arch.code_channels {
                    return Err(Error::Codec(format!(
                        "stream has {} code channels, model has {}",
                        map.channels, self.arch.code_channels
                    )));
                }
                spec.dequantize(&map.symbols, &[1, map.channels, map.height, map.width])
            }
            _ => Err(Error::Codec(format!(
                "stream path does not match a {} model",
                self.arch.framework
            ))),
        }
    }

    pub fn decompress(&self, bs: &Bitstream) -> Result<GrayImage> {
        let z = self.channel_output(bs)?;
        let out = GrayImage::from_tensor(&self.idn.forward(&z)?)?;
        let (w, h) = bs.header.extents();
        if (out.width(), out.height()) != (w, h) {
            return Err(Error::Codec(format!(
                "decoded {}x{} but header declares {}x{}",
                out.width(),
                out.height(),
                w,
                h
            )));
        }
        Ok(out)
    }
}
