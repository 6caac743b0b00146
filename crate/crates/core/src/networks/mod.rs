//! RSN / IDN / VCN construction and evaluation.
//!
//! SCIC networks are plain conv stacks. The re-sampler has seven layers
//! (9x9, five 3x3, 9x9) with the second layer striding by two in low
//! resolution mode. The decoder has seven ReLU layers followed by a 9x9
//! reconstruction layer that is transposed with stride two in low mode.
//! The virtual codec copies the decoder's structure.
//!
//! DNNC networks are a stride-2 autoencoder with residual blocks whose code
//! has `n` channels at a quarter of the input resolution.

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{self, Graph, Tensor, Var};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};

/// Feature width of the SCIC conv stacks.
pub const SCIC_WIDTH: usize = 128;
/// Feature width of the DNNC autoencoder.
pub const DNNC_WIDTH: usize = 64;
/// Residual blocks on each side of the DNNC autoencoder.
pub const DNNC_RES_BLOCKS: usize = 3;
/// Allowed code channel counts for the DNNC rate knob.
pub const DNNC_CODE_CHANNELS: [usize; 7] = [1, 2, 4, 8, 12, 16, 20];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ResolutionMode {
    Full,
    Low,
}

impl ResolutionMode {
    /// Spatial reduction factor of the re-sampled vectors.
    pub fn factor(self) -> usize {
        match self {
            ResolutionMode::Full => 1,
            ResolutionMode::Low => 2,
        }
    }
}

impl fmt::Display for ResolutionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResolutionMode::Full => "full",
            ResolutionMode::Low => "low",
        })
    }
}

impl FromStr for ResolutionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ResolutionMode::Full),
            "low" => Ok(ResolutionMode::Low),
            _ => Err(Error::InvalidArgument(format!("unknown mode '{}' (full|low)", s))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Framework {
    /// Re-sampled image pushed through the block-DCT codec.
    Scic,
    /// Re-sampled features quantised and entropy coded directly.
    Dnnc,
}

impl fmt::Display for Framework {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Framework::Scic => "scic",
            Framework::Dnnc => "dnnc",
        })
    }
}

impl FromStr for Framework {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scic" => Ok(Framework::Scic),
            "dnnc" => Ok(Framework::Dnnc),
            _ => Err(Error::InvalidArgument(format!("unknown framework '{}' (scic|dnnc)", s))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Rsn,
    Idn,
    Vcn,
}

impl Role {
    pub fn prefix(self) -> &'static str {
        match self {
            Role::Rsn => "rsn",
            Role::Idn => "idn",
            Role::Vcn => "vcn",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    ConvTranspose { output_padding: usize },
}

/// Structural description of one conv layer (no parameters).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub relu: bool,
    /// Part of a residual pair (`x + second(first(x))`).
    pub residual: bool,
}

impl LayerSpec {
    fn conv(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, relu: bool) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            in_ch,
            out_ch,
            kernel,
            stride,
            padding: kernel / 2,
            relu,
            residual: false,
        }
    }

    fn up(in_ch: usize, out_ch: usize, kernel: usize, relu: bool) -> Self {
        LayerSpec {
            kind: LayerKind::ConvTranspose { output_padding: 1 },
            stride: 2,
            ..Self::conv(in_ch, out_ch, kernel, 2, relu)
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        match self.kind {
            LayerKind::Conv => [self.out_ch, self.in_ch, self.kernel, self.kernel],
            LayerKind::ConvTranspose { .. } => [self.in_ch, self.out_ch, self.kernel, self.kernel],
        }
    }

    fn fan_in(&self) -> usize {
        let taps = self.in_ch * self.kernel * self.kernel;
        match self.kind {
            LayerKind::Conv => taps,
            LayerKind::ConvTranspose { .. } => (taps / (self.stride * self.stride)).max(1),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub spec: LayerSpec,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvLayer {
    /// He-uniform weights, zero bias.
    fn init<R: Rng + ?Sized>(spec: LayerSpec, rng: &mut R) -> Self {
        let bound = (6.0 / spec.fan_in() as f64).sqrt();
        ConvLayer {
            weight: Tensor::uniform(&spec.weight_shape(), -bound, bound, rng),
            bias: Tensor::zeros(&[spec.out_ch]),
            spec,
        }
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let s = &self.spec;
        let y = match s.kind {
            LayerKind::Conv => tensor::conv2d(x, &self.weight, &self.bias, s.stride, s.padding)?,
            LayerKind::ConvTranspose { output_padding } => {
                tensor::conv_transpose2d(x, &self.weight, &self.bias, s.stride, s.padding, output_padding)?
            }
        };
        Ok(if s.relu { y.map(|v| v.max(0.0)) } else { y })
    }

    fn apply_graph(&self, g: &mut Graph, x: Var, trainable: bool, vars: &mut Vec<Var>) -> Result<Var> {
        let (w, b) = if trainable {
            (g.param(self.weight.clone()), g.param(self.bias.clone()))
        } else {
            (g.constant(self.weight.clone()), g.constant(self.bias.clone()))
        };
        vars.push(w);
        vars.push(b);
        let s = &self.spec;
        let y = match s.kind {
            LayerKind::Conv => g.conv2d(x, w, b, s.stride, s.padding)?,
            LayerKind::ConvTranspose { output_padding } => {
                g.conv_transpose2d(x, w, b, s.stride, s.padding, output_padding)?
            }
        };
        Ok(if s.relu { g.relu(y) } else { y })
    }
}

#[derive(Clone, Debug)]
pub enum Block {
    Plain(ConvLayer),
    /// `x + second(first(x))`
    Residual(ConvLayer, ConvLayer),
}

impl Block {
    fn layers(&self) -> Vec<&ConvLayer> {
        match self {
            Block::Plain(l) => vec![l],
            Block::Residual(a, b) => vec![a, b],
        }
    }

    fn layers_mut(&mut self) -> Vec<&mut ConvLayer> {
        match self {
            Block::Plain(l) => vec![l],
            Block::Residual(a, b) => vec![a, b],
        }
    }
}

/// Ordered conv layers plus the parameters they own.
#[derive(Clone, Debug)]
pub struct Network {
    role: Role,
    framework: Framework,
    mode: ResolutionMode,
    blocks: Vec<Block>,
    /// Spatial factor from input to output (>1 upsamples, <1 downsamples).
    input_multiple: usize,
}

impl Network {
    pub fn role(&self) -> Role {
        self.role
    }

    pub fn framework(&self) -> Framework {
        self.framework
    }

    pub fn mode(&self) -> ResolutionMode {
        self.mode
    }

    /// Same layers and parameters under a different role (for copying the
    /// pretrained decoder into the virtual codec).
    pub fn with_role(&self, role: Role) -> Network {
        Network {
            role,
            ..self.clone()
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &ConvLayer> {
        self.blocks.iter().flat_map(|b| b.layers())
    }

    pub fn structure(&self) -> Vec<LayerSpec> {
        self.layers().map(|l| l.spec).collect()
    }

    /// Parameters in a fixed order: weight then bias, per layer.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.blocks
            .iter_mut()
            .flat_map(|b| b.layers_mut())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.layers()
            .enumerate()
            .flat_map(|(i, l)| {
                let p = self.role.prefix();
                [(format!("{p}.{i}.weight"), &l.weight), (format!("{p}.{i}.bias"), &l.bias)]
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// FNV-1a over the bit patterns of every parameter.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.params() {
            for v in t.data() {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Set every weight and bias to zero.
    pub fn zero_params(&mut self) {
        for p in self.params_mut() {
            p.data_mut().fill(0.0);
        }
    }

    pub fn copy_params_from(&mut self, other: &Network) -> Result<()> {
        if self.structure() != other.structure() {
            return Err(Error::InvalidArgument("network structures differ".into()));
        }
        for (dst, src) in self.params_mut().into_iter().zip(other.params()) {
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let first = self.layers().next().expect("non-empty network").spec;
        let [_, c, h, w] = match *shape {
            [b, c, h, w] => [b, c, h, w],
            _ => return Err(Error::shape("forward", format!("expected rank-4 input, got {:?}", shape))),
        };
        if c != first.in_ch {
            return Err(Error::shape(
                "forward",
                format!("axis 1: {} network expects {} channels, got {}", self.role.prefix(), first.in_ch, c),
            ));
        }
        let m = self.input_multiple;
        for (axis, extent) in [(2, h), (3, w)] {
            if extent == 0 || extent % m != 0 {
                return Err(Error::shape(
                    "forward",
                    format!(
                        "axis {}: {} network needs extents divisible by {}, got {}",
                        axis,
                        self.role.prefix(),
                        m,
                        extent
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Untracked evaluation.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x.shape())?;
        let mut cur = x.clone();
        for block in &self.blocks {
            cur = match block {
                Block::Plain(l) => l.apply(&cur)?,
                Block::Residual(a, b) => {
                    let mut y = b.apply(&a.apply(&cur)?)?;
                    y.add_assign(&cur)?;
                    y
                }
            };
        }
        Ok(cur)
    }

    /// Evaluation on a graph. Parameters become tracked leaves when
    /// `trainable`, constants otherwise; their vars are returned in
    /// [`Network::params`] order.
    pub fn forward_graph(&self, g: &mut Graph, x: Var, trainable: bool) -> Result<(Var, Vec<Var>)> {
        self.check_input(g.shape(x))?;
        let mut vars = Vec::with_capacity(2 * self.blocks.len());
        let mut cur = x;
        for block in &self.blocks {
            cur = match block {
                Block::Plain(l) => l.apply_graph(g, cur, trainable, &mut vars)?,
                Block::Residual(a, b) => {
                    let h = a.apply_graph(g, cur, trainable, &mut vars)?;
                    let y = b.apply_graph(g, h, trainable, &mut vars)?;
                    g.add(y, cur)?
                }
            };
        }
        Ok((cur, vars))
    }

    fn from_specs<R: Rng + ?Sized>(
        role: Role,
        framework: Framework,
        mode: ResolutionMode,
        specs: &[LayerSpec],
        input_multiple: usize,
        rng: &mut R,
    ) -> Network {
        let mut blocks = Vec::new();
        let mut it = specs.iter();
        while let Some(&s) = it.next() {
            if s.residual {
                let second = *it.next().expect("residual layers come in pairs");
                blocks.push(Block::Residual(ConvLayer::init(s, rng), ConvLayer::init(second, rng)));
            } else {
                blocks.push(Block::Plain(ConvLayer::init(s, rng)));
            }
        }
        Network {
            role,
            framework,
            mode,
            blocks,
            input_multiple,
        }
    }
}

/// SCIC re-sampling network.
pub fn build_rsn<R: Rng + ?Sized>(mode: ResolutionMode, width: usize, rng: &mut R) -> Network {
    let mut specs = vec![
        LayerSpec::conv(1, width, 9, 1, true),
        LayerSpec::conv(width, width, 3, mode.factor(), true),
    ];
    specs.extend((0..4).map(|_| LayerSpec::conv(width, width, 3, 1, true)));
    specs.push(LayerSpec::conv(width, 1, 9, 1, false));
    Network::from_specs(Role::Rsn, Framework::Scic, mode, &specs, mode.factor(), rng)
}

fn idn_specs(mode: ResolutionMode, width: usize) -> Vec<LayerSpec> {
    let mut specs = vec![LayerSpec::conv(1, width, 9, 1, true)];
    specs.extend((0..6).map(|_| LayerSpec::conv(width, width, 3, 1, true)));
    specs.push(match mode {
        ResolutionMode::Full => LayerSpec::conv(width, 1, 9, 1, false),
        ResolutionMode::Low => LayerSpec::up(width, 1, 9, false),
    });
    specs
}

/// SCIC image decoder network.
pub fn build_idn<R: Rng + ?Sized>(mode: ResolutionMode, width: usize, rng: &mut R) -> Network {
    Network::from_specs(Role::Idn, Framework::Scic, mode, &idn_specs(mode, width), 1, rng)
}

/// SCIC virtual codec network: decoder structure, independent parameters.
pub fn build_vcn<R: Rng + ?Sized>(mode: ResolutionMode, width: usize, rng: &mut R) -> Network {
    Network::from_specs(Role::Vcn, Framework::Scic, mode, &idn_specs(mode, width), 1, rng)
}

/// Stride-2 autoencoder used by the DNNC path.
#[derive(Clone, Debug)]
pub struct DnncAutoencoder {
    pub code_channels: usize,
    pub encoder: Network,
    pub decoder: Network,
}

pub fn check_code_channels(n: usize) -> Result<()> {
    if !DNNC_CODE_CHANNELS.contains(&n) {
        return Err(Error::InvalidArgument(format!(
            "feature-map count {} not in {:?}",
            n, DNNC_CODE_CHANNELS
        )));
    }
    Ok(())
}

fn residual_specs(width: usize) -> Vec<LayerSpec> {
    (0..DNNC_RES_BLOCKS)
        .flat_map(|_| {
            [
                LayerSpec {
                    residual: true,
                    ..LayerSpec::conv(width, width, 3, 1, true)
                },
                LayerSpec {
                    residual: true,
                    ..LayerSpec::conv(width, width, 3, 1, false)
                },
            ]
        })
        .collect()
}

fn dnnc_decoder_specs(n: usize, width: usize) -> Vec<LayerSpec> {
    let mut specs = vec![LayerSpec::conv(n, width, 3, 1, true)];
    specs.extend(residual_specs(width));
    specs.push(LayerSpec::up(width, width, 5, true));
    specs.push(LayerSpec::up(width, 1, 5, false));
    specs
}

pub fn build_dnnc<R: Rng + ?Sized>(n: usize, width: usize, rng: &mut R) -> Result<DnncAutoencoder> {
    check_code_channels(n)?;
    let mut enc = vec![
        LayerSpec::conv(1, width, 5, 2, true),
        LayerSpec::conv(width, width, 5, 2, true),
    ];
    enc.extend(residual_specs(width));
    enc.push(LayerSpec::conv(width, n, 3, 1, false));
    let encoder = Network::from_specs(Role::Rsn, Framework::Dnnc, ResolutionMode::Full, &enc, 4, rng);
    let decoder = Network::from_specs(
        Role::Idn,
        Framework::Dnnc,
        ResolutionMode::Full,
        &dnnc_decoder_specs(n, width),
        1,
        rng,
    );
    Ok(DnncAutoencoder {
        code_channels: n,
        encoder,
        decoder,
    })
}

/// DNNC virtual codec: decoder structure with its own parameters.
pub fn build_dnnc_vcn<R: Rng + ?Sized>(n: usize, width: usize, rng: &mut R) -> Result<Network> {
    check_code_channels(n)?;
    Ok(Network::from_specs(
        Role::Vcn,
        Framework::Dnnc,
        ResolutionMode::Full,
        &dnnc_decoder_specs(n, width),
        1,
        rng,
    ))
}

/// Architecture needed to rebuild a network from a checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub framework: Framework,
    pub mode: ResolutionMode,
    pub width: usize,
    /// Code channels (DNNC only).
    pub code_channels: usize,
}

impl Architecture {
    pub fn build<R: Rng + ?Sized>(&self, role: Role, rng: &mut R) -> Result<Network> {
        Ok(match (self.framework, role) {
            (Framework::Scic, Role::Rsn) => build_rsn(self.mode, self.width, rng),
            (Framework::Scic, Role::Idn) => build_idn(self.mode, self.width, rng),
            (Framework::Scic, Role::Vcn) => build_vcn(self.mode, self.width, rng),
            (Framework::Dnnc, Role::Rsn) => build_dnnc(self.code_channels, self.width, rng)?.encoder,
            (Framework::Dnnc, Role::Idn) => build_dnnc(self.code_channels, self.width, rng)?.decoder,
            (Framework::Dnnc, Role::Vcn) => build_dnnc_vcn(self.code_channels, self.width, rng)?,
        })
    }
}
