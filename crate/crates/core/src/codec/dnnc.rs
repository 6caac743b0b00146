//! Entropy coding of quantised feature maps.

use super::arith::{AdaptiveModel, Decoder, Encoder};
use super::bitstream::{Bitstream, Header};
use crate::error::{Error, Result};
use crate::quantizer::QuantizerSpec;

/// Symbol map for one image: `channels x height x width`, channel-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub symbols: Vec<u32>,
}

impl SymbolMap {
    pub fn new(channels: usize, height: usize, width: usize, symbols: Vec<u32>) -> Result<Self> {
        if symbols.len() != channels * height * width || symbols.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{}x{}x{} symbol map needs {} symbols, got {}",
                channels,
                height,
                width,
                channels * height * width,
                symbols.len()
            )));
        }
        Ok(SymbolMap {
            channels,
            height,
            width,
            symbols,
        })
    }
}

/// Arithmetic-code each channel with its own adaptive model over
/// `beta + 1` symbols. `image` gives the extents used for bpp accounting.
pub fn encode_dnnc(map: &SymbolMap, spec: &QuantizerSpec, image: (usize, usize)) -> Result<Bitstream> {
    if map.channels > u8::MAX as usize {
        return Err(Error::InvalidArgument(format!("{} code channels", map.channels)));
    }
    let plane = map.height * map.width;
    let mut enc = Encoder::new();
    for ch in map.symbols.chunks(plane) {
        let mut model = AdaptiveModel::new(spec.alphabet_size());
        for &s in ch {
            enc.encode(&mut model, s as usize)?;
        }
    }
    Ok(Bitstream {
        header: Header::Dnnc {
            width: image.0 as u32,
            height: image.1 as u32,
            n: map.channels as u8,
            beta: spec.beta as u16,
            y_min: spec.y_min,
            y_max: spec.y_max,
            code_height: map.height as u32,
            code_width: map.width as u32,
        },
        payload: enc.finish(),
    })
}

pub fn decode_dnnc(bs: &Bitstream) -> Result<(SymbolMap, QuantizerSpec)> {
    let Header::Dnnc {
        n,
        beta,
        y_min,
        y_max,
        code_height,
        code_width,
        ..
    } = bs.header
    else {
        return Err(Error::Codec("expected a DNNC stream".into()));
    };
    let spec = QuantizerSpec::new(beta as u32, y_min, y_max)?;
    let (c, h, w) = (n as usize, code_height as usize, code_width as usize);
    let mut dec = Decoder::new(&bs.payload);
    let mut symbols = Vec::with_capacity(c * h * w);
    for _ in 0..c {
        let mut model = AdaptiveModel::new(spec.alphabet_size());
        for _ in 0..h * w {
            symbols.push(dec.decode(&mut model)? as u32);
        }
    }
    dec.finish()?;
    Ok((SymbolMap::new(c, h, w, symbols)?, spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = QuantizerSpec::new(64, -1.0, 1.0).unwrap();
        let map = SymbolMap::new(3, 5, 7, (0..105).map(|_| rng.gen_range(0..=64)).collect()).unwrap();
        let bs = encode_dnnc(&map, &spec, (28, 20)).unwrap();
        let back = Bitstream::from_bytes(&bs.to_bytes()).unwrap();
        let (m, s) = decode_dnnc(&back).unwrap();
        assert_eq!(m, map);
        assert_eq!(s, spec);
    }

    #[test]
    fn all_zero_map_is_small() {
        let spec = QuantizerSpec::new(64, -1.0, 1.0).unwrap();
        let map = SymbolMap::new(4, 40, 40, vec![0; 6400]).unwrap();
        let bs = encode_dnnc(&map, &spec, (160, 160)).unwrap();
        assert!(bs.payload.len() <= 100, "{} bytes", bs.payload.len());
    }
}
