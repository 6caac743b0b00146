//! Grayscale block-transform codec: level shift, DCT, table quantisation,
//! zigzag scan, differential DC and (run, category) AC symbols, all coded
//! with the adaptive arithmetic coder.
//!
//! Magnitudes follow the usual category scheme: category `c` covers
//! `2^(c-1) <= |v| < 2^c`, and the value itself is sent as a raw sign bit
//! plus `c - 1` raw refinement bits.

use super::arith::{AdaptiveModel, Decoder, Encoder};
use super::bitstream::{Bitstream, Header};
use super::dct::{dct8, idct8, Block};
use super::table::{zigzag, QuantTable};
use crate::dataset::GrayImage;
use crate::error::{Error, Result};
use crate::networks::ResolutionMode;
use crate::tensor::Tensor;

pub const EOB: usize = 0x00;
pub const ZRL: usize = 0xF0;
const DC_CLASSES: usize = 16;
const AC_SYMBOLS: usize = 256;

fn category(v: i32) -> u32 {
    32 - v.unsigned_abs().leading_zeros()
}

fn put_value(enc: &mut Encoder, v: i32, cat: u32) {
    enc.encode_bits((v < 0) as u32, 1);
    if cat > 1 {
        enc.encode_bits(v.unsigned_abs() - (1 << (cat - 1)), cat - 1);
    }
}

fn get_value(dec: &mut Decoder, cat: u32) -> Result<i32> {
    let negative = dec.decode_bits(1)? == 1;
    let extra = if cat > 1 { dec.decode_bits(cat - 1)? } else { 0 };
    let mag = ((1u32 << (cat - 1)) + extra) as i32;
    Ok(if negative { -mag } else { mag })
}

struct Models {
    dc: AdaptiveModel,
    ac: AdaptiveModel,
}

impl Models {
    fn new() -> Self {
        Models {
            dc: AdaptiveModel::new(DC_CLASSES),
            ac: AdaptiveModel::new(AC_SYMBOLS),
        }
    }
}

/// Edge-replicated block at block coordinates `(bx, by)`, level shifted.
fn gather(img: &GrayImage, bx: usize, by: usize) -> Block {
    let (w, h) = (img.width(), img.height());
    std::array::from_fn(|i| {
        let x = (bx * 8 + i % 8).min(w - 1);
        let y = (by * 8 + i / 8).min(h - 1);
        img.get(x, y) as f64 - 128.0
    })
}

fn quantize_block(block: &Block, table: &QuantTable) -> [i32; 64] {
    let coeffs = dct8(block);
    std::array::from_fn(|i| (coeffs[i] / table.step(i)).round() as i32)
}

fn encode_block(enc: &mut Encoder, models: &mut Models, q: &[i32; 64], prev_dc: &mut i32) -> Result<()> {
    let zz = zigzag();
    let diff = q[0] - *prev_dc;
    *prev_dc = q[0];
    let cat = category(diff);
    enc.encode(&mut models.dc, cat as usize)?;
    if cat > 0 {
        put_value(enc, diff, cat);
    }
    let mut run = 0;
    for &pos in &zz[1..] {
        let v = q[pos];
        if v == 0 {
            run += 1;
            continue;
        }
        while run >= 16 {
            enc.encode(&mut models.ac, ZRL)?;
            run -= 16;
        }
        let cat = category(v);
        if cat > 15 {
            return Err(Error::Codec(format!("AC level {} too large", v)));
        }
        enc.encode(&mut models.ac, (run << 4) | cat as usize)?;
        put_value(enc, v, cat);
        run = 0;
    }
    if run > 0 {
        enc.encode(&mut models.ac, EOB)?;
    }
    Ok(())
}

fn decode_block(dec: &mut Decoder, models: &mut Models, prev_dc: &mut i32) -> Result<[i32; 64]> {
    let zz = zigzag();
    let mut q = [0i32; 64];
    let cat = dec.decode(&mut models.dc)? as u32;
    let diff = if cat > 0 { get_value(dec, cat)? } else { 0 };
    *prev_dc += diff;
    q[0] = *prev_dc;
    let mut k = 1;
    while k < 64 {
        let sym = dec.decode(&mut models.ac)?;
        match sym {
            EOB => break,
            ZRL => k += 16,
            _ => {
                let (run, cat) = (sym >> 4, (sym & 15) as u32);
                if cat == 0 {
                    return Err(Error::Codec(format!("invalid AC symbol {:#04x}", sym)));
                }
                k += run;
                if k >= 64 {
                    break;
                }
                q[zz[k]] = get_value(dec, cat)?;
                k += 1;
            }
        }
    }
    if k > 64 {
        return Err(Error::Codec("AC run overflows block".into()));
    }
    Ok(q)
}

/// Raw payload for an 8-bit image (no container).
pub fn encode_payload(img: &GrayImage, table: &QuantTable) -> Result<Vec<u8>> {
    let (bw, bh) = (img.width().div_ceil(8), img.height().div_ceil(8));
    let mut enc = Encoder::new();
    let mut models = Models::new();
    let mut prev_dc = 0;
    for by in 0..bh {
        for bx in 0..bw {
            let q = quantize_block(&gather(img, bx, by), table);
            encode_block(&mut enc, &mut models, &q, &mut prev_dc)?;
        }
    }
    Ok(enc.finish())
}

pub fn decode_payload(payload: &[u8], width: usize, height: usize, table: &QuantTable) -> Result<GrayImage> {
    let (bw, bh) = (width.div_ceil(8), height.div_ceil(8));
    let mut dec = Decoder::new(payload);
    let mut models = Models::new();
    let mut prev_dc = 0;
    let mut samples = vec![0u8; width * height];
    for by in 0..bh {
        for bx in 0..bw {
            let q = decode_block(&mut dec, &mut models, &mut prev_dc)?;
            let coeffs: Block = std::array::from_fn(|i| q[i] as f64 * table.step(i));
            let block = idct8(&coeffs);
            for (i, v) in block.iter().enumerate() {
                let (x, y) = (bx * 8 + i % 8, by * 8 + i / 8);
                if x < width && y < height {
                    samples[y * width + x] = (v + 128.0).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    dec.finish()?;
    GrayImage::new(width, height, samples)
}

/// Plain block-codec stream for an 8-bit image. Extents that are not
/// multiples of 8 are padded internally by edge replication.
pub fn encode_scic(img: &GrayImage, qf: u8) -> Result<Bitstream> {
    let table = QuantTable::for_quality(qf)?;
    let payload = encode_payload(img, &table)?;
    Ok(Bitstream {
        header: Header::Plain {
            width: img.width() as u32,
            height: img.height() as u32,
            qf,
        },
        payload,
    })
}

/// Decode a plain or SCIC stream to the 8-bit image that was coded (for
/// SCIC streams this is the decoded re-sampled image, before restoration).
pub fn decode_scic(bs: &Bitstream) -> Result<GrayImage> {
    let (w, h, qf) = match bs.header {
        Header::Plain { width, height, qf } => (width, height, qf),
        Header::Scic {
            inner_width,
            inner_height,
            qf,
            ..
        } => (inner_width, inner_height, qf),
        Header::Dnnc { .. } => return Err(Error::Codec("expected a block-codec stream, found DNNC".into())),
    };
    let table = QuantTable::for_quality(qf)?;
    decode_payload(&bs.payload, w as usize, h as usize, &table)
}

/// `g(Y)`: clamp to `[0, 1]`, quantise to 8 bits, run the codec, rescale.
/// Works item by item on `(B, 1, h, w)` batches.
pub fn g_map(y: &Tensor, qf: u8, _mode: ResolutionMode) -> Result<Tensor> {
    let [b, c, _, _] = y.dims4()?;
    if c != 1 {
        return Err(Error::shape("g_map", format!("expected one channel, got {}", c)));
    }
    let table = QuantTable::for_quality(qf)?;
    let mut items = Vec::with_capacity(b);
    for i in 0..b {
        let img = GrayImage::from_tensor(&y.item(i)?)?;
        let payload = encode_payload(&img, &table)?;
        items.push(decode_payload(&payload, img.width(), img.height(), &table)?.to_tensor());
    }
    Tensor::stack(&items)
}

/// 8-bit image through the codec and back, without the container.
pub fn roundtrip(img: &GrayImage, qf: u8) -> Result<GrayImage> {
    let table = QuantTable::for_quality(qf)?;
    decode_payload(&encode_payload(img, &table)?, img.width(), img.height(), &table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::new(w, h, (0..w * h).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn categories() {
        assert_eq!(category(0), 0);
        assert_eq!(category(1), 1);
        assert_eq!(category(-1), 1);
        assert_eq!(category(2), 2);
        assert_eq!(category(3), 2);
        assert_eq!(category(-1024), 11);
    }

    #[test]
    fn stream_roundtrip_and_determinism() {
        let img = noise(24, 16, 3);
        let a = encode_scic(&img, 30).unwrap();
        let b = encode_scic(&img, 30).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let back = Bitstream::from_bytes(&a.to_bytes()).unwrap();
        let dec = decode_scic(&back).unwrap();
        assert_eq!((dec.width(), dec.height()), (24, 16));
    }

    #[test]
    fn qf100_is_near_lossless() {
        let img = noise(16, 16, 9);
        let dec = roundtrip(&img, 100).unwrap();
        for (a, b) in img.samples().iter().zip(dec.samples()) {
            assert!((*a as i32 - *b as i32).abs() <= 2);
        }
    }

    #[test]
    fn odd_extents_are_padded() {
        let img = noise(13, 9, 4);
        let dec = roundtrip(&img, 90).unwrap();
        assert_eq!((dec.width(), dec.height()), (13, 9));
    }

    #[test]
    fn g_map_keeps_shape() {
        let y = Tensor::from_fn(&[2, 1, 8, 16], |i| (i % 17) as f64 / 16.0);
        let z = g_map(&y, 50, ResolutionMode::Full).unwrap();
        assert_eq!(z.shape(), y.shape());
    }
}
