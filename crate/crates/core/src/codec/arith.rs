//! Adaptive multi-symbol arithmetic coder.
//!
//! Classic 32-bit integer coder with bit-plus-follow underflow handling.
//! Frequencies start at one, grow by [`INCREMENT`] per coded symbol and are
//! halved once their total passes [`MAX_TOTAL`].

use crate::error::{Error, Result};

const CODE_BITS: u32 = 32;
const TOP: u64 = (1 << CODE_BITS) - 1;
const HALF: u64 = 1 << (CODE_BITS - 1);
const FIRST_QTR: u64 = HALF / 2;
const THIRD_QTR: u64 = 3 * FIRST_QTR;

pub const INCREMENT: u32 = 32;
pub const MAX_TOTAL: u32 = 1 << 16;

/// Adaptive frequency table over `0..alphabet`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdaptiveModel {
    freq: Vec<u32>,
    total: u32,
}

impl AdaptiveModel {
    pub fn new(alphabet: usize) -> Self {
        assert!(alphabet >= 1 && alphabet < (MAX_TOTAL / 2) as usize, "alphabet size {}", alphabet);
        AdaptiveModel {
            freq: vec![1; alphabet],
            total: alphabet as u32,
        }
    }

    pub fn alphabet(&self) -> usize {
        self.freq.len()
    }

    pub fn frequencies(&self) -> &[u32] {
        &self.freq
    }

    fn range(&self, s: usize) -> (u32, u32) {
        let lo: u32 = self.freq[..s].iter().sum();
        (lo, lo + self.freq[s])
    }

    fn update(&mut self, s: usize) {
        self.freq[s] += INCREMENT;
        self.total += INCREMENT;
        if self.total > MAX_TOTAL {
            self.total = 0;
            for f in &mut self.freq {
                *f = (*f + 1) / 2;
                self.total += *f;
            }
        }
    }
}

#[derive(Default)]
struct BitWriter {
    bytes: Vec<u8>,
    cur: u8,
    used: u8,
}

impl BitWriter {
    fn push(&mut self, bit: bool) {
        self.cur = (self.cur << 1) | bit as u8;
        self.used += 1;
        if self.used == 8 {
            self.bytes.push(self.cur);
            self.cur = 0;
            self.used = 0;
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.used > 0 {
            self.cur <<= 8 - self.used;
            self.bytes.push(self.cur);
        }
        self.bytes
    }
}

pub struct Encoder {
    low: u64,
    high: u64,
    pending: u64,
    out: BitWriter,
}

impl Default for Encoder {
    fn default() -> Self {
        Self::new()
    }
}

impl Encoder {
    pub fn new() -> Self {
        Encoder {
            low: 0,
            high: TOP,
            pending: 0,
            out: BitWriter::default(),
        }
    }

    fn emit(&mut self, bit: bool) {
        self.out.push(bit);
        for _ in 0..self.pending {
            self.out.push(!bit);
        }
        self.pending = 0;
    }

    fn narrow(&mut self, lo: u32, hi: u32, total: u32) {
        let range = self.high - self.low + 1;
        self.high = self.low + range * hi as u64 / total as u64 - 1;
        self.low += range * lo as u64 / total as u64;
        loop {
            if self.high < HALF {
                self.emit(false);
            } else if self.low >= HALF {
                self.emit(true);
                self.low -= HALF;
                self.high -= HALF;
            } else if self.low >= FIRST_QTR && self.high < THIRD_QTR {
                self.pending += 1;
                self.low -= FIRST_QTR;
                self.high -= FIRST_QTR;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
        }
    }

    /// Code `symbol` under `model`, then adapt the model.
    pub fn encode(&mut self, model: &mut AdaptiveModel, symbol: usize) -> Result<()> {
        if symbol >= model.alphabet() {
            return Err(Error::Codec(format!(
                "symbol {} outside alphabet of {}",
                symbol,
                model.alphabet()
            )));
        }
        let (lo, hi) = model.range(symbol);
        self.narrow(lo, hi, model.total);
        model.update(symbol);
        Ok(())
    }

    /// Code the low `n` bits of `value`, MSB first, each at probability 1/2.
    pub fn encode_bits(&mut self, value: u32, n: u32) {
        for i in (0..n).rev() {
            let b = (value >> i) & 1;
            self.narrow(b, b + 1, 2);
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        self.pending += 1;
        let bit = self.low >= FIRST_QTR;
        self.emit(bit);
        self.out.finish()
    }
}

pub struct Decoder<'a> {
    data: &'a [u8],
    bit_pos: usize,
    low: u64,
    high: u64,
    value: u64,
}

/// Bits the decoder reads ahead of the encoder's output.
const LOOKAHEAD: usize = CODE_BITS as usize - 2;

impl<'a> Decoder<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        let mut d = Decoder {
            data,
            bit_pos: 0,
            low: 0,
            high: TOP,
            value: 0,
        };
        for _ in 0..CODE_BITS {
            d.value = (d.value << 1) | d.next_bit();
        }
        d
    }

    fn next_bit(&mut self) -> u64 {
        let i = self.bit_pos;
        self.bit_pos += 1;
        self.data
            .get(i / 8)
            .map_or(0, |b| ((b >> (7 - i % 8)) & 1) as u64)
    }

    fn overrun(&self) -> bool {
        self.bit_pos > self.data.len() * 8 + CODE_BITS as usize
    }

    fn target(&self, total: u32) -> u32 {
        let range = self.high - self.low + 1;
        (((self.value - self.low + 1) * total as u64 - 1) / range) as u32
    }

    fn narrow(&mut self, lo: u32, hi: u32, total: u32) -> Result<()> {
        let range = self.high - self.low + 1;
        self.high = self.low + range * hi as u64 / total as u64 - 1;
        self.low += range * lo as u64 / total as u64;
        loop {
            if self.high < HALF {
            } else if self.low >= HALF {
                self.value -= HALF;
                self.low -= HALF;
                self.high -= HALF;
            } else if self.low >= FIRST_QTR && self.high < THIRD_QTR {
                self.value -= FIRST_QTR;
                self.low -= FIRST_QTR;
                self.high -= FIRST_QTR;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
            self.value = (self.value << 1) | self.next_bit();
        }
        if self.overrun() {
            return Err(Error::Codec("arithmetic decoder ran past the end of the stream".into()));
        }
        Ok(())
    }

    pub fn decode(&mut self, model: &mut AdaptiveModel) -> Result<usize> {
        let t = self.target(model.total);
        let mut acc = 0;
        let mut sym = None;
        for (s, &f) in model.freq.iter().enumerate() {
            if t < acc + f {
                sym = Some((s, acc, acc + f));
                break;
            }
            acc += f;
        }
        let (s, lo, hi) =
            sym.ok_or_else(|| Error::Codec("arithmetic decoder lost synchronisation with its model".into()))?;
        self.narrow(lo, hi, model.total)?;
        model.update(s);
        Ok(s)
    }

    pub fn decode_bits(&mut self, n: u32) -> Result<u32> {
        let mut v = 0;
        for _ in 0..n {
            let b = self.target(2);
            if b > 1 {
                return Err(Error::Codec("arithmetic decoder lost synchronisation on raw bits".into()));
            }
            self.narrow(b, b + 1, 2)?;
            v = (v << 1) | b;
        }
        Ok(v)
    }

    /// Verify the stream ended exactly where the encoder stopped; fails when
    /// fewer symbols were decoded than were coded.
    pub fn finish(self) -> Result<()> {
        let coded_bits = self.bit_pos - LOOKAHEAD;
        let expect = coded_bits.div_ceil(8);
        if expect != self.data.len() {
            return Err(Error::Codec(format!(
                "symbol count mismatch: decoding consumed {} of {} bytes",
                expect,
                self.data.len()
            )));
        }
        Ok(())
    }
}

/// Code a whole symbol stream with one adaptive model.
pub fn arith_encode(symbols: &[u32], alphabet: usize) -> Result<Vec<u8>> {
    let mut model = AdaptiveModel::new(alphabet);
    let mut enc = Encoder::new();
    for &s in symbols {
        enc.encode(&mut model, s as usize)?;
    }
    Ok(enc.finish())
}

/// Inverse of [`arith_encode`]; `count` must equal the encoded length.
pub fn arith_decode(bytes: &[u8], count: usize, alphabet: usize) -> Result<Vec<u32>> {
    let mut model = AdaptiveModel::new(alphabet);
    let mut dec = Decoder::new(bytes);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(dec.decode(&mut model)? as u32);
    }
    dec.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_and_single() {
        for stream in [vec![], vec![3u32]] {
            let bytes = arith_encode(&stream, 5).unwrap();
            assert_eq!(arith_decode(&bytes, stream.len(), 5).unwrap(), stream);
        }
    }

    #[test]
    fn model_halves_and_stays_positive() {
        let mut m = AdaptiveModel::new(4);
        for _ in 0..10_000 {
            m.update(0);
        }
        assert!(m.total <= MAX_TOTAL);
        assert!(m.frequencies().iter().all(|&f| f >= 1));
        assert_eq!(m.total, m.frequencies().iter().sum::<u32>());
    }

    #[test]
    fn raw_bits_roundtrip_between_symbols() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let items: Vec<(u32, u32)> = (0..500).map(|_| (rng.gen_range(0..7), rng.gen_range(0..1024))).collect();
        let mut m = AdaptiveModel::new(7);
        let mut enc = Encoder::new();
        for &(s, v) in &items {
            enc.encode(&mut m, s as usize).unwrap();
            enc.encode_bits(v, 10);
        }
        let bytes = enc.finish();
        let mut m = AdaptiveModel::new(7);
        let mut dec = Decoder::new(&bytes);
        for &(s, v) in &items {
            assert_eq!(dec.decode(&mut m).unwrap() as u32, s);
            assert_eq!(dec.decode_bits(10).unwrap(), v);
        }
        dec.finish().unwrap();
    }

    #[test]
    fn count_mismatch_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s: Vec<u32> = (0..1000).map(|_| rng.gen_range(0..65)).collect();
        let bytes = arith_encode(&s, 65).unwrap();
        assert!(arith_decode(&bytes, 900, 65).is_err());
        assert!(arith_decode(&bytes, 1100, 65).is_err());
    }

    #[test]
    fn symbol_outside_alphabet_rejected() {
        assert!(arith_encode(&[0, 5], 5).is_err());
    }
}
