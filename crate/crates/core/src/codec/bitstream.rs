//! Self-describing container for coded images.
//!
//! Layout (little endian):
//!
//! ```text
//! "VCNBITS1"  magic
//! u8          tag: 'J' plain block codec, 'S' SCIC, 'D' DNNC
//! u8          mode: 0 full, 1 low
//! u32 u32     image width, height
//! ...         tag fields
//!   J:  u8 qf
//!   S:  u8 qf, u32 inner width, u32 inner height
//!   D:  u8 n, u16 beta, f64 y_min, f64 y_max, u32 code height, u32 code width
//! u32         payload length
//! [u8]        payload
//! u32         CRC32 of everything above
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::networks::ResolutionMode;

pub const MAGIC: &[u8; 8] = b"VCNBITS1";

#[derive(Clone, Debug, PartialEq)]
pub enum Header {
    Plain {
        width: u32,
        height: u32,
        qf: u8,
    },
    Scic {
        mode: ResolutionMode,
        width: u32,
        height: u32,
        qf: u8,
        inner_width: u32,
        inner_height: u32,
    },
    Dnnc {
        width: u32,
        height: u32,
        n: u8,
        beta: u16,
        y_min: f64,
        y_max: f64,
        code_height: u32,
        code_width: u32,
    },
}

impl Header {
    /// Extents of the image this stream reconstructs.
    pub fn extents(&self) -> (usize, usize) {
        let (w, h) = match *self {
            Header::Plain { width, height, .. }
            | Header::Scic { width, height, .. }
            | Header::Dnnc { width, height, .. } => (width, height),
        };
        (w as usize, h as usize)
    }

    fn tag(&self) -> u8 {
        match self {
            Header::Plain { .. } => b'J',
            Header::Scic { .. } => b'S',
            Header::Dnnc { .. } => b'D',
        }
    }

    fn mode(&self) -> ResolutionMode {
        match self {
            Header::Scic { mode, .. } => *mode,
            _ => ResolutionMode::Full,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bitstream {
    pub header: Header,
    pub payload: Vec<u8>,
}

impl Bitstream {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.push(self.header.tag());
        out.push(match self.header.mode() {
            ResolutionMode::Full => 0,
            ResolutionMode::Low => 1,
        });
        let (w, h) = self.header.extents();
        out.extend_from_slice(&(w as u32).to_le_bytes());
        out.extend_from_slice(&(h as u32).to_le_bytes());
        match self.header {
            Header::Plain { qf, .. } => out.push(qf),
            Header::Scic {
                qf,
                inner_width,
                inner_height,
                ..
            } => {
                out.push(qf);
                out.extend_from_slice(&inner_width.to_le_bytes());
                out.extend_from_slice(&inner_height.to_le_bytes());
            }
            Header::Dnnc {
                n,
                beta,
                y_min,
                y_max,
                code_height,
                code_width,
                ..
            } => {
                out.push(n);
                out.extend_from_slice(&beta.to_le_bytes());
                out.extend_from_slice(&y_min.to_le_bytes());
                out.extend_from_slice(&y_max.to_le_bytes());
                out.extend_from_slice(&code_height.to_le_bytes());
                out.extend_from_slice(&code_width.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < MAGIC.len() + 4 {
            return Err(Error::format("bitstream", buf.len(), "shorter than magic and checksum"));
        }
        if &buf[..8] != MAGIC {
            return Err(Error::format("bitstream", 0, "bad magic"));
        }
        let body = &buf[..buf.len() - 4];
        let stored = u32::from_le_bytes(buf[buf.len() - 4..].try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum {
                what: "bitstream",
                stored,
                computed,
            });
        }
        let mut r = Reader { buf: body, pos: 8 };
        let tag = r.u8()?;
        let mode = match r.u8()? {
            0 => ResolutionMode::Full,
            1 => ResolutionMode::Low,
            m => return Err(Error::format("bitstream", r.pos - 1, format!("unknown mode {}", m))),
        };
        let width = r.u32()?;
        let height = r.u32()?;
        if width == 0 || height == 0 {
            return Err(Error::format("bitstream", r.pos, "zero image extent"));
        }
        let header = match tag {
            b'J' => Header::Plain {
                width,
                height,
                qf: r.qf()?,
            },
            b'S' => Header::Scic {
                mode,
                width,
                height,
                qf: r.qf()?,
                inner_width: r.nonzero_u32("inner width")?,
                inner_height: r.nonzero_u32("inner height")?,
            },
            b'D' => {
                let n = r.u8()?;
                let beta = r.u16()?;
                let y_min = r.f64()?;
                let y_max = r.f64()?;
                if beta == 0 || !(y_min.is_finite() && y_max.is_finite() && y_min < y_max) {
                    return Err(Error::format("bitstream", r.pos, "invalid quantiser parameters"));
                }
                Header::Dnnc {
                    width,
                    height,
                    n,
                    beta,
                    y_min,
                    y_max,
                    code_height: r.nonzero_u32("code height")?,
                    code_width: r.nonzero_u32("code width")?,
                }
            }
            t => return Err(Error::format("bitstream", 8, format!("unknown path tag {:#04x}", t))),
        };
        let len = r.u32()? as usize;
        if r.pos + len != body.len() {
            return Err(Error::format(
                "bitstream",
                r.pos,
                format!("payload length {} disagrees with {} remaining bytes", len, body.len() - r.pos),
            ));
        }
        Ok(Bitstream {
            header,
            payload: body[r.pos..].to_vec(),
        })
    }

    /// Serialized size in bytes, header and checksum included.
    pub fn byte_len(&self) -> usize {
        self.to_bytes().len()
    }

    /// Total bits over image pixels.
    pub fn bpp(&self) -> f64 {
        let (w, h) = self.header.extents();
        (self.byte_len() * 8) as f64 / (w * h) as f64
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let bytes = self
            .buf
            .get(self.pos..self.pos + N)
            .ok_or_else(|| Error::format("bitstream", self.pos, "truncated header"))?;
        self.pos += N;
        Ok(bytes.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn qf(&mut self) -> Result<u8> {
        let qf = self.u8()?;
        if !(1..=100).contains(&qf) {
            return Err(Error::format("bitstream", self.pos - 1, format!("quality factor {}", qf)));
        }
        Ok(qf)
    }

    fn nonzero_u32(&mut self, what: &str) -> Result<u32> {
        let v = self.u32()?;
        if v == 0 {
            return Err(Error::format("bitstream", self.pos - 4, format!("zero {}", what)));
        }
        Ok(v)
    }
}
