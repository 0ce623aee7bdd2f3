//! Binary parameter files.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! offset  field
//! 0       magic            4 bytes  "DMPD"
//! 4       format version   u16      (currently 1)
//! 6       kind             u8       0 = reconstruction model, 1 = meta-model
//! 7       id               u16 length + UTF-8 bytes
//!         tag              u16 length + UTF-8 bytes   (dataset the model was trained on)
//!         segment length   u32
//!         stride           u32
//!         layer count      u32, then that many u32 layer widths
//!         theta length     u64, then theta as f32
//!         frozen mask      ceil(theta length / 8) bytes, bit i of byte i/8 (LSB first)
//!         extra length     u32, then that many f64
//! ```
//!
//! The reader rejects trailing bytes.

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DMPD";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Recon = 0,
    Meta = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamRecord {
    pub kind: RecordKind,
    pub id: String,
    pub tag: String,
    pub segment_length: u32,
    pub stride: u32,
    pub sizes: Vec<u32>,
    pub theta: Vec<f32>,
    pub frozen: Vec<bool>,
    pub extra: Vec<f64>,
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    let len = u16::try_from(s.len()).expect("identifier shorter than 64 KiB");
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

impl ParamRecord {
    pub fn encode(&self) -> Vec<u8> {
        assert_eq!(self.theta.len(), self.frozen.len());
        let mut buf = Vec::with_capacity(64 + self.theta.len() * 4 + self.extra.len() * 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.push(self.kind as u8);
        put_str(&mut buf, &self.id);
        put_str(&mut buf, &self.tag);
        buf.extend_from_slice(&self.segment_length.to_le_bytes());
        buf.extend_from_slice(&self.stride.to_le_bytes());
        buf.extend_from_slice(&(self.sizes.len() as u32).to_le_bytes());
        for s in &self.sizes {
            buf.extend_from_slice(&s.to_le_bytes());
        }
        buf.extend_from_slice(&(self.theta.len() as u64).to_le_bytes());
        for v in &self.theta {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut mask = vec![0u8; self.frozen.len().div_ceil(8)];
        for (i, &f) in self.frozen.iter().enumerate() {
            if f {
                mask[i / 8] |= 1 << (i % 8);
            }
        }
        buf.extend_from_slice(&mask);
        buf.extend_from_slice(&(self.extra.len() as u32).to_le_bytes());
        for v in &self.extra {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err("bad magic".into());
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != FORMAT_VERSION {
            return Err(format!("unsupported format version {version}"));
        }
        let kind = match r.take(1)?[0] {
            0 => RecordKind::Recon,
            1 => RecordKind::Meta,
            k => return Err(format!("unknown record kind {k}")),
        };
        let id = r.string()?;
        let tag = r.string()?;
        let segment_length = u32::from_le_bytes(r.array()?);
        let stride = u32::from_le_bytes(r.array()?);
        let n_sizes = u32::from_le_bytes(r.array()?) as usize;
        let sizes = (0..n_sizes)
            .map(|_| r.array().map(u32::from_le_bytes))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let len = usize::try_from(u64::from_le_bytes(r.array()?)).map_err(|_| "theta too long")?;
        if len.saturating_mul(4) > bytes.len() {
            return Err("theta length exceeds file size".into());
        }
        let theta = (0..len)
            .map(|_| r.array().map(f32::from_le_bytes))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mask = r.take(len.div_ceil(8))?;
        let frozen = (0..len).map(|i| mask[i / 8] & (1 << (i % 8)) != 0).collect();
        let n_extra = u32::from_le_bytes(r.array()?) as usize;
        if n_extra.saturating_mul(8) > bytes.len() {
            return Err("extra length exceeds file size".into());
        }
        let extra = (0..n_extra)
            .map(|_| r.array().map(f64::from_le_bytes))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(Self {
            kind,
            id,
            tag,
            segment_length,
            stride,
            sizes,
            theta,
            frozen,
            extra,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::integrity(path, e.to_string()))?;
        Self::decode(&bytes).map_err(|msg| Error::integrity(path, msg))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).ok_or("length overflow")?;
        if end > self.bytes.len() {
            return Err(format!("truncated at byte {}", self.pos));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> std::result::Result<[u8; N], String> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let len = u16::from_le_bytes(self.array()?) as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| "identifier is not UTF-8".into())
    }
}
