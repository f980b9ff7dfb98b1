//! Bitstream container: a fixed little-endian header followed by the payload.
//!
//! ```text
//! magic "OCTB" | version u8 | kind u8 | model hash [u8; 32] | depth u8
//! qs f64 | offset 3×f64 | N u32 | K u32 | N0 u32 | nodes u64
//! payload length u64 | digest [u8; 8] | payload
//! ```
//!
//! The digest is the first 8 bytes of the SHA-256 of every preceding header
//! byte followed by the payload.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::MAX_DEPTH;

pub const MAGIC: [u8; 4] = *b"OCTB";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 4 + 1 + 1 + 32 + 1 + 8 + 24 + 12 + 8 + 8 + DIGEST_LEN;
const DIGEST_LEN: usize = 8;

fn digest(head: &[u8], payload: &[u8]) -> [u8; DIGEST_LEN] {
    let mut h = Sha256::new();
    h.update(head);
    h.update(payload);
    let full = h.finalize();
    let mut out = [0u8; DIGEST_LEN];
    out.copy_from_slice(&full[..DIGEST_LEN]);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Adaptive order-0 counts; window fields are zero and the hash is unused.
    Baseline,
    /// Attention model identified by the SHA-256 of its parameter file.
    Attention { hash: [u8; 32] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub kind: ModelKind,
    pub depth: u8,
    pub qs: f64,
    pub offset: [f64; 3],
    pub n: u32,
    pub k: u32,
    pub n0: u32,
    pub nodes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bitstream {
    pub header: Header,
    pub payload: Vec<u8>,
}

impl Bitstream {
    pub fn payload_bits(&self) -> u64 {
        self.payload.len() as u64 * 8
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        match h.kind {
            ModelKind::Baseline => {
                out.push(0);
                out.extend_from_slice(&[0; 32]);
            }
            ModelKind::Attention { hash } => {
                out.push(1);
                out.extend_from_slice(&hash);
            }
        }
        out.push(h.depth);
        out.write_f64::<LE>(h.qs).unwrap();
        for o in h.offset {
            out.write_f64::<LE>(o).unwrap();
        }
        for v in [h.n, h.k, h.n0] {
            out.write_u32::<LE>(v).unwrap();
        }
        out.write_u64::<LE>(h.nodes).unwrap();
        out.write_u64::<LE>(self.payload.len() as u64).unwrap();
        let d = digest(&out, &self.payload);
        out.extend_from_slice(&d);
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses and checks the digest.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (bs, intact) = Self::parse(bytes)?;
        if !intact {
            return Err(Error::Corrupt {
                position: 0,
                message: "digest mismatch".into(),
            });
        }
        Ok(bs)
    }

    /// Parses without rejecting a digest mismatch; the flag tells whether
    /// the digest matched.
    pub fn parse(bytes: &[u8]) -> Result<(Self, bool)> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "truncated header: {} of {HEADER_LEN} bytes",
                bytes.len()
            )));
        }
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.read_u8()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let kind = r.read_u8()?;
        let mut hash = [0u8; 32];
        r.read_exact(&mut hash)?;
        let kind = match kind {
            0 => ModelKind::Baseline,
            1 => ModelKind::Attention { hash },
            k => return Err(Error::Format(format!("unknown model kind {k}"))),
        };
        let depth = r.read_u8()?;
        let qs = r.read_f64::<LE>()?;
        let mut offset = [0.0; 3];
        for o in &mut offset {
            *o = r.read_f64::<LE>()?;
        }
        let n = r.read_u32::<LE>()?;
        let k = r.read_u32::<LE>()?;
        let n0 = r.read_u32::<LE>()?;
        let nodes = r.read_u64::<LE>()?;
        let len = r.read_u64::<LE>()?;
        let mut stored = [0u8; DIGEST_LEN];
        r.read_exact(&mut stored)?;
        let header = Header {
            kind,
            depth,
            qs,
            offset,
            n,
            k,
            n0,
            nodes,
        };
        header.validate()?;
        let rest = &bytes[HEADER_LEN..];
        if (rest.len() as u64) < len {
            return Err(Error::Format(format!(
                "truncated payload: header declares {len} bytes, {} present",
                rest.len()
            )));
        }
        if rest.len() as u64 > len {
            return Err(Error::Format(format!(
                "{} bytes after the declared payload",
                rest.len() as u64 - len
            )));
        }
        if len == 0 {
            return Err(Error::Format("empty payload".into()));
        }
        let intact = digest(&bytes[..HEADER_LEN - DIGEST_LEN], rest) == stored;
        Ok((
            Self {
                header,
                payload: rest.to_vec(),
            },
            intact,
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

impl Header {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > MAX_DEPTH {
            return Err(Error::Format(format!("depth {} outside 1..={MAX_DEPTH}", self.depth)));
        }
        if !(self.qs.is_finite() && self.qs > 0.0) {
            return Err(Error::Format(format!("invalid quantization step {}", self.qs)));
        }
        if self.offset.iter().any(|o| !o.is_finite()) {
            return Err(Error::Format("non-finite offset".into()));
        }
        if self.nodes == 0 {
            return Err(Error::Format("zero node count".into()));
        }
        if let ModelKind::Attention { .. } = self.kind {
            if self.n == 0 || self.k == 0 || self.n0 == 0 || self.n0 > self.n {
                return Err(Error::Format(format!(
                    "invalid window N={} K={} N0={}",
                    self.n, self.k, self.n0
                )));
            }
        }
        Ok(())
    }
}
