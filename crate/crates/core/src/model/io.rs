//! Parameter file: `OCTM` magic, format version, configuration block, tensor
//! table (name, rows, cols) and finally every tensor as little-endian `f32` in
//! table order.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MODEL_MAGIC: &[u8; 4] = b"OCTM";
pub const MODEL_VERSION: u32 = 1;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

impl<T: Scalar> Model<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::with_capacity(64 + self.params.len() * 4);
        out.extend_from_slice(MODEL_MAGIC);
        out.write_u32::<LittleEndian>(MODEL_VERSION).unwrap();
        for v in [
            c.d_occ, c.d_lvl, c.d_oct, c.max_level, c.k, c.head_dim, c.ffn_hidden, c.out_hidden, c.layers, c.n,
            c.n0,
        ] {
            out.write_u32::<LittleEndian>(v as u32).unwrap();
        }
        out.write_u32::<LittleEndian>(self.layout.tensors.len() as u32).unwrap();
        for t in &self.layout.tensors {
            out.write_u16::<LittleEndian>(t.name.len() as u16).unwrap();
            out.extend_from_slice(t.name.as_bytes());
            out.write_u32::<LittleEndian>(t.rows as u32).unwrap();
            out.write_u32::<LittleEndian>(t.cols as u32).unwrap();
        }
        for &v in &self.params {
            out.write_f32::<LittleEndian>(v.to_f32().unwrap()).unwrap();
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let eof = |_| format_err("model file truncated");
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(eof)?;
        if &magic != MODEL_MAGIC {
            return Err(format_err("not a model file (bad magic)"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(eof)?;
        if version != MODEL_VERSION {
            return Err(format_err(format!("unsupported model version {version}")));
        }
        let mut f = [0usize; 11];
        for v in f.iter_mut() {
            *v = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
        }
        let config = ModelConfig {
            d_occ: f[0],
            d_lvl: f[1],
            d_oct: f[2],
            max_level: f[3],
            k: f[4],
            head_dim: f[5],
            ffn_hidden: f[6],
            out_hidden: f[7],
            layers: f[8],
            n: f[9],
            n0: f[10],
        };
        config.validate()?;
        let layout = super::Layout::new(&config);
        let count = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
        if count != layout.tensors.len() {
            return Err(format_err(format!(
                "tensor table lists {count} tensors, configuration implies {}",
                layout.tensors.len()
            )));
        }
        for spec in &layout.tensors {
            let len = r.read_u16::<LittleEndian>().map_err(eof)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(eof)?;
            let rows = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
            let cols = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
            if name != spec.name.as_bytes() || rows != spec.rows || cols != spec.cols {
                return Err(format_err(format!("tensor table mismatch at {}", spec.name)));
            }
        }
        let mut params = Vec::with_capacity(layout.total);
        for _ in 0..layout.total {
            let v = r.read_f32::<LittleEndian>().map_err(eof)?;
            params.push(T::lit(v as f64));
        }
        if (r.position() as usize) != bytes.len() {
            return Err(format_err("trailing bytes after tensors"));
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// SHA-256 of the serialized parameter file.
    pub fn content_hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }
}
