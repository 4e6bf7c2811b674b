//! Versioned binary key→tensor store.
//!
//! Layout (all integers little-endian):
//! ```text
//! magic   "MCNCKPT\0"
//! version u32
//! n_meta  u32, then n_meta × (key, value) strings
//! n_tens  u32, then n_tens × (name string, rank u32, dims u64×rank, f64×∏dims)
//! ```
//! Strings are a `u32` byte length followed by UTF-8 bytes.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MCNCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    meta: BTreeMap<String, String>,
    tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl Into<String>) {
        self.meta.insert(key.to_string(), value.into());
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata key {key:?}")))
    }

    pub fn meta_map(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        self.tensors.insert(name.to_string(), t);
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.meta.len() as u32).to_le_bytes())?;
        for (k, v) in &self.meta {
            write_str(w, k)?;
            write_str(w, v)?;
        }
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            write_str(w, name)?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for x in t.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut ckpt = Checkpoint::new();
        for _ in 0..read_u32(r)? {
            let k = read_str(r)?;
            let v = read_str(r)?;
            ckpt.meta.insert(k, v);
        }
        for _ in 0..read_u32(r)? {
            let name = read_str(r)?;
            let rank = read_u32(r)? as usize;
            if rank > 8 {
                return Err(Error::Checkpoint(format!(
                    "tensor {name:?} has rank {rank}"
                )));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n <= 1 << 32)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name:?} is too large")))?;
            let mut data = Vec::with_capacity(n);
            let mut b = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
            ckpt.tensors.insert(name, t);
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Checkpoint::read(&mut r)
    }
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let n = read_u32(r)? as usize;
    if n > 1 << 24 {
        return Err(Error::Checkpoint("string too long".into()));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
}
