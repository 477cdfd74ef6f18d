//! Parameter checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "MAILCKPT"
//! version    u32      = 1
//! meta_len   u32      length of the metadata block in bytes
//! meta       bytes    UTF-8 "key=value\n" lines; `\` and newlines in
//!                     values are written as `\\` and `\n`
//! adam_step  u64      optimizer step counter
//! n_arrays   u32
//! n_arrays x {
//!     name_len u32, name bytes (UTF-8),
//!     rows u32, cols u32,
//!     rows*cols f64 values, row-major
//! }
//! ```
//!
//! For every parameter `p` three arrays are written in order: `p`, `p#adam_m`
//! and `p#adam_v`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::matrix::Matrix;
use super::store::ParameterStore;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MAILCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub adam_step: u64,
    pub arrays: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn from_store(store: &ParameterStore, meta: BTreeMap<String, String>) -> Self {
        let mut arrays = Vec::with_capacity(store.len() * 3);
        for p in store.params() {
            arrays.push((p.name.clone(), p.value.clone()));
            arrays.push((format!("{}#adam_m", p.name), p.m.clone()));
            arrays.push((format!("{}#adam_v", p.name), p.v.clone()));
        }
        Self {
            meta,
            adam_step: store.step(),
            arrays,
        }
    }

    /// Copies values and optimizer state into a store with the same layout.
    pub fn restore_into(&self, store: &mut ParameterStore) -> Result<()> {
        let lookup: BTreeMap<&str, &Matrix> =
            self.arrays.iter().map(|(n, m)| (n.as_str(), m)).collect();
        let mut staged = Vec::with_capacity(store.len());
        for p in store.params() {
            let get = |name: &str| -> Result<Matrix> {
                let m = lookup.get(name).ok_or_else(|| {
                    Error::Checkpoint(format!("checkpoint has no array `{name}`"))
                })?;
                if m.shape() != p.value.shape() {
                    return Err(Error::Checkpoint(format!(
                        "array `{name}` is {:?}, network expects {:?}",
                        m.shape(),
                        p.value.shape()
                    )));
                }
                Ok((*m).clone())
            };
            staged.push((
                get(&p.name)?,
                get(&format!("{}#adam_m", p.name))?,
                get(&format!("{}#adam_v", p.name))?,
            ));
        }
        if self.arrays.len() != store.len() * 3 {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} arrays, network needs {}",
                self.arrays.len(),
                store.len() * 3
            )));
        }
        for (p, (value, m, v)) in store.params_mut().iter_mut().zip(staged) {
            p.value = value;
            p.m = m;
            p.v = v;
            p.grad.fill(0.0);
        }
        store.set_step(self.adam_step);
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let mut meta = String::new();
        for (k, v) in &self.meta {
            if k.is_empty() || k.contains(['=', '\n', '\r']) {
                return Err(Error::Checkpoint(format!("invalid metadata key {k:?}")));
            }
            meta.push_str(k);
            meta.push('=');
            meta.push_str(&escape(v));
            meta.push('\n');
        }
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(meta.as_bytes())?;
        w.write_all(&self.adam_step.to_le_bytes())?;
        w.write_all(&(self.arrays.len() as u32).to_le_bytes())?;
        for (name, m) in &self.arrays {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(m.rows() as u32).to_le_bytes())?;
            w.write_all(&(m.cols() as u32).to_le_bytes())?;
            for x in m.as_slice() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(
                "not a checkpoint file (bad magic)".into(),
            ));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let meta_len = read_u32(&mut r)? as usize;
        let mut meta_bytes = vec![0u8; meta_len];
        read_exact(&mut r, &mut meta_bytes)?;
        let meta_text = String::from_utf8(meta_bytes)
            .map_err(|_| Error::Checkpoint("metadata is not UTF-8".into()))?;
        let meta = meta_text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.to_string(), unescape(v)))
            .collect();
        let mut step = [0u8; 8];
        read_exact(&mut r, &mut step)?;
        let adam_step = u64::from_le_bytes(step);
        let n = read_u32(&mut r)? as usize;
        let mut arrays = Vec::with_capacity(n);
        for _ in 0..n {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?;
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            let mut buf = [0u8; 8];
            for _ in 0..rows * cols {
                read_exact(&mut r, &mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            arrays.push((name, Matrix::from_vec(rows, cols, data)));
        }
        Ok(Self {
            meta,
            adam_step,
            arrays,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Checkpoint("checkpoint file is truncated".into())
        } else {
            Error::Io(e)
        }
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn escape(v: &str) -> String {
    v.replace('\\', "\\\\")
        .replace('\n', "\\n")
        .replace('\r', "\\r")
}

fn unescape(v: &str) -> String {
    let mut out = String::with_capacity(v.len());
    let mut chars = v.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}
