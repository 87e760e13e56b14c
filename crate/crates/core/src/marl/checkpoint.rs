//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! magic    b"PNCK"
//! version  u32
//! n_config u32, then n_config × (u32 len, key bytes, u32 len, value bytes)
//! n_params u32, then n_params × (u32 len, name bytes, u32 rank,
//!                                rank × u64 dim, numel × f64)
//! ```
//!
//! The config block echoes the training config as `key=value` text so a
//! checkpoint is self-describing.

use std::fs;
use std::io::Read;
use std::path::Path;

use super::config::TrainConfig;
use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PNCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: Vec<(String, String)>,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn capture(cfg: &TrainConfig, store: &ParamStore) -> Self {
        Checkpoint {
            config: cfg.to_pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            params: store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
        }
    }

    /// Copies every stored tensor into the parameter of the same name.
    pub fn restore(&self, store: &mut ParamStore) -> Result<()> {
        if self.params.len() != store.len() {
            return Err(Error::Size(format!(
                "checkpoint holds {} parameters, network has {}",
                self.params.len(),
                store.len()
            )));
        }
        for (name, t) in &self.params {
            let id = store
                .find(name)
                .ok_or_else(|| Error::Size(format!("network has no parameter `{name}`")))?;
            let dst = store.get_mut(id);
            if dst.shape() != t.shape() {
                return Err(Error::Shape {
                    op: "restore",
                    lhs: dst.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            dst.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        fn put_str(out: &mut Vec<u8>, s: &str) {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        for (k, v) in &self.config {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in &self.params {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let n_config = r.u32()?;
        let mut config = Vec::new();
        for _ in 0..n_config {
            config.push((r.string()?, r.string()?));
        }
        let n_params = r.u32()?;
        let mut params = Vec::new();
        for _ in 0..n_params {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(usize::try_from(r.u64()?).map_err(|_| bad("dimension overflow"))?);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| bad("dimension overflow"))?;
            if numel.saturating_mul(8) > r.bytes.len() {
                return Err(bad("truncated tensor data"));
            }
            let data = (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            params.push((name, Tensor::new(shape, data)?.with_requires_grad(true)));
        }
        if !r.bytes.is_empty() {
            return Err(bad(format!("{} trailing bytes", r.bytes.len())));
        }
        Ok(Checkpoint { config, params })
    }
}

fn bad(message: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        message: message.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(bad("unexpected end of data"));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("name is not utf-8"))
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, cfg: &TrainConfig, store: &ParamStore) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, Checkpoint::capture(cfg, store).to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
