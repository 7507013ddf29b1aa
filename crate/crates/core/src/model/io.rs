//! Binary model files. Layout (all integers little-endian):
//!
//! ```text
//! magic          8 bytes  "NMILMODL"
//! version        u32      1
//! input_dim      u32
//! embed_dim      u32
//! attention_dim  u32
//! levels         u32
//! hidden count   u32      followed by one u32 per hidden layer width
//! aggregator     u8       0 mean, 1 max, 2 sum
//! attention      u8       0 off, 1 on
//! reserved       u16      0
//! tensor count   u32
//! per tensor:    rank u32, rank × u32 extents, values as f64 LE
//! ```
//!
//! Tensors appear in [`NmilModel::params`] order.

use std::path::Path;

use super::{Aggregator, ModelConfig, ModelDims, NmilModel};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"NMILMODL";
pub const MODEL_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let out = self.bytes.get(self.pos..self.pos + n).ok_or_else(|| Error::Format {
            offset: self.pos as u64,
            msg: format!("model file truncated while reading {what}"),
        })?;
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        self.u32(what).map(|v| v as usize)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn fail<T>(&self, at: usize, msg: String) -> Result<T> {
        Err(Error::Format {
            offset: at as u64,
            msg,
        })
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Contract(format!("{v} does not fit a u32 field")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

impl NmilModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        let d = &self.dims;
        for v in [d.input_dim, d.embed_dim, d.attention_dim, d.levels, d.hidden_dims.len()] {
            put_u32(&mut out, v)?;
        }
        for &h in &d.hidden_dims {
            put_u32(&mut out, h)?;
        }
        out.push(self.config.aggregator.code());
        out.push(u8::from(self.config.attention));
        out.extend_from_slice(&0u16.to_le_bytes());
        let params = self.params();
        put_u32(&mut out, params.len())?;
        for t in params {
            put_u32(&mut out, t.rank())?;
            for &e in t.shape() {
                put_u32(&mut out, e)?;
            }
            for v in t.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MODEL_MAGIC {
            return r.fail(0, "not an NMIL model file".into());
        }
        let version = r.u32("version")?;
        if version != MODEL_VERSION {
            return r.fail(8, format!("model version {version}, expected {MODEL_VERSION}"));
        }
        let input_dim = r.usize("input_dim")?;
        let embed_dim = r.usize("embed_dim")?;
        let attention_dim = r.usize("attention_dim")?;
        let levels = r.usize("levels")?;
        let n_hidden = r.usize("hidden layer count")?;
        if n_hidden > 64 {
            return r.fail(r.pos - 4, format!("implausible hidden layer count {n_hidden}"));
        }
        let hidden_dims = (0..n_hidden)
            .map(|_| r.usize("hidden width"))
            .collect::<Result<Vec<_>>>()?;
        let at = r.pos;
        let aggregator = Aggregator::from_code(r.u8("aggregator")?)
            .ok_or_else(|| Error::Format { offset: at as u64, msg: "unknown aggregator code".into() })?;
        let attention = match r.u8("attention flag")? {
            0 => false,
            1 => true,
            other => return r.fail(at + 1, format!("attention flag {other} is not 0 or 1")),
        };
        r.take(2, "reserved")?;

        let dims = ModelDims {
            input_dim,
            hidden_dims,
            embed_dim,
            attention_dim,
            levels,
        };
        dims.validate().map_err(|e| Error::Format { offset: 8, msg: e.to_string() })?;
        let mut model = NmilModel::init(dims, ModelConfig { aggregator, attention }, 0)?;

        let at = r.pos;
        let count = r.usize("tensor count")?;
        let expected = model.params().len();
        if count != expected {
            return r.fail(at, format!("{count} tensors stored, model needs {expected}"));
        }
        for t in model.params_mut() {
            let at = r.pos;
            let rank = r.usize("tensor rank")?;
            let shape = (0..rank.min(8))
                .map(|_| r.usize("tensor extent"))
                .collect::<Result<Vec<_>>>()?;
            if shape != t.shape() {
                return r.fail(at, format!("tensor shape {shape:?}, expected {:?}", t.shape()));
            }
            let raw = r.take(8 * t.len(), "tensor values")?;
            for (v, b) in t.values_mut().iter_mut().zip(raw.chunks_exact(8)) {
                *v = f64::from_le_bytes(b.try_into().expect("8-byte chunk"));
            }
        }
        if r.pos != bytes.len() {
            return r.fail(r.pos, format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
