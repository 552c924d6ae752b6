//! Versioned binary container for parameter tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes   b"LGPCKPT\0"
//! version   u32       currently 1
//! meta_len  u64       followed by meta_len bytes of UTF-8 JSON metadata
//! n         u32       number of tensors, then per tensor:
//!   name_len u32, name bytes (UTF-8), rows u64, cols u64, rows*cols f64 row-major
//! vocab_len u64       followed by vocab_len bytes of UTF-8 tokenizer JSON (0 = none)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::optim::ParamSet;

pub const MAGIC: &[u8; 8] = b"LGPCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: ParamSet,
    pub vocab: Option<String>,
}

fn ck(e: std::io::Error) -> Error {
    Error::Checkpoint(e.to_string())
}

impl Checkpoint {
    pub fn kind(&self) -> Option<&str> {
        self.meta.get("kind").and_then(|k| k.as_str())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC).map_err(ck)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(ck)?;
        let meta = serde_json::to_vec(&self.meta)?;
        w.write_all(&(meta.len() as u64).to_le_bytes()).map_err(ck)?;
        w.write_all(&meta).map_err(ck)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes()).map_err(ck)?;
        for (name, t) in self.tensors.iter() {
            w.write_all(&(name.len() as u32).to_le_bytes()).map_err(ck)?;
            w.write_all(name.as_bytes()).map_err(ck)?;
            w.write_all(&(t.nrows() as u64).to_le_bytes()).map_err(ck)?;
            w.write_all(&(t.ncols() as u64).to_le_bytes()).map_err(ck)?;
            for v in t.iter() {
                w.write_all(&v.to_le_bytes()).map_err(ck)?;
            }
        }
        let vocab = self.vocab.as_deref().unwrap_or("").as_bytes();
        w.write_all(&(vocab.len() as u64).to_le_bytes()).map_err(ck)?;
        w.write_all(vocab).map_err(ck)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        fn exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
            let mut b = [0u8; N];
            r.read_exact(&mut b).map_err(ck)?;
            Ok(b)
        }
        fn bytes(r: &mut impl Read, len: u64) -> Result<Vec<u8>> {
            if len > (1 << 40) {
                return Err(Error::Checkpoint(format!("implausible section length {len}")));
            }
            let mut b = Vec::new();
            r.take(len).read_to_end(&mut b).map_err(ck)?;
            if b.len() as u64 != len {
                return Err(Error::Checkpoint("truncated file".into()));
            }
            Ok(b)
        }
        let utf8 = |b: Vec<u8>| String::from_utf8(b).map_err(|e| Error::Checkpoint(e.to_string()));

        if &exact::<8>(r)? != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(exact(r)?);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let meta_len = u64::from_le_bytes(exact(r)?);
        let meta = serde_json::from_slice(&bytes(r, meta_len)?)?;
        let n = u32::from_le_bytes(exact(r)?);
        let mut tensors = ParamSet::new();
        for _ in 0..n {
            let name_len = u32::from_le_bytes(exact(r)?);
            let name = utf8(bytes(r, name_len.into())?)?;
            let rows = u64::from_le_bytes(exact(r)?) as usize;
            let cols = u64::from_le_bytes(exact(r)?) as usize;
            let raw = bytes(r, (rows * cols * 8) as u64)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Checkpoint(e.to_string()))?;
            tensors.push(name, t);
        }
        let vocab_len = u64::from_le_bytes(exact(r)?);
        let vocab = if vocab_len == 0 {
            None
        } else {
            Some(utf8(bytes(r, vocab_len)?)?)
        };
        Ok(Self { meta, tensors, vocab })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        Self::read_from(&mut r)
    }

    /// Loads and checks the `kind` metadata field.
    pub fn load_kind(path: impl AsRef<Path>, kind: &str) -> Result<Self> {
        let c = Self::load(path)?;
        match c.kind() {
            Some(k) if k == kind => Ok(c),
            other => Err(Error::Checkpoint(format!("expected a {kind} checkpoint, found {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_bit_exact() {
        let mut tensors = ParamSet::new();
        tensors.push("a", Array2::from_shape_vec((2, 2), vec![1.5, -0.0, f64::MIN_POSITIVE, 3e300]).unwrap());
        tensors.push("empty", Array2::zeros((0, 3)));
        let c = Checkpoint {
            meta: serde_json::json!({"kind": "test", "seed": 4}),
            tensors,
            vocab: Some("{\"v\":1}".into()),
        };
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.tensors.get(0)[[0, 1]].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        assert!(Checkpoint::read_from(&mut &b"not a checkpoint"[..]).is_err());
        let c = Checkpoint {
            meta: serde_json::json!({}),
            tensors: ParamSet::new(),
            vocab: None,
        };
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(Checkpoint::read_from(&mut buf.as_slice()), Err(Error::Checkpoint(_))));
    }
}
