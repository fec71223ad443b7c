//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DAVCKPT1"
//! u32 meta_len, meta_len bytes of UTF-8 metadata (model config JSON)
//! u32 entry_count
//! entry_count × { u32 name_len, name, u32 ndim, ndim × u32 dim, u64 offset }
//! u64 value_count
//! value_count × f32
//! ```
//!
//! `offset` counts f32 values from the start of the value block.

use std::path::Path;

use super::{ParamStore, Real, Tensor};
use crate::{Error, Result};

pub const CKPT_MAGIC: &[u8; 8] = b"DAVCKPT1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn from_store<T: Real>(meta: impl Into<String>, store: &ParamStore<T>) -> Self {
        Self {
            meta: meta.into(),
            tensors: store
                .iter()
                .map(|(_, p)| (p.name.clone(), p.value.cast()))
                .collect(),
        }
    }

    /// Copies every tensor into the parameter of the same name.
    /// Fails if a name is unknown or a shape disagrees.
    pub fn load_into<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        for (name, t) in &self.tensors {
            let id = store
                .id(name)
                .ok_or_else(|| Error::invalid(format!("checkpoint parameter {name} not in model")))?;
            if store.value(id).shape() != t.shape() {
                return Err(Error::shape(
                    "load_checkpoint",
                    format!(
                        "{name}: checkpoint {:?} vs model {:?}",
                        t.shape(),
                        store.value(id).shape()
                    ),
                ));
            }
            *store.value_mut(id) = t.cast();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        out.extend_from_slice(self.meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += t.len() as u64;
        }
        out.extend_from_slice(&offset.to_le_bytes());
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            path,
        };
        if r.take(8)? != CKPT_MAGIC {
            return Err(r.err("missing DAVCKPT1 magic"));
        }
        let meta_len = r.u32()? as usize;
        let meta = String::from_utf8(r.take(meta_len)?.to_vec())
            .map_err(|_| r.err("metadata is not UTF-8"))?;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| r.err("parameter name is not UTF-8"))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let offset = r.u64()? as usize;
            entries.push((name, shape, offset));
        }
        let total = r.u64()? as usize;
        let raw = r.take(total.checked_mul(4).ok_or_else(|| r.err("value count overflow"))?)?;
        if r.pos != bytes.len() {
            return Err(r.err("trailing bytes after value block"));
        }
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut tensors = Vec::with_capacity(count);
        for (name, shape, offset) in entries {
            let n: usize = shape.iter().product();
            let slice = values
                .get(offset..offset + n)
                .ok_or_else(|| r.err(&format!("{name} points outside the value block")))?;
            tensors.push((name, Tensor::new(&shape, slice.to_vec())?));
        }
        Ok(Self { meta, tensors })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, detail: &str) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            detail: format!("{detail} (byte {})", self.pos),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| self.err("unexpected end of file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    Checkpoint::from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut store = ParamStore::<f32>::new();
        store
            .add("a.weight", Tensor::new(&[2, 3], vec![1., 2., 3., 4., 5., -6.]).unwrap())
            .unwrap();
        store.add("a.bias", Tensor::new(&[3], vec![0.5, 0.25, -0.125]).unwrap()).unwrap();
        Checkpoint::from_store("{\"dim\":3}", &store)
    }

    #[test]
    fn round_trips_through_bytes() {
        let ck = sample();
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..8], b"DAVCKPT1");
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn rejects_truncation_and_bad_magic() {
        let bytes = sample().to_bytes();
        for cut in [0, 7, 20, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut], Path::new("mem")).is_err());
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad, Path::new("mem")).is_err());
    }

    #[test]
    fn load_into_checks_shapes() {
        let ck = sample();
        let mut store = ParamStore::<f64>::new();
        store.add("a.weight", Tensor::zeros(&[2, 3])).unwrap();
        store.add("a.bias", Tensor::zeros(&[3])).unwrap();
        ck.load_into(&mut store).unwrap();
        assert_eq!(store.value(store.id("a.bias").unwrap()).data(), &[0.5, 0.25, -0.125]);

        let mut wrong = ParamStore::<f64>::new();
        wrong.add("a.weight", Tensor::zeros(&[3, 2])).unwrap();
        wrong.add("a.bias", Tensor::zeros(&[3])).unwrap();
        assert!(ck.load_into(&mut wrong).is_err());
    }
}
