//! STDC parameter files.
//!
//! Layout (little-endian): magic `STDC`, u8 version, u8 precision tag
//! (0 = f32, 1 = f64), u32 parameter count, then for each parameter a u16
//! name length, the UTF-8 name, a u8 rank, `rank` u32 dims and the payload.

use std::fs;
use std::path::Path;

use stdn_tensor::{Precision, Scalar, Tensor};

use crate::error::{io_err, Error, Result};
use crate::params::ParamStore;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"STDC";
pub const CHECKPOINT_VERSION: u8 = 1;

/// A decoded checkpoint entry, values widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub precision: Precision,
    pub entries: Vec<CheckpointEntry>,
}

pub fn encode_checkpoint<S: Scalar>(store: &ParamStore<S>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.push(S::PRECISION.tag());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for d in t.shape() {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        S::to_le_bytes_vec(t.data(), &mut out);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format { offset: self.pos as u64, reason: format!("truncated {what}") });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format { offset: 0, reason: "bad magic, expected \"STDC\"".into() });
    }
    let version = r.u8("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format { offset: 4, reason: format!("unsupported checkpoint version {version}") });
    }
    let tag = r.u8("precision")?;
    let precision =
        Precision::from_tag(tag).ok_or_else(|| Error::Format { offset: 5, reason: format!("unknown precision tag {tag}") })?;
    let count = r.u32("parameter count")? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Format { offset: at as u64, reason: "parameter name is not UTF-8".into() })?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let shape = (0..rank).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let width = precision.byte_width();
        let payload = r.take(numel * width, &format!("payload of `{name}`"))?;
        let values = match precision {
            Precision::F32 => payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
            Precision::F64 => payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        };
        entries.push(CheckpointEntry { name, shape, values });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format { offset: r.pos as u64, reason: "trailing bytes after last parameter".into() });
    }
    Ok(Checkpoint { precision, entries })
}

pub fn save_checkpoint<S: Scalar>(path: impl AsRef<Path>, store: &ParamStore<S>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(store)).map_err(io_err(path))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(io_err(path))?)
}

impl Checkpoint {
    /// Overwrites every parameter of `store` from this checkpoint. Names and
    /// shapes must match exactly; a mismatch names the offending parameter.
    pub fn load_into<S: Scalar>(&self, store: &mut ParamStore<S>) -> Result<()> {
        for entry in &self.entries {
            if store.id(&entry.name).is_none() {
                return Err(Error::Checkpoint(format!("unexpected parameter `{}`", entry.name)));
            }
        }
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            let entry = self
                .entries
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| Error::Checkpoint(format!("parameter `{name}` missing from checkpoint")))?;
            let t = store.get_mut(id);
            if t.shape() != entry.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?} in the checkpoint but {:?} in the model",
                    entry.shape,
                    t.shape()
                )));
            }
            let fresh = Tensor::<S>::from_f64(entry.shape.clone(), &entry.values)
                .map_err(|e| Error::Checkpoint(format!("parameter `{name}`: {e}")))?;
            t.data_mut().copy_from_slice(fresh.data());
        }
        Ok(())
    }
}

pub fn load_checkpoint<S: Scalar>(path: impl AsRef<Path>, store: &mut ParamStore<S>) -> Result<()> {
    read_checkpoint(path)?.load_into(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.insert("a.w", Tensor::from_f64([2, 3], &[0.1, -0.2, 3.5, 1e-7, -0.0, 7.25]).unwrap()).unwrap();
        s.insert("b", Tensor::from_f64([1], &[f64::from(f32::MAX)]).unwrap()).unwrap();
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let original = store();
        let bytes = encode_checkpoint(&original);
        let mut copy = store();
        copy.get_mut(copy.id("b").unwrap()).data_mut()[0] = 0.0;
        decode_checkpoint(&bytes).unwrap().load_into(&mut copy).unwrap();
        let bits = |s: &ParamStore<f32>| s.iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>();
        assert_eq!(bits(&copy), bits(&original));
        assert_eq!(encode_checkpoint(&copy), bytes);
    }

    #[test]
    fn double_precision_round_trip() {
        let mut s = ParamStore::<f64>::new();
        s.insert("x", Tensor::from_f64([3], &[1.0 / 3.0, -2e-300, 5.0]).unwrap()).unwrap();
        let ck = decode_checkpoint(&encode_checkpoint(&s)).unwrap();
        assert_eq!(ck.precision, Precision::F64);
        assert_eq!(ck.entries[0].values, vec![1.0 / 3.0, -2e-300, 5.0]);
    }

    #[test]
    fn mismatches_name_the_parameter() {
        let bytes = encode_checkpoint(&store());
        let mut other = ParamStore::<f32>::new();
        other.insert("a.w", Tensor::zeros([3, 2])).unwrap();
        other.insert("b", Tensor::zeros([1])).unwrap();
        let err = decode_checkpoint(&bytes).unwrap().load_into(&mut other).unwrap_err().to_string();
        assert!(err.contains("`a.w`"), "{err}");

        let mut missing = ParamStore::<f32>::new();
        missing.insert("a.w", Tensor::zeros([2, 3])).unwrap();
        missing.insert("b", Tensor::zeros([1])).unwrap();
        missing.insert("c", Tensor::zeros([1])).unwrap();
        let err = decode_checkpoint(&bytes).unwrap().load_into(&mut missing).unwrap_err().to_string();
        assert!(err.contains("`c`"), "{err}");
    }

    #[test]
    fn corrupt_files() {
        let bytes = encode_checkpoint(&store());
        assert!(matches!(decode_checkpoint(b"NOPE"), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 1]), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[5] = 9;
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format { offset: 5, .. })));
    }
}
