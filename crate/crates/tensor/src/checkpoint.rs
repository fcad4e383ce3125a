//! Named parameter sets and their binary checkpoint encoding.
//!
//! Layout (little-endian): the magic bytes `GWT1`, then one record per
//! parameter until end of file:
//! `u32 name_len | name (UTF-8) | u32 rank | rank x u64 dims | f64 payload`.

use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"GWT1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint: bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("truncated checkpoint record for {0:?}")]
    Truncated(String),
    #[error("parameter name is not valid UTF-8")]
    BadName,
    #[error("implausible record: {0}")]
    Corrupt(String),
    #[error("missing parameter {0:?}")]
    Missing(String),
    #[error("parameter {name:?} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
}

/// Ordered `name -> tensor` map. Iteration order is insertion order, which
/// is also the on-disk record order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T: Scalar = f64> {
    params: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.params.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.params.shift_remove(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore { params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    /// Checks that `self` has exactly the names and shapes of `reference`.
    pub fn check_layout<U: Scalar>(&self, reference: &ParamStore<U>) -> Result<(), CheckpointError> {
        for (name, t) in reference.iter() {
            match self.get(name) {
                None => return Err(CheckpointError::Missing(name.clone())),
                Some(mine) if mine.shape() != t.shape() => {
                    return Err(CheckpointError::ShapeMismatch {
                        name: name.clone(),
                        expected: t.shape().to_vec(),
                        found: mine.shape().to_vec(),
                    })
                }
                _ => {}
            }
        }
        if let Some(extra) = self.names().find(|n| !reference.contains(n)) {
            return Err(CheckpointError::Corrupt(format!("unexpected parameter {:?}", extra)));
        }
        Ok(())
    }
}

impl ParamStore<f64> {
    pub fn write_to(&self, mut w: impl Write) -> Result<(), CheckpointError> {
        w.write_all(MAGIC)?;
        for (name, t) in &self.params {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        Self::read_from(bytes)
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor { buf: &bytes, pos: 0 };
        let magic: [u8; 4] = cur.take(4).ok_or(CheckpointError::BadMagic([0; 4]))?.try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let mut store = ParamStore::new();
        while !cur.done() {
            let name_len = cur.u32().ok_or_else(|| CheckpointError::Truncated(String::new()))? as usize;
            let name_bytes = cur.take(name_len).ok_or_else(|| CheckpointError::Truncated(String::new()))?;
            let name = String::from_utf8(name_bytes.to_vec()).map_err(|_| CheckpointError::BadName)?;
            let trunc = || CheckpointError::Truncated(name.clone());
            let rank = cur.u32().ok_or_else(trunc)? as usize;
            if rank > 8 {
                return Err(CheckpointError::Corrupt(format!("{:?} has rank {}", name, rank)));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(cur.u64().ok_or_else(trunc)? as usize);
            }
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n.filter(|&n| n.checked_mul(8).is_some_and(|b| b <= cur.remaining())).ok_or_else(trunc)?;
            let payload = cur.take(n * 8).ok_or_else(trunc)?;
            let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            store.insert(name, Tensor::new(shape, data).expect("length checked"));
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn done(&self) -> bool {
        self.pos >= self.buf.len()
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}
