use std::collections::BTreeMap;
use std::path::Path;

use super::Matrix;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HCMDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_NAME_LEN: usize = 256;

/// Named parameter arrays, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    arrays: BTreeMap<String, Matrix>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        self.arrays.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.arrays.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.arrays.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Matrix)> {
        self.arrays.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Matrix)> {
        self.arrays.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.arrays.keys()
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.arrays.values().map(Matrix::len).sum()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            arrays: self
                .arrays
                .iter()
                .map(|(k, v)| (k.clone(), Matrix::zeros(v.rows(), v.cols())))
                .collect(),
        }
    }

    /// Arrays whose names start with `prefix`, with the prefix kept.
    pub fn subset(&self, prefix: &str) -> ParamSet {
        ParamSet {
            arrays: self
                .arrays
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn extend(&mut self, other: ParamSet) {
        self.arrays.extend(other.arrays);
    }

    /// All values concatenated in name order, each array row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_values());
        for m in self.arrays.values() {
            out.extend_from_slice(m.data());
        }
        out
    }

    /// Overwrites every value from a flat vector laid out like [`to_flat`].
    ///
    /// [`to_flat`]: ParamSet::to_flat
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_values() {
            return Err(Error::shape(
                "set_flat",
                format!("{} values for {} parameters", flat.len(), self.num_values()),
            ));
        }
        let mut offset = 0;
        for m in self.arrays.values_mut() {
            let n = m.len();
            m.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) -> Result<()> {
        for (name, m) in self.arrays.iter_mut() {
            let o = other
                .get(name)
                .ok_or_else(|| Error::shape("add_scaled", format!("missing `{name}`")))?;
            if o.shape() != m.shape() {
                return Err(Error::shape("add_scaled", format!("`{name}` shape differs")));
            }
            for (a, b) in m.data_mut().iter_mut().zip(o.data()) {
                *a += scale * b;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for m in self.arrays.values_mut() {
            m.scale_assign(s);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.arrays
            .values()
            .flat_map(|m| m.data().iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.arrays.values().all(Matrix::is_finite)
    }

    /// Serializes to the checkpoint container: an 8-byte magic, a format
    /// version, then `(name, rows, cols, row-major f64)` entries in name
    /// order. All integers and floats are little-endian.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.num_values() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, m) in &self.arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
            for x in m.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<ParamSet> {
        let mut reader = Reader { bytes, pos: 0 };
        if reader.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = reader.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = reader.u32()? as usize;
        let mut arrays = BTreeMap::new();
        for _ in 0..count {
            let name_len = reader.u32()? as usize;
            if name_len == 0 || name_len > MAX_NAME_LEN {
                return Err(Error::Checkpoint(format!("name length {name_len}")));
            }
            let name = std::str::from_utf8(reader.take(name_len)?)
                .map_err(|_| Error::Checkpoint("name is not utf-8".into()))?
                .to_string();
            let rows = reader.u32()? as usize;
            let cols = reader.u32()? as usize;
            let n = rows
                .checked_mul(cols)
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= reader.remaining()))
                .ok_or_else(|| Error::Checkpoint(format!("`{name}` shape {rows}x{cols} overruns input")))?;
            let raw = reader.take(n * 8)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if data.iter().any(|x| !x.is_finite()) {
                return Err(Error::Checkpoint(format!("`{name}` holds non-finite values")));
            }
            let m = Matrix::from_vec(rows, cols, data)?;
            if arrays.insert(name.clone(), m).is_some() {
                return Err(Error::Checkpoint(format!("duplicate array `{name}`")));
            }
        }
        if reader.remaining() != 0 {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                reader.remaining()
            )));
        }
        Ok(ParamSet { arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ParamSet> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        ParamSet::from_checkpoint_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Checkpoint("truncated".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
