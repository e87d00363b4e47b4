//! Binary array blobs with a JSON shape manifest.
//!
//! Arrays are stored back to back in little-endian order; each manifest entry
//! records `{name, shape, dtype, offset}` with `offset` in bytes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F64,
    I32,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::I32 => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub offset: usize,
}

impl ArrayEntry {
    fn byte_len(&self) -> usize {
        self.shape.iter().product::<usize>() * self.dtype.width()
    }
}

#[derive(Default)]
pub struct BlobWriter {
    bytes: Vec<u8>,
    entries: Vec<ArrayEntry>,
}

impl BlobWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_f64(&mut self, name: &str, shape: &[usize], data: &[f64]) {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "{name}: shape/data mismatch"
        );
        self.entries.push(ArrayEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            dtype: DType::F64,
            offset: self.bytes.len(),
        });
        for v in data {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn push_i32(&mut self, name: &str, shape: &[usize], data: &[i32]) {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "{name}: shape/data mismatch"
        );
        self.entries.push(ArrayEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            dtype: DType::I32,
            offset: self.bytes.len(),
        });
        for v in data {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn finish(self) -> (Vec<u8>, Vec<ArrayEntry>) {
        (self.bytes, self.entries)
    }
}

pub struct BlobReader<'a> {
    bytes: &'a [u8],
    entries: &'a [ArrayEntry],
}

impl<'a> BlobReader<'a> {
    pub fn new(bytes: &'a [u8], entries: &'a [ArrayEntry]) -> Result<Self> {
        for e in entries {
            if e.offset + e.byte_len() > bytes.len() {
                return Err(Error::Corrupt(format!(
                    "array {} extends past the end of the blob",
                    e.name
                )));
            }
        }
        Ok(BlobReader { bytes, entries })
    }

    pub fn entry(&self, name: &str) -> Result<&'a ArrayEntry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Manifest(format!("array {name} missing from manifest")))
    }

    pub fn f64(&self, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        let e = self.entry(name)?;
        if e.dtype != DType::F64 {
            return Err(Error::Manifest(format!("{name}: expected f64, found {:?}", e.dtype)));
        }
        let raw = &self.bytes[e.offset..e.offset + e.byte_len()];
        Ok((
            e.shape.clone(),
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ))
    }

    pub fn i32(&self, name: &str) -> Result<(Vec<usize>, Vec<i32>)> {
        let e = self.entry(name)?;
        if e.dtype != DType::I32 {
            return Err(Error::Manifest(format!("{name}: expected i32, found {:?}", e.dtype)));
        }
        let raw = &self.bytes[e.offset..e.offset + e.byte_len()];
        Ok((
            e.shape.clone(),
            raw.chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn arrays_survive_the_blob(a in proptest::collection::vec(-1e9f64..1e9, 0..50),
                                   b in proptest::collection::vec(any::<i32>(), 1..50)) {
            let mut w = BlobWriter::new();
            w.push_f64("a", &[a.len()], &a);
            w.push_i32("b", &[b.len()], &b);
            let (bytes, entries) = w.finish();
            let r = BlobReader::new(&bytes, &entries).unwrap();
            prop_assert_eq!(r.f64("a").unwrap().1, a);
            prop_assert_eq!(r.i32("b").unwrap().1, b);
        }
    }

    #[test]
    fn truncated_blob_rejected() {
        let mut w = BlobWriter::new();
        w.push_f64("a", &[4], &[1.0; 4]);
        let (bytes, entries) = w.finish();
        assert!(BlobReader::new(&bytes[..20], &entries).is_err());
    }
}
