//! Precomputed dense embeddings in a small little-endian binary format:
//!
//! ```text
//! header:  n: u64, d: u64
//! record:  split: u8 (0 train, 1 test), label: u8, dim: u32, dim × f64
//! ```
//!
//! Each record repeats its own dimension so a mismatch is caught at the
//! offending record rather than as a misaligned read further on.

use std::fs;
use std::path::Path;

use crate::dataset::{DatasetSplit, DatasetSplits, FeatureKind, Instance, SplitKind};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub split: SplitKind,
    pub label: u8,
    pub vector: Vec<f64>,
}

pub fn encode_embeddings(dim: usize, records: &[EmbeddingRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + records.len() * (6 + 8 * dim));
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    out.extend_from_slice(&(dim as u64).to_le_bytes());
    for r in records {
        out.push(match r.split {
            SplitKind::Train => 0,
            SplitKind::Test => 1,
        });
        out.push(r.label);
        out.extend_from_slice(&(r.vector.len() as u32).to_le_bytes());
        for v in &r.vector {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_embeddings(path: &Path, dim: usize, records: &[EmbeddingRecord]) -> Result<()> {
    if let Some((i, r)) = records.iter().enumerate().find(|(_, r)| r.vector.len() != dim) {
        return Err(Error::Input(format!(
            "record {} has dimension {}, expected {dim}",
            i + 1,
            r.vector.len()
        )));
    }
    write_atomic(path, &encode_embeddings(dim, records))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let chunk = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(chunk)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Decodes records; errors cite the 1-based record number.
pub fn decode_embeddings(path: &Path, bytes: &[u8]) -> Result<(usize, Vec<EmbeddingRecord>)> {
    let bad = |record: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: record,
        message,
    };
    let mut cur = Cursor { bytes, pos: 0 };
    let (Some(n), Some(d)) = (cur.u64(), cur.u64()) else {
        return Err(bad(0, "truncated header".into()));
    };
    let (n, dim) = (n as usize, d as usize);
    let mut records = Vec::with_capacity(n.min(1 << 20));
    for i in 1..=n {
        let truncated = || bad(i, format!("record {i} is truncated"));
        let split = match cur.u8().ok_or_else(truncated)? {
            0 => SplitKind::Train,
            1 => SplitKind::Test,
            s => return Err(bad(i, format!("record {i} has unknown split code {s}"))),
        };
        let label = cur.u8().ok_or_else(truncated)?;
        if label > 1 {
            return Err(bad(i, format!("record {i} has label {label}, expected 0 or 1")));
        }
        let row_dim = cur.u32().ok_or_else(truncated)? as usize;
        if row_dim != dim {
            return Err(bad(i, format!("record {i} has dimension {row_dim}, expected {dim}")));
        }
        let vector = (0..dim).map(|_| cur.f64()).collect::<Option<Vec<_>>>().ok_or_else(truncated)?;
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(bad(i, format!("record {i} has a non-finite value")));
        }
        records.push(EmbeddingRecord { split, label, vector });
    }
    if cur.pos != bytes.len() {
        return Err(bad(n + 1, format!("{} trailing bytes after {n} records", bytes.len() - cur.pos)));
    }
    Ok((dim, records))
}

pub fn read_embeddings(path: &Path) -> Result<(usize, Vec<EmbeddingRecord>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(path, &bytes)
}

/// Dense splits with a constant-1 column appended to every vector.
pub fn embeddings_to_splits(dim: usize, records: &[EmbeddingRecord]) -> Result<DatasetSplits> {
    let split = |kind: SplitKind| {
        let instances = records
            .iter()
            .filter(|r| r.split == kind)
            .enumerate()
            .map(|(index, r)| {
                let mut x = Vec::with_capacity(dim + 1);
                x.extend_from_slice(&r.vector);
                x.push(1.0);
                Instance::new(index, x, r.label)
            })
            .collect();
        DatasetSplit::new(kind, dim + 1, instances)
    };
    Ok(DatasetSplits {
        train: split(SplitKind::Train)?,
        test: split(SplitKind::Test)?,
        feature_kind: FeatureKind::Embedding,
    })
}

pub fn load_embeddings(path: &Path) -> Result<DatasetSplits> {
    let (dim, records) = read_embeddings(path)?;
    embeddings_to_splits(dim, &records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(split: SplitKind, label: u8, vector: Vec<f64>) -> EmbeddingRecord {
        EmbeddingRecord { split, label, vector }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let records = vec![
            rec(SplitKind::Train, 1, vec![0.1, -2.5e-300, f64::MIN_POSITIVE, 3.0]),
            rec(SplitKind::Test, 0, vec![-0.0, 1e300, 7.25, -1.0 / 3.0]),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.bin");
        write_embeddings(&path, 4, &records).unwrap();
        let (dim, back) = read_embeddings(&path).unwrap();
        assert_eq!(dim, 4);
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.split, b.split);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.vector), bits(&b.vector));
        }
    }

    #[test]
    fn bias_is_appended() {
        let records: Vec<_> = (0..3).map(|i| rec(SplitKind::Train, (i % 2) as u8, vec![i as f64; 4])).collect();
        let s = embeddings_to_splits(4, &records).unwrap();
        assert_eq!(s.train.dim(), 5);
        assert_eq!(s.train.len(), 3);
        assert!(s.test.is_empty());
        assert_eq!(s.train.instances()[2].features.to_dense(), vec![2.0, 2.0, 2.0, 2.0, 1.0]);
    }

    #[test]
    fn mismatched_record_is_named() {
        let records = vec![
            rec(SplitKind::Train, 0, vec![1.0, 2.0]),
            rec(SplitKind::Train, 1, vec![1.0, 2.0, 3.0]),
        ];
        let bytes = encode_embeddings(2, &records);
        match decode_embeddings(Path::new("e.bin"), &bytes).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("record 2"));
            }
            other => panic!("{other:?}"),
        }
        assert!(write_embeddings(Path::new("/nonexistent/e.bin"), 2, &records)
            .unwrap_err()
            .to_string()
            .contains("record 2"));
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = encode_embeddings(2, &[rec(SplitKind::Train, 0, vec![1.0, 2.0])]);
        assert!(decode_embeddings(Path::new("e.bin"), &bytes[..bytes.len() - 3]).is_err());
        assert!(decode_embeddings(Path::new("e.bin"), &bytes[..5]).is_err());
    }
}
