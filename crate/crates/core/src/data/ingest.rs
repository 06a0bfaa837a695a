//! Reader and writer for `ICLEMB1` embedding files.
//!
//! Layout (little-endian, no padding): the 8 magic bytes `ICLEMB1\0`, a `u32`
//! row count, a `u32` dimension, then one record per row made of `d` `f32`
//! values followed by the label byte and the spurious byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DataSource, DatasetMeta, Example};
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"ICLEMB1\0";

const HEADER_LEN: usize = 16;

pub fn write_embeddings(path: impl AsRef<Path>, examples: &[Example]) -> Result<()> {
    let path = path.as_ref();
    let d = examples.first().map_or(0, Example::dim);
    if let Some(bad) = examples.iter().find(|e| e.dim() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad.dim() });
    }
    let mut buf = Vec::with_capacity(HEADER_LEN + examples.len() * (4 * d + 2));
    buf.extend_from_slice(EMBEDDING_MAGIC);
    buf.extend_from_slice(&(examples.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    for e in examples {
        for v in &e.x {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.push(e.y);
        buf.push(e.s);
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn ingest_embeddings(path: impl AsRef<Path>) -> Result<(DatasetMeta, Vec<Example>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&bytes)
}

pub(crate) fn parse_embeddings(bytes: &[u8]) -> Result<(DatasetMeta, Vec<Example>)> {
    if bytes.len() < 8 || &bytes[..8] != EMBEDDING_MAGIC {
        return Err(Error::Format("bad magic, expected ICLEMB1".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format("truncated header".into()));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if d == 0 {
        return Err(Error::Format("zero embedding dimension".into()));
    }
    let record = 4 * d + 2;
    let payload = &bytes[HEADER_LEN..];
    let expected = n * record;
    if payload.len() < expected {
        return Err(Error::Format(format!(
            "truncated payload: {} bytes for {} rows of dimension {}",
            payload.len(),
            n,
            d
        )));
    }
    if payload.len() > expected {
        // Extra bytes mean the declared dimension does not describe the rows.
        let rows_d = (payload.len() / n).saturating_sub(2) / 4;
        return Err(Error::DimensionMismatch { expected: d, got: rows_d });
    }

    let mut examples = Vec::with_capacity(n);
    for (row, chunk) in payload.chunks_exact(record).enumerate() {
        let x: Vec<f32> = chunk[..4 * d].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("row {row} has a non-finite value")));
        }
        let y = chunk[4 * d];
        let s = chunk[4 * d + 1];
        if y > 1 || s > 1 {
            return Err(Error::Format(format!("row {row}: label/spurious bytes must be 0 or 1, got ({y}, {s})")));
        }
        examples.push(Example::new(x, y, s));
    }
    let meta = DatasetMeta::from_embeddings(d, DataSource::Ingested, examples.iter().map(|e| e.x.as_slice()));
    Ok((meta, examples))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_rows() -> Vec<Example> {
        vec![Example::new(vec![1.0, 0.0, 0.0, 0.0], 0, 0), Example::new(vec![0.0, 3.0, 4.0, 0.0], 1, 1)]
    }

    fn encode(examples: &[Example]) -> Vec<u8> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.bin");
        write_embeddings(&p, examples).unwrap();
        fs::read(&p).unwrap()
    }

    #[test]
    fn two_row_file() {
        let bytes = encode(&two_rows());
        assert_eq!(bytes.len(), 16 + 2 * 18);
        let (meta, ex) = parse_embeddings(&bytes).unwrap();
        assert_eq!(meta.d, 4);
        assert_eq!(meta.n_examples, 2);
        assert_eq!(ex.iter().map(|e| e.g).collect::<Vec<_>>(), vec![0, 3]);
        assert!((meta.avg_norm - 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_payload_is_an_error() {
        let mut bytes = EMBEDDING_MAGIC.to_vec();
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(&4u32.to_le_bytes());
        let err = parse_embeddings(&bytes).unwrap_err();
        assert_eq!(err.to_string(), "empty dataset");
    }

    #[test]
    fn malformed_files() {
        let good = encode(&two_rows());
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(parse_embeddings(&bad_magic), Err(Error::Format(_))));

        let truncated = &good[..good.len() - 1];
        assert!(matches!(parse_embeddings(truncated), Err(Error::Format(_))));

        let mut extra = good.clone();
        extra.extend_from_slice(&[0u8; 8]);
        assert!(matches!(parse_embeddings(&extra), Err(Error::DimensionMismatch { .. })));

        let mut bad_label = good.clone();
        bad_label[16 + 16] = 2;
        assert!(matches!(parse_embeddings(&bad_label), Err(Error::Format(_))));
    }

    #[test]
    fn ragged_rows_cannot_be_written() {
        let rows = vec![Example::new(vec![1.0; 4], 0, 0), Example::new(vec![1.0; 5], 1, 0)];
        let dir = tempfile::tempdir().unwrap();
        assert!(write_embeddings(dir.path().join("r.bin"), &rows).is_err());
    }
}
