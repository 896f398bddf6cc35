//! Embedding batch files.
//!
//! Binary layout: a little-endian `u32` dimension, followed by rows of
//! little-endian `f64` values, `dim` per row. CSV layout: one embedding per
//! line, comma-separated, no header. Rows are L2-normalized on load.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::embedding::{Embedding, EmbeddingError};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed embedding file: {0}")]
    Malformed(String),
    #[error("row {row}: {source}")]
    Row {
        row: usize,
        #[source]
        source: EmbeddingError,
    },
}

pub fn encode_binary(rows: &[Vec<f64>]) -> Vec<u8> {
    let dim = rows.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(4 + rows.len() * dim * 8);
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for row in rows {
        assert_eq!(row.len(), dim, "ragged rows");
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_binary(bytes: &[u8]) -> Result<Vec<Vec<f64>>, FormatError> {
    let header: [u8; 4] = bytes
        .get(..4)
        .and_then(|h| h.try_into().ok())
        .ok_or_else(|| FormatError::Malformed("missing dimension header".into()))?;
    let dim = u32::from_le_bytes(header) as usize;
    if dim == 0 {
        return Err(FormatError::Malformed("zero dimension".into()));
    }
    let body = &bytes[4..];
    let row_bytes = dim * 8;
    if !body.len().is_multiple_of(row_bytes) {
        return Err(FormatError::Malformed(format!(
            "{} payload bytes is not a multiple of {row_bytes}",
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(row_bytes)
        .map(|row| {
            row.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect()
        })
        .collect())
}

pub fn decode_csv(text: &str) -> Result<Vec<Vec<f64>>, FormatError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| FormatError::Malformed(e.to_string()))?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| FormatError::Malformed(format!("row {i}: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    if let Some(first) = rows.first() {
        if rows.iter().any(|r| r.len() != first.len()) {
            return Err(FormatError::Malformed("ragged rows".into()));
        }
    }
    Ok(rows)
}

fn to_embeddings(rows: Vec<Vec<f64>>) -> Result<Vec<Embedding<f64>>, FormatError> {
    rows.into_iter()
        .enumerate()
        .map(|(row, v)| Embedding::normalized(v).map_err(|source| FormatError::Row { row, source }))
        .collect()
}

/// Reads embeddings, choosing CSV for a `.csv` extension and binary otherwise.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Vec<Embedding<f64>>, FormatError> {
    let path = path.as_ref();
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let rows = if is_csv {
        decode_csv(&fs::read_to_string(path)?)?
    } else {
        decode_binary(&fs::read(path)?)?
    };
    to_embeddings(rows)
}

pub fn write_embeddings_binary(
    path: impl AsRef<Path>,
    embeddings: &[Embedding<f64>],
) -> Result<(), FormatError> {
    let rows: Vec<Vec<f64>> = embeddings.iter().map(|e| e.values().to_vec()).collect();
    fs::write(path, encode_binary(&rows))?;
    Ok(())
}
