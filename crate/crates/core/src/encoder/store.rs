//! On-disk forms of encoded batches: JSONL records and a binary matrix
//! file (one JSON header line, then little-endian payload).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncodedBatch, FeatureMatrix};
use crate::artifact::Header;
use crate::error::{Error, Result};

pub const MATRIX_KIND: &str = "encoded-matrix";
const MAX_HEADER_BYTES: usize = 1 << 20;
const UNLABELED: u64 = u64::MAX;

/// One encoded query as a JSONL line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodedRecord {
    pub query_id: u64,
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_log: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cardinality: Option<u64>,
    pub n_conditions: usize,
}

impl EncodedBatch {
    pub fn to_records(&self) -> Vec<EncodedRecord> {
        (0..self.len())
            .map(|i| EncodedRecord {
                query_id: self.ids[i],
                x: self.x.row(i).to_vec(),
                y_log: self.cardinality[i].filter(|&c| c > 0).map(|c| (c as f64).ln()),
                cardinality: self.cardinality[i],
                n_conditions: self.n_conditions[i],
            })
            .collect()
    }

    pub fn from_records(layout_hash: &str, d: usize, records: &[EncodedRecord]) -> Result<Self> {
        let mut b = EncodedBatch::empty(layout_hash, d);
        for (i, r) in records.iter().enumerate() {
            if r.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::format("encoded record", format!("record {i} has a non-finite feature")));
            }
            match (r.y_log, r.cardinality) {
                (Some(_), None) => {
                    return Err(Error::format("encoded record", format!("record {i} has y_log without cardinality")))
                }
                (Some(y), Some(c)) if c == 0 || (y - (c as f64).ln()).abs() > 1e-9 => {
                    return Err(Error::format("encoded record", format!("record {i} has y_log != ln(cardinality)")))
                }
                _ => {}
            }
            b.x.push(&r.x)?;
            b.ids.push(r.query_id);
            b.cardinality.push(r.cardinality);
            b.n_conditions.push(r.n_conditions);
        }
        Ok(b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixHeader {
    pub header: Header,
    pub layout_hash: String,
    pub d: usize,
    pub n: usize,
}

/// Writes `header` as a JSON line, then per-query ids, condition counts and
/// cardinalities (`u64::MAX` when unlabeled) as u64, then the features
/// row by row as f64, all little-endian.
pub fn write_matrix<W: Write>(mut w: W, header: &Header, batch: &EncodedBatch) -> Result<()> {
    let mh = MatrixHeader {
        header: Header {
            kind: MATRIX_KIND.into(),
            ..header.clone()
        },
        layout_hash: batch.layout_hash.clone(),
        d: batch.x.d(),
        n: batch.len(),
    };
    serde_json::to_writer(&mut w, &mh)?;
    w.write_all(b"\n")?;
    for &id in &batch.ids {
        w.write_all(&id.to_le_bytes())?;
    }
    for &k in &batch.n_conditions {
        w.write_all(&(k as u64).to_le_bytes())?;
    }
    for c in &batch.cardinality {
        w.write_all(&c.unwrap_or(UNLABELED).to_le_bytes())?;
    }
    for v in batch.x.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_header_line<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(Error::format("matrix file", "missing header line"));
        }
        if byte[0] == b'\n' {
            return Ok(line);
        }
        line.push(byte[0]);
        if line.len() > MAX_HEADER_BYTES {
            return Err(Error::format("matrix file", "header line too long"));
        }
    }
}

fn u64s(bytes: &[u8]) -> impl Iterator<Item = u64> + '_ {
    bytes.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap()))
}

pub fn read_matrix<R: Read>(mut r: R) -> Result<(MatrixHeader, EncodedBatch)> {
    let line = read_header_line(&mut r)?;
    let mh: MatrixHeader =
        serde_json::from_slice(&line).map_err(|e| Error::format("matrix file", format!("header: {e}")))?;
    mh.header.expect_kind(MATRIX_KIND)?;
    let (n, d) = (mh.n, mh.d);
    if n > 0 && d == 0 {
        return Err(Error::format("matrix file", "zero feature dimension"));
    }
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_add(n.checked_mul(3)?))
        .and_then(|words| words.checked_mul(8))
        .ok_or_else(|| Error::format("matrix file", "declared size overflows"))?;
    let mut payload = Vec::new();
    r.take(expected as u64 + 1).read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(Error::format(
            "matrix file",
            format!("payload is {} bytes, header declares {expected}", payload.len()),
        ));
    }
    let (ids, rest) = payload.split_at(8 * n);
    let (conds, rest) = rest.split_at(8 * n);
    let (cards, xs) = rest.split_at(8 * n);
    let x: Vec<f64> = u64s(xs).map(f64::from_bits).collect();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::format("matrix file", "non-finite feature value"));
    }
    let n_conditions = u64s(conds)
        .map(|k| usize::try_from(k).map_err(|_| Error::format("matrix file", "condition count overflows")))
        .collect::<Result<Vec<_>>>()?;
    let batch = EncodedBatch {
        layout_hash: mh.layout_hash.clone(),
        ids: u64s(ids).collect(),
        x: FeatureMatrix::from_vec(d, x)?,
        cardinality: u64s(cards).map(|c| (c != UNLABELED).then_some(c)).collect(),
        n_conditions,
    };
    Ok((mh, batch))
}

pub fn save_matrix(path: impl AsRef<Path>, header: &Header, batch: &EncodedBatch) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_matrix(BufWriter::new(f), header, batch)
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<(MatrixHeader, EncodedBatch)> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_matrix(BufReader::new(f))
}
