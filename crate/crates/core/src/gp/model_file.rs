//! Model file: one JSON header line, then little-endian f64 payload of
//! the training features (row-major), targets, the packed lower Cholesky
//! factor (column by column, diagonal down) and `alpha`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FitReport, TrainedEstimator};
use crate::artifact::Header;
use crate::encoder::FeatureMatrix;
use crate::error::{Error, Result};
use crate::kernel::KernelConfig;

pub const MODEL_KIND: &str = "model";
const MAX_HEADER_BYTES: usize = 1 << 22;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHeader {
    pub header: Header,
    pub kernel: KernelConfig,
    pub layout_hash: String,
    pub n: usize,
    pub d_enc: usize,
    pub fit: FitReport,
}

fn put(w: &mut impl Write, v: &[f64]) -> Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_model<W: Write>(mut w: W, header: &Header, est: &TrainedEstimator) -> Result<()> {
    let n = est.n();
    let mh = ModelHeader {
        header: Header {
            kind: MODEL_KIND.into(),
            ..header.clone()
        },
        kernel: est.config.clone(),
        layout_hash: est.layout_hash.clone(),
        n,
        d_enc: est.x.d(),
        fit: est.report.clone(),
    };
    serde_json::to_writer(&mut w, &mh)?;
    w.write_all(b"\n")?;
    put(&mut w, est.x.as_slice())?;
    put(&mut w, &est.y_log)?;
    for j in 0..n {
        put(&mut w, &est.chol[j * n + j..(j + 1) * n])?;
    }
    put(&mut w, &est.alpha)?;
    w.flush()?;
    Ok(())
}

fn header_line<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let mut line = Vec::new();
    let mut b = [0u8; 1];
    loop {
        if r.read(&mut b)? == 0 {
            return Err(Error::format("model file", "missing header line"));
        }
        if b[0] == b'\n' {
            return Ok(line);
        }
        line.push(b[0]);
        if line.len() > MAX_HEADER_BYTES {
            return Err(Error::format("model file", "header line too long"));
        }
    }
}

pub fn read_model<R: Read>(mut r: R) -> Result<(ModelHeader, TrainedEstimator)> {
    let line = header_line(&mut r)?;
    let mh: ModelHeader =
        serde_json::from_slice(&line).map_err(|e| Error::format("model file", format!("header: {e}")))?;
    mh.header.expect_kind(MODEL_KIND)?;
    mh.kernel.validate()?;
    let (n, d) = (mh.n, mh.d_enc);
    if n == 0 || d == 0 {
        return Err(Error::format("model file", "empty model"));
    }
    let words = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_add(n.checked_mul(n.checked_add(1)?)? / 2))
        .and_then(|w| w.checked_add(2 * n))
        .and_then(|w| w.checked_mul(8))
        .ok_or_else(|| Error::format("model file", "declared size overflows"))?;
    let mut payload = Vec::new();
    r.take(words as u64 + 1).read_to_end(&mut payload)?;
    if payload.len() != words {
        return Err(Error::format(
            "model file",
            format!("payload is {} bytes, header declares {words}", payload.len()),
        ));
    }
    let vals: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::format("model file", "non-finite value in payload"));
    }
    let (xs, rest) = vals.split_at(n * d);
    let (y, rest) = rest.split_at(n);
    let (packed, alpha) = rest.split_at(rest.len() - n);
    let mut chol = vec![0.0; n * n];
    let mut at = 0;
    for j in 0..n {
        let len = n - j;
        chol[j * n + j..(j + 1) * n].copy_from_slice(&packed[at..at + len]);
        at += len;
    }
    if (0..n).any(|i| chol[i * n + i] <= 0.0) {
        return Err(Error::format("model file", "Cholesky factor has a non-positive diagonal"));
    }
    let est = TrainedEstimator {
        config: mh.kernel.clone(),
        layout_hash: mh.layout_hash.clone(),
        x: FeatureMatrix::from_vec(d, xs.to_vec())?,
        y_log: y.to_vec(),
        chol,
        alpha: alpha.to_vec(),
        report: mh.fit.clone(),
    };
    Ok((mh, est))
}

pub fn save(path: impl AsRef<Path>, header: &Header, est: &TrainedEstimator) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_model(BufWriter::new(f), header, est)
}

pub fn load(path: impl AsRef<Path>) -> Result<(ModelHeader, TrainedEstimator)> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(BufReader::new(f))
}
