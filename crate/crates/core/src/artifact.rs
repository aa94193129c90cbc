//! JSONL artifacts with a leading header line.
//!
//! Every file the pipeline writes starts with `{"header": {...}}` naming
//! the artifact kind, the effective config of the stage that produced it
//! and the hash chain back to the catalog. Records follow one per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub stage: String,
    pub hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub kind: String,
    pub version: u32,
    /// Effective config of the producing stage.
    pub config: serde_json::Value,
    pub chain: Vec<Link>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    header: Header,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a serializable value's compact JSON form.
pub fn json_hash<T: Serialize>(value: &T) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(value)?))
}

impl Header {
    /// Header for a stage whose inputs carry `upstream`. The new link hashes
    /// this stage's config together with the previous link.
    pub fn derive<C: Serialize>(kind: &str, stage: &str, config: &C, upstream: &[Link]) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        let prev = upstream.last().map(|l| l.hash.as_str()).unwrap_or("");
        let hash = sha256_hex(format!("{prev}\n{stage}\n{}", serde_json::to_string(&config)?).as_bytes());
        let mut chain = upstream.to_vec();
        chain.push(Link { stage: stage.into(), hash });
        Ok(Header {
            kind: kind.into(),
            version: FORMAT_VERSION,
            config,
            chain,
        })
    }

    /// Chain root for artifacts derived from a catalog.
    pub fn catalog_root(catalog_hash: &str) -> Vec<Link> {
        vec![Link {
            stage: "catalog".into(),
            hash: catalog_hash.into(),
        }]
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::format(
                "artifact",
                format!("expected a {kind} artifact, file holds {}", self.kind),
            ));
        }
        if self.version != FORMAT_VERSION {
            return Err(Error::Version {
                what: "artifact",
                found: self.version,
                expected: FORMAT_VERSION,
            });
        }
        Ok(())
    }

    pub fn catalog_hash(&self) -> Option<&str> {
        self.chain.first().filter(|l| l.stage == "catalog").map(|l| l.hash.as_str())
    }
}

pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, header: Option<&Header>, records: &[T]) -> Result<()> {
    if let Some(h) = header {
        serde_json::to_writer(&mut w, &HeaderLine { header: h.clone() })?;
        w.write_all(b"\n")?;
    }
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads records, taking the first non-blank line as the header when it
/// has the header shape. Blank lines are skipped.
pub fn read_jsonl<R: Read, T: DeserializeOwned>(r: R) -> Result<(Option<Header>, Vec<T>)> {
    let mut header = None;
    let mut out = Vec::new();
    let mut first = true;
    for (lineno, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if first {
            first = false;
            if line.trim_start().starts_with("{\"header\"") {
                let h: HeaderLine = serde_json::from_str(&line)
                    .map_err(|e| Error::format("header", format!("line {}: {e}", lineno + 1)))?;
                header = Some(h.header);
                continue;
            }
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::format("jsonl record", format!("line {}: {e}", lineno + 1)))?;
        out.push(rec);
    }
    Ok((header, out))
}

pub fn save_jsonl<T: Serialize>(path: impl AsRef<Path>, header: Option<&Header>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_jsonl(BufWriter::new(f), header, records)
}

pub fn load_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<(Option<Header>, Vec<T>)> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(f)
}
