//! Fixed-length query featurization.
//!
//! Every attribute in the catalog owns a segment, in catalog order, followed
//! by one 3-bit segment per registered join pair. Numerical attributes map
//! their range to two normalized bounds; categorical attributes use a
//! bitmap over the sorted domain, or above a size threshold the bitmap cut
//! into `s`-bit chunks read as integers.

mod store;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::artifact::json_hash;
use crate::error::{Error, Result};
use crate::oracle::{Filter, Query, QueryRecord};
use crate::relstore::{AttrRef, ColumnType, SchemaCatalog};

pub use store::{load_matrix, read_matrix, save_matrix, write_matrix, EncodedRecord, MatrixHeader, MATRIX_KIND};

pub const DEFAULT_CHUNK_SIZE: usize = 8;
pub const DEFAULT_BITMAP_THRESHOLD: usize = 16;
/// Chunks wider than this would not hold exact integers after scaling.
pub const MAX_CHUNK_SIZE: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodingOptions {
    #[serde(default = "default_chunk")]
    pub chunk_size: usize,
    #[serde(default = "default_threshold")]
    pub bitmap_threshold: usize,
    /// Rescale factorized slots into [0, 1].
    #[serde(default = "default_true")]
    pub normalize: bool,
}

fn default_chunk() -> usize {
    DEFAULT_CHUNK_SIZE
}
fn default_threshold() -> usize {
    DEFAULT_BITMAP_THRESHOLD
}
fn default_true() -> bool {
    true
}

impl Default for EncodingOptions {
    fn default() -> Self {
        EncodingOptions {
            chunk_size: DEFAULT_CHUNK_SIZE,
            bitmap_threshold: DEFAULT_BITMAP_THRESHOLD,
            normalize: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmentKind {
    Range { min: f64, max: f64 },
    Bitmap { domain: Vec<String> },
    Factorized { domain: Vec<String>, slots: usize, chunk: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub attr: AttrRef,
    pub offset: usize,
    pub width: usize,
    #[serde(flatten)]
    pub kind: SegmentKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JoinSegment {
    pub left: AttrRef,
    pub right: AttrRef,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingLayout {
    pub options: EncodingOptions,
    pub segments: Vec<Segment>,
    /// One per catalog join pair, in the catalog's pair order.
    pub joins: Vec<JoinSegment>,
    pub d_enc: usize,
    pub hash: String,
}

#[derive(Serialize)]
struct HashView<'a> {
    options: &'a EncodingOptions,
    segments: &'a [Segment],
    joins: &'a [JoinSegment],
    d_enc: usize,
}

pub fn build_layout(catalog: &SchemaCatalog, options: &EncodingOptions) -> Result<EncodingLayout> {
    let s = options.chunk_size;
    if s == 0 || s > MAX_CHUNK_SIZE {
        return Err(Error::InvalidArgument(format!(
            "chunk size {s} outside [1, {MAX_CHUNK_SIZE}]"
        )));
    }
    let mut offset = 0;
    let mut segments = Vec::new();
    for (attr, col) in catalog.attributes() {
        let (kind, width) = match &col.ctype {
            ColumnType::Numerical { min, max } => (SegmentKind::Range { min: *min, max: *max }, 2),
            ColumnType::Categorical { domain } if domain.len() <= options.bitmap_threshold => {
                (SegmentKind::Bitmap { domain: domain.clone() }, domain.len())
            }
            ColumnType::Categorical { domain } => {
                let slots = domain.len().div_ceil(s);
                (
                    SegmentKind::Factorized {
                        domain: domain.clone(),
                        slots,
                        chunk: s,
                    },
                    slots,
                )
            }
        };
        segments.push(Segment { attr, offset, width, kind });
        offset += width;
    }
    let mut joins = Vec::new();
    for p in catalog.join_pairs() {
        joins.push(JoinSegment {
            left: p.left.clone(),
            right: p.right.clone(),
            offset,
        });
        offset += 3;
    }
    let hash = json_hash(&HashView {
        options,
        segments: &segments,
        joins: &joins,
        d_enc: offset,
    })?;
    Ok(EncodingLayout {
        options: options.clone(),
        segments,
        joins,
        d_enc: offset,
        hash,
    })
}

impl EncodingLayout {
    /// Recomputes the hash and checks segment geometry; used after loading.
    pub fn verify(&self) -> Result<()> {
        if self.segments.windows(2).any(|w| w[0].attr >= w[1].attr) {
            return Err(Error::format("layout", "segments are not in catalog order"));
        }
        let mut at = 0;
        for seg in &self.segments {
            let ok_width = match &seg.kind {
                SegmentKind::Range { min, max } => seg.width == 2 && min <= max,
                SegmentKind::Bitmap { domain } => seg.width == domain.len(),
                SegmentKind::Factorized { domain, slots, chunk } => {
                    *chunk == self.options.chunk_size && *slots == domain.len().div_ceil(*chunk) && seg.width == *slots
                }
            };
            if seg.offset != at || !ok_width {
                return Err(Error::format("layout", format!("segment for {} is malformed", seg.attr)));
            }
            at += seg.width;
        }
        for j in &self.joins {
            if j.offset != at {
                return Err(Error::format("layout", "join segment offsets are not contiguous"));
            }
            at += 3;
        }
        if at != self.d_enc {
            return Err(Error::format("layout", "segments do not cover d_enc"));
        }
        let hash = json_hash(&HashView {
            options: &self.options,
            segments: &self.segments,
            joins: &self.joins,
            d_enc: self.d_enc,
        })?;
        if hash != self.hash {
            return Err(Error::LayoutMismatch {
                expected: self.hash.clone(),
                got: hash,
            });
        }
        Ok(())
    }

    pub fn segment(&self, attr: &AttrRef) -> Option<&Segment> {
        self.segments
            .binary_search_by(|s| s.attr.cmp(attr))
            .ok()
            .map(|i| &self.segments[i])
    }
}

fn bitmap(domain: &[String], values: &[String]) -> Result<Vec<bool>> {
    let mut bits = vec![false; domain.len()];
    for v in values {
        let i = domain
            .binary_search(v)
            .map_err(|_| Error::InvalidQuery(format!("value {v:?} outside the attribute domain")))?;
        bits[i] = true;
    }
    Ok(bits)
}

/// Packs bits into `s`-bit integers, first bit most significant; a short
/// last chunk is padded with zeros on the right.
pub fn factorize(bits: &[bool], s: usize) -> Vec<f64> {
    bits.chunks(s)
        .map(|c| {
            let mut v: u64 = 0;
            for i in 0..s {
                v = (v << 1) | u64::from(c.get(i).copied().unwrap_or(false));
            }
            v as f64
        })
        .collect()
}

/// Raw (unnormalized) encoding of one query. Attributes without a
/// selection encode as "no constraint": the full interval or all ones.
pub fn encode(query: &Query, layout: &EncodingLayout) -> Result<Vec<f64>> {
    let mut x = vec![0.0; layout.d_enc];
    let mut filters: BTreeMap<&AttrRef, &Filter> = BTreeMap::new();
    for s in &query.selections {
        if layout.segment(&s.attr).is_none() {
            return Err(Error::UnknownAttribute(s.attr.to_string()));
        }
        filters.insert(&s.attr, &s.filter);
    }
    for seg in &layout.segments {
        let out = &mut x[seg.offset..seg.offset + seg.width];
        let f = filters.get(&seg.attr).copied();
        match (&seg.kind, f) {
            (SegmentKind::Range { min, max }, f) => {
                let (lb, ub) = match f {
                    None => (0.0, 1.0),
                    Some(Filter::Range(..)) if max <= min => (0.0, 1.0),
                    Some(Filter::Range(lb, ub)) => ((lb - min) / (max - min), (ub - min) / (max - min)),
                    Some(Filter::In(_)) => {
                        return Err(Error::TypeMismatch(format!("IN filter on numerical {}", seg.attr)))
                    }
                };
                out[0] = lb;
                out[1] = ub;
            }
            (SegmentKind::Bitmap { domain } | SegmentKind::Factorized { domain, .. }, f) => {
                let bits = match f {
                    None => vec![true; domain.len()],
                    Some(Filter::In(values)) => bitmap(domain, values)?,
                    Some(Filter::Range(..)) => {
                        return Err(Error::TypeMismatch(format!("range filter on categorical {}", seg.attr)))
                    }
                };
                match &seg.kind {
                    SegmentKind::Factorized { chunk, .. } => out.copy_from_slice(&factorize(&bits, *chunk)),
                    _ => {
                        for (o, b) in out.iter_mut().zip(bits) {
                            *o = f64::from(u8::from(b));
                        }
                    }
                }
            }
        }
    }
    for jc in &query.joins {
        let seg = layout.joins.get(jc.pair).ok_or_else(|| {
            Error::InvalidQuery(format!("join pair {} not in the layout", jc.pair))
        })?;
        let bits = [
            jc.op.holds(std::cmp::Ordering::Less),
            jc.op.holds(std::cmp::Ordering::Equal),
            jc.op.holds(std::cmp::Ordering::Greater),
        ];
        for (k, b) in bits.into_iter().enumerate() {
            x[seg.offset + k] = f64::from(u8::from(b));
        }
    }
    Ok(x)
}

fn rescale_factorized(x: &mut FeatureMatrix, layout: &EncodingLayout, forward: bool) {
    let scales: Vec<(usize, usize, f64)> = layout
        .segments
        .iter()
        .filter_map(|s| match s.kind {
            SegmentKind::Factorized { chunk, .. } => Some((s.offset, s.width, ((1u64 << chunk) - 1) as f64)),
            _ => None,
        })
        .collect();
    for i in 0..x.n() {
        let row = x.row_mut(i);
        for &(off, w, scale) in &scales {
            for v in &mut row[off..off + w] {
                *v = if forward { *v / scale } else { (*v * scale).round() };
            }
        }
    }
}

/// Rescales factorized slots by `1 / (2^s - 1)` into [0, 1].
pub fn normalize_features(x: &mut FeatureMatrix, layout: &EncodingLayout) {
    rescale_factorized(x, layout, true);
}

/// Inverse of [`normalize_features`].
pub fn denormalize_features(x: &mut FeatureMatrix, layout: &EncodingLayout) {
    rescale_factorized(x, layout, false);
}

/// Row-major feature matrix: query `i` occupies `data[i*d .. (i+1)*d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    d: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(d: usize) -> Self {
        FeatureMatrix { d, data: Vec::new() }
    }

    pub fn from_vec(d: usize, data: Vec<f64>) -> Result<Self> {
        if d == 0 && !data.is_empty() || d > 0 && data.len() % d != 0 {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: data.len(),
            });
        }
        Ok(FeatureMatrix { d, data })
    }

    pub fn from_rows(d: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut m = FeatureMatrix::new(d);
        for r in rows {
            m.push(r)?;
        }
        Ok(m)
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        if self.d == 0 {
            0
        } else {
            self.data.len() / self.d
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Rows at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix { d: self.d, data }
    }

    pub fn append(&mut self, other: &FeatureMatrix) -> Result<()> {
        if other.d != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: other.d,
            });
        }
        self.data.extend_from_slice(&other.data);
        Ok(())
    }
}

/// Encoded queries with their labels, tied to one layout.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedBatch {
    pub layout_hash: String,
    pub ids: Vec<u64>,
    pub x: FeatureMatrix,
    /// Absent for unlabeled queries.
    pub cardinality: Vec<Option<u64>>,
    pub n_conditions: Vec<usize>,
}

impl EncodedBatch {
    pub fn empty(layout_hash: &str, d: usize) -> Self {
        EncodedBatch {
            layout_hash: layout_hash.into(),
            ids: Vec::new(),
            x: FeatureMatrix::new(d),
            cardinality: Vec::new(),
            n_conditions: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.cardinality.iter().all(Option::is_some)
    }

    /// Natural-log targets; errors on unlabeled or zero-cardinality rows.
    pub fn y_log(&self) -> Result<Vec<f64>> {
        self.cardinality
            .iter()
            .zip(&self.ids)
            .map(|(c, id)| match c {
                Some(c) if *c > 0 => Ok((*c as f64).ln()),
                Some(_) => Err(Error::InvalidArgument(format!("query {id} has cardinality 0"))),
                None => Err(Error::InvalidArgument(format!("query {id} is unlabeled"))),
            })
            .collect()
    }

    pub fn select(&self, idx: &[usize]) -> EncodedBatch {
        EncodedBatch {
            layout_hash: self.layout_hash.clone(),
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
            x: self.x.select(idx),
            cardinality: idx.iter().map(|&i| self.cardinality[i]).collect(),
            n_conditions: idx.iter().map(|&i| self.n_conditions[i]).collect(),
        }
    }

    pub fn append(&mut self, other: &EncodedBatch) -> Result<()> {
        if other.layout_hash != self.layout_hash {
            return Err(Error::LayoutMismatch {
                expected: self.layout_hash.clone(),
                got: other.layout_hash.clone(),
            });
        }
        self.x.append(&other.x)?;
        self.ids.extend_from_slice(&other.ids);
        self.cardinality.extend_from_slice(&other.cardinality);
        self.n_conditions.extend_from_slice(&other.n_conditions);
        Ok(())
    }

    /// Pairs of rows with identical vectors.
    pub fn collisions(&self) -> Vec<(usize, usize)> {
        let mut seen: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
        let mut out = Vec::new();
        for i in 0..self.len() {
            let key: Vec<u64> = self.x.row(i).iter().map(|v| v.to_bits()).collect();
            match seen.get(&key) {
                Some(&j) => out.push((j, i)),
                None => {
                    seen.insert(key, i);
                }
            }
        }
        out
    }
}

/// Encodes labeled or unlabeled records, applying the layout's
/// normalization setting.
pub fn encode_batch(records: &[QueryRecord], layout: &EncodingLayout) -> Result<EncodedBatch> {
    let mut batch = EncodedBatch::empty(&layout.hash, layout.d_enc);
    for (i, r) in records.iter().enumerate() {
        let x = encode(&r.query, layout).map_err(|e| Error::InBatch {
            index: i,
            source: Box::new(e),
        })?;
        batch.x.push(&x)?;
        batch.ids.push(r.id);
        batch.cardinality.push(r.cardinality);
        batch.n_conditions.push(r.query.n_conditions());
    }
    if layout.options.normalize {
        normalize_features(&mut batch.x, layout);
    }
    Ok(batch)
}
