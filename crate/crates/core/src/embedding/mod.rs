//! Unit-normalized embedding storage.
//!
//! Vectors are normalized once, when they enter a [`StoreBuilder`]. A sealed
//! [`EmbeddingStore`] is immutable and `Sync`, so any number of readers can
//! share it without locking; cosine similarity between stored vectors is a
//! plain dot product.

mod assets;
mod format;
mod mock;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use assets::{read_assets, write_assets, ImageAsset, ASSET_HEADER};
pub use format::{ingest, ingest_file, write_embeddings, FORMAT_VERSION, MAGIC};
pub use mock::{mock_embed, mock_vector};

/// Stored vectors have unit norm to within this tolerance.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Text,
    Image,
}

impl fmt::Display for EmbeddingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbeddingKind::Text => "text",
            EmbeddingKind::Image => "image",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: Vec<f64>,
    pub kind: EmbeddingKind,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Cosine similarity of arbitrary (nonzero) vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a.len(), b.len())?;
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine of a zero vector".into()));
    }
    Ok(dot(a, b) / (na * nb))
}

pub(crate) fn check_dims(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Scales `v` to unit Euclidean length.
pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Degenerate(
            "vector has a non-finite component".into(),
        ));
    }
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return Err(Error::Degenerate("cannot normalize the zero vector".into()));
    }
    let direct = norm(v);
    if (direct - 1.0).abs() <= f64::EPSILON {
        // Already unit length to machine precision.
        return Ok(v.to_vec());
    }
    if direct.is_normal() && direct.is_finite() {
        return Ok(v.iter().map(|x| x / direct).collect());
    }
    // Pre-scaling by the largest magnitude keeps the sum of squares in range.
    let scaled: Vec<f64> = v.iter().map(|x| x / scale).collect();
    let n = norm(&scaled);
    Ok(scaled.into_iter().map(|x| x / n).collect())
}

/// Single-writer accumulator; [`StoreBuilder::seal`] freezes it.
#[derive(Debug)]
pub struct StoreBuilder {
    kind: EmbeddingKind,
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl StoreBuilder {
    pub fn new(kind: EmbeddingKind, dim: usize) -> Self {
        StoreBuilder {
            kind,
            dim,
            ids: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    pub fn with_capacity(kind: EmbeddingKind, dim: usize, count: usize) -> Self {
        let mut b = Self::new(kind, dim);
        b.ids.reserve(count);
        b.index.reserve(count);
        b.data.reserve(count * dim);
        b
    }

    pub fn push(&mut self, id: impl Into<String>, vector: &[f64]) -> Result<()> {
        let id = id.into();
        let ordinal = self.ids.len();
        let label = || format!("#{ordinal} (`{id}`)");
        if id.is_empty() {
            return Err(Error::ingest(format!("#{ordinal}"), "empty id"));
        }
        if vector.len() != self.dim {
            return Err(Error::ingest(
                label(),
                format!("dimension {} != store dimension {}", vector.len(), self.dim),
            ));
        }
        if let Some(pos) = vector.iter().position(|x| !x.is_finite()) {
            return Err(Error::ingest(
                label(),
                format!("non-finite component at {pos}"),
            ));
        }
        if self.index.contains_key(&id) {
            return Err(Error::ingest(label(), "duplicate id"));
        }
        let unit = normalize(vector).map_err(|e| Error::ingest(label(), e.to_string()))?;
        self.data.extend_from_slice(&unit);
        self.index.insert(id.clone(), ordinal);
        self.ids.push(id);
        Ok(())
    }

    pub fn seal(self) -> EmbeddingStore {
        EmbeddingStore {
            kind: self.kind,
            dim: self.dim,
            ids: self.ids,
            index: self.index,
            data: self.data,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    kind: EmbeddingKind,
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl EmbeddingStore {
    pub fn from_records<'a>(
        kind: EmbeddingKind,
        dim: usize,
        records: impl IntoIterator<Item = (&'a str, &'a [f64])>,
    ) -> Result<Self> {
        let mut b = StoreBuilder::new(kind, dim);
        for (id, v) in records {
            b.push(id, v)?;
        }
        Ok(b.seal())
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.vector(i))
    }

    pub fn require(&self, id: &str) -> Result<&[f64]> {
        self.get(id)
            .ok_or_else(|| Error::Argument(format!("no {} embedding with id `{id}`", self.kind)))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn id(&self, ordinal: usize) -> &str {
        &self.ids[ordinal]
    }

    pub fn vector(&self, ordinal: usize) -> &[f64] {
        &self.data[ordinal * self.dim..(ordinal + 1) * self.dim]
    }

    /// Records in ingestion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> + '_ {
        self.ids
            .iter()
            .enumerate()
            .map(move |(i, id)| (id.as_str(), self.vector(i)))
    }
}
