//! Shape/pose embedding pairs, the shape database, and L2 retrieval.
//!
//! Retrieval only ever reads the shape half of an embedding; the pose half
//! is not an argument of [`ShapeDatabase::nearest_shape`].

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

/// Default dimensionality of both embedding halves.
pub const DEFAULT_EMBEDDING_DIM: usize = 512;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RetrievalError {
    #[error("database is empty")]
    EmptyDatabase,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("duplicate shape id {0:?}")]
    DuplicateId(String),
    #[error("non-finite embedding value")]
    NonFinite,
    #[error("parse error: {0}")]
    ParseError(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPair {
    pub shape: Vec<f64>,
    pub pose: Vec<f64>,
}

impl EmbeddingPair {
    pub fn zeros(shape_dim: usize, pose_dim: usize) -> Self {
        Self {
            shape: vec![0.0; shape_dim],
            pose: vec![0.0; pose_dim],
        }
    }

    pub fn len(&self) -> usize {
        self.shape.len() + self.pose.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn concat(&self) -> Vec<f64> {
        self.shape.iter().chain(&self.pose).copied().collect()
    }

    pub fn from_concat(v: &[f64], shape_dim: usize) -> Self {
        Self {
            shape: v[..shape_dim].to_vec(),
            pose: v[shape_dim..].to_vec(),
        }
    }
}

/// Mean absolute difference over the concatenated shape and pose vectors,
/// with subgradient `sign(pred − target) / len` (0 where equal).
pub fn l1_embedding_loss(
    pred: &EmbeddingPair,
    target: &EmbeddingPair,
) -> Result<(f64, EmbeddingPair), RetrievalError> {
    for (p, t) in [(&pred.shape, &target.shape), (&pred.pose, &target.pose)] {
        if p.len() != t.len() {
            return Err(RetrievalError::DimensionMismatch {
                expected: t.len(),
                got: p.len(),
            });
        }
    }
    let n = pred.len();
    if n == 0 {
        return Ok((0.0, pred.clone()));
    }
    let scale = 1.0 / n as f64;
    let half = |p: &[f64], t: &[f64]| -> (f64, Vec<f64>) {
        let loss = p.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>();
        let grad = p
            .iter()
            .zip(t)
            .map(|(a, b)| {
                let d = a - b;
                if d > 0.0 {
                    scale
                } else if d < 0.0 {
                    -scale
                } else {
                    0.0
                }
            })
            .collect();
        (loss, grad)
    };
    let (ls, gs) = half(&pred.shape, &target.shape);
    let (lp, gp) = half(&pred.pose, &target.pose);
    Ok((
        (ls + lp) * scale,
        EmbeddingPair {
            shape: gs,
            pose: gp,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeEntry {
    pub id: String,
    pub category: String,
    pub vec: Vec<f64>,
}

/// Canonical-pose shape embeddings, one per shape, in insertion order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeDatabase {
    pub dim: usize,
    pub entries: Vec<ShapeEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalHit<'a> {
    pub index: usize,
    pub id: &'a str,
    pub distance: f64,
}

impl ShapeDatabase {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn build(
        dim: usize,
        entries: impl IntoIterator<Item = ShapeEntry>,
    ) -> Result<Self, RetrievalError> {
        let mut db = Self::new(dim);
        for e in entries {
            db.insert(e)?;
        }
        Ok(db)
    }

    pub fn insert(&mut self, entry: ShapeEntry) -> Result<(), RetrievalError> {
        if entry.vec.len() != self.dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dim,
                got: entry.vec.len(),
            });
        }
        if entry.vec.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFinite);
        }
        if self.entries.iter().any(|e| e.id == entry.id) {
            return Err(RetrievalError::DuplicateId(entry.id));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `argmin_i ‖f(x_i) − query‖₂` by linear scan; ties go to the earliest
    /// inserted entry.
    pub fn nearest_shape(&self, query: &[f64]) -> Result<RetrievalHit<'_>, RetrievalError> {
        if self.entries.is_empty() {
            return Err(RetrievalError::EmptyDatabase);
        }
        if query.len() != self.dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let mut best = (0usize, f64::INFINITY);
        for (i, e) in self.entries.iter().enumerate() {
            let d2: f64 = e
                .vec
                .iter()
                .zip(query)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d2 < best.1 {
                best = (i, d2);
            }
        }
        Ok(RetrievalHit {
            index: best.0,
            id: &self.entries[best.0].id,
            distance: best.1.sqrt(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("database serializes")
    }

    /// Parses and re-validates a database file.
    pub fn from_json(s: &str) -> Result<Self, RetrievalError> {
        let raw: ShapeDatabase =
            serde_json::from_str(s).map_err(|e| RetrievalError::ParseError(e.to_string()))?;
        let mut seen = HashSet::new();
        for e in &raw.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(RetrievalError::DuplicateId(e.id.clone()));
            }
        }
        Self::build(raw.dim, raw.entries)
    }
}

pub fn nearest_shape<'a>(
    query: &[f64],
    db: &'a ShapeDatabase,
) -> Result<(&'a str, f64), RetrievalError> {
    db.nearest_shape(query).map(|h| (h.id, h.distance))
}
