//! Labeled examples, the synthetic universe of classes, and embedding files.

mod ingest;
mod universe;

pub use ingest::{ingest_embeddings, write_embeddings, EMBEDDING_MAGIC};
pub use universe::{make_synthetic_universe, ClassPool, Universe, UniverseConfig};

use serde::{Deserialize, Serialize};

/// Group index of a labeled example: `2y + s`.
///
/// Groups 0 and 3 are the majority groups when the spurious bit agrees with
/// the label; 1 and 2 are the minority groups.
pub fn group_of(y: u8, s: u8) -> u8 {
    assert!(y <= 1 && s <= 1, "label and spurious bit must be 0 or 1");
    2 * y + s
}

/// One labeled point: embedding, spurious bit, label and derived group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub x: Vec<f32>,
    pub s: u8,
    pub y: u8,
    pub g: u8,
}

impl Example {
    pub fn new(x: Vec<f32>, y: u8, s: u8) -> Self {
        debug_assert!(x.iter().all(|v| v.is_finite()), "embedding has non-finite entries");
        let g = group_of(y, s);
        Example { x, s, y, g }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Same embedding with a new spurious bit; the group follows.
    pub fn with_spurious(mut self, s: u8) -> Self {
        self.g = group_of(self.y, s);
        self.s = s;
        self
    }

    /// Same embedding with a new label; the group follows.
    pub fn with_label(mut self, y: u8) -> Self {
        self.g = group_of(y, self.s);
        self.y = y;
        self
    }

    pub fn is_minority(&self) -> bool {
        self.s != self.y
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataSource {
    Synthetic,
    Ingested,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub d: usize,
    pub n_examples: usize,
    pub source: DataSource,
    /// Mean Euclidean norm of the embeddings.
    pub avg_norm: f64,
}

impl DatasetMeta {
    pub fn from_embeddings<'a>(d: usize, source: DataSource, rows: impl IntoIterator<Item = &'a [f32]>) -> Self {
        let mut n = 0usize;
        let mut total = 0.0f64;
        for row in rows {
            total += euclidean_norm(row);
            n += 1;
        }
        let avg_norm = if n == 0 { 0.0 } else { total / n as f64 };
        DatasetMeta { d, n_examples: n, source, avg_norm }
    }
}

pub(crate) fn euclidean_norm(v: &[f32]) -> f64 {
    v.iter().map(|&a| f64::from(a) * f64::from(a)).sum::<f64>().sqrt()
}
