//! The hash-table baseline: training pairs stored verbatim, with a
//! nearest-neighbor fallback for queries that were never seen.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::Estimator;
use crate::featurize::{encode_flat, EncodingSpec};
use crate::workload::{LabeledExample, Query};

/// Exact keys compare features rounded to this many decimal digits.
pub const KEY_DECIMALS: i32 = 9;

fn quantize(x: &[f64]) -> Vec<i64> {
    let scale = 10f64.powi(KEY_DECIMALS);
    x.iter().map(|v| (v * scale).round() as i64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoTable {
    pub width: usize,
    /// Minkowski order for the fallback search.
    pub p: f64,
    pub vectors: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    /// Training examples inserted, duplicates included.
    pub examples: usize,
    #[serde(skip)]
    index: HashMap<Vec<i64>, usize>,
}

impl MemoTable {
    pub fn new(width: usize, p: f64) -> Result<Self> {
        if !(p >= 1.0) {
            return Err(Error::InvalidArgument(format!("Minkowski order {p} must be at least 1")));
        }
        Ok(MemoTable { width, p, vectors: Vec::new(), values: Vec::new(), examples: 0, index: HashMap::new() })
    }

    /// Later duplicates overwrite earlier values but keep the first slot.
    pub fn insert(&mut self, x: Vec<f64>, cardinality: f64) -> Result<()> {
        if x.len() != self.width {
            return Err(Error::ShapeMismatch { expected: self.width, got: x.len() });
        }
        self.examples += 1;
        match self.index.get(&quantize(&x)) {
            Some(&i) => self.values[i] = cardinality,
            None => {
                self.index.insert(quantize(&x), self.vectors.len());
                self.vectors.push(x);
                self.values.push(cardinality);
            }
        }
        Ok(())
    }

    pub fn from_pairs(width: usize, p: f64, pairs: impl IntoIterator<Item = (Vec<f64>, f64)>) -> Result<Self> {
        let mut t = MemoTable::new(width, p)?;
        for (x, c) in pairs {
            t.insert(x, c)?;
        }
        Ok(t)
    }

    pub fn build(examples: &[LabeledExample], spec: &EncodingSpec) -> Result<Self> {
        let mut t = MemoTable::new(spec.width(), 2.0)?;
        for ex in examples {
            t.insert(encode_flat(spec, &ex.query)?.values, ex.cardinality as f64)?;
        }
        Ok(t)
    }

    /// Rebuilds the key index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.vectors.iter().enumerate().map(|(i, v)| (quantize(v), i)).collect();
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Space charged to the table: one unit per stored training feature.
    pub fn size_metric(&self) -> usize {
        self.examples * self.width
    }

    fn distance_key(&self, a: &[f64], b: &[f64]) -> f64 {
        if self.p == 2.0 {
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
        } else if self.p == 1.0 {
            a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
        } else {
            a.iter().zip(b).map(|(x, y)| (x - y).abs().powf(self.p)).sum()
        }
    }

    /// The stored value for `x` and whether it was an exact hit; on a miss,
    /// the value of the nearest stored vector (first inserted on ties).
    pub fn lookup(&self, x: &[f64]) -> Result<(f64, bool)> {
        if x.len() != self.width {
            return Err(Error::ShapeMismatch { expected: self.width, got: x.len() });
        }
        if self.is_empty() {
            return Err(Error::Degenerate("lookup in an empty memo table".into()));
        }
        if let Some(&i) = self.index.get(&quantize(x)) {
            return Ok((self.values[i], true));
        }
        let mut best = (f64::INFINITY, 0);
        for (i, v) in self.vectors.iter().enumerate() {
            let d = self.distance_key(x, v);
            if d < best.0 {
                best = (d, i);
            }
        }
        Ok((self.values[best.1], false))
    }
}

#[derive(Debug, Clone)]
pub struct MemoEstimator {
    pub name: String,
    pub table: MemoTable,
    pub spec: EncodingSpec,
}

impl Estimator for MemoEstimator {
    fn name(&self) -> &str {
        &self.name
    }

    fn estimate(&self, q: &Query) -> Result<f64> {
        Ok(self.table.lookup(&encode_flat(&self.spec, q)?.values)?.0)
    }

    fn parameter_count(&self) -> usize {
        self.table.size_metric()
    }
}
