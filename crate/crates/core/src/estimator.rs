//! The common estimator contract shared by the baseline, the learned models,
//! the memo table and the exact oracle.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::exec;
use crate::relstore::Database;
use crate::workload::{JoinSequence, Query};

pub trait Estimator: Send + Sync {
    fn name(&self) -> &str;

    /// Estimated cardinality of `q`.
    fn estimate(&self, q: &Query) -> Result<f64>;

    /// Estimated cardinality of the query made by `seq`. Order-aware models
    /// override this; the rest ignore the order.
    fn estimate_sequence(&self, seq: &JoinSequence) -> Result<f64> {
        self.estimate(&seq.to_query())
    }

    /// Stored scalars: the shared space currency.
    fn parameter_count(&self) -> usize;
}

/// Exact cardinalities from the executor.
#[derive(Debug, Clone, Copy)]
pub struct TruthEstimator<'a> {
    pub db: &'a Database,
}

impl Estimator for TruthEstimator<'_> {
    fn name(&self) -> &str {
        "truth"
    }

    fn estimate(&self, q: &Query) -> Result<f64> {
        Ok(exec::cardinality(self.db, q)? as f64)
    }

    fn parameter_count(&self) -> usize {
        0
    }
}

/// Π of base row counts of the relations referenced by `q`.
pub fn cartesian_size(row_counts: &BTreeMap<String, usize>, q: &Query) -> Result<f64> {
    q.relations.iter().try_fold(1.0, |acc, r| {
        row_counts
            .get(r)
            .map(|&n| acc * n as f64)
            .ok_or_else(|| Error::UnknownRelation(r.clone()))
    })
}

/// Selectivity → cardinality: scale by the cartesian size, clamp to
/// `[0, Π|R|]` and round to the nearest integer.
pub fn selectivity_to_cardinality(selectivity: f64, row_counts: &BTreeMap<String, usize>, q: &Query) -> Result<f64> {
    let size = cartesian_size(row_counts, q)?;
    Ok((selectivity * size).clamp(0.0, size).round())
}
