//! Equi-depth histogram baseline.
//!
//! Per-column histograms combined under uniformity within buckets,
//! independence across predicates, and the containment rule
//! `|R||S| / max(V(a), V(b))` for FK–PK joins.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::Estimator;
use crate::relstore::{ColumnRef, Database};
use crate::workload::Query;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquiDepthHistogram {
    pub bounds: Vec<i64>,
    pub counts: Vec<u64>,
    pub distinct: Vec<u64>,
    pub total_rows: u64,
    pub total_distinct: u64,
}

impl EquiDepthHistogram {
    /// Positional equi-depth split of the sorted column into
    /// `min(bins, rows)` buckets. `bounds[i]` is the first value of bucket
    /// `i`; the final bound is the column maximum.
    pub fn build(values: &[i64], bins: usize) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let b = bins.min(n);
        let mut bounds = Vec::with_capacity(b + 1);
        let mut counts = Vec::with_capacity(b);
        let mut distinct = Vec::with_capacity(b);
        for i in 0..b {
            let (lo, hi) = (i * n / b, (i + 1) * n / b);
            let bucket = &sorted[lo..hi];
            bounds.push(bucket[0]);
            counts.push(bucket.len() as u64);
            distinct.push(1 + bucket.windows(2).filter(|w| w[0] != w[1]).count() as u64);
        }
        if let Some(&max) = sorted.last() {
            bounds.push(max);
        }
        let total_distinct = if n == 0 {
            0
        } else {
            1 + sorted.windows(2).filter(|w| w[0] != w[1]).count() as u64
        };
        EquiDepthHistogram {
            bounds,
            counts,
            distinct,
            total_rows: n as u64,
            total_distinct,
        }
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.bounds.len() + self.counts.len() + self.distinct.len() + 2
    }
}

/// Estimated fraction of rows with value ≤ `threshold`: full buckets below
/// it plus linear interpolation over the integer span of the straddling
/// bucket.
pub fn estimate_selection(hist: &EquiDepthHistogram, threshold: i64) -> f64 {
    let b = hist.bins();
    if hist.total_rows == 0 || b == 0 {
        return 0.0;
    }
    if threshold >= hist.bounds[b] {
        return 1.0;
    }
    if threshold < hist.bounds[0] {
        return 0.0;
    }
    let t = threshold as i128;
    let mut rows = 0.0;
    for i in 0..b {
        let lo = hist.bounds[i] as i128;
        let hi = hist.bounds[i + 1] as i128;
        if t < lo {
            break;
        }
        // The last bucket owns its upper bound; earlier buckets span lo..hi-1
        // unless a heavy value fills the whole bucket.
        let width = if i + 1 == b || hi == lo { hi - lo + 1 } else { hi - lo };
        let covered = (t - lo + 1).clamp(0, width);
        rows += hist.counts[i] as f64 * covered as f64 / width as f64;
    }
    (rows / hist.total_rows as f64).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsCatalog {
    pub bins: usize,
    pub histograms: BTreeMap<ColumnRef, EquiDepthHistogram>,
    pub row_counts: BTreeMap<String, u64>,
}

/// Histograms over every join-edge endpoint and every selection column.
pub fn build_stats(db: &Database, bins: usize) -> Result<StatsCatalog> {
    if bins == 0 {
        return Err(Error::InvalidArgument("histograms need at least one bin".into()));
    }
    let mut columns: Vec<&ColumnRef> = Vec::new();
    for e in &db.schema.join_edges {
        columns.push(&e.fk);
        columns.push(&e.pk);
    }
    columns.extend(db.schema.selection_columns.iter());
    let mut histograms = BTreeMap::new();
    for c in columns {
        if !histograms.contains_key(c) {
            histograms.insert(c.clone(), EquiDepthHistogram::build(db.column(c)?, bins));
        }
    }
    Ok(StatsCatalog {
        bins,
        histograms,
        row_counts: db.row_counts().into_iter().map(|(k, v)| (k, v as u64)).collect(),
    })
}

impl StatsCatalog {
    fn histogram(&self, c: &ColumnRef) -> Result<&EquiDepthHistogram> {
        self.histograms
            .get(c)
            .ok_or_else(|| Error::UnknownColumn(format!("no statistics for `{c}`")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn estimate_query(stats: &StatsCatalog, q: &Query) -> Result<f64> {
    let mut est = 1.0;
    for r in &q.relations {
        est *= *stats
            .row_counts
            .get(r)
            .ok_or_else(|| Error::UnknownRelation(r.clone()))? as f64;
    }
    for j in &q.joins {
        let v = stats
            .histogram(&j.fk)?
            .total_distinct
            .max(stats.histogram(&j.pk)?.total_distinct);
        if v == 0 {
            return Ok(0.0);
        }
        est /= v as f64;
    }
    for s in &q.selections {
        est *= estimate_selection(stats.histogram(&s.column)?, s.threshold);
    }
    Ok(est.max(0.0))
}

pub fn parameter_count(stats: &StatsCatalog) -> usize {
    stats.histograms.values().map(EquiDepthHistogram::parameter_count).sum()
}

/// The histogram baseline behind the common estimator contract.
#[derive(Debug, Clone)]
pub struct HistogramEstimator {
    pub name: String,
    pub stats: StatsCatalog,
}

impl Estimator for HistogramEstimator {
    fn name(&self) -> &str {
        &self.name
    }

    fn estimate(&self, q: &Query) -> Result<f64> {
        estimate_query(&self.stats, q)
    }

    fn parameter_count(&self) -> usize {
        parameter_count(&self.stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec;
    use crate::relstore::{generate_synthetic, DatabaseSchema, ZipfSampler};
    use crate::workload::tests::running_db;
    use crate::workload::Selection;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    #[test]
    fn uniform_column_four_buckets() {
        let col: Vec<i64> = (1..=100).collect();
        let h = EquiDepthHistogram::build(&col, 4);
        assert_eq!(h.counts, vec![25, 25, 25, 25]);
        assert_eq!(h.bounds, vec![1, 26, 51, 76, 100]);
        assert!((estimate_selection(&h, 50) - 0.5).abs() <= 0.01);
        assert_eq!(estimate_selection(&h, 100), 1.0);
        assert_eq!(estimate_selection(&h, 0), 0.0);
        assert_eq!(h.parameter_count(), 15);
    }

    #[test]
    fn single_bucket_spans_domain() {
        let h = EquiDepthHistogram::build(&[5, 3, 9, 3], 1);
        assert_eq!(h.bounds, vec![3, 9]);
        assert_eq!(h.counts, vec![4]);
        assert_eq!(h.total_distinct, 3);
    }

    #[test]
    fn empty_column_estimates_zero() {
        let h = EquiDepthHistogram::build(&[], 10);
        assert_eq!(h.total_rows, 0);
        assert_eq!(estimate_selection(&h, 3), 0.0);
        assert_eq!(h.parameter_count(), 2);
    }

    #[test]
    fn zipf_buckets_are_equi_depth() {
        let sampler = ZipfSampler::new(200, 1.0);
        let mut rng = crate::seed::rng(5);
        let col: Vec<i64> = (0..10_007).map(|_| sampler.sample(&mut rng)).collect();
        let h = EquiDepthHistogram::build(&col, 10);
        let max = *h.counts.iter().max().unwrap();
        let min = *h.counts.iter().min().unwrap();
        assert!(max - min <= (10_007u64).div_ceil(10));
        assert_eq!(h.counts.iter().sum::<u64>(), 10_007);
        assert!(h.bounds.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn catalog_parameter_arithmetic() {
        let col: Vec<i64> = (1..=1000).collect();
        let mut stats = StatsCatalog { bins: 100, histograms: BTreeMap::new(), row_counts: BTreeMap::new() };
        for name in ["x", "y", "z"] {
            stats.histograms.insert(ColumnRef::new("R", name), EquiDepthHistogram::build(&col, 100));
        }
        assert_eq!(parameter_count(&stats), 3 * (101 + 100 + 100 + 2));
        let db = running_db(200, 1);
        assert!(parameter_count(&build_stats(&db, 8).unwrap()) < parameter_count(&build_stats(&db, 16).unwrap()));
    }

    #[test]
    fn query_estimates() {
        let db = running_db(100, 4);
        let stats = build_stats(&db, 10).unwrap();
        assert_eq!(estimate_query(&stats, &Query::single("B", vec![])).unwrap(), 100.0);
        // B.b1 is a sequential primary key: V_pk = |B| ≥ V_fk.
        let ab: BTreeSet<String> = ["A", "B"].iter().map(|s| s.to_string()).collect();
        let q = Query::induced(&db.schema, ab, vec![]);
        assert!((estimate_query(&stats, &q).unwrap() - 100.0).abs() < 1e-9);
        let abc: BTreeSet<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
        let q = Query::induced(&db.schema, abc, vec![]);
        assert!((estimate_query(&stats, &q).unwrap() - exec::cardinality(&db, &q).unwrap() as f64).abs() < 1e-6);
    }

    #[test]
    fn independence_multiplies_marginals() {
        // Two perfectly correlated predicates on one relation.
        let schema = DatabaseSchema::from_json(
            r#"{"relations":[{"name":"R","columns":[
                {"name":"x","kind":"attribute","generator":{"type":"sequential"}},
                {"name":"y","kind":"attribute","generator":{"type":"sequential"}}]}],
               "selection_columns":["R.x","R.y"]}"#,
        )
        .unwrap();
        let db = generate_synthetic(&schema, &[("R".to_string(), 100)].into_iter().collect(), 0).unwrap();
        let stats = build_stats(&db, 100).unwrap();
        let q = Query::single(
            "R",
            vec![
                Selection { column: ColumnRef::new("R", "x"), threshold: 50 },
                Selection { column: ColumnRef::new("R", "y"), threshold: 50 },
            ],
        );
        let est = estimate_query(&stats, &q).unwrap();
        let sx = estimate_selection(&stats.histograms[&ColumnRef::new("R", "x")], 50);
        let sy = estimate_selection(&stats.histograms[&ColumnRef::new("R", "y")], 50);
        assert!((est - 100.0 * sx * sy).abs() < 1e-9);
        assert_eq!(exec::cardinality(&db, &q).unwrap(), 50);
        assert!((est - 25.0).abs() < 1e-9);
    }

    #[test]
    fn missing_statistics_rejected() {
        let stats = StatsCatalog { bins: 1, histograms: BTreeMap::new(), row_counts: [("R".to_string(), 3)].into() };
        let q = Query::single("R", vec![Selection { column: ColumnRef::new("R", "x"), threshold: 1 }]);
        assert!(estimate_query(&stats, &q).is_err());
    }

    #[test]
    fn more_bins_never_worse_in_median() {
        let sampler = ZipfSampler::new(5000, 1.0);
        let mut rng = crate::seed::rng(17);
        let col: Vec<i64> = (0..20_000).map(|_| sampler.sample(&mut rng)).collect();
        let mut sorted = col.clone();
        sorted.sort_unstable();
        let thresholds: Vec<i64> = (0..400).map(|i| sorted[(i * 50) % sorted.len()]).collect();
        let median_err = |bins: usize| {
            let h = EquiDepthHistogram::build(&col, bins);
            let mut errs: Vec<f64> = thresholds
                .iter()
                .map(|&t| {
                    let truth = sorted.partition_point(|&v| v <= t) as f64 / sorted.len() as f64;
                    (estimate_selection(&h, t) - truth).abs()
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            errs[errs.len() / 2]
        };
        let (e10, e100, e1000) = (median_err(10), median_err(100), median_err(1000));
        assert!(e100 <= e10 && e1000 <= e100, "{e10} {e100} {e1000}");
    }

    proptest! {
        #[test]
        fn selection_monotone_and_exact_at_extremes(
            values in proptest::collection::vec(-100i64..100, 1..300),
            bins in 1usize..40,
            a in -120i64..120,
            b in -120i64..120,
        ) {
            let h = EquiDepthHistogram::build(&values, bins);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(estimate_selection(&h, lo) <= estimate_selection(&h, hi) + 1e-15);
            let max = *values.iter().max().unwrap();
            let min = *values.iter().min().unwrap();
            prop_assert_eq!(estimate_selection(&h, max), 1.0);
            prop_assert_eq!(estimate_selection(&h, min - 1), 0.0);
            prop_assert_eq!(h.counts.iter().sum::<u64>(), values.len() as u64);
            let spread = h.counts.iter().max().unwrap() - h.counts.iter().min().unwrap();
            prop_assert!(spread <= (values.len() as u64).div_ceil(h.bins() as u64));
        }
    }
}
