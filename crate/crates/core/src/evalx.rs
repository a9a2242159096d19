//! Error metrics, empirical CDFs, knee detection, Easy/Hard splits and the
//! space/time/accuracy trade-off report.
//!
//! Absolute errors are in tuples. Relative error is
//! `|estimate − true| / max(true, 1)`; overestimates may exceed 1.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RELATIVE_ERROR_DEFINITION: &str = "relative error = |estimate - true| / max(true, 1)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub query_id: usize,
    pub truth: f64,
    pub estimate: f64,
    pub absolute: f64,
    pub relative: f64,
    pub estimator: String,
    /// Number of relations in the query.
    pub complexity: usize,
}

impl ErrorRecord {
    pub fn new(query_id: usize, truth: f64, estimate: f64, estimator: &str, complexity: usize) -> Self {
        let absolute = (estimate - truth).abs();
        ErrorRecord {
            query_id,
            truth,
            estimate,
            absolute,
            relative: absolute / truth.max(1.0),
            estimator: estimator.to_string(),
            complexity,
        }
    }
}

/// One record per query, ids in input order.
pub fn errors(estimator: &str, truths: &[f64], estimates: &[f64], complexities: &[usize]) -> Result<Vec<ErrorRecord>> {
    if truths.len() != estimates.len() || truths.len() != complexities.len() {
        return Err(Error::ShapeMismatch { expected: truths.len(), got: estimates.len().min(complexities.len()) });
    }
    Ok(truths
        .iter()
        .zip(estimates)
        .zip(complexities)
        .enumerate()
        .map(|(i, ((&t, &e), &c))| ErrorRecord::new(i, t, e, estimator, c))
        .collect())
}

pub fn mean_absolute(records: &[ErrorRecord]) -> f64 {
    records.iter().map(|r| r.absolute).sum::<f64>() / records.len().max(1) as f64
}

pub fn mean_relative(records: &[ErrorRecord]) -> f64 {
    records.iter().map(|r| r.relative).sum::<f64>() / records.len().max(1) as f64
}

/// Linear-interpolation percentile of `values`, `q` in `[0, 100]`.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Degenerate("percentile of an empty set".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (q.clamp(0.0, 100.0) / 100.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

pub fn median(values: &[f64]) -> Result<f64> {
    percentile(values, 50.0)
}

/// Empirical CDF: each distinct error with the fraction of errors ≤ it.
pub fn cdf(errors: &[f64]) -> Vec<(f64, f64)> {
    let mut v = errors.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &e) in v.iter().enumerate() {
        match out.last_mut() {
            Some(last) if last.0 == e => last.1 = (i + 1) as f64 / n,
            _ => out.push((e, (i + 1) as f64 / n)),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Knee {
    /// Split threshold, already halved when `halved` is set.
    pub k: f64,
    /// The CDF point the threshold came from.
    pub error: f64,
    pub halved: bool,
}

/// Normalized CDF points and each one's distance to the first–last chord.
pub fn chord_distances(errors: &[f64]) -> Result<Vec<(f64, f64)>> {
    let points = cdf(errors);
    if points.len() < 3 {
        return Err(Error::Degenerate(format!(
            "knee needs at least 3 distinct errors, got {}",
            points.len()
        )));
    }
    let xs: Vec<f64> = points.iter().map(|(e, _)| (1.0 + e.max(0.0)).log10()).collect();
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    if !(hi > lo) {
        return Err(Error::Degenerate("errors collapse under the log scale".into()));
    }
    let norm: Vec<(f64, f64)> = xs.iter().zip(&points).map(|(x, (_, y))| ((x - lo) / (hi - lo), *y)).collect();
    let (x0, y0) = norm[0];
    let (x1, y1) = norm[norm.len() - 1];
    let len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
    Ok(points
        .iter()
        .zip(&norm)
        .map(|((e, _), (x, y))| (*e, ((x1 - x0) * (y0 - y) - (x0 - x) * (y1 - y0)).abs() / len))
        .collect())
}

/// The error at the interior CDF point farthest from the chord joining the
/// first and last points (log10(1+error) on a min-max normalized x axis).
/// Ties resolve to the smaller error.
pub fn knee(errors: &[f64], halve: bool) -> Result<Knee> {
    let d = chord_distances(errors)?;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for &(e, dist) in &d[1..d.len() - 1] {
        if dist > best.0 {
            best = (dist, e);
        }
    }
    let error = best.1;
    Ok(Knee { k: if halve { error / 2.0 } else { error }, error, halved: halve })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfSplit {
    pub k: f64,
    pub halved: bool,
    /// Positions into the records passed to [`split_easy_hard`].
    pub easy: Vec<usize>,
    pub hard: Vec<usize>,
}

impl CdfSplit {
    pub fn easy_share(&self) -> f64 {
        self.easy.len() as f64 / (self.easy.len() + self.hard.len()).max(1) as f64
    }
}

/// Easy: absolute error ≤ k. Hard: the rest.
pub fn split_easy_hard(records: &[ErrorRecord], k: f64, halved: bool) -> Result<CdfSplit> {
    if !k.is_finite() {
        return Err(Error::InvalidArgument("knee threshold must be finite".into()));
    }
    let (easy, hard) = (0..records.len()).partition(|&i| records[i].absolute <= k);
    Ok(CdfSplit { k, halved, easy, hard })
}

/// Fraction of `subset` whose error is at most the model's own knee.
pub fn easy_fraction(subset: &[&ErrorRecord], model_k: f64) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::Degenerate("easy fraction of an empty subset".into()));
    }
    Ok(subset.iter().filter(|r| r.absolute <= model_k).count() as f64 / subset.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffInput {
    pub estimator: String,
    pub records: Vec<ErrorRecord>,
    pub parameter_count: usize,
    pub train_seconds: f64,
    /// Marks the memo-table reference line.
    pub reference: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub estimator: String,
    pub median_abs: f64,
    pub p25_abs: f64,
    pub p75_abs: f64,
    pub mean_rel: f64,
    pub parameter_count: usize,
    pub train_seconds: f64,
    pub reference: bool,
}

pub fn tradeoff_rows(inputs: &[TradeoffInput]) -> Result<Vec<TradeoffRow>> {
    inputs
        .iter()
        .map(|inp| {
            let abs: Vec<f64> = inp.records.iter().map(|r| r.absolute).collect();
            Ok(TradeoffRow {
                estimator: inp.estimator.clone(),
                median_abs: percentile(&abs, 50.0)?,
                p25_abs: percentile(&abs, 25.0)?,
                p75_abs: percentile(&abs, 75.0)?,
                mean_rel: mean_relative(&inp.records),
                parameter_count: inp.parameter_count,
                train_seconds: inp.train_seconds,
                reference: inp.reference,
            })
        })
        .collect()
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_errors_csv<W: Write>(mut w: W, records: &[ErrorRecord]) -> Result<()> {
    writeln!(w, "# {RELATIVE_ERROR_DEFINITION}; absolute error in tuples")?;
    let mut out = csv_writer(w);
    out.write_record(["query_id", "true", "estimate", "abs", "rel"])?;
    for r in records {
        out.write_record([r.query_id.to_string(), num(r.truth), num(r.estimate), num(r.absolute), num(r.relative)])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_cdf_csv<W: Write>(w: W, records: &[ErrorRecord]) -> Result<()> {
    let abs: Vec<f64> = records.iter().map(|r| r.absolute).collect();
    let mut out = csv_writer(w);
    out.write_record(["error", "cumulative_fraction"])?;
    for (e, f) in cdf(&abs) {
        out.write_record([num(e), num(f)])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_tradeoff_csv<W: Write>(mut w: W, rows: &[TradeoffRow]) -> Result<()> {
    writeln!(w, "# {RELATIVE_ERROR_DEFINITION}; absolute error in tuples")?;
    let mut out = csv_writer(w);
    out.write_record([
        "estimator",
        "median_abs",
        "p25_abs",
        "p75_abs",
        "mean_rel",
        "parameter_count",
        "train_seconds",
        "reference",
    ])?;
    for r in rows {
        out.write_record([
            r.estimator.clone(),
            num(r.median_abs),
            num(r.p25_abs),
            num(r.p75_abs),
            num(r.mean_rel),
            r.parameter_count.to_string(),
            num(r.train_seconds),
            r.reference.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Whitespace-separated columns for gnuplot; one block per estimator.
pub fn write_tradeoff_dat<W: Write>(mut w: W, rows: &[TradeoffRow]) -> Result<()> {
    writeln!(w, "# {RELATIVE_ERROR_DEFINITION}")?;
    writeln!(w, "# estimator parameter_count train_seconds median_abs p25_abs p75_abs reference")?;
    for r in rows {
        writeln!(
            w,
            "\"{}\" {} {:?} {:?} {:?} {:?} {}",
            r.estimator, r.parameter_count, r.train_seconds, r.median_abs, r.p25_abs, r.p75_abs, r.reference as u8
        )?;
    }
    Ok(())
}

/// `tradeoff.csv`, `tradeoff.dat`, and per-estimator `errors_<name>.csv` and
/// `cdf_<name>.csv` under `dir`.
pub fn tradeoff_report(dir: &Path, inputs: &[TradeoffInput]) -> Result<Vec<TradeoffRow>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let rows = tradeoff_rows(inputs)?;
    let create = |name: String| {
        let p = dir.join(name);
        std::fs::File::create(&p).map(std::io::BufWriter::new).map_err(|e| Error::file(&p, e))
    };
    write_tradeoff_csv(create("tradeoff.csv".into())?, &rows)?;
    write_tradeoff_dat(create("tradeoff.dat".into())?, &rows)?;
    for inp in inputs {
        let safe = file_stem(&inp.estimator);
        write_errors_csv(create(format!("errors_{safe}.csv"))?, &inp.records)?;
        write_cdf_csv(create(format!("cdf_{safe}.csv"))?, &inp.records)?;
    }
    Ok(rows)
}

/// Estimator names reduced to filename-safe characters.
pub fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}
