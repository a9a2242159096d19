//! Experiment orchestration: learning-rate × batch-size grid search, model
//! selection under a parameter budget, and batch-mode active learning with
//! query-by-committee (plain or clustered) or random selection.

use std::io::Write;
use std::time::Instant;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalx::median;
use crate::featurize::SELECTIVITY_FLOOR;
use crate::neural::{train, DenseArch, DenseNet, DenseSample, Hyper, TrainReport, Trainable};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    /// Fixed epochs every cell trains for.
    pub epochs: usize,
    /// Upper bound on epochs while extending the winner.
    pub extension_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub weight_decay: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            learning_rates: vec![1e-2, 1e-3, 1e-4],
            batch_sizes: vec![32, 128, 512],
            epochs: 500,
            extension_epochs: 5000,
            patience: 20,
            min_delta: 1e-4,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub lr: f64,
    pub batch_size: usize,
    /// Validation loss of the parameters the cell returned; `None` if it diverged.
    pub val_loss: Option<f64>,
    pub report: Option<TrainReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridOutcome<N> {
    pub best: Hyper,
    pub model: N,
    pub cells: Vec<CellReport>,
    pub extension: TrainReport,
}

/// Trains every distinct `(lr, batch)` cell for the fixed epoch count, keeps
/// the lowest validation loss (ties: lower lr, then smaller batch) and keeps
/// training the winner until validation stops improving.
pub fn grid_search<N: Trainable>(
    net: &N,
    train_set: &[N::Sample],
    validation: &[N::Sample],
    grid: &GridSpec,
    seed: u64,
) -> Result<GridOutcome<N>> {
    let mut lrs = grid.learning_rates.clone();
    lrs.sort_by(f64::total_cmp);
    lrs.dedup();
    let mut batches: Vec<usize> = grid.batch_sizes.iter().map(|&b| b.min(train_set.len())).collect();
    batches.sort_unstable();
    batches.dedup();
    if lrs.is_empty() || batches.is_empty() {
        return Err(Error::InvalidArgument("grid needs at least one learning rate and batch size".into()));
    }
    let cells: Vec<(f64, usize)> = lrs.iter().flat_map(|&lr| batches.iter().map(move |&b| (lr, b))).collect();
    let trained: Vec<(CellReport, Option<N>)> = cells
        .par_iter()
        .map(|&(lr, batch_size)| {
            let hyper = Hyper {
                lr,
                batch_size,
                max_epochs: grid.epochs,
                patience: usize::MAX,
                min_delta: 0.0,
                weight_decay: grid.weight_decay,
            };
            match train(net.clone(), train_set, validation, &hyper, seed) {
                Ok((model, report)) => {
                    let val_loss = report
                        .best_epoch
                        .checked_sub(1)
                        .map(|e| report.val_mse[e])
                        .unwrap_or_else(|| report.val_mse.iter().cloned().fold(f64::INFINITY, f64::min));
                    (CellReport { lr, batch_size, val_loss: Some(val_loss), report: Some(report), error: None }, Some(model))
                }
                Err(e @ Error::NonFinite { .. }) => {
                    (CellReport { lr, batch_size, val_loss: None, report: None, error: Some(e.to_string()) }, None)
                }
                Err(e) => (CellReport { lr, batch_size, val_loss: None, report: None, error: Some(format!("fatal: {e}")) }, None),
            }
        })
        .collect();
    if let Some(fatal) = trained.iter().find_map(|(c, _)| c.error.as_ref().filter(|e| e.starts_with("fatal: "))) {
        return Err(Error::InvalidArgument(fatal.trim_start_matches("fatal: ").to_string()));
    }
    let mut winner: Option<usize> = None;
    for (i, (c, _)) in trained.iter().enumerate() {
        if let Some(v) = c.val_loss {
            if winner.is_none_or(|w| v < trained[w].0.val_loss.expect("winner has a loss")) {
                winner = Some(i);
            }
        }
    }
    let Some(w) = winner else {
        return Err(Error::AllCellsDiverged(
            trained.iter().map(|(c, _)| format!("lr={} batch={}", c.lr, c.batch_size)).collect(),
        ));
    };
    let (lr, batch_size) = cells[w];
    let best = Hyper {
        lr,
        batch_size,
        max_epochs: grid.extension_epochs,
        patience: grid.patience,
        min_delta: grid.min_delta,
        weight_decay: grid.weight_decay,
    };
    let mut reports = Vec::with_capacity(trained.len());
    let mut model = None;
    for (i, (c, m)) in trained.into_iter().enumerate() {
        if i == w {
            model = m;
        }
        reports.push(c);
    }
    let start = model.expect("winner trained");
    let (model, extension) = train(start, train_set, validation, &best, seed::derive(seed, &[seed::tag("extend")]))?;
    Ok(GridOutcome { best, model, cells: reports, extension })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetCandidate {
    pub name: String,
    pub parameter_count: usize,
    /// Absolute errors on the validation set.
    pub validation_errors: Vec<f64>,
}

/// Among candidates with at most `budget` parameters, the one with the
/// lowest median validation error (first listed on ties).
pub fn select_within_budget(candidates: &[BudgetCandidate], budget: usize) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        if c.parameter_count > budget {
            continue;
        }
        let Ok(m) = median(&c.validation_errors) else { continue };
        if best.is_none_or(|(_, b)| m < b) {
            best = Some((i, m));
        }
    }
    best.map(|(i, _)| i)
}

/// Population variance of each pool point's committee predictions.
/// `predictions[m][j]` is member `m`'s prediction for point `j`.
pub fn committee_variance(predictions: &[Vec<f64>]) -> Result<Vec<f64>> {
    if predictions.len() < 2 {
        return Err(Error::InvalidArgument("a committee needs at least two members".into()));
    }
    let n = predictions[0].len();
    if let Some(bad) = predictions.iter().find(|p| p.len() != n) {
        return Err(Error::ShapeMismatch { expected: n, got: bad.len() });
    }
    let m = predictions.len() as f64;
    Ok((0..n)
        .map(|j| {
            let mean = predictions.iter().map(|p| p[j]).sum::<f64>() / m;
            predictions.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / m
        })
        .collect())
}

/// Pool positions by descending variance, lower index first on ties.
fn ranked(variance: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..variance.len()).collect();
    idx.sort_by(|&a, &b| variance[b].total_cmp(&variance[a]).then(a.cmp(&b)));
    idx
}

/// The `k` pool points the committee disagrees on most.
pub fn qbc_select(predictions: &[Vec<f64>], k: usize) -> Result<Vec<usize>> {
    let variance = committee_variance(predictions)?;
    if k > variance.len() {
        return Err(Error::InvalidArgument(format!("cannot select {k} of {} pool points", variance.len())));
    }
    let mut r = ranked(&variance);
    r.truncate(k);
    Ok(r)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm for a fixed number of iterations from a seeded
/// k-means++ start. Returns each point's cluster.
pub fn kmeans(points: &[&[f64]], k: usize, iterations: usize, seed: u64) -> Vec<usize> {
    let n = points.len();
    if n == 0 || k == 0 {
        return vec![0; n];
    }
    let mut rng = seed::rng(seed);
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, points[chosen[0]])).collect();
    while chosen.len() < k.min(n) {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            // Guard against rounding landing on an existing center.
            if d2[pick] == 0.0 {
                pick = (0..n).rev().find(|&i| d2[i] > 0.0).expect("positive total");
            }
            pick
        } else {
            (0..n).find(|i| !chosen.contains(i)).expect("k ≤ n")
        };
        chosen.push(next);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, points[next]));
        }
    }
    let mut centers: Vec<Vec<f64>> = chosen.iter().map(|&i| points[i].to_vec()).collect();
    let mut assign = vec![0usize; n];
    for _ in 0..iterations {
        for (a, p) in assign.iter_mut().zip(points) {
            let mut best = (f64::INFINITY, 0);
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(p, center);
                if d < best.0 {
                    best = (d, c);
                }
            }
            *a = best.1;
        }
        let width = points[0].len();
        let mut sums = vec![vec![0.0; width]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        for (c, (s, &cnt)) in sums.into_iter().zip(&counts).enumerate() {
            if cnt > 0 {
                centers[c] = s.into_iter().map(|v| v / cnt as f64).collect();
            }
        }
    }
    assign
}

pub const KMEANS_ITERATIONS: usize = 25;

/// Clusters the `4k` most-disagreed points into `k` groups and takes the
/// highest-variance member of each; empty clusters are backfilled with the
/// next highest-variance unselected points. Result is in variance order.
pub fn qbc_cluster_select(pool: &[Vec<f64>], predictions: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<usize>> {
    let variance = committee_variance(predictions)?;
    if variance.len() != pool.len() {
        return Err(Error::ShapeMismatch { expected: pool.len(), got: variance.len() });
    }
    if k > pool.len() {
        return Err(Error::InvalidArgument(format!("cannot select {k} of {} pool points", pool.len())));
    }
    let order = ranked(&variance);
    let top: Vec<usize> = order.iter().copied().take((4 * k).min(pool.len())).collect();
    let points: Vec<&[f64]> = top.iter().map(|&i| pool[i].as_slice()).collect();
    let assign = kmeans(&points, k, KMEANS_ITERATIONS, seed);
    let mut pick: Vec<Option<usize>> = vec![None; k];
    // `top` is already in variance order, so the first member seen wins.
    for (pos, &c) in assign.iter().enumerate() {
        if pick[c].is_none() {
            pick[c] = Some(top[pos]);
        }
    }
    let mut chosen: Vec<usize> = pick.into_iter().flatten().collect();
    for &i in &order {
        if chosen.len() >= k {
            break;
        }
        if !chosen.contains(&i) {
            chosen.push(i);
        }
    }
    let rank: std::collections::HashMap<usize, usize> = order.iter().enumerate().map(|(r, &i)| (i, r)).collect();
    chosen.sort_by_key(|i| rank[i]);
    Ok(chosen)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Qbc,
    QbcCluster,
    Random,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qbc" => Ok(Method::Qbc),
            "qbc-cluster" | "qbc_cluster" => Ok(Method::QbcCluster),
            "random" => Ok(Method::Random),
            _ => Err(Error::InvalidArgument(format!("unknown active-learning method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveConfig {
    pub method: Method,
    pub k: usize,
    pub iterations: usize,
    pub committee_size: usize,
    pub arch: DenseArch,
    /// Training settings for committee members.
    pub committee_hyper: Hyper,
    /// Training settings for the reporting model, decay included.
    pub report_hyper: Hyper,
    pub seed: u64,
}

impl ActiveConfig {
    pub fn new(method: Method, k: usize, iterations: usize, seed: u64) -> Self {
        let base = Hyper { lr: 1e-3, batch_size: 32, max_epochs: 200, patience: 20, min_delta: 1e-4, weight_decay: 0.0 };
        ActiveConfig {
            method,
            k,
            iterations,
            committee_size: 5,
            arch: DenseArch::new(100, 1),
            committee_hyper: base,
            report_hyper: Hyper { weight_decay: 1e-4, ..base },
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveIteration {
    pub method: Method,
    pub iteration: usize,
    /// Pool indices labeled in this iteration.
    pub chosen: Vec<usize>,
    pub labeled_size: usize,
    /// Reporting model's validation MSE of ln-selectivity.
    pub validation_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveRun {
    pub method: Method,
    pub seed_size: usize,
    pub k: usize,
    pub history: Vec<ActiveIteration>,
    /// Why the run stopped early, if it did.
    pub aborted: Option<String>,
}

impl ActiveRun {
    /// Every pool index labeled so far, in labeling order.
    pub fn labeled(&self) -> Vec<usize> {
        self.history.iter().flat_map(|h| h.chosen.iter().copied()).collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for h in &self.history {
            serde_json::to_writer(&mut w, h)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn log_selectivity(net: &DenseNet, x: &[f64]) -> Result<f64> {
    let t = net.label_transform.as_ref().ok_or(Error::Untrained)?;
    Ok(net.predict(x)? * t.std + t.mean)
}

/// MSE of predicted against true ln-selectivity, a space shared by models
/// with different label transforms.
pub fn log_space_mse(net: &DenseNet, samples: &[DenseSample]) -> Result<f64> {
    let mut sum = 0.0;
    for s in samples {
        sum += (log_selectivity(net, &s.x)? - s.selectivity.max(SELECTIVITY_FLOOR).ln()).powi(2);
    }
    Ok(sum / samples.len().max(1) as f64)
}

/// Batch-mode active learning. Each iteration bootstraps a committee from the
/// labeled set, picks `k` pool points, asks `labeler` for their
/// selectivities, and retrains the reporting model. A labeler failure ends
/// the run with the history so far and the reason in `aborted`.
pub fn active_learn(
    seed_set: &[DenseSample],
    pool: &[Vec<f64>],
    validation: &[DenseSample],
    labeler: &mut dyn FnMut(&[usize]) -> Result<Vec<f64>>,
    cfg: &ActiveConfig,
) -> Result<ActiveRun> {
    if cfg.committee_size < 2 && cfg.method != Method::Random {
        return Err(Error::InvalidArgument("a committee needs at least two members".into()));
    }
    if cfg.iterations == 0 || cfg.k == 0 {
        return Err(Error::InvalidArgument("iterations and k must be positive".into()));
    }
    if pool.len() < cfg.k * cfg.iterations {
        return Err(Error::InvalidArgument(format!(
            "pool of {} cannot supply {} iterations of {}",
            pool.len(),
            cfg.iterations,
            cfg.k
        )));
    }
    if seed_set.is_empty() || validation.is_empty() {
        return Err(Error::InvalidArgument("seed and validation sets must be nonempty".into()));
    }
    let width = seed_set[0].x.len();
    let mut labeled: Vec<DenseSample> = seed_set.to_vec();
    let mut remaining: Vec<usize> = (0..pool.len()).collect();
    let mut run = ActiveRun { method: cfg.method, seed_size: seed_set.len(), k: cfg.k, history: Vec::new(), aborted: None };
    for it in 0..cfg.iterations {
        let start = Instant::now();
        let it_tag = it as u64;
        let picks: Vec<usize> = match cfg.method {
            Method::Random => {
                let mut rng = seed::rng_for(cfg.seed, &[it_tag, seed::tag("random")]);
                sample(&mut rng, remaining.len(), cfg.k).into_vec()
            }
            Method::Qbc | Method::QbcCluster => {
                let members: Vec<u64> = (0..cfg.committee_size as u64).map(|m| seed::derive(cfg.seed, &[it_tag, m])).collect();
                let hyper = Hyper { batch_size: cfg.committee_hyper.batch_size.min(labeled.len()), ..cfg.committee_hyper };
                let committee = members
                    .par_iter()
                    .map(|&s| {
                        let mut rng = seed::rng_for(s, &[seed::tag("bootstrap")]);
                        let boot: Vec<DenseSample> =
                            (0..labeled.len()).map(|_| labeled[rng.random_range(0..labeled.len())].clone()).collect();
                        let net = DenseNet::init(cfg.arch, width, s)?;
                        let (net, _) = train(net, &boot, validation, &hyper, s)?;
                        remaining.iter().map(|&j| log_selectivity(&net, &pool[j])).collect::<Result<Vec<f64>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                if cfg.method == Method::Qbc {
                    qbc_select(&committee, cfg.k)?
                } else {
                    let candidates: Vec<Vec<f64>> = remaining.iter().map(|&j| pool[j].clone()).collect();
                    qbc_cluster_select(&candidates, &committee, cfg.k, seed::derive(cfg.seed, &[it_tag, seed::tag("kmeans")]))?
                }
            }
        };
        let chosen: Vec<usize> = picks.iter().map(|&p| remaining[p]).collect();
        let labels = match labeler(&chosen) {
            Ok(l) if l.len() == chosen.len() => l,
            Ok(l) => {
                run.aborted = Some(format!("labeler returned {} labels for {} queries", l.len(), chosen.len()));
                break;
            }
            Err(e) => {
                run.aborted = Some(e.to_string());
                break;
            }
        };
        let mut taken = picks.clone();
        taken.sort_unstable_by(|a, b| b.cmp(a));
        for p in taken {
            remaining.remove(p);
        }
        labeled.extend(chosen.iter().zip(labels).map(|(&j, s)| DenseSample { x: pool[j].clone(), selectivity: s }));
        let report_seed = seed::derive(cfg.seed, &[it_tag, seed::tag("report")]);
        let hyper = Hyper { batch_size: cfg.report_hyper.batch_size.min(labeled.len()), ..cfg.report_hyper };
        let (net, _) = train(DenseNet::init(cfg.arch, width, report_seed)?, &labeled, validation, &hyper, report_seed)?;
        run.history.push(ActiveIteration {
            method: cfg.method,
            iteration: it + 1,
            chosen,
            labeled_size: labeled.len(),
            validation_loss: log_space_mse(&net, validation)?,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(run)
}
