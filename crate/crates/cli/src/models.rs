//! Model files and the training dispatch shared by `train` and `robustness`.

use std::path::Path;
use std::time::Instant;

use cardlab::estimator::{Estimator, TruthEstimator};
use cardlab::featurize::{encode_flat, encode_sequence, EncodingSpec, LabelTransform};
use cardlab::forest::{fit_boosted, fit_forest, Ensemble, EnsembleEstimator, EnsembleFile, TreeParams};
use cardlab::histo::{build_stats, HistogramEstimator};
use cardlab::lab::{grid_search, GridSpec};
use cardlab::memo::{MemoEstimator, MemoTable};
use cardlab::neural::{
    self, parse_arch, DenseArch, DenseEstimator, DenseNet, DenseSample, Hyper, LoadedNet, NetFile, RecurrentArch,
    RecurrentEstimator, RecurrentNet, SeqMode, SeqSample, TrainReport,
};
use cardlab::relstore::Database;
use cardlab::seed;
use cardlab::workload::{self, LabeledExample};
use cardlab::{Error, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::failure::Failure;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Nn,
    Rnn,
    Rf,
    Gbt,
    Memo,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Nn => "nn",
            ModelKind::Rnn => "rnn",
            ModelKind::Rf => "rf",
            ModelKind::Gbt => "gbt",
            ModelKind::Memo => "memo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum ModelBody {
    Net(NetFile),
    Ensemble(EnsembleFile),
    Memo(MemoTable),
}

/// Everything `evaluate` needs to rebuild an estimator, plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub name: String,
    pub model: ModelKind,
    pub arch: String,
    pub seed: u64,
    pub parameter_count: usize,
    pub train_seconds: f64,
    pub body: ModelBody,
}

impl ModelFile {
    pub fn read(path: &Path) -> std::result::Result<Self, Failure> {
        if !path.is_file() {
            return Err(Failure::data("E_MODEL_NOT_FOUND", format!("no model file at {}", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Failure::data("E_IO", format!("{}: {e}", path.display())))?;
        let file: ModelFile = serde_json::from_str(&text)
            .map_err(|e| Failure::data("E_PARSE", format!("{}: {e}", path.display())))?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Failure::data("E_PARSE", format!("unsupported model format version {}", file.format_version)));
        }
        Ok(file)
    }

    pub fn estimator(&self, spec: &EncodingSpec, db: &Database) -> Result<Box<dyn Estimator>> {
        let name = self.name.clone();
        let row_counts = db.row_counts();
        Ok(match &self.body {
            ModelBody::Net(f) => match f.clone().into_net()? {
                LoadedNet::Dense(net) => Box::new(DenseEstimator { name, net, spec: spec.clone(), row_counts }),
                LoadedNet::Recurrent(net) => Box::new(RecurrentEstimator { name, net, spec: spec.clone(), row_counts }),
            },
            ModelBody::Ensemble(f) => Box::new(EnsembleEstimator {
                name,
                model: f.model.clone(),
                label_transform: f.label_transform.clone(),
                spec: spec.clone(),
                row_counts,
            }),
            ModelBody::Memo(t) => {
                let mut table = t.clone();
                table.reindex();
                Box::new(MemoEstimator { name, table, spec: spec.clone() })
            }
        })
    }
}

/// One entry of an estimator list: a model file, `histo:<bins>` or `truth`.
pub enum EstimatorSource {
    File(ModelFile),
    Histogram(usize),
    Truth,
}

impl EstimatorSource {
    pub fn parse(entry: &str) -> std::result::Result<Self, Failure> {
        if entry == "truth" {
            return Ok(EstimatorSource::Truth);
        }
        if let Some(bins) = entry.strip_prefix("histo:") {
            return bins
                .parse::<usize>()
                .ok()
                .filter(|&b| b > 0)
                .map(EstimatorSource::Histogram)
                .ok_or_else(|| Failure::usage(format!("bad histogram bin count in `{entry}`")));
        }
        ModelFile::read(Path::new(entry)).map(EstimatorSource::File)
    }

    pub fn name(&self) -> String {
        match self {
            EstimatorSource::File(f) => f.name.clone(),
            EstimatorSource::Histogram(b) => format!("histo{b}"),
            EstimatorSource::Truth => "truth".into(),
        }
    }

    pub fn train_seconds(&self) -> f64 {
        match self {
            EstimatorSource::File(f) => f.train_seconds,
            _ => 0.0,
        }
    }

    pub fn is_memo(&self) -> bool {
        matches!(self, EstimatorSource::File(f) if f.model == ModelKind::Memo)
    }

    pub fn build<'a>(&self, spec: &EncodingSpec, db: &'a Database) -> Result<Box<dyn Estimator + 'a>> {
        Ok(match self {
            EstimatorSource::File(f) => f.estimator(spec, db)?,
            EstimatorSource::Histogram(bins) => {
                Box::new(HistogramEstimator { name: self.name(), stats: build_stats(db, *bins)? })
            }
            EstimatorSource::Truth => Box::new(TruthEstimator { db }),
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub kind: ModelKind,
    pub arch: String,
    pub grid: bool,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub patience: usize,
    pub weight_decay: f64,
    pub trees: Option<usize>,
    pub depth: Option<usize>,
    pub shrinkage: f64,
    pub rnn_mode: SeqMode,
    pub p: f64,
    pub deterministic: bool,
}

impl TrainSettings {
    fn hyper(&self, n_train: usize) -> Hyper {
        Hyper {
            lr: self.lr,
            batch_size: self.batch.min(n_train),
            max_epochs: self.epochs,
            patience: self.patience,
            min_delta: 1e-4,
            weight_decay: self.weight_decay,
        }
    }

    fn grid_spec(&self) -> GridSpec {
        GridSpec { epochs: self.epochs, patience: self.patience, weight_decay: self.weight_decay, ..GridSpec::default() }
    }
}

pub struct Trained {
    pub file: ModelFile,
    pub report: Value,
}

/// 10% of the examples, at least one, become validation data.
fn validation_split(examples: &[LabeledExample], seed: u64) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>)> {
    if examples.len() < 2 {
        return Err(Error::Degenerate(format!("need at least 2 training examples, got {}", examples.len())));
    }
    let val_n = ((examples.len() as f64 * 0.1).round() as usize).clamp(1, examples.len() - 1);
    workload::split(examples.to_vec(), val_n, seed::derive(seed, &[seed::tag("validation")]))
}

fn dense_samples(spec: &EncodingSpec, examples: &[LabeledExample]) -> Result<Vec<DenseSample>> {
    examples
        .iter()
        .map(|e| Ok(DenseSample { x: encode_flat(spec, &e.query)?.values, selectivity: e.selectivity }))
        .collect()
}

fn seq_samples(spec: &EncodingSpec, examples: &[LabeledExample], mode: SeqMode) -> Result<Vec<SeqSample>> {
    examples
        .iter()
        .map(|e| {
            let selectivities = match mode {
                SeqMode::ManyToOne => vec![e.selectivity],
                SeqMode::ManyToMany => {
                    if e.prefix_selectivities.len() != e.sequence.len() {
                        return Err(Error::InvalidArgument(
                            "many-to-many training needs prefix labels (label with --prefixes)".into(),
                        ));
                    }
                    e.prefix_selectivities.clone()
                }
            };
            let xs = encode_sequence(spec, &e.sequence)?.steps.into_iter().map(|s| s.values).collect();
            Ok(SeqSample { xs, selectivities })
        })
        .collect()
}

fn zero_time(mut r: TrainReport, deterministic: bool) -> TrainReport {
    if deterministic {
        r.wall_seconds = 0.0;
    }
    r
}

fn train_net<N: neural::Trainable + Clone>(
    net: N,
    train: &[N::Sample],
    val: &[N::Sample],
    s: &TrainSettings,
    seed: u64,
) -> Result<(N, Value)>
where
    N::Sample: Sync,
{
    if s.grid {
        let out = grid_search(&net, train, val, &s.grid_spec(), seed)?;
        let mut cells = out.cells;
        if s.deterministic {
            for c in &mut cells {
                if let Some(r) = &mut c.report {
                    r.wall_seconds = 0.0;
                }
            }
        }
        let report = json!({
            "best": out.best,
            "cells": cells,
            "extension": zero_time(out.extension, s.deterministic),
        });
        Ok((out.model, report))
    } else {
        let (net, report) = neural::train(net, train, val, &s.hyper(train.len()), seed)?;
        Ok((net, json!({ "hyper": s.hyper(train.len()), "training": zero_time(report, s.deterministic) })))
    }
}

/// Validation MSE of tree ensembles in label space.
fn label_mse(model: &Ensemble, x: &[Vec<f64>], y: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        sum += (model.predict(xi)? - yi).powi(2);
    }
    Ok(sum / x.len().max(1) as f64)
}

fn fit_ensemble(
    kind: ModelKind,
    x: &[Vec<f64>],
    y: &[f64],
    trees: usize,
    depth: Option<usize>,
    shrinkage: f64,
    seed: u64,
) -> Result<Ensemble> {
    let width = x.first().map_or(0, Vec::len);
    Ok(match kind {
        ModelKind::Rf => Ensemble::Forest(fit_forest(x, y, trees, &TreeParams::forest(width, depth), true, seed)?),
        _ => {
            let params = TreeParams { max_depth: depth, ..TreeParams::default() };
            Ensemble::Boosted(fit_boosted(x, y, trees, shrinkage, &params, seed)?)
        }
    })
}

fn train_trees(
    spec: &EncodingSpec,
    examples: &[LabeledExample],
    s: &TrainSettings,
    seed: u64,
) -> Result<(EnsembleFile, Value)> {
    let trees = s.trees.unwrap_or(if s.kind == ModelKind::Rf { 50 } else { 100 });
    let depth = s.depth.or(if s.kind == ModelKind::Rf { None } else { Some(8) });
    let fit_seed = seed::derive(seed, &[seed::tag("trees")]);
    let xy = |ex: &[LabeledExample], t: &LabelTransform| -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let x = dense_samples(spec, ex)?.into_iter().map(|d| d.x).collect();
        Ok((x, ex.iter().map(|e| t.apply(e.selectivity)).collect()))
    };
    let transform = LabelTransform::fit(&examples.iter().map(|e| e.selectivity).collect::<Vec<_>>())?;
    let (mut chosen_depth, mut chosen_shrinkage) = (depth, s.shrinkage);
    let mut cells = Vec::new();
    if s.grid {
        let (train, val) = validation_split(examples, seed)?;
        let (tx, ty) = xy(&train, &transform)?;
        let (vx, vy) = xy(&val, &transform)?;
        let shrinkages: Vec<f64> = if s.kind == ModelKind::Rf { vec![s.shrinkage] } else { vec![0.1, 0.5, 1.0] };
        let mut best = f64::INFINITY;
        for d in [Some(4), Some(8), Some(16), None] {
            for &eps in &shrinkages {
                let model = fit_ensemble(s.kind, &tx, &ty, trees, d, eps, fit_seed)?;
                let loss = label_mse(&model, &vx, &vy)?;
                cells.push(json!({ "depth": d, "shrinkage": eps, "val_loss": loss }));
                if loss < best {
                    best = loss;
                    (chosen_depth, chosen_shrinkage) = (d, eps);
                }
            }
        }
    }
    let (x, y) = xy(examples, &transform)?;
    let model = fit_ensemble(s.kind, &x, &y, trees, chosen_depth, chosen_shrinkage, fit_seed)?;
    let train_mse = label_mse(&model, &x, &y)?;
    let report = json!({
        "trees": trees,
        "depth": chosen_depth,
        "shrinkage": if s.kind == ModelKind::Gbt { Some(chosen_shrinkage) } else { None },
        "train_mse": train_mse,
        "grid": cells,
    });
    Ok((EnsembleFile::new(model, transform), report))
}

/// Trains one model on labeled examples; all randomness flows from `seed`.
pub fn train_model(
    db: &Database,
    spec: &EncodingSpec,
    examples: &[LabeledExample],
    s: &TrainSettings,
    seed: u64,
) -> Result<Trained> {
    if examples.is_empty() {
        return Err(Error::Degenerate("training set is empty".into()));
    }
    let start = Instant::now();
    let init_seed = seed::derive(seed, &[seed::tag("init")]);
    let shuffle_seed = seed::derive(seed, &[seed::tag("shuffle")]);
    let width = encode_flat(spec, &examples[0].query)?.values.len();
    let (body, mut report, parameter_count, arch) = match s.kind {
        ModelKind::Nn => {
            let (w, d) = parse_arch(&s.arch)?;
            let (train, val) = validation_split(examples, seed)?;
            let net = DenseNet::init(DenseArch::new(w, d), width, init_seed)?;
            let (net, report) = train_net(net, &dense_samples(spec, &train)?, &dense_samples(spec, &val)?, s, shuffle_seed)?;
            let count = net.parameter_count();
            (ModelBody::Net(NetFile::from(&net)), report, count, s.arch.clone())
        }
        ModelKind::Rnn => {
            let (w, d) = parse_arch(&s.arch)?;
            let (train, val) = validation_split(examples, seed)?;
            let arch = RecurrentArch { mode: s.rnn_mode, ..RecurrentArch::new(w, d) };
            let net = RecurrentNet::init(arch, width, init_seed)?;
            let (tr, va) = (seq_samples(spec, &train, s.rnn_mode)?, seq_samples(spec, &val, s.rnn_mode)?);
            let (net, report) = train_net(net, &tr, &va, s, shuffle_seed)?;
            let count = net.parameter_count();
            (ModelBody::Net(NetFile::from(&net)), report, count, s.arch.clone())
        }
        ModelKind::Rf | ModelKind::Gbt => {
            let (file, report) = train_trees(spec, examples, s, seed)?;
            let count = file.model.parameter_count();
            let arch = format!("{}t", report["trees"]);
            (ModelBody::Ensemble(file), report, count, arch)
        }
        ModelKind::Memo => {
            let mut table = MemoTable::new(width, s.p)?;
            for e in examples {
                table.insert(encode_flat(spec, &e.query)?.values, e.cardinality as f64)?;
            }
            let report = json!({ "entries": table.len(), "p": table.p });
            let count = table.size_metric();
            (ModelBody::Memo(table), report, count, format!("p{}", s.p))
        }
    };
    let train_seconds = if s.deterministic { 0.0 } else { start.elapsed().as_secs_f64() };
    let name = s.kind.as_str().to_string();
    if let Value::Object(m) = &mut report {
        m.insert("model".into(), json!(name));
        m.insert("parameter_count".into(), json!(parameter_count));
        m.insert("train_seconds".into(), json!(train_seconds));
        m.insert("examples".into(), json!(examples.len()));
        m.insert("row_counts".into(), json!(db.row_counts()));
    }
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        name,
        model: s.kind,
        arch,
        seed,
        parameter_count,
        train_seconds,
        body,
    };
    Ok(Trained { file, report })
}
