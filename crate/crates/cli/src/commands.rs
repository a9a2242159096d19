use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use cardlab::estimator::Estimator;
use cardlab::evalx::{self, easy_fraction, knee, median, percentile, split_easy_hard, ErrorRecord, TradeoffInput};
use cardlab::featurize::{build_spec, encode_flat, EncodingSpec};
use cardlab::lab::{self, active_learn, ActiveConfig, BudgetCandidate, Method};
use cardlab::neural::{parse_arch, DenseArch, DenseSample, SeqMode};
use cardlab::planner::{impact, write_impact_csv, ImpactRecord};
use cardlab::relstore::{generate_synthetic, parse_row_counts, ColumnRef, Database, DatabaseSchema};
use cardlab::seed;
use cardlab::workload::{self, label_one, LabeledExample, WorkloadRecord};
use cardlab::Error;
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use crate::failure::Failure;
use crate::models::{train_model, EstimatorSource, ModelKind, TrainSettings};
use crate::output::OutDir;

type Outcome = Result<(), Failure>;

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Base seed; every random choice derives from it.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// JSON file whose keys mirror long flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Record zero for every wall-clock field so outputs are byte-reproducible.
    #[arg(long)]
    pub deterministic: bool,
}

fn load_db(dir: &Path) -> Result<Database, Failure> {
    Ok(Database::load_dir(dir)?)
}

fn read_records(path: &Path) -> Result<Vec<WorkloadRecord>, Failure> {
    let f = File::open(path).map_err(|e| Error::File { path: path.to_path_buf(), source: e })?;
    Ok(workload::read_jsonl(BufReader::new(f))?)
}

fn read_examples(path: &Path) -> Result<Vec<LabeledExample>, Failure> {
    Ok(read_records(path)?.iter().map(WorkloadRecord::example).collect::<cardlab::Result<Vec<_>>>()?)
}

fn write_examples(out: &OutDir, name: &str, examples: &[LabeledExample]) -> Outcome {
    let records: Vec<WorkloadRecord> = examples.iter().map(WorkloadRecord::labeled).collect();
    workload::write_jsonl(out.create(name)?, &records)?;
    Ok(())
}

fn write_json(out: &OutDir, name: &str, value: &impl serde::Serialize) -> Outcome {
    out.write(name, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub schema: PathBuf,
    /// One count for every relation, or `name=count,...`.
    #[arg(long)]
    pub rows: String,
}

pub fn gen_data(a: &GenDataArgs) -> Outcome {
    let schema = DatabaseSchema::load(&a.schema)?;
    let counts = parse_row_counts(&a.rows, &schema)?;
    let db = generate_synthetic(&schema, &counts, seed::derive(a.common.seed, &[seed::tag("data")]))?;
    let mut out = OutDir::open(&a.common.out_dir)?;
    out.track("schema.json");
    for r in db.relations() {
        out.track(&format!("{}.csv", r.name()));
    }
    db.save_dir(out.path())?;
    out.commit();
    println!("wrote {} relations to {}", db.relations().len(), out.path().display());
    Ok(())
}

/// `2join`, `4join`, `6join` or a bare relation count.
fn parse_complexity(s: &str) -> Result<usize, Failure> {
    let digits = s.trim().strip_suffix("join").unwrap_or(s.trim());
    digits
        .parse::<usize>()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::usage(format!("bad complexity `{s}`; expected 2join, 4join, 6join or a count")))
}

#[derive(Args, Debug)]
pub struct GenWorkloadArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub db: PathBuf,
    /// Relations per query; a list draws `--n` queries for each entry.
    #[arg(long, value_delimiter = ',', required = true)]
    pub complexity: Vec<String>,
    /// Queries per complexity.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value = "workload.jsonl")]
    pub output: String,
}

pub fn gen_workload(a: &GenWorkloadArgs) -> Outcome {
    let db = load_db(&a.db)?;
    let mut records = Vec::new();
    for c in &a.complexity {
        let k = parse_complexity(c)?;
        let queries = workload::generate(&db, k, a.n, seed::derive(a.common.seed, &[seed::tag("workload"), k as u64]))?;
        let items = workload::sequenced(queries, seed::derive(a.common.seed, &[seed::tag("sequence"), k as u64]))?;
        records.extend(items.iter().map(|(q, s)| WorkloadRecord::unlabeled(q, s)));
    }
    let mut out = OutDir::open(&a.common.out_dir)?;
    workload::write_jsonl(out.create(&a.output)?, &records)?;
    out.commit();
    println!("wrote {} queries to {}", records.len(), out.path().join(&a.output).display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct LabelArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub db: PathBuf,
    #[arg(long)]
    pub workload: PathBuf,
    /// Also label every join-sequence prefix (needed by many-to-many rnn).
    #[arg(long)]
    pub prefixes: bool,
    /// Additionally write a seeded train/test split with this many test queries.
    #[arg(long, default_value_t = 0)]
    pub test_n: usize,
    #[arg(long, default_value = "labeled.jsonl")]
    pub output: String,
}

pub fn label(a: &LabelArgs) -> Outcome {
    let db = load_db(&a.db)?;
    let items = read_records(&a.workload)?.iter().map(WorkloadRecord::item).collect::<cardlab::Result<Vec<_>>>()?;
    let labeled = workload::label(&db, &items, a.prefixes)?;
    let mut out = OutDir::open(&a.common.out_dir)?;
    write_examples(&out, &a.output, &labeled)?;
    if a.test_n > 0 {
        let (train, test) = workload::split(labeled.clone(), a.test_n, seed::derive(a.common.seed, &[seed::tag("test")]))?;
        write_examples(&out, "train.jsonl", &train)?;
        write_examples(&out, "test.jsonl", &test)?;
    }
    out.commit();
    println!("labeled {} queries", labeled.len());
    Ok(())
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RnnMode {
    ManyToMany,
    ManyToOne,
}

#[derive(Args, Debug, Clone)]
pub struct TrainingFlags {
    /// Network shape `<width>w,<depth>d`.
    #[arg(long, default_value = "100w,1d")]
    pub arch: String,
    /// Grid-search learning rate and batch size (trees: depth and shrinkage).
    #[arg(long)]
    pub grid: bool,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    /// Trees or boosting stages (default 50 for rf, 100 for gbt).
    #[arg(long)]
    pub trees: Option<usize>,
    /// Maximum tree depth (default unlimited for rf, 8 for gbt).
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub shrinkage: f64,
    #[arg(long, value_enum, default_value = "many-to-many")]
    pub rnn_mode: RnnMode,
    /// Minkowski order of the memo table's nearest-neighbour fallback.
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
}

impl TrainingFlags {
    fn settings(&self, kind: ModelKind, deterministic: bool) -> TrainSettings {
        TrainSettings {
            kind,
            arch: self.arch.clone(),
            grid: self.grid,
            epochs: self.epochs,
            lr: self.lr,
            batch: self.batch,
            patience: self.patience,
            weight_decay: self.weight_decay,
            trees: self.trees,
            depth: self.depth,
            shrinkage: self.shrinkage,
            rnn_mode: match self.rnn_mode {
                RnnMode::ManyToMany => SeqMode::ManyToMany,
                RnnMode::ManyToOne => SeqMode::ManyToOne,
            },
            p: self.p,
            deterministic,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub model: ModelKind,
    #[arg(long)]
    pub db: PathBuf,
    /// Labeled training workload.
    #[arg(long)]
    pub train: PathBuf,
    #[command(flatten)]
    pub training: TrainingFlags,
    #[arg(long, default_value = "model.json")]
    pub output: String,
}

pub fn train(a: &TrainArgs) -> Outcome {
    let db = load_db(&a.db)?;
    let spec = build_spec(&db)?;
    let examples = read_examples(&a.train)?;
    let settings = a.training.settings(a.model, a.common.deterministic);
    let trained = train_model(&db, &spec, &examples, &settings, a.common.seed)?;
    let mut out = OutDir::open(&a.common.out_dir)?;
    out.write(&a.output, &(serde_json::to_string(&trained.file)? + "\n"))?;
    let stem = a.output.strip_suffix(".json").unwrap_or(&a.output);
    write_json(&out, &format!("{stem}_report.json"), &trained.report)?;
    out.commit();
    println!("{} model with {} parameters", trained.file.name, trained.file.parameter_count);
    Ok(())
}

/// Estimates for every example, in input order.
fn estimate_all(est: &dyn Estimator, examples: &[LabeledExample]) -> cardlab::Result<Vec<f64>> {
    examples.par_iter().map(|e| est.estimate(&e.query)).collect()
}

fn error_records(name: &str, est: &dyn Estimator, examples: &[LabeledExample]) -> cardlab::Result<Vec<ErrorRecord>> {
    let truths: Vec<f64> = examples.iter().map(|e| e.cardinality as f64).collect();
    let complexities: Vec<usize> = examples.iter().map(|e| e.query.relations.len()).collect();
    evalx::errors(name, &truths, &estimate_all(est, examples)?, &complexities)
}

fn absolute(records: &[ErrorRecord]) -> Vec<f64> {
    records.iter().map(|r| r.absolute).collect()
}

/// Distinct display names: repeats get `-2`, `-3`, ... suffixes.
fn unique_names(names: Vec<String>) -> Vec<String> {
    let mut seen = std::collections::BTreeMap::<String, usize>::new();
    names
        .into_iter()
        .map(|n| {
            let c = seen.entry(n.clone()).or_insert(0);
            *c += 1;
            if *c == 1 { n } else { format!("{n}-{c}") }
        })
        .collect()
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Model files, `histo:<bins>` or `truth`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub models: Vec<String>,
    #[arg(long)]
    pub db: PathBuf,
    /// Labeled test workload.
    #[arg(long)]
    pub test: PathBuf,
    /// Parameter budget for model selection.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Halve each knee before splitting.
    #[arg(long)]
    pub knee_halve: bool,
}

pub fn evaluate(a: &EvaluateArgs) -> Outcome {
    let sources = a.models.iter().map(|m| EstimatorSource::parse(m)).collect::<Result<Vec<_>, _>>()?;
    let db = load_db(&a.db)?;
    let spec = build_spec(&db)?;
    let test = read_examples(&a.test)?;
    if test.is_empty() {
        return Err(Error::Degenerate("test workload is empty".into()).into());
    }
    let names = unique_names(sources.iter().map(EstimatorSource::name).collect());
    let mut inputs = Vec::new();
    for (src, name) in sources.iter().zip(&names) {
        let est = src.build(&spec, &db)?;
        inputs.push(TradeoffInput {
            estimator: name.clone(),
            records: error_records(name, est.as_ref(), &test)?,
            parameter_count: est.parameter_count(),
            train_seconds: src.train_seconds(),
            reference: src.is_memo(),
        });
    }

    let mut out = OutDir::open(&a.common.out_dir)?;
    for name in ["tradeoff.csv", "tradeoff.dat"] {
        out.track(name);
    }
    for inp in &inputs {
        let stem = evalx::file_stem(&inp.estimator);
        out.track(&format!("errors_{stem}.csv"));
        out.track(&format!("cdf_{stem}.csv"));
    }
    evalx::tradeoff_report(out.path(), &inputs)?;

    let knees: Vec<Option<evalx::Knee>> = inputs.iter().map(|i| knee(&absolute(&i.records), a.knee_halve).ok()).collect();
    let mut knee_csv = String::from("estimator,k,knee_error,halved,easy,hard,easy_share\n");
    for (inp, kn) in inputs.iter().zip(&knees) {
        match kn {
            Some(kn) => {
                let s = split_easy_hard(&inp.records, kn.k, kn.halved)?;
                writeln!(
                    knee_csv,
                    "{},{},{},{},{},{},{}",
                    inp.estimator,
                    kn.k,
                    kn.error,
                    kn.halved,
                    s.easy.len(),
                    s.hard.len(),
                    s.easy_share()
                )
                .unwrap();
            }
            None => writeln!(knee_csv, "{},,,{},,,", inp.estimator, a.knee_halve).unwrap(),
        }
    }
    out.write("knee.csv", &knee_csv)?;

    // Easy/Hard partitions come from the first histogram baseline, or the
    // first estimator when no histogram was listed.
    let base = sources.iter().position(|s| matches!(s, EstimatorSource::Histogram(_))).unwrap_or(0);
    let mut ef = String::from("baseline,split,estimator,n,model_k,easy_fraction,median_abs\n");
    if let Some(bk) = knees[base] {
        let split = split_easy_hard(&inputs[base].records, bk.k, bk.halved)?;
        for (label, idx) in [("easy", &split.easy), ("hard", &split.hard)] {
            for (inp, kn) in inputs.iter().zip(&knees) {
                let subset: Vec<&ErrorRecord> = idx.iter().map(|&i| &inp.records[i]).collect();
                let frac = match (kn, subset.is_empty()) {
                    (Some(kn), false) => Some(easy_fraction(&subset, kn.k)?),
                    _ => None,
                };
                let med = if subset.is_empty() {
                    None
                } else {
                    Some(median(&subset.iter().map(|r| r.absolute).collect::<Vec<_>>())?)
                };
                writeln!(
                    ef,
                    "{},{label},{},{},{},{},{}",
                    inputs[base].estimator,
                    inp.estimator,
                    subset.len(),
                    fmt_opt(kn.map(|k| k.k)),
                    fmt_opt(frac),
                    fmt_opt(med)
                )
                .unwrap();
            }
        }
    }
    out.write("easy_fractions.csv", &ef)?;

    if let Some(budget) = a.budget {
        let candidates: Vec<BudgetCandidate> = inputs
            .iter()
            .map(|i| BudgetCandidate {
                name: i.estimator.clone(),
                parameter_count: i.parameter_count,
                validation_errors: absolute(&i.records),
            })
            .collect();
        let chosen = lab::select_within_budget(&candidates, budget);
        let rows: Vec<_> = candidates
            .iter()
            .map(|c| {
                json!({
                    "estimator": c.name,
                    "parameter_count": c.parameter_count,
                    "within_budget": c.parameter_count <= budget,
                    "median_abs": median(&c.validation_errors).ok(),
                })
            })
            .collect();
        write_json(
            &out,
            "budget.json",
            &json!({ "budget": budget, "selected": chosen.map(|i| candidates[i].name.clone()), "candidates": rows }),
        )?;
    }
    out.commit();
    println!("evaluated {} estimators on {} queries", inputs.len(), test.len());
    Ok(())
}

enum Scenario {
    RemoveSelection(ColumnRef, f64),
    RemoveJoin(BTreeSet<String>),
}

fn parse_scenario(s: &str) -> Result<Scenario, Failure> {
    let bad = || Failure::usage(format!("bad scenario `{s}`; expected remove-selection:<rel.col>:<frac> or remove-join:<rels>"));
    if let Some(rest) = s.strip_prefix("remove-selection:") {
        let (col, frac) = rest.rsplit_once(':').ok_or_else(bad)?;
        let (rel, c) = col.split_once('.').ok_or_else(bad)?;
        let frac: f64 = frac.parse().map_err(|_| bad())?;
        return Ok(Scenario::RemoveSelection(ColumnRef::new(rel, c), frac));
    }
    if let Some(rest) = s.strip_prefix("remove-join:") {
        let rels: BTreeSet<String> =
            rest.split(['+', ',']).map(str::trim).filter(|r| !r.is_empty()).map(String::from).collect();
        if rels.is_empty() {
            return Err(bad());
        }
        return Ok(Scenario::RemoveJoin(rels));
    }
    Err(bad())
}

#[derive(Args, Debug)]
pub struct RobustnessArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub scenario: String,
    #[arg(long)]
    pub db: PathBuf,
    /// Labeled workload to split by the scenario.
    #[arg(long)]
    pub workload: PathBuf,
    #[command(flatten)]
    pub training: TrainingFlags,
}

pub fn robustness(a: &RobustnessArgs) -> Outcome {
    let scenario = parse_scenario(&a.scenario)?;
    let db = load_db(&a.db)?;
    let spec = build_spec(&db)?;
    let examples = read_examples(&a.workload)?;
    let (kept, held) = match &scenario {
        Scenario::RemoveSelection(col, frac) => workload::remove_selection_values(
            &examples,
            &db,
            col,
            *frac,
            seed::derive(a.common.seed, &[seed::tag("robustness")]),
        )?,
        Scenario::RemoveJoin(rels) => workload::remove_join(&examples, rels)?,
    };
    if held.is_empty() {
        return Err(Error::Degenerate("the scenario holds out no queries".into()).into());
    }
    let mut out = OutDir::open(&a.common.out_dir)?;
    write_examples(&out, "scenario_train.jsonl", &kept)?;
    write_examples(&out, "scenario_test.jsonl", &held)?;
    let mut csv = String::from("scenario,estimator,train_n,test_n,median_abs,p25_abs,p75_abs,mean_rel,parameter_count\n");
    for kind in [ModelKind::Nn, ModelKind::Rf, ModelKind::Gbt, ModelKind::Memo] {
        let settings = a.training.settings(kind, a.common.deterministic);
        let trained = train_model(&db, &spec, &kept, &settings, seed::derive(a.common.seed, &[seed::tag(kind.as_str())]))?;
        let est = trained.file.estimator(&spec, &db)?;
        let records = error_records(kind.as_str(), est.as_ref(), &held)?;
        let abs = absolute(&records);
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            a.scenario,
            kind.as_str(),
            kept.len(),
            held.len(),
            median(&abs)?,
            percentile(&abs, 25.0)?,
            percentile(&abs, 75.0)?,
            evalx::mean_relative(&records),
            est.parameter_count()
        )
        .unwrap();
    }
    out.write("robustness.csv", &csv)?;
    out.commit();
    println!("robustness: trained on {}, tested on {} held-out queries", kept.len(), held.len());
    Ok(())
}

#[derive(Args, Debug)]
pub struct ActiveLearnArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub db: PathBuf,
    /// Unlabeled workload; seed, validation and pool sets are drawn from it.
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    #[arg(long, default_value_t = 100)]
    pub seed_size: usize,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[arg(long, default_value_t = 3)]
    pub iters: usize,
    #[arg(long, default_value_t = 5)]
    pub committee: usize,
    #[arg(long, default_value = "100w,1d")]
    pub arch: String,
    /// Epoch cap for committee and reporting models.
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub val_size: usize,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

pub fn active_learn_cmd(a: &ActiveLearnArgs) -> Outcome {
    let db = load_db(&a.db)?;
    let spec = build_spec(&db)?;
    let items = read_records(&a.pool)?.iter().map(WorkloadRecord::item).collect::<cardlab::Result<Vec<_>>>()?;
    let held = a.seed_size + a.val_size;
    if items.len() <= held {
        return Err(Failure::usage(format!("pool of {} queries cannot supply seed {} and validation {}", items.len(), a.seed_size, a.val_size)));
    }
    let (pool, rest) = workload::split(items, held, seed::derive(a.common.seed, &[seed::tag("active-split")]))?;
    let (seed_items, val_items) = rest.split_at(a.seed_size);
    let samples = |items: &[_]| -> cardlab::Result<Vec<DenseSample>> {
        let labeled = workload::label(&db, items, false)?;
        labeled.iter().map(|e| Ok(DenseSample { x: encode_flat(&spec, &e.query)?.values, selectivity: e.selectivity })).collect()
    };
    let seed_set = samples(seed_items)?;
    let validation = samples(val_items)?;
    let features = pool.iter().map(|(q, _)| Ok(encode_flat(&spec, q)?.values)).collect::<cardlab::Result<Vec<_>>>()?;

    let (w, d) = parse_arch(&a.arch)?;
    let mut cfg = ActiveConfig::new(a.method, a.k, a.iters, seed::derive(a.common.seed, &[seed::tag("active")]));
    cfg.committee_size = a.committee;
    cfg.arch = DenseArch::new(w, d);
    cfg.committee_hyper.max_epochs = a.epochs;
    cfg.report_hyper.max_epochs = a.epochs;
    let mut labeler = |chosen: &[usize]| -> cardlab::Result<Vec<f64>> {
        chosen
            .par_iter()
            .map(|&i| {
                let (q, s) = &pool[i];
                label_one(&db, q, s, false).map(|e| e.selectivity).map_err(|e| Error::Labeler(e.to_string()))
            })
            .collect()
    };
    let mut run = active_learn(&seed_set, &features, &validation, &mut labeler, &cfg)?;
    if a.common.deterministic {
        for h in &mut run.history {
            h.wall_seconds = 0.0;
        }
    }
    let mut out = OutDir::open(&a.common.out_dir)?;
    let mut log = out.create("active_run.jsonl")?;
    run.write_jsonl(&mut log)?;
    log.flush()?;
    drop(log);
    let sizes: Vec<usize> = run.history.iter().map(|h| h.labeled_size).collect();
    write_json(
        &out,
        "active_summary.json",
        &json!({
            "method": run.method,
            "seed_size": run.seed_size,
            "k": run.k,
            "labeled_sizes": sizes,
            "validation_loss": run.history.iter().map(|h| h.validation_loss).collect::<Vec<_>>(),
            "aborted": run.aborted,
        }),
    )?;
    // The log of an aborted run is kept for inspection.
    out.commit();
    if let Some(reason) = run.aborted {
        return Err(Error::Labeler(reason).into());
    }
    println!("active learning ({:?}) labeled sizes {:?}", run.method, sizes);
    Ok(())
}

#[derive(Args, Debug)]
pub struct PlanImpactArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub db: PathBuf,
    #[arg(long)]
    pub workload: PathBuf,
    /// Model files, `histo:<bins>` or `truth`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub estimators: Vec<String>,
}

pub fn plan_impact(a: &PlanImpactArgs) -> Outcome {
    let sources = a.estimators.iter().map(|m| EstimatorSource::parse(m)).collect::<Result<Vec<_>, _>>()?;
    let db = load_db(&a.db)?;
    let spec: EncodingSpec = build_spec(&db)?;
    let queries: Vec<_> =
        read_records(&a.workload)?.iter().map(WorkloadRecord::query).filter(|q| q.relations.len() >= 2).collect();
    if queries.is_empty() {
        return Err(Error::Degenerate("no multi-relation queries in the workload".into()).into());
    }
    let names = unique_names(sources.iter().map(EstimatorSource::name).collect());
    let mut all: Vec<ImpactRecord> = Vec::new();
    let mut summary = String::from("estimator,queries,mean_ratio,median_ratio,max_ratio,optimal_share\n");
    for (src, name) in sources.iter().zip(&names) {
        let est = src.build(&spec, &db)?;
        let mut records =
            queries.par_iter().enumerate().map(|(i, q)| impact(&db, i, q, est.as_ref())).collect::<cardlab::Result<Vec<_>>>()?;
        for r in &mut records {
            r.estimator = name.clone();
        }
        let ratios: Vec<f64> = records.iter().map(|r| r.ratio).collect();
        writeln!(
            summary,
            "{name},{},{},{},{},{}",
            ratios.len(),
            ratios.iter().sum::<f64>() / ratios.len() as f64,
            median(&ratios)?,
            ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ratios.iter().filter(|&&r| r == 1.0).count() as f64 / ratios.len() as f64
        )
        .unwrap();
        all.extend(records);
    }
    let mut out = OutDir::open(&a.common.out_dir)?;
    write_impact_csv(out.create("impact.csv")?, &all)?;
    out.write("impact_summary.csv", &summary)?;
    out.commit();
    println!("plan impact over {} queries", queries.len());
    Ok(())
}
