//! `cardlab`: data generation, labeling, training and evaluation of
//! cardinality estimators from the command line.

mod commands;
mod config;
mod failure;
mod models;
mod output;

use std::ffi::OsString;

use clap::{CommandFactory, Parser, Subcommand};

use commands::*;
use failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "cardlab", version, about = "Learned cardinality estimation lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic database from a schema.
    GenData(GenDataArgs),
    /// Generate an unlabeled query workload.
    GenWorkload(GenWorkloadArgs),
    /// Attach exact cardinalities to a workload.
    Label(LabelArgs),
    /// Train an estimator on a labeled workload.
    Train(TrainArgs),
    /// Compare estimators on a labeled test workload.
    Evaluate(EvaluateArgs),
    /// Train on a workload with values or joins held out, test on the rest.
    Robustness(RobustnessArgs),
    /// Batch-mode active learning over an unlabeled pool.
    ActiveLearn(ActiveLearnArgs),
    /// Plan quality of join orders chosen from each estimator.
    PlanImpact(PlanImpactArgs),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenData(a) => &a.common,
            Command::GenWorkload(a) => &a.common,
            Command::Label(a) => &a.common,
            Command::Train(a) => &a.common,
            Command::Evaluate(a) => &a.common,
            Command::Robustness(a) => &a.common,
            Command::ActiveLearn(a) => &a.common,
            Command::PlanImpact(a) => &a.common,
        }
    }
}

fn run(args: Vec<OsString>) -> Result<(), Failure> {
    let args = config::merge(args, &Cli::command())?;
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return Ok(());
        }
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            return Err(Failure::usage(line.trim_start_matches("error: ").to_string()));
        }
    };
    if let Some(jobs) = cli.command.common().jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::usage(e.to_string()))?;
    }
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::GenWorkload(a) => gen_workload(a),
        Command::Label(a) => label(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Robustness(a) => robustness(a),
        Command::ActiveLearn(a) => active_learn_cmd(a),
        Command::PlanImpact(a) => plan_impact(a),
    }
}

fn main() {
    if let Err(f) = run(std::env::args_os().collect()) {
        eprintln!("{f}");
        std::process::exit(f.exit);
    }
}
