//! `dynoloc run | compare | validate`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 bad input (missing file,
//! unparsable or invalid scenario, bad flags).

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::ranging::simulate_link;
use crate::scheduler::Strategy;
use crate::simulator::{evaluate_run, median, run_scenario, EpochRecord, RunSummary, Scenario};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_BAD_INPUT: i32 = 2;

/// Fixed column set of `epochs.csv`.
pub const EPOCHS_COLUMNS: [&str; 10] = [
    "epoch",
    "node_id",
    "truth_x",
    "truth_y",
    "est_x",
    "est_y",
    "error_m",
    "localized",
    "component_id",
    "core_number",
];

/// Fixed column set of `compare.csv`.
pub const COMPARE_COLUMNS: [&str; 8] = [
    "strategy",
    "refresh_rate",
    "seed",
    "median",
    "mean",
    "p90",
    "pct_localized",
    "median_localized",
];

#[derive(Debug, Parser)]
#[command(name = "dynoloc", version, about = "Simulate latency-bounded cooperative UWB localization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one scenario and write epochs.csv, summary.json and trace.jsonl.
    Run(RunArgs),
    /// Run the strategy x seed x refresh-rate cross product.
    Compare(CompareArgs),
    /// Check a scenario file without simulating it.
    Validate {
        #[arg(long, short)]
        scenario: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, short)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Hz.
    #[arg(long, allow_negative_numbers = true)]
    pub refresh_rate: Option<f64>,
    #[arg(long, short, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, short)]
    pub scenario: PathBuf,
    /// At least two.
    #[arg(long, value_delimiter = ',', default_value = "dynoloc,h-agnos,h-dyn,random")]
    pub strategies: Vec<Strategy>,
    /// Number of seeds; runs use seeds first..first+N.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub first_seed: u64,
    /// Comma-separated sweep; defaults to the scenario's rate.
    #[arg(long, value_delimiter = ',')]
    pub refresh_rate: Vec<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, short, default_value = "out")]
    pub out: PathBuf,
}

/// Parse the process arguments, run, and return the exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::new().filter("DYNOLOC_LOG")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_BAD_INPUT } else { EXIT_OK };
        }
    };
    execute(cli)
}

pub fn execute(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Validate { scenario } => cmd_validate(&scenario),
    };
    match result {
        Ok(code) => code,
        Err(CliError { code, message }) => {
            eprintln!("error: {message}");
            code
        }
    }
}

#[derive(Debug)]
struct CliError {
    code: i32,
    message: String,
}

fn bad_input(message: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_BAD_INPUT,
        message: message.into(),
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError {
        code: EXIT_FAILURE,
        message: format!("{}: {e}", path.display()),
    }
}

/// Load and validate; every violation goes to stderr.
fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    if !path.exists() {
        return Err(bad_input(format!("scenario file not found: {}", path.display())));
    }
    let scenario = Scenario::load(path).map_err(|e| bad_input(e.to_string()))?;
    let violations = scenario.validate();
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("{}: {v}", path.display());
        }
        return Err(bad_input(format!("{}: {} invalid field(s)", path.display(), violations.len())));
    }
    Ok(scenario)
}

fn revalidate(s: &Scenario) -> Result<(), CliError> {
    match s.validate().first() {
        Some(v) => Err(bad_input(format!("override rejected: {v}"))),
        None => Ok(()),
    }
}

#[derive(Debug, Serialize)]
struct SummaryFile<'a> {
    scenario: String,
    strategy: &'a str,
    seed: u64,
    epochs: usize,
    refresh_rate: f64,
    nodes: usize,
    mobile_nodes: usize,
    #[serde(flatten)]
    summary: &'a RunSummary,
}

fn cmd_run(a: &RunArgs) -> Result<i32, CliError> {
    let mut s = load_scenario(&a.scenario)?;
    if let Some(st) = a.strategy {
        s.run.strategy = st;
    }
    if let Some(seed) = a.seed {
        s.run.seed = seed;
    }
    if let Some(e) = a.epochs {
        s.run.epochs = e;
    }
    if let Some(r) = a.refresh_rate {
        s.run.refresh_rate = r;
    }
    revalidate(&s)?;
    let records = run_scenario(&s).map_err(|e| CliError {
        code: EXIT_FAILURE,
        message: e.to_string(),
    })?;
    let summary = evaluate_run(&records);

    fs::create_dir_all(&a.out).map_err(|e| io_failure(&a.out, e))?;
    write_epochs_csv(&a.out.join("epochs.csv"), &records)?;
    write_trace(&a.out.join("trace.jsonl"), &records)?;
    let file = SummaryFile {
        scenario: a.scenario.display().to_string(),
        strategy: s.run.strategy.name(),
        seed: s.run.seed,
        epochs: s.run.epochs,
        refresh_rate: s.run.refresh_rate,
        nodes: s.nodes.len(),
        mobile_nodes: s.mobile_count(),
        summary: &summary,
    };
    let path = a.out.join("summary.json");
    let json = serde_json::to_string_pretty(&file).expect("summary serializes");
    fs::write(&path, json + "\n").map_err(|e| io_failure(&path, e))?;

    println!("median error: {:.3} m", summary.median_error);
    Ok(EXIT_OK)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_epochs_csv(path: &Path, records: &[EpochRecord]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_failure(path, e))?;
    let fail = |e: csv::Error| io_failure(path, e);
    w.write_record(EPOCHS_COLUMNS).map_err(fail)?;
    for r in records {
        for n in &r.nodes {
            w.write_record([
                r.epoch.to_string(),
                n.node_id.to_string(),
                n.truth.x.to_string(),
                n.truth.y.to_string(),
                opt(n.estimate.map(|p| p.x)),
                opt(n.estimate.map(|p| p.y)),
                opt(n.error_m),
                n.localized.to_string(),
                n.component_id.map(|c| c.to_string()).unwrap_or_default(),
                n.core_number.to_string(),
            ])
            .map_err(fail)?;
        }
    }
    w.flush().map_err(|e| io_failure(path, e))
}

fn write_trace(path: &Path, records: &[EpochRecord]) -> Result<(), CliError> {
    let f = File::create(path).map_err(|e| io_failure(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| io_failure(path, e))?;
        writeln!(w).map_err(|e| io_failure(path, e))?;
    }
    w.flush().map_err(|e| io_failure(path, e))
}

#[derive(Debug, Clone)]
struct CompareRow {
    strategy: Strategy,
    rate: f64,
    seed: u64,
    summary: RunSummary,
}

fn cmd_compare(a: &CompareArgs) -> Result<i32, CliError> {
    let mut strategies = a.strategies.clone();
    strategies.dedup();
    if strategies.len() < 2 {
        return Err(bad_input("compare needs at least two strategies"));
    }
    if a.seeds == 0 {
        return Err(bad_input("--seeds must be at least 1"));
    }
    let base = load_scenario(&a.scenario)?;
    let rates = if a.refresh_rate.is_empty() {
        vec![base.run.refresh_rate]
    } else {
        a.refresh_rate.clone()
    };

    let mut jobs = Vec::new();
    for &strategy in &strategies {
        for &rate in &rates {
            for seed in a.first_seed..a.first_seed + a.seeds {
                let mut s = base.clone();
                s.run.strategy = strategy;
                s.run.refresh_rate = rate;
                s.run.seed = seed;
                if let Some(e) = a.epochs {
                    s.run.epochs = e;
                }
                revalidate(&s)?;
                jobs.push((strategy, rate, seed, s));
            }
        }
    }
    let rows: Vec<CompareRow> = jobs
        .into_par_iter()
        .map(|(strategy, rate, seed, s)| {
            let records = run_scenario(&s)?;
            Ok(CompareRow {
                strategy,
                rate,
                seed,
                summary: evaluate_run(&records),
            })
        })
        .collect::<crate::Result<_>>()
        .map_err(|e| CliError {
            code: EXIT_FAILURE,
            message: e.to_string(),
        })?;

    fs::create_dir_all(&a.out).map_err(|e| io_failure(&a.out, e))?;
    let path = a.out.join("compare.csv");
    let fail = |e: csv::Error| io_failure(&path, e);
    let mut w = csv::Writer::from_path(&path).map_err(fail)?;
    w.write_record(COMPARE_COLUMNS).map_err(fail)?;
    for r in &rows {
        w.write_record([
            r.strategy.name().to_string(),
            r.rate.to_string(),
            r.seed.to_string(),
            r.summary.median_error.to_string(),
            r.summary.mean_error.to_string(),
            r.summary.p90_error.to_string(),
            r.summary.pct_localized.to_string(),
            r.summary.median_error_localized.to_string(),
        ])
        .map_err(fail)?;
    }
    w.flush().map_err(|e| io_failure(&path, e))?;

    let aggregate = aggregate_rows(&rows, &strategies, &rates);
    let path = a.out.join("compare_aggregate.csv");
    let fail = |e: csv::Error| io_failure(&path, e);
    let mut w = csv::Writer::from_path(&path).map_err(fail)?;
    w.write_record([
        "strategy",
        "refresh_rate",
        "runs",
        "median",
        "mean",
        "p90",
        "pct_localized",
        "low_confidence",
    ])
    .map_err(fail)?;
    println!(
        "{:<8} {:>6} {:>5} {:>8} {:>8} {:>8} {:>7}",
        "strategy", "rate", "runs", "median", "mean", "p90", "loc%"
    );
    for g in &aggregate {
        w.write_record([
            g.strategy.name().to_string(),
            g.rate.to_string(),
            g.runs.to_string(),
            g.median.to_string(),
            g.mean.to_string(),
            g.p90.to_string(),
            g.pct_localized.to_string(),
            g.low_confidence.to_string(),
        ])
        .map_err(fail)?;
        println!(
            "{:<8} {:>6} {:>5} {:>8.3} {:>8.3} {:>8.3} {:>6.1}%{}",
            g.strategy.name(),
            g.rate,
            g.runs,
            g.median,
            g.mean,
            g.p90,
            100.0 * g.pct_localized,
            if g.low_confidence { "  (low confidence: single seed)" } else { "" }
        );
    }
    w.flush().map_err(|e| io_failure(&path, e))?;
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, PartialEq)]
struct AggregateRow {
    strategy: Strategy,
    rate: f64,
    runs: usize,
    /// Median over runs of the per-run median error.
    median: f64,
    /// Mean over runs of the per-run mean error.
    mean: f64,
    /// Median over runs of the per-run 90th percentile.
    p90: f64,
    pct_localized: f64,
    low_confidence: bool,
}

fn aggregate_rows(rows: &[CompareRow], strategies: &[Strategy], rates: &[f64]) -> Vec<AggregateRow> {
    let mut out = Vec::new();
    for &strategy in strategies {
        for &rate in rates {
            let group: Vec<&RunSummary> = rows
                .iter()
                .filter(|r| r.strategy == strategy && r.rate == rate)
                .map(|r| &r.summary)
                .collect();
            let col = |f: fn(&RunSummary) -> f64| -> Vec<f64> {
                group.iter().map(|s| f(s)).filter(|v| v.is_finite()).collect()
            };
            let means = col(|s| s.mean_error);
            out.push(AggregateRow {
                strategy,
                rate,
                runs: group.len(),
                median: median(&col(|s| s.median_error)).unwrap_or(f64::NAN),
                mean: if means.is_empty() {
                    f64::NAN
                } else {
                    means.iter().sum::<f64>() / means.len() as f64
                },
                p90: median(&col(|s| s.p90_error)).unwrap_or(f64::NAN),
                pct_localized: group.iter().map(|s| s.pct_localized).sum::<f64>() / group.len().max(1) as f64,
                low_confidence: group.len() < 2,
            });
        }
    }
    out
}

fn cmd_validate(path: &Path) -> Result<i32, CliError> {
    let s = load_scenario(path)?;
    let walls = s.walls();
    let mut links = 0;
    for (i, a) in s.nodes.iter().enumerate() {
        for b in &s.nodes[i + 1..] {
            let p = |n: &crate::simulator::NodeSpec| crate::Point2::new(n.position[0], n.position[1]);
            if simulate_link(p(a), p(b), &walls, &s.radio).connected {
                links += 1;
            }
        }
    }
    println!(
        "{}: ok — {} nodes ({} mobile), {} links in range at deployment, {} walls, area {} x {} m ({} m^2)",
        path.display(),
        s.nodes.len(),
        s.mobile_count(),
        links,
        s.walls.len(),
        s.arena.width,
        s.arena.height,
        s.arena.width * s.arena.height
    );
    Ok(EXIT_OK)
}
