mod config;
mod json;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use crossfit_core::sim::{self, read_trials_csv, run_scenario, summarize, write_summary_csv, write_trials_csv};
use crossfit_core::{
    run_method, EstimandSpec, LabeledDataset, Method, MethodSettings, Resampling, TrainerSpec, UnlabeledDataset,
};

use json::{EstimateOutput, RunShape};

#[derive(Parser)]
#[command(name = "crossfit", version, about = "Cross-prediction confidence intervals and coverage simulations")]
struct Cli {
    /// Worker threads (default: number of logical processors).
    #[arg(long, global = true, env = "CROSSFIT_JOBS")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Confidence interval for one estimand on a labeled/unlabeled CSV pair.
    Estimate(EstimateArgs),
    /// Run the scenarios in a config file and write trials.csv and summary.csv.
    Simulate(SimulateArgs),
    /// Summarize a trials.csv.
    Report(ReportArgs),
}

#[derive(Args)]
struct EstimateArgs {
    /// Headered CSV with columns x1..xp,y.
    #[arg(long)]
    labeled: PathBuf,
    /// Headered CSV with columns x1..xp.
    #[arg(long)]
    unlabeled: PathBuf,
    /// mean | quantile:<q> | ols:<c1,c2,..>:<coord> | logit:<cols>:<coord>; columns
    /// and the reported coordinate count from 1
    #[arg(long, default_value = "mean")]
    estimand: EstimandSpec,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 30)]
    boot: usize,
    /// stumps[:<rounds>:<lr>:<min_leaf>] | ridge:<lambda> | knn:<k> | mean | biased:<offset>:<inner>
    #[arg(long, default_value = "stumps")]
    trainer: TrainerSpec,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// cross | classical | ppi[:<fraction>] | nodebias | nofolds
    #[arg(long, default_value = "cross")]
    method: Method,
    /// Draw bootstrap samples with replacement.
    #[arg(long)]
    with_replacement: bool,
    /// Bootstrap sample size (default: the size of a cross-fitting training set).
    #[arg(long)]
    resample_size: Option<usize>,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Print summary.csv rows instead of an aligned table.
    #[arg(long)]
    csv: bool,
}

/// Exit status 2 for bad arguments or configs, 1 for failures while
/// computing.
enum Failure {
    Usage(anyhow::Error),
    Compute(anyhow::Error),
}

fn classify(e: crossfit_core::Error) -> Failure {
    use crossfit_core::Error as E;
    match e {
        E::InvalidConfig(_) | E::DimensionMismatch(_) | E::NonFinite { .. } | E::Input(_) => {
            Failure::Usage(e.into())
        }
        _ => Failure::Compute(e.into()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(p) => p,
        Err(e) => return report_failure(Failure::Compute(e.into())),
    };
    let result = pool.install(|| match cli.command {
        Command::Estimate(args) => estimate(args),
        Command::Simulate(args) => simulate(args, jobs),
        Command::Report(args) => report(args),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report_failure(f),
    }
}

fn report_failure(f: Failure) -> ExitCode {
    match f {
        Failure::Usage(e) => {
            eprintln!("error: {e:#}");
            eprintln!("\nFor usage, run `crossfit --help`.");
            ExitCode::from(2)
        }
        Failure::Compute(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn with_path(path: &Path) -> impl Fn(crossfit_core::Error) -> Failure + '_ {
    move |e| match classify(e) {
        Failure::Usage(e) => Failure::Usage(e.context(format!("reading {}", path.display()))),
        other => other,
    }
}

fn estimate(args: EstimateArgs) -> Result<(), Failure> {
    let labeled = LabeledDataset::from_csv_path(&args.labeled).map_err(with_path(&args.labeled))?;
    let unlabeled = UnlabeledDataset::from_csv_path(&args.unlabeled).map_err(with_path(&args.unlabeled))?;
    let mut settings = MethodSettings::new(args.folds, args.boot, args.alpha, args.trainer.clone());
    if args.with_replacement {
        settings.resampling = Resampling::WithReplacement;
    }
    settings.resample_size = args.resample_size;
    let report = run_method(&args.estimand, &labeled, &unlabeled, args.method, &settings, args.seed)
        .map_err(classify)?;
    let output = EstimateOutput::new(
        &report,
        RunShape {
            estimand: args.estimand.to_string(),
            trainer: args.trainer.to_string(),
            n: labeled.len(),
            big_n: unlabeled.len(),
            folds: args.folds,
            bootstrap: args.boot,
        },
    );
    let mut text = serde_json::to_string_pretty(&output).map_err(|e| Failure::Compute(e.into()))?;
    text.push('\n');
    let written = match &args.out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => io::stdout().write_all(text.as_bytes()).context("writing stdout"),
    };
    written.map_err(Failure::Usage)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(Failure::Usage)
}

fn simulate(args: SimulateArgs, jobs: usize) -> Result<(), Failure> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))
        .map_err(Failure::Usage)?;
    let scenarios = config::parse_config(&text)
        .with_context(|| format!("in {}", args.config.display()))
        .map_err(Failure::Usage)?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .map_err(Failure::Usage)?;

    let mut records = Vec::new();
    let mut summary = Vec::new();
    for scenario in &scenarios {
        let outcome = run_scenario(scenario, Some(jobs)).map_err(classify)?;
        print_scenario_line(scenario, &outcome);
        records.extend(outcome.records);
        summary.extend(outcome.summary);
    }
    let io_fail = |e: crossfit_core::Error| Failure::Compute(e.into());
    write_trials_csv(create(&args.out.join("trials.csv"))?, &records).map_err(io_fail)?;
    write_summary_csv(create(&args.out.join("summary.csv"))?, &summary).map_err(io_fail)?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn print_scenario_line(config: &sim::ScenarioConfig, outcome: &sim::ScenarioOutcome) {
    let parts: Vec<String> = outcome
        .summary
        .iter()
        .map(|s| {
            let mut part = format!(
                "{} cov={} width={}",
                s.method,
                fmt_opt(s.coverage),
                fmt_opt(s.mean_width)
            );
            if let Some(f) = s.failures.filter(|&f| f > 0) {
                part.push_str(&format!(" failed={f}"));
            }
            part
        })
        .collect();
    println!(
        "{} [config {}] trials={} truth={}: {}",
        config.name,
        outcome.config_hash,
        config.trials,
        outcome.truth,
        parts.join("; ")
    );
}

fn report(args: ReportArgs) -> Result<(), Failure> {
    let file = File::open(&args.input)
        .with_context(|| format!("opening {}", args.input.display()))
        .map_err(Failure::Usage)?;
    // a malformed trials file is a failure of the data, not of the arguments
    let records = read_trials_csv(file)
        .map_err(|e| Failure::Compute(anyhow::Error::from(e).context(format!("reading {}", args.input.display()))))?;
    let summary = summarize(&records);
    let stdout = io::stdout();
    if args.csv {
        // trials.csv does not record failures, so that column stays blank
        return write_summary_csv(stdout.lock(), &summary).map_err(|e| Failure::Compute(e.into()));
    }
    let mut out = stdout.lock();
    let write = |out: &mut io::StdoutLock, s: String| writeln!(out, "{s}").map_err(|e| Failure::Compute(e.into()));
    write(
        &mut out,
        format!(
            "{:<28} {:<12} {:>6} {:>9} {:>11} {:>9} {:>9}",
            "scenario", "method", "trials", "coverage", "mean_width", "sd_lower", "sd_upper"
        ),
    )?;
    for s in &summary {
        write(
            &mut out,
            format!(
                "{:<28} {:<12} {:>6} {:>9} {:>11} {:>9} {:>9}",
                s.scenario,
                s.method,
                s.trials,
                fmt_opt(s.coverage),
                fmt_opt(s.mean_width),
                fmt_opt(s.sd_lower),
                fmt_opt(s.sd_upper)
            ),
        )?;
    }
    Ok(())
}
