use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use chfl_core::gradcheck::{run_gradcheck, GradcheckConfig};
use chfl_harness::experiment::{run_experiment_with, RoundRecord};
use chfl_harness::report::{
    read_records, render_csv, render_table, report, write_outputs, TABLE_FILE,
};
use chfl_harness::sweep::{SweepWarning, DEFAULT_CANDIDATES};
use chfl_harness::{
    corr_split, self_check, sweep_clients, sweep_ratio, ExperimentResult, ExperimentSpec,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "chfl",
    version,
    about = "Cross-silo hybrid federated learning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SpecArgs {
    /// Experiment spec (TOML).
    spec: PathBuf,
    /// Output directory; defaults to the spec's `output` or runs/<name>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Do not stream per-round metrics to stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run every method of a spec over its feature splits and repeats.
    Run(SpecArgs),
    /// Repeat the protocol at several common-feature ratios.
    SweepRatio {
        #[command(flatten)]
        args: SpecArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5")]
        ratios: Vec<f64>,
    },
    /// Repeat the protocol at several client counts.
    SweepClients {
        #[command(flatten)]
        args: SpecArgs,
        #[arg(long, value_delimiter = ',', default_value = "2,5,10")]
        counts: Vec<usize>,
    },
    /// Run on the max-, median- and min-correlation feature splits.
    CorrSplit {
        #[command(flatten)]
        args: SpecArgs,
        #[arg(long, default_value_t = DEFAULT_CANDIDATES)]
        candidates: usize,
    },
    /// Check analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 25)]
        cases: usize,
    },
    /// Re-summarize a records.jsonl file.
    Report {
        records: PathBuf,
        /// Print CSV instead of the text table.
        #[arg(long)]
        csv: bool,
    },
}

fn print_round(r: &RoundRecord) {
    let mu = r.mu.map(|m| format!(" mu={m}")).unwrap_or_default();
    eprintln!(
        "[{} split {} seed {}] {}{mu} round {}: mean test acc {:.4}",
        r.dataset, r.split_id, r.seed, r.method, r.round, r.mean_test_acc
    );
}

fn load(args: &SpecArgs) -> Result<(ExperimentSpec, PathBuf)> {
    let spec = ExperimentSpec::load(&args.spec)?;
    let out = args
        .out
        .clone()
        .or_else(|| spec.output.clone())
        .unwrap_or_else(|| Path::new("runs").join(&spec.name));
    Ok((spec, out))
}

fn finish(out: &Path, result: &ExperimentResult, warnings: &[SweepWarning]) -> Result<()> {
    for w in warnings {
        eprintln!("warning: {}", w.message);
    }
    self_check(&result.records, &result.summaries).context("self-check failed")?;
    write_outputs(out, result, warnings)?;
    print!("{}", render_table(&result.summaries));
    eprintln!("wrote {}", out.join(TABLE_FILE).display());
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let sink = |r: &RoundRecord| print_round(r);
    match cli.command {
        Command::Run(args) => {
            let (mut spec, out) = load(&args)?;
            if !args.quiet {
                // Per-round lines are only meaningful when rounds are evaluated.
                spec.federation.eval_every_round = true;
            }
            let on_round: Option<&(dyn Fn(&RoundRecord) + Sync)> =
                if args.quiet { None } else { Some(&sink) };
            let result = run_experiment_with(&spec, on_round)?;
            finish(&out, &result, &[])?;
        }
        Command::SweepRatio { args, ratios } => {
            let (spec, out) = load(&args)?;
            let sweep = sweep_ratio(&spec, &ratios)?;
            finish(&out, &sweep.result, &sweep.warnings)?;
        }
        Command::SweepClients { args, counts } => {
            let (spec, out) = load(&args)?;
            let sweep = sweep_clients(&spec, &counts)?;
            finish(&out, &sweep.result, &sweep.warnings)?;
        }
        Command::CorrSplit { args, candidates } => {
            let (spec, out) = load(&args)?;
            let (sweep, choices) = corr_split(&spec, candidates)?;
            for c in &choices {
                eprintln!(
                    "{} correlation split: candidate {} score {:.4}",
                    c.label, c.candidate, c.score
                );
            }
            finish(&out, &sweep.result, &sweep.warnings)?;
        }
        Command::Gradcheck { seed, cases } => {
            let report = run_gradcheck(&GradcheckConfig {
                seed,
                cases,
                ..Default::default()
            })?;
            for c in report.failures() {
                eprintln!(
                    "FAIL {} mu={:?} dims {:?}/{:?}: relative error {:e}",
                    c.family, c.mu, c.common_dims, c.unique_dims, c.max_relative_error
                );
            }
            println!(
                "{} cases, worst relative error {:e} (tolerance {:e}): {}",
                report.cases.len(),
                report.max_relative_error,
                report.tolerance,
                if report.passed { "pass" } else { "FAIL" }
            );
            return Ok(report.passed);
        }
        Command::Report { records, csv } => {
            let summaries = report(&read_records(&records)?)?;
            if csv {
                print!("{}", render_csv(&summaries));
            } else {
                print!("{}", render_table(&summaries));
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
