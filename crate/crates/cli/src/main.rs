//! `stokeslab`: reproducible experiment runner.
//!
//! Every subcommand resolves its parameters from built-in defaults, an
//! optional JSON file (`--config`) and flags, in that order, then writes
//! `result.json`, its own data files and `manifest.json` into `--out`.
//! Failures are reported as a JSON object on stderr with a nonzero exit.

mod commands;
mod config;
mod output;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde_json::json;
use thiserror::Error;

use crate::commands::*;
use crate::config::{need, resolve, Layered};
use crate::output::{write_all, Outcome, RunRecord};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] stokeslab::Error),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization failure: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv failure: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Core(e) => e.kind(),
            CliError::Io(_) => "io",
            CliError::Json(_) => "json",
            CliError::Csv(_) => "csv",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "stokeslab",
    version,
    about = "Weighted decay, exterior-domain and time-periodic Navier-Stokes experiments on a periodic cube"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the A_q product of a radial power weight over cubes and classify it.
    #[command(
        after_help = "Anchor: Muckenhoupt class A_q membership of <x>^alpha, which holds exactly when -n < alpha < n(q - 1)."
    )]
    CheckWeight(CheckWeightArgs),
    /// Analytic range of s (and alpha = s q) with <x>^(s q) in A_q.
    #[command(
        after_help = "Anchor: the exponent range -n < alpha < n(q - 1) of power weights in the Muckenhoupt class."
    )]
    AdmissibleRange(AdmissibleRangeArgs),
    /// Interval of weight exponents s allowed by the existence hypotheses.
    #[command(
        after_help = "Anchor: the weight window max(0, 2 - n/q2) < s < min{n(1 - 1/q1), n/2 (1 - 1/q12), n/2 (1 - 1/q22*)} of the time-periodic existence theorem."
    )]
    Feasibility(FeasibilityArgs),
    /// Weighted L^q norm of the centred maximal function on corpus fields.
    #[command(
        after_help = "Anchor: boundedness of the Hardy-Littlewood maximal operator on L^q with a Muckenhoupt weight."
    )]
    Maximal(MaximalArgs),
    /// Measured two-weight decay of the Stokes semigroup against the predicted rate.
    #[command(
        after_help = "Anchor: the L^p_s -> L^q_s0 estimate of grad^|alpha| e^{-tA} P with rate t^(-n/2 (1/p - 1/q) - |alpha|/2) (1 + t)^(-(s - s0)/2), uniformly in t > 0."
    )]
    Decay(DecayArgs),
    /// Riesz potential I_lambda of corpus fields and its L^p -> L^q ratio.
    #[command(
        after_help = "Anchor: the fractional integral I_lambda that dominates the heat kernel, bounded L^p -> L^q for 1/q = 1/p - lambda/n."
    )]
    FracIntegral(FracIntegralArgs),
    /// Apply the annulus Bogovskii operator to a test bump and check div B[f] = f.
    #[command(
        after_help = "Anchor: the Bogovskii operator on D_R = {R < |x| < R + 1}: div B[f] = f with B[f] supported in D_R."
    )]
    BogovskiiTest(BogovskiiArgs),
    /// Solenoidal extension of a corpus field across the cut-off shell.
    #[command(
        after_help = "Anchor: the extension v0 = (1 - phi_R) u0 + B[(grad phi_R) . u0], divergence-free and equal to u0 outside B_{R+3}."
    )]
    Extend(ExtendArgs),
    /// Time-periodic mild solution by Picard iteration of the Poincare map.
    #[command(
        after_help = "Anchor: time-periodic mild solutions as fixed points of the Poincare map H[u] for small forcing."
    )]
    SolvePeriodic(SolvePeriodicArgs),
    /// Solve, then re-integrate one period and report |u(T) - u(0)| / |u(0)|.
    #[command(after_help = "Anchor: periodicity u(t + T) = u(t) of the mild solution obtained as a fixed point.")]
    PeriodicityCheck(PeriodicityCheckArgs),
    /// Solve, then compare the weighted solution norm with the forcing norm |f|_s.
    #[command(
        after_help = "Anchor: the weighted bound of the periodic solution in L^q1_s with gradient in L^q2_s by the forcing norm |f|_s."
    )]
    WeightedReport(WeightedReportArgs),
}

fn execute<T: Layered>(
    name: &str,
    flags: T,
    op: fn(&T) -> Result<Outcome, CliError>,
) -> Result<serde_json::Value, CliError> {
    let args = resolve(flags, name)?;
    let run = args.run();
    let threads = match run.threads {
        Some(0) => return Err(CliError::Config("threads must be at least 1".into())),
        Some(t) => {
            // A pool built earlier in the process wins; that only happens in tests.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
            t
        }
        None => rayon::current_num_threads(),
    };
    let out: PathBuf = need(run.out.clone(), "out")?;
    let seed = need(run.seed, "seed")?;
    let start = Instant::now();
    let outcome = op(&args)?;
    let wall_time = start.elapsed().as_secs_f64();
    let mut config = serde_json::to_value(&args)?;
    config["subcommand"] = json!(name);
    let record = RunRecord {
        subcommand: name,
        config: &config,
        seed,
        threads,
        wall_time,
    };
    write_all(&out, &outcome, &record)?;
    Ok(outcome.summary)
}

fn dispatch(command: Command) -> (&'static str, Result<serde_json::Value, CliError>) {
    match command {
        Command::CheckWeight(a) => ("check-weight", execute("check-weight", a, check_weight)),
        Command::AdmissibleRange(a) => ("admissible-range", execute("admissible-range", a, admissible)),
        Command::Feasibility(a) => ("feasibility", execute("feasibility", a, feasibility_cmd)),
        Command::Maximal(a) => ("maximal", execute("maximal", a, maximal)),
        Command::Decay(a) => ("decay", execute("decay", a, decay)),
        Command::FracIntegral(a) => ("frac-integral", execute("frac-integral", a, frac_integral)),
        Command::BogovskiiTest(a) => ("bogovskii-test", execute("bogovskii-test", a, bogovskii_test)),
        Command::Extend(a) => ("extend", execute("extend", a, extend)),
        Command::SolvePeriodic(a) => ("solve-periodic", execute("solve-periodic", a, solve_periodic)),
        Command::PeriodicityCheck(a) => ("periodicity-check", execute("periodicity-check", a, periodicity)),
        Command::WeightedReport(a) => ("weighted-report", execute("weighted-report", a, weighted)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            let _ = e.print();
            return ExitCode::from(2);
        }
        Err(e) => {
            let body = json!({ "error": "usage", "message": e.to_string().trim_end() });
            eprintln!("{body}");
            return ExitCode::from(2);
        }
    };
    let (name, result) = dispatch(cli.command);
    match result {
        Ok(summary) => {
            let text = serde_json::to_string_pretty(&config::canonical(&summary)).unwrap_or_default();
            // A closed stdout (e.g. piped into `head`) is not a failure of the run.
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let body = json!({ "error": e.kind(), "subcommand": name, "message": e.to_string() });
            eprintln!("{body}");
            ExitCode::from(e.exit_code())
        }
    }
}
