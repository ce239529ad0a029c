//! `twinfalsify` command-line front end.
//!
//! Exit codes: 0 success, 2 validation error, 3 twin protocol error,
//! 4 internal error.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use twinfalsify::intervals::Backend;
use twinfalsify::synth::TwinMode;
use twinfalsify::testing::Multiplicity;
use twinfalsify::Error;

#[derive(Debug, Parser)]
#[command(name = "twinfalsify", version, about = "Falsify digital twins against observational data")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Master seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads for per-hypothesis tests (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a confounded synthetic dataset and twin trajectories.
    Synth(SynthArgs),
    /// Split off a holdout and generate hypotheses from it.
    GenHypotheses(GenArgs),
    /// Run the gated tests with multiplicity control.
    Test(TestArgs),
    /// Rerun the tests with rescaled outcome intervals.
    Sensitivity(SensitivityArgs),
    /// Summarise a results file per outcome feature.
    Report(ReportArgs),
    /// synth, gen-hypotheses, test and report in one go.
    Demo(DemoArgs),
    /// Serve the built-in synthetic twin over the subprocess protocol.
    #[command(hide = true)]
    TwinServer(ServerArgs),
}

fn parse_backend(s: &str) -> Result<Backend, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_multiplicity(s: &str) -> Result<Multiplicity, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// `correct`, `shift:<delta>` or `inflate:<kappa>`.
fn parse_twin_mode(s: &str) -> Result<TwinMode, String> {
    let (kind, value) = s.split_once(':').unwrap_or((s, ""));
    let number = || value.parse::<f64>().map_err(|_| format!("twin mode {s:?} needs a number after ':'"));
    let mode = match kind {
        "correct" if value.is_empty() => TwinMode::Correct,
        "shift" => TwinMode::BiasedShift { delta: number()? },
        "inflate" => TwinMode::VarianceInflated { kappa: number()? },
        _ => return Err(format!("unknown twin mode {s:?} (correct, shift:<d>, inflate:<k>)")),
    };
    mode.validate().map_err(|e| e.to_string())?;
    Ok(mode)
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// SynthConfig JSON; built-in demo process when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Observational trajectories.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Twin trajectories per action sequence (default: n). 0 skips the twin.
    #[arg(long)]
    twin_n: Option<usize>,
    #[arg(long, default_value = "correct", value_parser = parse_twin_mode)]
    twin_mode: TwinMode,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    obs: PathBuf,
    /// GeneratorConfig JSON; median split of feature 0 at every step when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    holdout_fraction: f64,
}

#[derive(Debug, Args)]
pub struct TestInputs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    obs: PathBuf,
    /// Twin trajectories (JSONL, any number of action sequences).
    #[arg(long, conflicts_with = "twin_cmd", required_unless_present = "twin_cmd")]
    twin: Option<PathBuf>,
    /// External twin speaking the subprocess protocol, split on whitespace.
    #[arg(long)]
    twin_cmd: Option<String>,
    /// Requests per action sequence for --twin-cmd (default: all observed x0).
    #[arg(long)]
    twin_n: Option<usize>,
    /// Seconds to wait for each external twin response.
    #[arg(long, default_value_t = 30.0)]
    twin_timeout: f64,
    /// Requests in flight for --twin-cmd.
    #[arg(long, default_value_t = 64)]
    twin_window: usize,
    #[arg(long)]
    hypotheses: PathBuf,
    #[arg(long, default_value = "hoeffding", value_parser = parse_backend)]
    backend: Backend,
    /// Family-wise level and reference level for endpoints.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value = "holm", value_parser = parse_multiplicity)]
    multiplicity: Multiplicity,
    #[arg(long, default_value_t = twinfalsify::intervals::DEFAULT_RESAMPLES)]
    resamples: usize,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    inputs: TestInputs,
    /// Experimental: also write two-sided Hoeffding inferences at alpha/2 per side.
    #[arg(long)]
    two_sided: bool,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    #[command(flatten)]
    inputs: TestInputs,
    /// Comma-separated width changes; each interval becomes
    /// [y_lo (1 - d/2), y_up (1 + d/2)].
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    deltas: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    results: PathBuf,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value = "correct", value_parser = parse_twin_mode)]
    twin_mode: TwinMode,
    #[arg(long, default_value = "hoeffding", value_parser = parse_backend)]
    backend: Backend,
}

#[derive(Debug, Args)]
pub struct ServerArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "correct", value_parser = parse_twin_mode)]
    twin_mode: TwinMode,
}

fn exit_code(e: &Error) -> u8 {
    if e.is_protocol() {
        3
    } else if e.is_validation() || matches!(e, Error::Io { .. } | Error::Csv(_)) {
        2
    } else {
        4
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = std::panic::catch_unwind(|| commands::run(&cli));
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(4),
    }
}
