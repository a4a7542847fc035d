//! Command-line front end: argument parsing, settings resolution and the
//! five subcommands.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Streaming shifting seasonal matrix factorization.
#[derive(Debug, Parser)]
#[command(name = "ssmf", version, about)]
pub struct Cli {
    /// Plain-text `key = value` settings; command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for initialization and synthesis.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for all outputs (created if missing).
    #[arg(long, global = true, value_name = "PATH")]
    pub out_dir: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bin a delimited event file into a frame cache.
    Ingest(IngestArgs),
    /// Fit the engine over a frame cache; writes a checkpoint and regime trace.
    Run(RunArgs),
    /// Forecast future matrices from a checkpoint.
    Forecast(ForecastArgs),
    /// Rolling-origin forecast evaluation.
    Eval(EvalArgs),
    /// Generate a synthetic stream with planted regimes.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub row_col: Option<String>,
    #[arg(long)]
    pub col_col: Option<String>,
    #[arg(long)]
    pub time_col: Option<String>,
    /// Count column; each row counts 1 when absent.
    #[arg(long)]
    pub count_col: Option<String>,
    /// hourly, daily, weekly or a bin width in seconds.
    #[arg(long)]
    pub frequency: Option<String>,
    /// Time of frame 0; defaults to the start of the earliest event's bin.
    #[arg(long)]
    pub epoch: Option<String>,
    /// Field delimiter; defaults to tab for .tsv files and comma otherwise.
    #[arg(long)]
    pub delimiter: Option<char>,
    /// Season length stored in the cache; defaults to 24, 7 or 52 for
    /// hourly, daily or weekly frequency.
    #[arg(long)]
    pub season: Option<usize>,
    /// Cache file name inside the output directory.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EngineArgs {
    /// Number of components.
    #[arg(long)]
    pub k: Option<usize>,
    /// Learning rate, or `auto` to pick from 0.1..0.4 by last-season validation.
    #[arg(long)]
    pub eta: Option<String>,
    #[arg(long)]
    pub extraction_epochs: Option<usize>,
    /// every_step or every_season.
    #[arg(long)]
    pub cadence: Option<String>,
    /// Cap on the number of regimes; 1 gives the single-regime baseline.
    #[arg(long)]
    pub max_regimes: Option<usize>,
    /// bank or ignore.
    #[arg(long)]
    pub index_cost: Option<String>,
    /// Residual quantization width.
    #[arg(long)]
    pub bin_width: Option<f64>,
    /// Bits per stored float.
    #[arg(long)]
    pub c_f: Option<f64>,
    #[arg(long)]
    pub sigma_floor: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Frame cache produced by `ingest` or `synth`.
    #[arg(long, value_name = "FILE")]
    pub frames: Option<PathBuf>,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Number of steps ahead.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Forecast with this regime instead of the one in use at the last step.
    #[arg(long)]
    pub regime: Option<usize>,
    /// Leave zero cells out of the CSV.
    #[arg(long)]
    pub omit_zeros: bool,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub frames: Option<PathBuf>,
    /// ssmf or smf; repeat for several.
    #[arg(long = "method")]
    pub methods: Vec<String>,
    #[arg(long, conflicts_with = "plan")]
    pub r_train: Option<usize>,
    #[arg(long, conflicts_with = "plan")]
    pub r_test: Option<usize>,
    #[arg(long, conflicts_with = "plan")]
    pub repeats: Option<usize>,
    /// `r_train,r_test,repeats` in one value.
    #[arg(long)]
    pub plan: Option<String>,
    /// Score only cells that are nonzero in the truth.
    #[arg(long)]
    pub rmse_nonzero_only: bool,
    /// Results CSV name; the JSON summary goes next to it.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON generator spec.
    #[arg(long, value_name = "FILE", conflicts_with = "preset")]
    pub spec: Option<PathBuf>,
    /// Built-in spec: `shift` (two regimes) or `single`.
    #[arg(long)]
    pub preset: Option<String>,
    /// Override the spec's noise standard deviation.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Override the spec's sparsity.
    #[arg(long)]
    pub sparsity: Option<f64>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Help or version output requested.
    #[error("{0}")]
    Info(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] ssmf::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use ssmf::Error as E;
        match self {
            CliError::Info(_) => 0,
            CliError::Usage(_) => 2,
            CliError::Core(E::Config(_) | E::Schema(_) | E::RegimeOutOfRange { .. } | E::InsufficientFrames(_)) => 2,
            CliError::Core(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| {
        let text = e.render().to_string();
        if e.exit_code() == 0 {
            CliError::Info(text)
        } else {
            CliError::Usage(text)
        }
    })?;
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    commands::dispatch(cli)
}

/// Process entry point: runs and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Info(text)) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(CliError::Usage(text)) if text.starts_with("error:") => {
            eprint!("{text}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
