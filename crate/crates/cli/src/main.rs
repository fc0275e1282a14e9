//! `lfs`: train, sample and evaluate latent-filter-scaling translators.
//!
//! Exit codes: 0 success, 1 failed check, 2 usage or configuration error,
//! 3 training divergence.

mod codes;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "lfs", version, about = "Multimodal unpaired image translation by latent filter scaling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a generator, discriminator and mapper.
    Train(TrainArgs),
    /// Translate inputs under freshly drawn (or replayed) latent codes.
    Sample(SampleArgs),
    /// Render outputs for codes interpolated between two endpoints.
    Interpolate(InterpolateArgs),
    /// Apply a fixed set of codes to several inputs and tile the results.
    Transfer(TransferArgs),
    /// Diversity and style-consistency reports for a checkpoint.
    Evaluate(EvaluateArgs),
    /// Print the effective configuration and the layer tables.
    Describe(DescribeArgs),
    /// Write the synthetic two-domain shapes dataset to disk.
    SynthData(SynthDataArgs),
    /// Run the numerical verification suite.
    Verify(VerifyArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    /// Sectioned key=value configuration file; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run with the same config.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// `--key value` or `--section.key value` pairs applied after the file.
    /// They must come after `--config` and `--resume`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    pub overrides: Vec<String>,
}

#[derive(Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long = "input", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub n_codes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Replay codes from a file written by an earlier `sample`.
    #[arg(long)]
    pub codes: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Overrides the image size recorded in the checkpoint.
    #[arg(long)]
    pub image_size: Option<usize>,
}

#[derive(Args)]
pub struct InterpolateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long = "input", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use the first two codes of this file as endpoints.
    #[arg(long)]
    pub codes: Option<PathBuf>,
    /// Output PNG: one row per input, one column per interpolation step.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub image_size: Option<usize>,
}

#[derive(Args)]
pub struct TransferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long = "input", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// Code file written by `sample`.
    #[arg(long, conflicts_with = "code")]
    pub codes: Option<PathBuf>,
    /// Explicit comma-separated code; repeat for several rows.
    #[arg(long, allow_hyphen_values = true)]
    pub code: Vec<String>,
    /// Output PNG: one row per code, one column per input.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub image_size: Option<usize>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset root with `trainA/` and `trainB/`; synthetic shapes when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub synthetic_count: usize,
    #[arg(long, default_value_t = 1)]
    pub synthetic_seed: u64,
    /// Input images used by both reports.
    #[arg(long, default_value_t = 16)]
    pub n_inputs: usize,
    /// Codes used by the style-consistency report.
    #[arg(long, default_value_t = 8)]
    pub n_codes: usize,
    #[arg(long, default_value_t = lfs_core::eval::DEFAULT_N_PAIRS)]
    pub n_pairs: usize,
    #[arg(long, default_value_t = 10)]
    pub n_codes_per_image: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for `evaluation.txt` and `style_grid.png`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub image_size: Option<usize>,
}

#[derive(Args)]
pub struct DescribeArgs {
    #[arg(long, conflicts_with = "checkpoint")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    pub overrides: Vec<String>,
}

#[derive(Args)]
pub struct SynthDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub anti_alias: bool,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum PrecisionArg {
    Single,
    Double,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ReportFormat {
    Text,
    Kv,
}

#[derive(Args)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = PrecisionArg::Both)]
    pub precision: PrecisionArg,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    pub format: ReportFormat,
    /// Mis-scale one channel to confirm the suite fails.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    Check(String),
    Usage(String),
    Diverged(String),
}

impl From<lfs_core::Error> for CliError {
    fn from(e: lfs_core::Error) -> Self {
        match e {
            lfs_core::Error::Divergence { .. } => CliError::Diverged(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Check(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Diverged(_) => 3,
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Sample(a) => commands::sample(a),
        Command::Interpolate(a) => commands::interpolate(a),
        Command::Transfer(a) => commands::transfer(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Describe(a) => commands::describe(a),
        Command::SynthData(a) => commands::synth_data(a),
        Command::Verify(a) => commands::verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Check(m) | CliError::Usage(m) | CliError::Diverged(m)) = &e;
            eprintln!("error: {m}");
            ExitCode::from(e.exit_code())
        }
    }
}
