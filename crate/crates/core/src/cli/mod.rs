//! Command-line front end: `analyze`, `train`, `eval`, `compare`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 spec/parse/usage error,
//! 3 compatibility error (spec hash or data shape mismatch).

mod checkpoint;
mod commands;
mod specfile;
mod train;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Error;

pub use checkpoint::{load_checkpoint, read_manifest, save_checkpoint, Manifest, MANIFEST};
pub use commands::{cmd_analyze, cmd_compare, cmd_eval, cmd_train, EvalReport};
pub use specfile::{load_spec, parse_spec, spec_hash, SpecFile, TrainConfig};
pub use train::{train_seed, AccuracyStats, EpochRecord, RunRecord, Summary};

#[derive(Parser, Debug)]
#[command(name = "effnet", version, about = "Efficient CNN block analyzer and trainer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Table,
    Records,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DataFormat {
    Idx,
    Csv,
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Args, Clone, Debug)]
pub struct DataArgs {
    /// Use generated Gaussian-blob data shaped like the spec input.
    #[arg(long, conflicts_with_all = ["format", "images"])]
    pub synthetic: bool,
    #[arg(long, default_value_t = 600)]
    pub synthetic_n: usize,
    #[arg(long, default_value_t = 200)]
    pub synthetic_test_n: usize,
    #[arg(long, default_value_t = 0.5)]
    pub difficulty: f64,
    #[arg(long, default_value_t = 1)]
    pub data_seed: u64,
    #[arg(long, value_enum, requires = "images")]
    pub format: Option<DataFormat>,
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Label file (unused for csv).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub test_images: Option<PathBuf>,
    #[arg(long)]
    pub test_labels: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Static FLOP and data-flow report.
    Analyze {
        spec: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
        format: ReportFormat,
    },
    /// Train one model per seed and write records, summary and checkpoints.
    Train {
        spec: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        /// Override the spec's seed list (comma separated).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Inference-mode accuracy of a checkpoint.
    Eval {
        checkpoint: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Which synthetic split to evaluate.
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// FLOPs and factors relative to the first spec, plus mean accuracy when
    /// `<runs>/<model name>/summary.json` exists.
    Compare {
        #[arg(num_args = 1..)]
        specs: Vec<PathBuf>,
        #[arg(long)]
        runs: Option<PathBuf>,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parse { .. } | Error::Spec { .. } => 2,
        Error::Compat(_) => 3,
        _ => 1,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Analyze { spec, format } => cmd_analyze(&spec, format, out),
        Command::Train {
            spec,
            data,
            out: dir,
            seeds,
            max_steps,
        } => cmd_train(&spec, &data, &dir, seeds, max_steps, out).map(|_| ()),
        Command::Eval {
            checkpoint,
            spec,
            data,
            split,
        } => cmd_eval(&checkpoint, &spec, &data, split, out).map(|_| ()),
        Command::Compare { specs, runs } => {
            if specs.len() < 2 {
                let _ = writeln!(
                    err,
                    "error: compare needs at least two specs (the first is the baseline)"
                );
                return 2;
            }
            cmd_compare(&specs, runs.as_deref(), out)
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
