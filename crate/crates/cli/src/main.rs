//! `rsnn`: parameter counts, model preparation, reference inference and
//! accelerator simulation from the command line.
//!
//! Exit status is 0 on success, 1 when the data (model, dataset, files) is
//! bad and 2 when the invocation or configuration is.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Data(_) => 1,
            CliError::Usage(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl From<rsnn::Error> for CliError {
    fn from(e: rsnn::Error) -> Self {
        match e {
            rsnn::Error::InvalidConfig(_) | rsnn::Error::InvalidBitWidth(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "rsnn", version, about = "Fixed-point residual SNN: reference inference and accelerator simulation")]
pub struct Cli {
    /// TOML run configuration; defaults to the file named by RSNN_CONFIG.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    /// Human-readable table instead of TOML, where available.
    #[arg(long, global = true)]
    pub table: bool,
    #[command(subcommand)]
    pub command: Command,
}

/// Network shape and quantization flags shared by several subcommands.
#[derive(Debug, Clone, Args, Default)]
pub struct NetFlags {
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub bits: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Model selection: a model file, or a seeded random model.
#[derive(Debug, Clone, Args, Default)]
pub struct ModelFlags {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub net: NetFlags,
}

/// Accelerator timing flags.
#[derive(Debug, Clone, Args, Default)]
pub struct TimingFlags {
    /// Clock frequency in Hz.
    #[arg(long)]
    pub clock: Option<u64>,
    /// Timing override as key=value; repeatable.
    #[arg(long = "timing", value_name = "KEY=CYCLES")]
    pub timing: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-layer and total weight counts, grouped against ungrouped.
    ParamCount {
        #[arg(long)]
        groups: Option<usize>,
        /// Count one bias per output channel as well.
        #[arg(long)]
        include_bias: bool,
    },
    /// Write a seeded random quantized model.
    MakeRandomModel {
        #[command(flatten)]
        net: NetFlags,
        #[arg(long)]
        out: PathBuf,
        /// Also write the real-valued, unfused parameters as JSON.
        #[arg(long)]
        real: Option<PathBuf>,
    },
    /// Fold batch norm into the convolutions of a real-valued JSON model.
    Fuse {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Quantize a fused real-valued JSON model into a model file.
    Quantize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        bits: Option<u32>,
    },
    /// Classify a CIFAR-10 batch with the reference engine.
    Infer {
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Only the first N images.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Run images through the accelerator model and report timing,
    /// resources and agreement with the reference engine.
    Simulate {
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        timing: TimingFlags,
        /// CIFAR-10 batch; random images are used when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Number of images to simulate.
        #[arg(long)]
        images: Option<usize>,
    },
    /// Static timing and resource report, without running any image.
    Report {
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        timing: TimingFlags,
        /// Pipeline depth to report on.
        #[arg(long, default_value_t = 1)]
        images: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rsnn: {e}");
            ExitCode::from(e.code())
        }
    }
}
