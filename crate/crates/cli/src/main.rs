//! `nnfi`: run inferences, fault sweeps and golden-trace checks from the shell.
//!
//! Exit status is 0 on success, 1 on runtime failure and 2 on usage errors
//! (bad flags, malformed JSON, invalid sweeps, missing trace file).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nnfi_core::campaign::ReportFormat;
use nnfi_core::fault::ClampTarget;
use nnfi_core::{AccumMode, BiasGuard, ConvBackend, CountermeasureConfig, EngineOptions};

#[derive(Parser)]
#[command(
    name = "nnfi",
    version,
    about = "Instruction-skip fault simulator for int8 CNN inference"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify one image, optionally under a fault.
    Infer(InferArgs),
    /// Run a fault sweep over a dataset and write a report.
    Sweep(SweepArgs),
    /// Fault-free accuracy on a dataset.
    Baseline(BaselineArgs),
    /// Replay golden traces and report the first divergent layer.
    Validate(ValidateArgs),
    /// Record golden traces for a dataset with this engine.
    Trace(TraceArgs),
    /// Write a random model of the reference architecture and a dataset
    /// labelled by its own predictions.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Json => ReportFormat::Json,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ClampTargetArg {
    Bias,
    Output,
}

#[derive(Args)]
struct EngineArgs {
    #[arg(long, default_value = "saturate")]
    accum: AccumMode,
    #[arg(long, default_value = "naive")]
    backend: ConvBackend,
}

impl EngineArgs {
    fn options(&self, trace: bool) -> EngineOptions {
        EngineOptions {
            backend: self.backend,
            accum: self.accum,
            trace,
        }
    }
}

/// Countermeasure flags; each one overrides the matching sweep field.
#[derive(Args)]
struct CountermeasureArgs {
    #[arg(long, value_enum)]
    ram_reset: Option<OnOff>,
    #[arg(long)]
    bias_guard: Option<BiasGuard>,
    #[arg(long)]
    bound: Option<i32>,
    #[arg(long, value_enum)]
    clamp_target: Option<ClampTargetArg>,
}

impl CountermeasureArgs {
    fn apply(&self, cm: &mut CountermeasureConfig) {
        if let Some(r) = self.ram_reset {
            cm.ram_reset = matches!(r, OnOff::On);
        }
        if let Some(g) = self.bias_guard {
            cm.bias_guard = g;
        }
        if let Some(b) = self.bound {
            cm.bound = b;
        }
        if let Some(t) = self.clamp_target {
            cm.clamp_target = match t {
                ClampTargetArg::Bias => ClampTarget::Bias,
                ClampTargetArg::Output => ClampTarget::Output,
            };
        }
    }
}

#[derive(Args)]
struct DatasetArgs {
    /// IDX3 image file.
    #[arg(long)]
    images: PathBuf,
    /// IDX1 label file.
    #[arg(long)]
    labels: PathBuf,
    /// Use only the first N samples.
    #[arg(long)]
    subset: Option<usize>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    /// Dataset image to classify (with --images and --labels).
    #[arg(long, requires = "images", conflicts_with = "image_file")]
    index: Option<usize>,
    #[arg(long, requires = "labels")]
    images: Option<PathBuf>,
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
    /// Raw 28x28 grayscale image, 784 bytes row-major.
    #[arg(long, required_unless_present = "index")]
    image_file: Option<PathBuf>,
    /// FaultSpec JSON, e.g. '{"type":"conv_early_exit","layer":"conv1","last_kernel":17}'.
    #[arg(long)]
    fault: Option<String>,
    #[command(flatten)]
    countermeasures: CountermeasureArgs,
    #[command(flatten)]
    engine: EngineArgs,
    /// Include every layer's buffer in the output.
    #[arg(long)]
    trace: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DatasetArgs,
    /// SweepSpec JSON, or @path to a file holding it.
    #[arg(long)]
    sweep: String,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to the extension of --out, then csv.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Overrides the sweep's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    countermeasures: CountermeasureArgs,
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Also print the report (with metadata) as JSON on stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Golden trace file.
    #[arg(long)]
    traces: PathBuf,
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory for model.nnfi, images.idx and labels.idx.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of images.
    #[arg(long, default_value_t = 100)]
    count: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Infer(a) => commands::infer(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Baseline(a) => commands::baseline(a),
        Command::Validate(a) => commands::validate(a),
        Command::Trace(a) => commands::trace(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if commands::is_usage_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
