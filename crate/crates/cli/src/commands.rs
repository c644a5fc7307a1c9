use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use nnfi_core::campaign::{
    run_baseline, run_sweep, write_report, ReportFormat, ReportMetadata, RunOptions,
    SweepReportFile, SweepSpec,
};
use nnfi_core::io::{
    load_idx, load_model, load_traces, quantize_input, save_idx, save_model, save_traces,
    IMAGE_SIDE,
};
use nnfi_core::trace::{record_traces, validate_traces, Validation};
use nnfi_core::{
    synthetic, CountermeasureConfig, Engine, EngineOptions, Error, FaultInjector, FaultSpec,
    LabeledImage, NoFaults, QuantTensor,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::{BaselineArgs, DatasetArgs, InferArgs, SweepArgs, SynthArgs, TraceArgs, ValidateArgs};

/// Marks an error as the caller's fault (exit status 2).
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

pub fn is_usage_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<Usage>()
            || matches!(
                c.downcast_ref::<Error>(),
                Some(Error::InvalidSweep(_) | Error::InvalidFault(_))
            )
    })
}

fn load_dataset(args: &DatasetArgs) -> Result<Vec<LabeledImage>> {
    let mut data = load_idx(&args.images, &args.labels)?;
    if let Some(n) = args.subset {
        if n == 0 {
            return Err(usage("--subset must be at least 1"));
        }
        data.truncate(n);
    }
    Ok(data.quantized())
}

fn parse_fault(text: &str) -> Result<FaultSpec> {
    serde_json::from_str(text).map_err(|e| usage(format!("invalid --fault JSON: {e}")))
}

fn parse_sweep(arg: &str) -> Result<SweepSpec> {
    let text = match arg.strip_prefix('@') {
        Some(path) => fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read sweep file {path}: {e}")))?,
        None => arg.to_string(),
    };
    serde_json::from_str(&text).map_err(|e| usage(format!("invalid --sweep JSON: {e}")))
}

/// Writes pretty JSON to stdout; a closed pipe is not an error.
fn print_json(value: &serde_json::Value) -> Result<()> {
    let mut out = io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(value)?) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

pub fn infer(a: InferArgs) -> Result<ExitCode> {
    let fault = match &a.fault {
        Some(text) => parse_fault(text)?,
        None => FaultSpec::NoFault,
    };
    let mut cm = CountermeasureConfig::default();
    a.countermeasures.apply(&mut cm);
    cm.validate().map_err(|e| usage(e.to_string()))?;
    let model = load_model(&a.model)?;
    let image: QuantTensor = match (&a.image_file, a.index) {
        (Some(path), _) => {
            let pixels = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            if pixels.len() != IMAGE_SIDE * IMAGE_SIDE {
                bail!(
                    "{}: expected {} raw pixels, found {} bytes",
                    path.display(),
                    IMAGE_SIDE * IMAGE_SIDE,
                    pixels.len()
                );
            }
            quantize_input(&pixels)
        }
        (None, Some(index)) => {
            let (Some(images), Some(labels)) = (&a.images, &a.labels) else {
                return Err(usage("--index needs --images and --labels"));
            };
            let data = load_idx(images, labels)?;
            if index >= data.len() {
                return Err(usage(format!(
                    "--index {index} out of range for {} images",
                    data.len()
                )));
            }
            quantize_input(&data.images[index])
        }
        (None, None) => return Err(usage("give --image-file or --index")),
    };
    fault.validate(&model).map_err(|e| usage(e.to_string()))?;

    let engine = Engine::new(&model, a.engine.options(a.trace));
    let mut arena = engine.new_arena(true);
    let mut hooks = FaultInjector::new(fault, cm);
    let p = engine.infer(&image, &mut arena, &mut hooks)?;

    if a.json {
        let mut out = json!({
            "label": p.label,
            "logits": p.logits,
            "scores": p.scores,
            "fault_fired": hooks.fired(),
        });
        if let Some(trace) = &p.trace {
            out["trace"] = serde_json::to_value(trace)?;
        }
        print_json(&out)?;
    } else {
        println!("label {}", p.label);
        println!("logits {:?}", p.logits);
        if hooks.plan.spec() != &FaultSpec::NoFault {
            println!(
                "fault {}",
                if hooks.fired() {
                    "fired"
                } else {
                    "did not fire"
                }
            );
        }
        for snap in p.trace.iter().flatten() {
            println!("{} {:?}", snap.layer, snap.values);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn report_format(a: &SweepArgs) -> ReportFormat {
    match a.format {
        Some(f) => f.into(),
        None => match a.out.extension().and_then(|e| e.to_str()) {
            Some("json") => ReportFormat::Json,
            _ => ReportFormat::Csv,
        },
    }
}

pub fn sweep(a: SweepArgs) -> Result<ExitCode> {
    let mut spec = parse_sweep(&a.sweep)?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    a.countermeasures.apply(&mut spec.countermeasures);
    if a.workers == 0 {
        return Err(usage("--workers must be at least 1"));
    }
    let mut workers = a.workers;
    if workers > 1 && !spec.countermeasures.ram_reset {
        eprintln!("warning: memory-effect tracking is on (ram reset off); running with 1 worker");
        workers = 1;
    }
    let model = load_model(&a.model)?;
    spec.validate(&model)?;
    let data = load_dataset(&a.data)?;

    let options = RunOptions {
        engine: a.engine.options(false),
        workers,
    };
    let report = run_sweep(&model, &data, &spec, &options)?;
    let metadata = ReportMetadata::new(&model, &spec, options.engine)?;
    write_report(&report, &metadata, &a.out, report_format(&a))?;

    eprintln!(
        "baseline accuracy {:.4} over {} images",
        report.baseline_accuracy, report.dataset_size
    );
    for e in &report.entries {
        let (label, count) = e.majority_label();
        eprintln!(
            "index {:>3}: accuracy {:.4}  majority {label} ({count})  memory effect {:.4}  fired {}",
            e.index, e.accuracy, e.memory_effect_rate, e.faults_fired
        );
    }
    if a.json {
        print_json(&serde_json::to_value(SweepReportFile { metadata, report })?)?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn baseline(a: BaselineArgs) -> Result<ExitCode> {
    let model = load_model(&a.model)?;
    let data = load_dataset(&a.data)?;
    let b = run_baseline(&model, &data, a.engine.options(false))?;
    if a.json {
        print_json(&json!({
            "accuracy": b.accuracy,
            "images": data.len(),
            "predictions": b.predictions,
        }))?;
    } else {
        println!("accuracy {:.4} ({} images)", b.accuracy, data.len());
    }
    Ok(ExitCode::SUCCESS)
}

pub fn validate(a: ValidateArgs) -> Result<ExitCode> {
    if !a.traces.exists() {
        return Err(usage(format!(
            "trace file {} not found",
            a.traces.display()
        )));
    }
    let model = load_model(&a.model)?;
    let traces = load_traces(&a.traces)?;
    let outcome = validate_traces(&model, &traces, a.engine.options(true))?;
    if a.json {
        print_json(&serde_json::to_value(&outcome)?)?;
    }
    match outcome {
        Validation::Ok { images } => {
            if !a.json {
                println!("OK ({images} images)");
            }
            Ok(ExitCode::SUCCESS)
        }
        Validation::Diverged(d) => {
            if !a.json {
                let at = d
                    .offset
                    .map(|o| format!(" at element {o}"))
                    .unwrap_or_default();
                println!(
                    "DIVERGED image {} layer {} ({}){at}: {}",
                    d.image_index, d.layer_position, d.layer, d.detail
                );
            }
            Ok(ExitCode::FAILURE)
        }
    }
}

pub fn trace(a: TraceArgs) -> Result<ExitCode> {
    let model = load_model(&a.model)?;
    let data = load_dataset(&a.data)?;
    let traces = record_traces(&model, &data, a.engine.options(true))?;
    save_traces(&traces, &a.out)?;
    eprintln!("wrote {} traces to {}", traces.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn synth(a: SynthArgs) -> Result<ExitCode> {
    if a.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let model = synthetic::reference_cnn(&mut rng)?;
    let engine = Engine::new(&model, EngineOptions::default());
    let mut arena = engine.new_arena(true);
    let mut images = Vec::with_capacity(a.count);
    let mut labels = Vec::with_capacity(a.count);
    for _ in 0..a.count {
        let pixels = synthetic::random_pixels(&mut rng);
        let p = engine.infer(&quantize_input(&pixels), &mut arena, &mut NoFaults)?;
        images.push(pixels);
        labels.push(p.label as u8);
    }
    let dir: &Path = &a.out_dir;
    save_model(&model, &dir.join("model.nnfi"))?;
    save_idx(
        &dir.join("images.idx"),
        &dir.join("labels.idx"),
        IMAGE_SIDE,
        IMAGE_SIDE,
        &images,
        &labels,
    )?;
    eprintln!(
        "wrote model.nnfi ({} parameters), images.idx and labels.idx ({} images) to {}",
        model.param_count(),
        a.count,
        dir.display()
    );
    Ok(ExitCode::SUCCESS)
}
