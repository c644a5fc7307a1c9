//! Fault sweeps over a labelled test set.
//!
//! A sweep fixes one fault family and one target layer and walks a list of
//! loop or neuron indices. For every index the whole dataset is run in
//! order through a fresh arena, one fault per inference, and the report
//! keeps accuracy, the predicted-label histogram and how many inferences
//! reproduced the previous inference's logits.

mod report;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};

pub use report::{read_report_json, write_report, ReportFormat, ReportMetadata, SweepReportFile};

use crate::engine::{Engine, EngineOptions};
use crate::error::{Error, Result};
use crate::fault::{CountermeasureConfig, FaultInjector, FaultSpec, DEFAULT_CORRUPT_VALUE};
use crate::io::LabeledImage;
use crate::model::{LayerKind, ModelGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultFamily {
    ConvEarlyExit,
    ConvSkipKernel,
    BiasCorrupt,
    ReluSkip,
    ReluForce,
}

impl FaultFamily {
    pub fn target_kind(self) -> LayerKind {
        match self {
            FaultFamily::ConvEarlyExit | FaultFamily::ConvSkipKernel => LayerKind::Conv2d,
            FaultFamily::BiasCorrupt => LayerKind::Dense,
            FaultFamily::ReluSkip | FaultFamily::ReluForce => LayerKind::Relu,
        }
    }
}

fn default_corrupt_value() -> i32 {
    DEFAULT_CORRUPT_VALUE
}

fn default_success_prob() -> f64 {
    1.0
}

/// Accepts `[0, 1, 2]`, `"0..3"` or `"0..=2"`.
fn deserialize_indices<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<usize>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        List(Vec<usize>),
        Range(String),
    }
    match Raw::deserialize(d)? {
        Raw::List(v) => Ok(v),
        Raw::Range(s) => parse_range(&s).map_err(serde::de::Error::custom),
    }
}

/// Parses `a..b` (exclusive) or `a..=b` (inclusive).
pub fn parse_range(s: &str) -> std::result::Result<Vec<usize>, String> {
    let bad = || format!("invalid index range `{s}`");
    let (lo, hi, inclusive) = if let Some((lo, hi)) = s.split_once("..=") {
        (lo, hi, true)
    } else if let Some((lo, hi)) = s.split_once("..") {
        (lo, hi, false)
    } else {
        return Err(bad());
    };
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi: usize = hi.trim().parse().map_err(|_| bad())?;
    Ok(if inclusive {
        (lo..=hi).collect()
    } else {
        (lo..hi).collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub fault_family: FaultFamily,
    pub layer: String,
    #[serde(deserialize_with = "deserialize_indices")]
    pub index_range: Vec<usize>,
    /// Only used by the bias family.
    #[serde(default = "default_corrupt_value")]
    pub corrupt_value: i32,
    #[serde(default)]
    pub countermeasures: CountermeasureConfig,
    /// Probability that a shot actually produces the fault.
    #[serde(default = "default_success_prob")]
    pub injection_success_prob: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SweepSpec {
    pub fn new(
        fault_family: FaultFamily,
        layer: impl Into<String>,
        index_range: Vec<usize>,
    ) -> Self {
        Self {
            fault_family,
            layer: layer.into(),
            index_range,
            corrupt_value: DEFAULT_CORRUPT_VALUE,
            countermeasures: CountermeasureConfig::default(),
            injection_success_prob: 1.0,
            seed: 0,
        }
    }

    pub fn fault_at(&self, index: usize) -> FaultSpec {
        let layer = self.layer.clone();
        match self.fault_family {
            FaultFamily::ConvEarlyExit => FaultSpec::ConvEarlyExit {
                layer,
                last_kernel: index,
            },
            FaultFamily::ConvSkipKernel => FaultSpec::ConvSkipKernel {
                layer,
                kernel: index,
            },
            FaultFamily::BiasCorrupt => FaultSpec::BiasCorrupt {
                layer,
                neuron: index,
                corrupt_value: self.corrupt_value,
            },
            FaultFamily::ReluSkip => FaultSpec::ReluSkipReset {
                layer,
                element: index,
            },
            FaultFamily::ReluForce => FaultSpec::ReluForceReset {
                layer,
                element: index,
            },
        }
    }

    pub fn validate(&self, model: &ModelGraph) -> Result<()> {
        if self.index_range.is_empty() {
            return Err(Error::InvalidSweep("index range is empty".into()));
        }
        let p = self.injection_success_prob;
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidSweep(format!(
                "injection success probability must be in (0, 1], got {p}"
            )));
        }
        self.countermeasures
            .validate()
            .map_err(|e| Error::InvalidSweep(e.to_string()))?;
        for &index in &self.index_range {
            self.fault_at(index)
                .validate(model)
                .map_err(|e| Error::InvalidSweep(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub index: usize,
    pub accuracy: f64,
    pub label_histogram: Vec<u64>,
    /// Inferences whose logits equal the previous inference's logits while
    /// buffers persisted between the two.
    pub memory_effect_count: u64,
    /// `memory_effect_count` over the number of inferences that have a predecessor.
    pub memory_effect_rate: f64,
    /// Inferences in which the fault actually fired.
    pub faults_fired: u64,
}

impl SweepEntry {
    /// Most frequent predicted label and its count; ties go to the lowest label.
    pub fn majority_label(&self) -> (usize, u64) {
        majority_label(&self.label_histogram)
    }
}

pub fn majority_label(histogram: &[u64]) -> (usize, u64) {
    histogram.iter().enumerate().fold(
        (0, 0),
        |best, (label, &count)| {
            if count > best.1 {
                (label, count)
            } else {
                best
            }
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub dataset_size: usize,
    pub baseline_accuracy: f64,
    pub entries: Vec<SweepEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub engine: EngineOptions,
    /// Sweep indices processed concurrently. Images within an index always
    /// run in order on one arena.
    pub workers: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            engine: EngineOptions::default(),
            workers: 1,
        }
    }
}

fn accuracy(correct: usize, total: usize) -> f64 {
    correct as f64 / total as f64
}

/// Fault-free accuracy with the arena cleared before every image.
pub fn run_baseline(
    model: &ModelGraph,
    dataset: &[LabeledImage],
    options: EngineOptions,
) -> Result<Baseline> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let engine = Engine::new(model, options);
    let mut arena = engine.new_arena(true);
    let cm = CountermeasureConfig {
        ram_reset: true,
        ..Default::default()
    };
    let predictions = dataset
        .iter()
        .map(|s| {
            let mut hooks = FaultInjector::new(FaultSpec::NoFault, cm);
            Ok(engine.infer(&s.image, &mut arena, &mut hooks)?.label)
        })
        .collect::<Result<Vec<_>>>()?;
    let correct = predictions
        .iter()
        .zip(dataset)
        .filter(|(&p, s)| p == usize::from(s.label))
        .count();
    Ok(Baseline {
        accuracy: accuracy(correct, dataset.len()),
        predictions,
    })
}

fn sweep_index(
    engine: &Engine,
    dataset: &[LabeledImage],
    sweep: &SweepSpec,
    index: usize,
) -> Result<SweepEntry> {
    let cm = sweep.countermeasures;
    let mut arena = engine.new_arena(cm.ram_reset);
    let mut rng = ChaCha8Rng::seed_from_u64(sweep.seed);
    rng.set_stream(index as u64);
    let fault = sweep.fault_at(index);

    let mut histogram = vec![0u64; engine.model().output_len()];
    let (mut correct, mut memory, mut fired) = (0usize, 0u64, 0u64);
    let mut previous: Option<Vec<i8>> = None;
    for sample in dataset {
        let inject =
            sweep.injection_success_prob >= 1.0 || rng.gen_bool(sweep.injection_success_prob);
        let spec = if inject {
            fault.clone()
        } else {
            FaultSpec::NoFault
        };
        let mut hooks = FaultInjector::new(spec, cm);
        let prediction = engine.infer(&sample.image, &mut arena, &mut hooks)?;

        fired += u64::from(hooks.fired());
        histogram[prediction.label] += 1;
        if prediction.label == usize::from(sample.label) {
            correct += 1;
        }
        if !cm.ram_reset && previous.as_deref() == Some(prediction.logits.as_slice()) {
            memory += 1;
        }
        previous = Some(prediction.logits);
    }
    let pairs = dataset.len().saturating_sub(1);
    Ok(SweepEntry {
        index,
        accuracy: accuracy(correct, dataset.len()),
        label_histogram: histogram,
        memory_effect_count: memory,
        memory_effect_rate: if pairs == 0 {
            0.0
        } else {
            memory as f64 / pairs as f64
        },
        faults_fired: fired,
    })
}

/// Runs every index of `sweep` over `dataset`.
///
/// Each index starts from a zeroed arena and its own random stream derived
/// from the seed, so the report does not depend on `workers`.
pub fn run_sweep(
    model: &ModelGraph,
    dataset: &[LabeledImage],
    sweep: &SweepSpec,
    options: &RunOptions,
) -> Result<SweepReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    sweep.validate(model)?;
    let baseline = run_baseline(model, dataset, options.engine)?;
    let engine = Engine::new(model, options.engine);

    let entries = if options.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.workers)
            .build()
            .map_err(|e| Error::InvalidSweep(format!("cannot start worker pool: {e}")))?;
        pool.install(|| {
            sweep
                .index_range
                .par_iter()
                .map(|&i| sweep_index(&engine, dataset, sweep, i))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        sweep
            .index_range
            .iter()
            .map(|&i| sweep_index(&engine, dataset, sweep, i))
            .collect::<Result<Vec<_>>>()?
    };

    Ok(SweepReport {
        dataset_size: dataset.len(),
        baseline_accuracy: baseline.accuracy,
        entries,
    })
}
