//! Bit-exact simulation of 8-bit quantized CNN inference as it runs on a
//! 32-bit microcontroller, with single instruction-skip fault models and a
//! campaign harness to measure their effect.
//!
//! * [`tensor`]: power-of-two fixed-point tensors and requantization.
//! * [`model`] / [`engine`]: the layer graph and its execution over
//!   persistent [`BufferArena`] buffers, with naive and im2col convolution.
//! * [`fault`]: the fault taxonomy, single-shot plans and countermeasures.
//! * [`campaign`]: sweeps, metrics and CSV/JSON reports.
//! * [`io`]: the NNFI model/trace format and IDX datasets.

pub mod campaign;
pub mod engine;
pub mod error;
pub mod fault;
pub mod io;
pub mod model;
pub mod synthetic;
pub mod tensor;
pub mod trace;

pub use campaign::{
    majority_label, run_baseline, run_sweep, FaultFamily, RunOptions, SweepEntry, SweepReport,
    SweepSpec,
};
pub use engine::{BufferArena, ConvBackend, Engine, EngineOptions, Prediction};
pub use error::{Error, Result};
pub use fault::{
    BiasGuard, CountermeasureConfig, FaultHooks, FaultInjector, FaultPlan, FaultSpec, NoFaults,
};
pub use io::{GoldenTrace, LabeledImage};
pub use model::{LayerKind, LayerSpec, ModelGraph};
pub use tensor::{AccumMode, Accumulator, QuantTensor};
