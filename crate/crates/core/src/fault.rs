//! Instruction-skip fault models and the two software countermeasures.
//!
//! Every fault is a single skipped instruction at one of three places in
//! the inference program:
//!
//! * the backward branch or counter increment of the loop over conv
//!   kernels ([`FaultSpec::ConvEarlyExit`], [`FaultSpec::ConvSkipKernel`]),
//! * the store that loads a dense-layer bias into the accumulator
//!   ([`FaultSpec::BiasCorrupt`]),
//! * the compare/branch or zeroing store inside the ReLU loop
//!   ([`FaultSpec::ReluSkipReset`], [`FaultSpec::ReluForceReset`]).
//!
//! The engine asks a [`FaultHooks`] implementation what to do at each of
//! these points. [`FaultInjector`] answers from a [`FaultPlan`], which fires
//! at most once per inference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LayerKind, ModelGraph};

/// Bias substituted by default for a corrupted load: an SRAM base address.
pub const DEFAULT_CORRUPT_VALUE: i32 = 0x2000_0000;

/// Default bound for the bias guard.
pub const DEFAULT_BIAS_BOUND: i32 = 2048;

fn default_corrupt_value() -> i32 {
    DEFAULT_CORRUPT_VALUE
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FaultSpec {
    /// Kernels `last_kernel..K` never run (skipped loop branch).
    ConvEarlyExit {
        layer: String,
        last_kernel: usize,
    },
    /// Exactly one kernel iteration is skipped (replayed counter increment).
    ConvSkipKernel {
        layer: String,
        kernel: usize,
    },
    /// The bias load of one neuron is replaced by `corrupt_value`.
    BiasCorrupt {
        layer: String,
        neuron: usize,
        #[serde(default = "default_corrupt_value")]
        corrupt_value: i32,
    },
    /// The ReLU zeroing is skipped for one element: sigma(x) = x.
    ReluSkipReset {
        layer: String,
        element: usize,
    },
    /// The ReLU zeroing is forced for one element: sigma(x) = 0.
    ReluForceReset {
        layer: String,
        element: usize,
    },
    NoFault,
}

impl FaultSpec {
    pub fn layer(&self) -> Option<&str> {
        match self {
            FaultSpec::ConvEarlyExit { layer, .. }
            | FaultSpec::ConvSkipKernel { layer, .. }
            | FaultSpec::BiasCorrupt { layer, .. }
            | FaultSpec::ReluSkipReset { layer, .. }
            | FaultSpec::ReluForceReset { layer, .. } => Some(layer),
            FaultSpec::NoFault => None,
        }
    }

    /// Checks that the target layer exists, has the right kind, and that
    /// the index is within its bounds.
    pub fn validate(&self, model: &ModelGraph) -> Result<()> {
        let Some(name) = self.layer() else {
            return Ok(());
        };
        let layer = model
            .layer(name)
            .ok_or_else(|| Error::InvalidFault(format!("no layer named `{name}`")))?;
        let (kind, index, limit) = match *self {
            FaultSpec::ConvEarlyExit { last_kernel, .. } => {
                (LayerKind::Conv2d, last_kernel, layer.out_channels() + 1)
            }
            FaultSpec::ConvSkipKernel { kernel, .. } => {
                (LayerKind::Conv2d, kernel, layer.out_channels())
            }
            FaultSpec::BiasCorrupt { neuron, .. } => {
                (LayerKind::Dense, neuron, layer.out_channels())
            }
            FaultSpec::ReluSkipReset { element, .. }
            | FaultSpec::ReluForceReset { element, .. } => {
                (LayerKind::Relu, element, layer.output_len())
            }
            FaultSpec::NoFault => unreachable!(),
        };
        if layer.kind != kind {
            return Err(Error::InvalidFault(format!(
                "layer `{name}` is {:?}, this fault targets {kind:?} layers",
                layer.kind
            )));
        }
        if index >= limit {
            return Err(Error::InvalidFault(format!(
                "index {index} out of range for layer `{name}` (limit {limit})"
            )));
        }
        Ok(())
    }

    /// Every valid single fault on `model`, in layer order.
    pub fn enumerate(model: &ModelGraph, corrupt_value: i32) -> Vec<FaultSpec> {
        let mut out = Vec::new();
        for layer in model.layers() {
            let name = &layer.name;
            match layer.kind {
                LayerKind::Conv2d => {
                    let k = layer.out_channels();
                    out.extend((0..=k).map(|last_kernel| FaultSpec::ConvEarlyExit {
                        layer: name.clone(),
                        last_kernel,
                    }));
                    out.extend((0..k).map(|kernel| FaultSpec::ConvSkipKernel {
                        layer: name.clone(),
                        kernel,
                    }));
                }
                LayerKind::Dense => {
                    out.extend(
                        (0..layer.out_channels()).map(|neuron| FaultSpec::BiasCorrupt {
                            layer: name.clone(),
                            neuron,
                            corrupt_value,
                        }),
                    );
                }
                LayerKind::Relu => {
                    for element in 0..layer.output_len() {
                        out.push(FaultSpec::ReluSkipReset {
                            layer: name.clone(),
                            element,
                        });
                        out.push(FaultSpec::ReluForceReset {
                            layer: name.clone(),
                            element,
                        });
                    }
                }
                _ => {}
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelStep {
    Continue,
    /// Leave the kernel loop now; this and later channels stay stale.
    Exit,
    /// Skip this kernel iteration entirely, bias initialization included.
    SkipOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReluStep {
    Normal,
    SkipReset,
    ForceReset,
}

/// A fault armed for a single inference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultPlan {
    spec: FaultSpec,
    armed: bool,
}

impl FaultPlan {
    pub fn new(spec: FaultSpec) -> Self {
        let armed = spec != FaultSpec::NoFault;
        Self { spec, armed }
    }

    pub fn none() -> Self {
        Self::new(FaultSpec::NoFault)
    }

    pub fn spec(&self) -> &FaultSpec {
        &self.spec
    }

    pub fn is_armed(&self) -> bool {
        self.armed
    }

    /// True once the fault has been delivered.
    pub fn fired(&self) -> bool {
        !self.armed && self.spec != FaultSpec::NoFault
    }

    pub fn on_kernel_loop(&mut self, layer: &str, k: usize) -> KernelStep {
        if !self.armed {
            return KernelStep::Continue;
        }
        let step = match &self.spec {
            FaultSpec::ConvEarlyExit {
                layer: l,
                last_kernel,
            } if l == layer && *last_kernel == k => KernelStep::Exit,
            FaultSpec::ConvSkipKernel { layer: l, kernel } if l == layer && *kernel == k => {
                KernelStep::SkipOne
            }
            _ => return KernelStep::Continue,
        };
        self.armed = false;
        step
    }

    pub fn on_bias_load(
        &mut self,
        guard: &CountermeasureConfig,
        layer: &str,
        neuron: usize,
        bias: i32,
    ) -> i32 {
        let mut candidate = bias;
        if self.armed {
            if let FaultSpec::BiasCorrupt {
                layer: l,
                neuron: n,
                corrupt_value,
            } = &self.spec
            {
                if l == layer && *n == neuron {
                    candidate = *corrupt_value;
                    self.armed = false;
                }
            }
        }
        guard.guard_bias(bias, candidate)
    }

    pub fn on_relu_element(&mut self, layer: &str, i: usize, _value: i8) -> ReluStep {
        if !self.armed {
            return ReluStep::Normal;
        }
        let step = match &self.spec {
            FaultSpec::ReluSkipReset { layer: l, element } if l == layer && *element == i => {
                ReluStep::SkipReset
            }
            FaultSpec::ReluForceReset { layer: l, element } if l == layer && *element == i => {
                ReluStep::ForceReset
            }
            _ => return ReluStep::Normal,
        };
        self.armed = false;
        step
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasGuard {
    #[default]
    Off,
    /// An out-of-bound bias is replaced by the stored original.
    Restore,
    /// Values are clamped into `[-bound, bound]`.
    Clamp,
}

impl std::str::FromStr for BiasGuard {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "off" => Ok(BiasGuard::Off),
            "restore" => Ok(BiasGuard::Restore),
            "clamp" => Ok(BiasGuard::Clamp),
            other => Err(format!("unknown bias guard `{other}`")),
        }
    }
}

/// What `BiasGuard::Clamp` bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClampTarget {
    /// The loaded bias value.
    #[default]
    Bias,
    /// The neuron accumulator after the dot product, before requantization.
    Output,
}

fn default_bound() -> i32 {
    DEFAULT_BIAS_BOUND
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountermeasureConfig {
    /// Zero every arena buffer before each inference.
    #[serde(default)]
    pub ram_reset: bool,
    #[serde(default)]
    pub bias_guard: BiasGuard,
    #[serde(default = "default_bound")]
    pub bound: i32,
    #[serde(default)]
    pub clamp_target: ClampTarget,
}

impl Default for CountermeasureConfig {
    fn default() -> Self {
        Self {
            ram_reset: false,
            bias_guard: BiasGuard::Off,
            bound: DEFAULT_BIAS_BOUND,
            clamp_target: ClampTarget::Bias,
        }
    }
}

impl CountermeasureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bound <= 0 {
            return Err(Error::InvalidFault(format!(
                "bias guard bound must be positive, got {}",
                self.bound
            )));
        }
        Ok(())
    }

    fn guard_bias(&self, original: i32, candidate: i32) -> i32 {
        let b = self.bound;
        match (self.bias_guard, self.clamp_target) {
            (BiasGuard::Off, _) | (BiasGuard::Clamp, ClampTarget::Output) => candidate,
            (BiasGuard::Restore, _) => {
                if candidate.unsigned_abs() > b.unsigned_abs() {
                    original
                } else {
                    candidate
                }
            }
            (BiasGuard::Clamp, ClampTarget::Bias) => candidate.clamp(-b, b),
        }
    }

    fn guard_accumulator(&self, acc: i32) -> i32 {
        match (self.bias_guard, self.clamp_target) {
            (BiasGuard::Clamp, ClampTarget::Output) => acc.clamp(-self.bound, self.bound),
            _ => acc,
        }
    }
}

/// Decision points the engine consults while running a layer.
///
/// The defaults describe a fault-free run.
pub trait FaultHooks {
    fn on_kernel_loop(&mut self, _layer: &str, _k: usize) -> KernelStep {
        KernelStep::Continue
    }

    /// Returns the bias value that actually reaches the accumulator.
    fn on_bias_load(&mut self, _layer: &str, _neuron: usize, bias: i32) -> i32 {
        bias
    }

    /// Sees a dense neuron's accumulator before requantization.
    fn on_accumulator(&mut self, _layer: &str, _neuron: usize, acc: i32) -> i32 {
        acc
    }

    fn on_relu_element(&mut self, _layer: &str, _i: usize, _value: i8) -> ReluStep {
        ReluStep::Normal
    }
}

/// Hooks for an unfaulted, unguarded run.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoFaults;

impl FaultHooks for NoFaults {}

/// A fault plan together with the countermeasures active for the run.
#[derive(Debug, Clone)]
pub struct FaultInjector {
    pub plan: FaultPlan,
    pub countermeasures: CountermeasureConfig,
}

impl FaultInjector {
    pub fn new(spec: FaultSpec, countermeasures: CountermeasureConfig) -> Self {
        Self {
            plan: FaultPlan::new(spec),
            countermeasures,
        }
    }

    pub fn fired(&self) -> bool {
        self.plan.fired()
    }
}

impl FaultHooks for FaultInjector {
    fn on_kernel_loop(&mut self, layer: &str, k: usize) -> KernelStep {
        self.plan.on_kernel_loop(layer, k)
    }

    fn on_bias_load(&mut self, layer: &str, neuron: usize, bias: i32) -> i32 {
        self.plan
            .on_bias_load(&self.countermeasures, layer, neuron, bias)
    }

    fn on_accumulator(&mut self, _layer: &str, _neuron: usize, acc: i32) -> i32 {
        self.countermeasures.guard_accumulator(acc)
    }

    fn on_relu_element(&mut self, layer: &str, i: usize, value: i8) -> ReluStep {
        self.plan.on_relu_element(layer, i, value)
    }
}
