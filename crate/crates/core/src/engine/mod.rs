//! Layer-by-layer int8 inference over persistent buffers.

mod arena;
mod conv;
mod ops;

use serde::{Deserialize, Serialize};

pub use arena::{BufferArena, INPUT_BUFFER};
pub use conv::{conv2d_im2col, conv2d_naive, im2col};
pub use ops::{
    dense, maxpool2x2, maxpool2x2_into, relu_inplace, softmax_or_argmax, LayerSnapshot, Prediction,
};

use crate::error::{Error, Result};
use crate::fault::FaultHooks;
use crate::model::{LayerKind, ModelGraph};
use crate::tensor::{AccumMode, QuantTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvBackend {
    #[default]
    Naive,
    Im2col,
}

impl std::str::FromStr for ConvBackend {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "naive" => Ok(ConvBackend::Naive),
            "im2col" => Ok(ConvBackend::Im2col),
            other => Err(format!("unknown conv backend `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EngineOptions {
    pub backend: ConvBackend,
    pub accum: AccumMode,
    /// Record a snapshot of the active buffer after every layer.
    #[serde(default)]
    pub trace: bool,
}

/// Runs a [`ModelGraph`] against a caller-owned [`BufferArena`].
///
/// The engine itself holds no mutable state; one engine can serve many
/// workers as long as each has its own arena.
#[derive(Debug, Clone)]
pub struct Engine<'m> {
    model: &'m ModelGraph,
    options: EngineOptions,
    routes: Vec<(usize, usize)>,
}

impl<'m> Engine<'m> {
    pub fn new(model: &'m ModelGraph, options: EngineOptions) -> Self {
        Self {
            model,
            options,
            routes: arena::routes(model),
        }
    }

    pub fn model(&self) -> &'m ModelGraph {
        self.model
    }

    pub fn options(&self) -> EngineOptions {
        self.options
    }

    pub fn new_arena(&self, reset_between_inferences: bool) -> BufferArena {
        BufferArena::for_model(self.model, reset_between_inferences)
    }

    /// One forward pass. Buffers a fault leaves untouched keep whatever the
    /// previous inference wrote there.
    pub fn infer<H: FaultHooks + ?Sized>(
        &self,
        image: &QuantTensor,
        arena: &mut BufferArena,
        hooks: &mut H,
    ) -> Result<Prediction> {
        if image.shape() != self.model.input_shape() {
            return Err(Error::shape(
                INPUT_BUFFER,
                format!(
                    "image shape {:?}, model expects {:?}",
                    image.shape(),
                    self.model.input_shape()
                ),
            ));
        }
        arena.check_matches(self.model)?;
        if arena.reset_between_inferences {
            arena.reset();
        }
        arena.buffers[0].copy_from_slice(image.values());

        let mode = self.options.accum;
        let mut trace = self.options.trace.then(Vec::new);
        let mut last = 0;
        for (layer, &(src, dst)) in self.model.layers().iter().zip(&self.routes) {
            match layer.kind {
                LayerKind::Conv2d | LayerKind::Maxpool2x2 | LayerKind::Dense => {
                    // Move the destination out so source and destination can be
                    // borrowed together; the allocation itself is kept.
                    let mut out = std::mem::take(&mut arena.buffers[dst]);
                    let input = &arena.buffers[src];
                    let res = match layer.kind {
                        LayerKind::Conv2d => match self.options.backend {
                            ConvBackend::Naive => conv2d_naive(input, layer, &mut out, mode, hooks),
                            ConvBackend::Im2col => {
                                conv2d_im2col(input, layer, &mut out, mode, hooks)
                            }
                        },
                        LayerKind::Dense => dense(input, layer, &mut out, mode, hooks),
                        _ => {
                            let s = &layer.input_shape;
                            maxpool2x2_into(input, [s[0], s[1], s[2]], &mut out)
                        }
                    };
                    arena.buffers[dst] = out;
                    res?;
                }
                LayerKind::Relu => relu_inplace(&mut arena.buffers[dst], &layer.name, hooks),
                LayerKind::Flatten | LayerKind::Softmax => {}
            }
            if let Some(trace) = trace.as_mut() {
                trace.push(LayerSnapshot {
                    layer: layer.name.clone(),
                    values: arena.buffers[dst].clone(),
                });
            }
            last = dst;
        }

        let mut prediction = softmax_or_argmax(&arena.buffers[last], self.model.output_dec());
        prediction.trace = trace;
        Ok(prediction)
    }
}
