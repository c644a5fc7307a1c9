use crate::error::{Error, Result};
use crate::model::ModelGraph;

/// Name of the arena buffer that receives the input image.
pub const INPUT_BUFFER: &str = "input";

/// Per-layer activation buffers, modelling the SRAM of the target.
///
/// One buffer exists for the input and for every layer that materializes a
/// new tensor (conv, maxpool, dense). ReLU works in place on its producer's
/// buffer; flatten and softmax are views. Buffers are allocated once, start
/// zeroed, and keep their contents between inferences unless
/// `reset_between_inferences` is set or [`BufferArena::reset`] is called.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BufferArena {
    names: Vec<String>,
    pub(crate) buffers: Vec<Vec<i8>>,
    pub reset_between_inferences: bool,
}

impl BufferArena {
    pub fn for_model(model: &ModelGraph, reset_between_inferences: bool) -> Self {
        let (names, buffers) = buffer_layout(model)
            .into_iter()
            .map(|(name, len)| (name, vec![0i8; len]))
            .unzip();
        Self {
            names,
            buffers,
            reset_between_inferences,
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&[i8]> {
        self.slot(name).map(|i| self.buffers[i].as_slice())
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [i8]> {
        self.slot(name).map(move |i| self.buffers[i].as_mut_slice())
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Zeroes every buffer in place.
    pub fn reset(&mut self) {
        for buf in &mut self.buffers {
            buf.fill(0);
        }
    }

    pub(crate) fn check_matches(&self, model: &ModelGraph) -> Result<()> {
        let layout = buffer_layout(model);
        let same = layout.len() == self.names.len()
            && layout
                .iter()
                .zip(self.names.iter().zip(&self.buffers))
                .all(|((name, len), (n, buf))| name == n && *len == buf.len());
        if same {
            Ok(())
        } else {
            Err(Error::ArenaMismatch(format!(
                "arena holds {:?}, model needs {:?}",
                self.names,
                layout.iter().map(|(n, _)| n).collect::<Vec<_>>()
            )))
        }
    }
}

pub(crate) fn buffer_layout(model: &ModelGraph) -> Vec<(String, usize)> {
    let input_len = model.input_shape().iter().product();
    std::iter::once((INPUT_BUFFER.to_string(), input_len))
        .chain(
            model
                .layers()
                .iter()
                .filter(|l| l.kind.materializes())
                .map(|l| (l.name.clone(), l.output_len())),
        )
        .collect()
}

/// `(input slot, output slot)` for every layer, in execution order.
pub(crate) fn routes(model: &ModelGraph) -> Vec<(usize, usize)> {
    let mut current = 0;
    let mut next_slot = 1;
    model
        .layers()
        .iter()
        .map(|l| {
            let input = current;
            if l.kind.materializes() {
                current = next_slot;
                next_slot += 1;
            }
            (input, current)
        })
        .collect()
}
