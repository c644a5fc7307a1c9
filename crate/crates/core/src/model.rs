//! Layer specifications and the ordered model graph.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::QuantTensor;

pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d,
    Maxpool2x2,
    Relu,
    Dense,
    Softmax,
    Flatten,
}

impl LayerKind {
    pub fn tag(self) -> u8 {
        match self {
            LayerKind::Conv2d => 1,
            LayerKind::Maxpool2x2 => 2,
            LayerKind::Relu => 3,
            LayerKind::Dense => 4,
            LayerKind::Softmax => 5,
            LayerKind::Flatten => 6,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            1 => LayerKind::Conv2d,
            2 => LayerKind::Maxpool2x2,
            3 => LayerKind::Relu,
            4 => LayerKind::Dense,
            5 => LayerKind::Softmax,
            6 => LayerKind::Flatten,
            _ => return None,
        })
    }

    /// Layers that write a fresh arena buffer. The others work in place.
    pub fn materializes(self) -> bool {
        matches!(
            self,
            LayerKind::Conv2d | LayerKind::Maxpool2x2 | LayerKind::Dense
        )
    }

    pub fn has_params(self) -> bool {
        matches!(self, LayerKind::Conv2d | LayerKind::Dense)
    }
}

/// One layer of the graph.
///
/// `output_right_shift` and `bias_left_shift` carry the fixed-point
/// alignment worked out by the exporter from the dec exponents; the engine
/// only uses the shifts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub name: String,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub weights: Option<QuantTensor>,
    pub bias: Option<QuantTensor>,
    pub output_right_shift: u8,
    pub bias_left_shift: u8,
    pub output_dec: i32,
}

/// Largest activation buffer a layer may declare.
pub const MAX_BUFFER_LEN: usize = 1 << 26;

fn check_len(layer: &str, shape: &[usize]) -> Result<()> {
    match shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)) {
        Some(n) if n <= MAX_BUFFER_LEN => Ok(()),
        _ => Err(Error::shape(
            layer,
            format!("shape {shape:?} exceeds {MAX_BUFFER_LEN} elements"),
        )),
    }
}

impl LayerSpec {
    /// Same-padded, stride-1 convolution. `weights` is `[Z, Z, C, K]`.
    pub fn conv2d(
        name: impl Into<String>,
        input_shape: [usize; 3],
        weights: QuantTensor,
        bias: QuantTensor,
        output_right_shift: u8,
        bias_left_shift: u8,
        output_dec: i32,
    ) -> Result<Self> {
        let name = name.into();
        let ws = weights.shape();
        if ws.len() != 4 {
            return Err(Error::shape(
                &name,
                format!("conv weights must be 4-D, got {ws:?}"),
            ));
        }
        let [h, w, _] = input_shape;
        let k = ws[3];
        let layer = Self {
            kind: LayerKind::Conv2d,
            name,
            input_shape: input_shape.to_vec(),
            output_shape: vec![h, w, k],
            weights: Some(weights),
            bias: Some(bias),
            output_right_shift,
            bias_left_shift,
            output_dec,
        };
        layer.validate()?;
        Ok(layer)
    }

    /// Fully connected layer. `weights` is `[in, out]`.
    pub fn dense(
        name: impl Into<String>,
        weights: QuantTensor,
        bias: QuantTensor,
        output_right_shift: u8,
        bias_left_shift: u8,
        output_dec: i32,
    ) -> Result<Self> {
        let name = name.into();
        let ws = weights.shape();
        if ws.len() != 2 {
            return Err(Error::shape(
                &name,
                format!("dense weights must be 2-D, got {ws:?}"),
            ));
        }
        let layer = Self {
            kind: LayerKind::Dense,
            name,
            input_shape: vec![ws[0]],
            output_shape: vec![ws[1]],
            weights: Some(weights),
            bias: Some(bias),
            output_right_shift,
            bias_left_shift,
            output_dec,
        };
        layer.validate()?;
        Ok(layer)
    }

    /// A parameterless layer; the output shape is derived from `kind`.
    pub fn simple(
        kind: LayerKind,
        name: impl Into<String>,
        input_shape: Vec<usize>,
        output_dec: i32,
    ) -> Result<Self> {
        let name = name.into();
        if kind.has_params() {
            return Err(Error::shape(&name, "layer kind needs weights"));
        }
        check_len(&name, &input_shape)?;
        let output_shape = match kind {
            LayerKind::Maxpool2x2 => {
                if input_shape.len() != 3 {
                    return Err(Error::shape(&name, "maxpool expects an H, W, C input"));
                }
                vec![input_shape[0] / 2, input_shape[1] / 2, input_shape[2]]
            }
            LayerKind::Flatten => vec![input_shape.iter().product()],
            _ => input_shape.clone(),
        };
        let layer = Self {
            kind,
            name,
            input_shape,
            output_shape,
            weights: None,
            bias: None,
            output_right_shift: 0,
            bias_left_shift: 0,
            output_dec,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.output_shape.iter().product()
    }

    /// Number of output channels (conv) or neurons (dense).
    pub fn out_channels(&self) -> usize {
        *self.output_shape.last().unwrap_or(&0)
    }

    pub fn param_count(&self) -> usize {
        self.weights.as_ref().map_or(0, QuantTensor::len)
            + self.bias.as_ref().map_or(0, QuantTensor::len)
    }

    /// Kernel side length of a conv layer.
    pub fn kernel_size(&self) -> Option<usize> {
        match self.kind {
            LayerKind::Conv2d => self.weights.as_ref().map(|w| w.shape()[0]),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |detail: String| Err(Error::shape(&self.name, detail));
        if self.name.is_empty() || self.name == crate::engine::INPUT_BUFFER {
            return err(format!("invalid layer name {:?}", self.name));
        }
        if self.output_right_shift > 31 || self.bias_left_shift > 31 {
            return err(format!(
                "shifts must be at most 31, got right {} / bias {}",
                self.output_right_shift, self.bias_left_shift
            ));
        }
        if self.input_shape.contains(&0) {
            return err(format!("empty input shape {:?}", self.input_shape));
        }
        check_len(&self.name, &self.input_shape)?;
        check_len(&self.name, &self.output_shape)?;
        match self.kind {
            LayerKind::Conv2d => {
                let (Some(w), Some(b)) = (&self.weights, &self.bias) else {
                    return err("conv layer without weights or bias".into());
                };
                let ws = w.shape();
                if self.input_shape.len() != 3 || ws.len() != 4 {
                    return err(format!(
                        "conv expects H, W, C input and Z, Z, C, K weights; got {:?} and {ws:?}",
                        self.input_shape
                    ));
                }
                let (z, c, k) = (ws[0], ws[2], ws[3]);
                if ws[1] != z || z % 2 == 0 {
                    return err(format!("kernel must be square with odd side, got {ws:?}"));
                }
                if c != self.input_shape[2] {
                    return err(format!(
                        "kernel depth {c} does not match input channels {}",
                        self.input_shape[2]
                    ));
                }
                if b.shape() != [k] {
                    return err(format!("bias shape {:?}, expected [{k}]", b.shape()));
                }
                let expect = [self.input_shape[0], self.input_shape[1], k];
                if self.output_shape != expect {
                    return err(format!(
                        "output shape {:?}, expected {expect:?}",
                        self.output_shape
                    ));
                }
            }
            LayerKind::Dense => {
                let (Some(w), Some(b)) = (&self.weights, &self.bias) else {
                    return err("dense layer without weights or bias".into());
                };
                let ws = w.shape();
                if ws.len() != 2 || self.input_shape != [ws[0]] || self.output_shape != [ws[1]] {
                    return err(format!(
                        "dense weights {ws:?} do not match shapes {:?} -> {:?}",
                        self.input_shape, self.output_shape
                    ));
                }
                if b.shape() != [ws[1]] {
                    return err(format!("bias shape {:?}, expected [{}]", b.shape(), ws[1]));
                }
            }
            LayerKind::Maxpool2x2 => {
                let s = &self.input_shape;
                if s.len() != 3 || !s[0].is_multiple_of(2) || !s[1].is_multiple_of(2) {
                    return err(format!("maxpool needs even H and W, got {s:?}"));
                }
            }
            LayerKind::Softmax => {
                if self.input_shape.len() != 1 {
                    return err(format!(
                        "softmax expects a vector, got {:?}",
                        self.input_shape
                    ));
                }
            }
            LayerKind::Relu | LayerKind::Flatten => {}
        }
        if !self.kind.has_params() && (self.weights.is_some() || self.bias.is_some()) {
            return err("parameterless layer carries weights".into());
        }
        Ok(())
    }
}

/// Ordered list of layers executed front to back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelGraph {
    layers: Vec<LayerSpec>,
    input_dec: i32,
}

impl ModelGraph {
    pub fn new(layers: Vec<LayerSpec>, input_dec: i32) -> Result<Self> {
        for layer in &layers {
            layer.validate()?;
        }
        for pair in layers.windows(2) {
            if pair[0].output_shape != pair[1].input_shape {
                return Err(Error::shape(
                    &pair[1].name,
                    format!(
                        "input shape {:?} does not match `{}` output {:?}",
                        pair[1].input_shape, pair[0].name, pair[0].output_shape
                    ),
                ));
            }
        }
        let mut names: Vec<&str> = layers.iter().map(|l| l.name.as_str()).collect();
        names.sort_unstable();
        if let Some(dup) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::shape(dup[0], "duplicate layer name"));
        }
        Ok(Self { layers, input_dec })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn input_dec(&self) -> i32 {
        self.input_dec
    }

    pub fn input_shape(&self) -> &[usize] {
        self.layers
            .first()
            .map_or(&[], |l| l.input_shape.as_slice())
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(0, LayerSpec::output_len)
    }

    /// Decimal exponent of the final layer's output (the logits).
    pub fn output_dec(&self) -> i32 {
        self.layers.last().map_or(self.input_dec, |l| l.output_dec)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>) -> QuantTensor {
        QuantTensor::zeros(shape, 0)
    }

    #[test]
    fn rejects_even_kernels_and_mismatched_depth() {
        assert!(
            LayerSpec::conv2d("c", [4, 4, 1], t(vec![2, 2, 1, 1]), t(vec![1]), 0, 0, 0).is_err()
        );
        assert!(
            LayerSpec::conv2d("c", [4, 4, 2], t(vec![3, 3, 1, 1]), t(vec![1]), 0, 0, 0).is_err()
        );
        assert!(
            LayerSpec::conv2d("c", [4, 4, 1], t(vec![3, 3, 1, 2]), t(vec![1]), 0, 0, 0).is_err()
        );
        let ok =
            LayerSpec::conv2d("c", [4, 4, 1], t(vec![3, 3, 1, 2]), t(vec![2]), 0, 0, 0).unwrap();
        assert_eq!(ok.output_shape, vec![4, 4, 2]);
        assert_eq!(ok.param_count(), 20);
    }

    #[test]
    fn odd_pool_input_is_rejected() {
        assert!(LayerSpec::simple(LayerKind::Maxpool2x2, "p", vec![3, 4, 1], 0).is_err());
        let p = LayerSpec::simple(LayerKind::Maxpool2x2, "p", vec![4, 6, 2], 0).unwrap();
        assert_eq!(p.output_shape, vec![2, 3, 2]);
    }

    #[test]
    fn graph_checks_adjacent_shapes_and_names() {
        let a = LayerSpec::simple(LayerKind::Flatten, "f", vec![2, 2, 1], 0).unwrap();
        let b = LayerSpec::dense("d", t(vec![3, 2]), t(vec![2]), 0, 0, 0).unwrap();
        assert!(ModelGraph::new(vec![a.clone(), b], 0).is_err());
        let b = LayerSpec::dense("f", t(vec![4, 2]), t(vec![2]), 0, 0, 0).unwrap();
        assert!(ModelGraph::new(vec![a.clone(), b], 0).is_err());
        let b = LayerSpec::dense("d", t(vec![4, 2]), t(vec![2]), 0, 0, 0).unwrap();
        let g = ModelGraph::new(vec![a, b], 0).unwrap();
        assert_eq!(g.param_count(), 10);
        assert_eq!(g.output_len(), 2);
    }

    #[test]
    fn rejects_oversized_shapes() {
        let huge = vec![1 << 20, 1 << 20, 1 << 30];
        assert!(LayerSpec::simple(LayerKind::Flatten, "f", huge.clone(), 0).is_err());
        assert!(LayerSpec::simple(LayerKind::Relu, "r", vec![1 << 14, 1 << 13], 0).is_err());
        assert!(LayerSpec::simple(LayerKind::Relu, "r", vec![1 << 13, 1 << 13], 0).is_ok());
    }
}
