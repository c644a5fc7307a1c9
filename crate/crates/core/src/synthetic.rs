//! Randomly initialized models and images.
//!
//! Real experiments load a trained, exported model. These builders give
//! the same topology with random int8 parameters so that the engine, the
//! fault models and the campaign harness can be exercised without one.

use rand::Rng;

use crate::engine::{Engine, EngineOptions};
use crate::error::Result;
use crate::fault::NoFaults;
use crate::io::{quantize_input, LabeledImage, IMAGE_SIDE};
use crate::model::{LayerKind, LayerSpec, ModelGraph, NUM_CLASSES};
use crate::tensor::QuantTensor;

/// Parameter count of the reference Fashion-MNIST CNN.
pub const REFERENCE_PARAM_COUNT: usize = 70_914;

/// Layer names shared by every builder in this module.
pub mod names {
    pub const CONV1: &str = "conv1";
    pub const CONV1_RELU: &str = "conv1_relu";
    pub const POOL1: &str = "pool1";
    pub const CONV2: &str = "conv2";
    pub const CONV2_RELU: &str = "conv2_relu";
    pub const POOL2: &str = "pool2";
    pub const FLATTEN: &str = "flatten";
    pub const DENSE1: &str = "dense1";
    pub const DENSE1_RELU: &str = "dense1_relu";
    pub const DENSE2: &str = "dense2";
    pub const SOFTMAX: &str = "softmax";
}

const WEIGHT_RANGE: i8 = 48;
const BIAS_RANGE: i8 = 24;

fn random_values<R: Rng + ?Sized>(rng: &mut R, n: usize, range: i8) -> Vec<i8> {
    (0..n).map(|_| rng.gen_range(-range..=range)).collect()
}

/// Right shift that brings a sum of `fan_in` random products back to a
/// typical int8 magnitude, given the RMS of the incoming activations.
fn shift_for(fan_in: usize, input_rms: f64) -> u8 {
    let weight_rms = f64::from(WEIGHT_RANGE) / 3f64.sqrt();
    let acc_rms = (fan_in as f64).sqrt() * weight_rms * input_rms;
    (acc_rms / 40.0).log2().round().clamp(0.0, 24.0) as u8
}

fn conv<R: Rng + ?Sized>(
    rng: &mut R,
    name: &str,
    input_shape: [usize; 3],
    kernels: usize,
    input_rms: f64,
) -> Result<LayerSpec> {
    let c = input_shape[2];
    let shift = shift_for(9 * c, input_rms);
    LayerSpec::conv2d(
        name,
        input_shape,
        QuantTensor::new(
            vec![3, 3, c, kernels],
            random_values(rng, 9 * c * kernels, WEIGHT_RANGE),
            0,
        )?,
        QuantTensor::new(vec![kernels], random_values(rng, kernels, BIAS_RANGE), 0)?,
        shift,
        shift,
        0,
    )
}

fn dense<R: Rng + ?Sized>(
    rng: &mut R,
    name: &str,
    n_in: usize,
    n_out: usize,
    input_rms: f64,
) -> Result<LayerSpec> {
    let shift = shift_for(n_in, input_rms);
    LayerSpec::dense(
        name,
        QuantTensor::new(
            vec![n_in, n_out],
            random_values(rng, n_in * n_out, WEIGHT_RANGE),
            0,
        )?,
        QuantTensor::new(vec![n_out], random_values(rng, n_out, BIAS_RANGE), 0)?,
        shift,
        shift,
        0,
    )
}

fn simple(kind: LayerKind, name: &str, input_shape: Vec<usize>) -> Result<LayerSpec> {
    LayerSpec::simple(kind, name, input_shape, 0)
}

/// conv 32@3x3 -> ReLU -> maxpool -> conv 48@3x3 -> ReLU -> maxpool ->
/// flatten -> dense 24 -> ReLU -> dense 10 -> softmax, on 28x28x1 input.
pub fn reference_cnn<R: Rng + ?Sized>(rng: &mut R) -> Result<ModelGraph> {
    use names::*;
    let s = IMAGE_SIDE;
    let layers = vec![
        conv(rng, CONV1, [s, s, 1], 32, 60.0)?,
        simple(LayerKind::Relu, CONV1_RELU, vec![s, s, 32])?,
        simple(LayerKind::Maxpool2x2, POOL1, vec![s, s, 32])?,
        conv(rng, CONV2, [s / 2, s / 2, 32], 48, 30.0)?,
        simple(LayerKind::Relu, CONV2_RELU, vec![s / 2, s / 2, 48])?,
        simple(LayerKind::Maxpool2x2, POOL2, vec![s / 2, s / 2, 48])?,
        simple(LayerKind::Flatten, FLATTEN, vec![s / 4, s / 4, 48])?,
        dense(rng, DENSE1, (s / 4) * (s / 4) * 48, 24, 30.0)?,
        simple(LayerKind::Relu, DENSE1_RELU, vec![24])?,
        dense(rng, DENSE2, 24, NUM_CLASSES, 25.0)?,
        simple(LayerKind::Softmax, SOFTMAX, vec![NUM_CLASSES])?,
    ];
    ModelGraph::new(layers, 0)
}

/// A one-conv miniature of the same topology: conv (K kernels) -> ReLU ->
/// maxpool -> flatten -> dense `hidden` -> ReLU -> dense 10 -> softmax.
/// `side` must be even.
pub fn small_cnn<R: Rng + ?Sized>(
    rng: &mut R,
    side: usize,
    channels: usize,
    kernels: usize,
    hidden: usize,
) -> Result<ModelGraph> {
    use names::*;
    let pooled = (side / 2) * (side / 2) * kernels;
    let layers = vec![
        conv(rng, CONV1, [side, side, channels], kernels, 60.0)?,
        simple(LayerKind::Relu, CONV1_RELU, vec![side, side, kernels])?,
        simple(LayerKind::Maxpool2x2, POOL1, vec![side, side, kernels])?,
        simple(
            LayerKind::Flatten,
            FLATTEN,
            vec![side / 2, side / 2, kernels],
        )?,
        dense(rng, DENSE1, pooled, hidden, 30.0)?,
        simple(LayerKind::Relu, DENSE1_RELU, vec![hidden])?,
        dense(rng, DENSE2, hidden, NUM_CLASSES, 25.0)?,
        simple(LayerKind::Softmax, SOFTMAX, vec![NUM_CLASSES])?,
    ];
    ModelGraph::new(layers, 0)
}

/// Uniform random int8 input of the given H, W, C shape.
pub fn random_input<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> QuantTensor {
    let n = shape.iter().product();
    QuantTensor::new(shape.to_vec(), (0..n).map(|_| rng.gen()).collect(), 0)
        .expect("length matches shape")
}

/// A 28x28 grayscale image made of a few bright rectangles on a dark,
/// noisy background.
pub fn random_pixels<R: Rng + ?Sized>(rng: &mut R) -> Vec<u8> {
    let s = IMAGE_SIDE;
    let mut img: Vec<u8> = (0..s * s).map(|_| rng.gen_range(0..24)).collect();
    for _ in 0..rng.gen_range(1..=4) {
        let (x0, y0) = (rng.gen_range(0..s - 4), rng.gen_range(0..s - 4));
        let (x1, y1) = (rng.gen_range(x0 + 3..s), rng.gen_range(y0 + 3..s));
        let level: u8 = rng.gen_range(80..=255);
        for x in x0..x1 {
            for y in y0..y1 {
                img[x * s + y] = img[x * s + y].max(level);
            }
        }
    }
    img
}

/// `n` random images labelled with the model's own fault-free prediction,
/// so the baseline accuracy is exactly 1.
pub fn self_labeled_dataset<R: Rng + ?Sized>(
    rng: &mut R,
    model: &ModelGraph,
    n: usize,
) -> Result<Vec<LabeledImage>> {
    let engine = Engine::new(model, EngineOptions::default());
    let mut arena = engine.new_arena(true);
    (0..n)
        .map(|_| {
            let image = quantize_input(&random_pixels(rng));
            let label = engine.infer(&image, &mut arena, &mut NoFaults)?.label as u8;
            Ok(LabeledImage { image, label })
        })
        .collect()
}
