#![allow(dead_code)]

use nnfi_core::model::{LayerSpec, ModelGraph};
use nnfi_core::synthetic;
use nnfi_core::QuantTensor;
use rand::Rng;

/// Same-padded conv with random int8 weights and bias.
pub fn random_conv<R: Rng>(rng: &mut R, [h, w, c]: [usize; 3], k: usize, z: usize) -> LayerSpec {
    let weights: Vec<i8> = (0..z * z * c * k).map(|_| rng.gen()).collect();
    let bias: Vec<i8> = (0..k).map(|_| rng.gen()).collect();
    let shift = rng.gen_range(4..=10);
    LayerSpec::conv2d(
        "conv1",
        [h, w, c],
        QuantTensor::new(vec![z, z, c, k], weights, 0).unwrap(),
        QuantTensor::new(vec![k], bias, 0).unwrap(),
        shift,
        rng.gen_range(0..=shift),
        0,
    )
    .unwrap()
}

/// A small conv/pool/dense network with H <= 8 (even), C <= 4, K <= 8.
pub fn random_small_model<R: Rng>(rng: &mut R) -> ModelGraph {
    let side = 2 * rng.gen_range(1..=4);
    let c = rng.gen_range(1..=4);
    let k = rng.gen_range(1..=8);
    let hidden = rng.gen_range(1..=6);
    synthetic::small_cnn(rng, side, c, k, hidden).unwrap()
}

pub fn random_bytes<R: Rng>(rng: &mut R, n: usize) -> Vec<i8> {
    (0..n).map(|_| rng.gen()).collect()
}
