//! Fixed-seed fixtures shared by the benchmarks.

use nnfi_core::{synthetic, LabeledImage, ModelGraph};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const SEED: u64 = 0x5eed;

/// The reference architecture with random weights, plus `n` images it labels itself.
pub fn reference_fixture(n: usize) -> (ModelGraph, Vec<LabeledImage>) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let model = synthetic::reference_cnn(&mut rng).expect("valid architecture");
    let data = synthetic::self_labeled_dataset(&mut rng, &model, n).expect("inference");
    (model, data)
}
