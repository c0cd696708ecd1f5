//! Shared helpers for integration tests.
#![allow(dead_code)]

pub mod gradcheck;
pub mod oracles;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scanseg::network::{Batch, ContextTensor, NetworkParams, INPUT_DIM, NUM_CLASSES};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random batch with `instances` ground-truth objects.
pub fn random_batch(n: usize, m: usize, instances: u64, use_mcp: bool, seed: u64) -> Batch {
    let mut rng = rng(seed);
    let inputs = Array2::from_shape_simple_fn((n, INPUT_DIM), || rng.gen_range(-1.0..1.0));
    let context = use_mcp.then(|| {
        let dense: Vec<[f64; INPUT_DIM]> = (0..n * m)
            .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
            .collect();
        ContextTensor::from_dense(n, m, &dense).unwrap()
    });
    let gt_instance: Vec<u64> = (0..n).map(|i| i as u64 % instances).collect();
    let gt_class = gt_instance
        .iter()
        .map(|&i| (i as usize * 5 + 1) % NUM_CLASSES)
        .collect();
    Batch {
        inputs,
        context,
        gt_class,
        gt_instance,
    }
}

/// Randomised parameters with non-zero biases so every code path is live.
pub fn random_params(use_mcp: bool, seed: u64) -> NetworkParams {
    let mut p = NetworkParams::init(use_mcp, seed);
    let mut rng = rng(seed ^ 0xB1A5);
    for (_, layer) in p.layers_mut() {
        layer.bias.mapv_inplace(|_| rng.gen_range(-0.1..0.1));
    }
    p
}
