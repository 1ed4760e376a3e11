#![allow(dead_code)]

use clues_core::model::{init_adapter, Architecture, LoraAdapter, ModelParams, Sample, Target};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn regression_sample(rng: &mut ChaCha8Rng, id: u64, d_in: usize, d_out: usize) -> Sample {
    Sample::clean(id, gauss_vec(rng, d_in), Target::Value(gauss_vec(rng, d_out)))
}

pub fn class_sample(rng: &mut ChaCha8Rng, id: u64, d_in: usize, classes: usize) -> Sample {
    Sample::clean(id, gauss_vec(rng, d_in), Target::Class(rng.random_range(0..classes)))
}

/// Base weights plus an adapter whose B factor is non-zero, so every
/// gradient block is exercised.
pub fn adapted(arch: Architecture, rank: usize, seed: u64) -> (ModelParams, LoraAdapter) {
    let base = ModelParams::random(arch, 1.0, seed);
    let layers = arch.layer_names().to_vec();
    let ad = init_adapter(arch, &layers, rank, 2.0 * rank as f64, seed + 1).unwrap();
    let mut r = rng(seed + 2);
    let flat: Vec<f64> = ad.flat().iter().map(|v| v + 0.3 * r.random_range(-1.0..1.0)).collect();
    (base, ad.with_flat(&flat).unwrap())
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}
