//! Seeded fixtures shared by the benchmarks.

use attrcons::transport::TransportInstance;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn distribution(rng: &mut ChaCha8Rng, len: usize, zeros: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..len)
        .map(|i| if i < zeros { 0.0 } else { rng.gen_range(0.01..1.0) })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

/// A padded instance like the scoring pipeline produces: `pad` zero-mass
/// slots on each side, cosine-like similarities in [-1, 1].
pub fn random_instance(seed: u64, l: usize, pad: usize) -> TransportInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let supply = distribution(&mut rng, l, pad);
    let demand = distribution(&mut rng, l, pad);
    let sim = Array2::from_shape_fn((l, l), |_| rng.gen_range(-1.0..1.0));
    TransportInstance::new(supply, demand, sim).expect("valid fixture")
}

pub fn random_matrix(seed: u64, rows: usize, cols: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}
