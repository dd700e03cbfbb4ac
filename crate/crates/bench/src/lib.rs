//! Seeded inputs shared by the benchmarks.

use graphmind::Tensor;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Tensor with entries uniform in [-1, 1).
pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape matches data")
}

/// Symmetric weighted adjacency with an edge present with probability `density`.
pub fn random_adjacency(rng: &mut ChaCha8Rng, n: usize, density: f64) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen::<f64>() < density {
                let w = rng.gen_range(0.01..1.0);
                a[(i, j)] = w;
                a[(j, i)] = w;
            }
        }
    }
    a
}
