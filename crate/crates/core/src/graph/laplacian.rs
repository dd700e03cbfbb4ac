use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Column-wise Pearson correlation of an `M×N` feature matrix (rows are
/// samples), using population moments. A zero-variance column correlates 0
/// with every other column and 1 with itself.
pub fn pearson_matrix(features: &Tensor) -> Result<DMatrix<f64>> {
    let s = features.shape();
    if s.len() != 2 {
        return Err(Error::shape("pearson_matrix", s, &[]));
    }
    let (m, n) = (s[0], s[1]);
    if m < 2 {
        return Err(Error::Data(format!("pearson needs at least 2 samples, got {m}")));
    }
    let x = features.data();
    let mf = m as f64;
    let mut mean = vec![0.0; n];
    for row in x.chunks(n) {
        mean.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    mean.iter_mut().for_each(|a| *a /= mf);
    // Centered columns, column-major for cache-friendly dot products.
    let mut cols = vec![0.0; m * n];
    for (i, row) in x.chunks(n).enumerate() {
        for j in 0..n {
            cols[j * m + i] = row[j] - mean[j];
        }
    }
    let std: Vec<f64> = (0..n)
        .map(|j| {
            let c = &cols[j * m..(j + 1) * m];
            (c.iter().map(|v| v * v).sum::<f64>() / mf).sqrt()
        })
        .collect();
    let degenerate: Vec<bool> = (0..n)
        .map(|j| std[j] <= 1e-12 * (1.0 + mean[j].abs()))
        .collect();

    let mut p = DMatrix::zeros(n, n);
    for i in 0..n {
        p[(i, i)] = 1.0;
        for j in i + 1..n {
            let r = if degenerate[i] || degenerate[j] {
                0.0
            } else {
                let ci = &cols[i * m..(i + 1) * m];
                let cj = &cols[j * m..(j + 1) * m];
                let cov = ci.iter().zip(cj).map(|(a, b)| a * b).sum::<f64>() / mf;
                (cov / (std[i] * std[j])).clamp(-1.0, 1.0)
            };
            p[(i, j)] = r;
            p[(j, i)] = r;
        }
    }
    Ok(p)
}

/// `A = |P| − I`, with an exactly zero diagonal.
pub fn adjacency_from_pearson(p: &DMatrix<f64>) -> DMatrix<f64> {
    let mut a = p.abs();
    a.fill_diagonal(0.0);
    a
}

/// Degrees `D_ii = Σ_j A_ij` and the normalized Laplacian
/// `L = I − D^{-1/2} A D^{-1/2}`. An isolated node keeps an identity row.
pub fn normalized_laplacian(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = a.nrows();
    let degrees = DVector::from_iterator(n, a.row_iter().map(|r| r.sum()));
    let inv_sqrt: Vec<f64> = degrees
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut l = DMatrix::identity(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let w = 0.5 * (a[(i, j)] + a[(j, i)]);
            let v = -inv_sqrt[i] * w * inv_sqrt[j];
            l[(i, j)] = v;
            l[(j, i)] = v;
        }
    }
    (l, degrees)
}

/// `L̃ = 2L/λ_max − I`, mapping the spectrum into `[-1, 1]`.
pub fn scale_laplacian(l: &DMatrix<f64>, lambda_max: f64) -> Result<DMatrix<f64>> {
    if !(lambda_max > 0.0) {
        return Err(Error::Param(format!("lambda_max must be positive, got {lambda_max}")));
    }
    let n = l.nrows();
    Ok(l * (2.0 / lambda_max) - DMatrix::identity(n, n))
}

pub const POWER_TOLERANCE: f64 = 1e-6;
pub const POWER_MAX_ITERS: usize = 1000;
/// Largest eigenvalue of any normalized Laplacian.
pub const NORMALIZED_BOUND: f64 = 2.0;

/// Largest eigenvalue of a symmetric Laplacian: exact for `N ≤ 64`, power
/// iteration above that, falling back to 2 when iteration does not converge.
pub fn estimate_lambda_max(l: &DMatrix<f64>) -> f64 {
    if l.nrows() <= 64 {
        dense_lambda_max(l)
    } else {
        power_iteration(l).unwrap_or(NORMALIZED_BOUND)
    }
}

pub fn dense_lambda_max(l: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(l.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Rayleigh-quotient power iteration from a fixed-seed start vector.
///
/// The quotient converges geometrically, so the distance to the limit is
/// extrapolated from the last two increments; iteration stops once that
/// remaining error drops below the tolerance. `None` when it never does
/// within the iteration budget.
pub fn power_iteration(l: &DMatrix<f64>) -> Option<f64> {
    let n = l.nrows();
    if n == 0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v = DVector::from_iterator(n, (0..n).map(|_| rng.gen_range(0.5..1.5)));
    v /= v.norm();
    let mut estimate = f64::NAN;
    let mut last_step = f64::NAN;
    for _ in 0..POWER_MAX_ITERS {
        let w = l * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return Some(0.0);
        }
        let next = v.dot(&w);
        v = w / norm;
        let step = (next - estimate).abs();
        let tol = POWER_TOLERANCE * next.abs().max(1.0);
        if step == 0.0 {
            return Some(next);
        }
        let ratio = step / last_step;
        if ratio < 1.0 && step * ratio / (1.0 - ratio) <= tol && step <= tol {
            return Some(next);
        }
        estimate = next;
        last_step = step;
    }
    None
}

/// Pearson, adjacency, degree and Laplacian matrices for one feature matrix.
#[derive(Debug, Clone)]
pub struct CorrelationGraph {
    pub pearson: DMatrix<f64>,
    pub adjacency: DMatrix<f64>,
    pub degrees: DVector<f64>,
    pub laplacian: DMatrix<f64>,
    pub lambda_max: f64,
}

impl CorrelationGraph {
    pub fn from_features(features: &Tensor) -> Result<Self> {
        let pearson = pearson_matrix(features)?;
        Ok(Self::from_pearson(pearson))
    }

    pub fn from_pearson(pearson: DMatrix<f64>) -> Self {
        let adjacency = adjacency_from_pearson(&pearson);
        let (laplacian, degrees) = normalized_laplacian(&adjacency);
        let lambda_max = estimate_lambda_max(&laplacian);
        CorrelationGraph {
            pearson,
            adjacency,
            degrees,
            laplacian,
            lambda_max,
        }
    }

    pub fn nodes(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn scaled_laplacian(&self) -> DMatrix<f64> {
        scale_laplacian(&self.laplacian, self.lambda_max).expect("lambda_max of a Laplacian is positive")
    }
}
