use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Chebyshev spectral graph convolution `y = Σ_{k<K} T_k(L̃) x θ_k`.
///
/// `theta` is `[K, f_in, f_out]`, `scaled_laplacian` the row-major `N×N`
/// matrix `L̃`, and `x` is `[B, N, f_in]`. The polynomial terms follow the
/// recurrence `X̄_0 = x`, `X̄_1 = L̃x`, `X̄_k = 2L̃X̄_{k−1} − X̄_{k−2}`.
pub fn chebyshev_conv(
    tape: &mut Tape,
    theta: Var,
    scaled_laplacian: &Arc<Vec<f64>>,
    x: Var,
    order: usize,
) -> Result<Var> {
    if order < 1 {
        return Err(Error::Param("Chebyshev order K must be at least 1".into()));
    }
    let xs = tape.shape(x).to_vec();
    let ts = tape.shape(theta).to_vec();
    if xs.len() != 3 || ts.len() != 3 || ts[0] != order || ts[1] != xs[2] {
        return Err(Error::shape("chebyshev_conv", &xs, &ts));
    }
    let (batch, nodes, f_in, f_out) = (xs[0], xs[1], xs[2], ts[2]);
    if scaled_laplacian.len() != nodes * nodes {
        return Err(Error::shape("chebyshev_conv", &xs, &[scaled_laplacian.len()]));
    }

    let mut terms = vec![x];
    if order > 1 {
        terms.push(tape.const_left_mul(scaled_laplacian.clone(), x)?);
    }
    for k in 2..order {
        let lx = tape.const_left_mul(scaled_laplacian.clone(), terms[k - 1])?;
        let twice = tape.scale(lx, 2.0);
        terms.push(tape.sub(twice, terms[k - 2])?);
    }
    // [B, N, K·f_in] · [K·f_in, f_out], k-major to match θ's layout.
    let stacked = if terms.len() == 1 { x } else { tape.concat_last(&terms)? };
    let flat = tape.reshape(stacked, &[batch * nodes, order * f_in])?;
    let weights = tape.reshape(theta, &[order * f_in, f_out])?;
    let y = tape.matmul(flat, weights)?;
    tape.reshape(y, &[batch, nodes, f_out])
}

/// 1-D max pooling over sibling pairs at one hierarchy level.
pub fn graph_max_pool(tape: &mut Tape, x: Var, fake: &[bool]) -> Result<Var> {
    tape.pair_max_pool(x, fake)
}
