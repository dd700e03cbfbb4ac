//! Pieces shared by both training loops.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{BatchStats, ParamId, ParamStore};

/// Running-statistics momentum for batch norm: `r ← m·r + (1−m)·batch`.
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

/// Per-epoch training curve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    /// Sample-weighted mean loss of each epoch.
    pub loss: Vec<f64>,
    /// Training accuracy of each epoch, measured on the train-mode outputs.
    pub accuracy: Vec<f64>,
}

/// Shuffled mini-batches of `0..n`. A trailing batch of one sample is folded
/// into its predecessor so that batch norm always sees two rows.
pub fn minibatches<R: Rng>(n: usize, batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let batch = batch.clamp(1, n.max(1));
    let mut out: Vec<Vec<usize>> = order.chunks(batch).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().map_or(false, |b| b.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    out
}

/// Folds train-mode batch statistics into a pair of running buffers.
pub fn update_running(store: &mut ParamStore, mean: ParamId, var: ParamId, stats: &BatchStats) {
    for (r, b) in store.get_mut(mean).data_mut().iter_mut().zip(&stats.mean) {
        *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
    }
    for (r, b) in store.get_mut(var).data_mut().iter_mut().zip(&stats.var) {
        *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
    }
}

pub fn ensure_finite(loss: f64, epoch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("loss became {loss} in epoch {epoch}")))
    }
}

/// Row-wise argmax, ties resolved toward the lowest index.
pub fn argmax_rows(values: &[f64], width: usize) -> Vec<usize> {
    values
        .chunks(width)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= classes) {
        Some(l) => Err(Error::Data(format!("label {l} outside 0..{classes}"))),
        None => Ok(()),
    }
}
