use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

impl Tape {
    /// `lambda * Σ‖p‖²` over `params`; `None` when there is nothing to add.
    pub fn l2_penalty(&mut self, params: &[Var], lambda: f64) -> Option<Var> {
        if lambda == 0.0 || params.is_empty() {
            return None;
        }
        let mut total: Option<Var> = None;
        for &p in params {
            let sq = self.sum_squares(p);
            total = Some(match total {
                Some(t) => self.add(t, sq).expect("scalars"),
                None => sq,
            });
        }
        total.map(|t| self.scale(t, lambda))
    }

    /// Mean squared error over every component of the batch, plus the L2
    /// penalty. `pred=[1,0]`, `target=[0,0]` gives 0.5.
    pub fn loss_mse_l2(&mut self, pred: Var, target: &Tensor, params: &[Var], lambda: f64) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(Error::shape("loss_mse_l2", self.shape(pred), target.shape()));
        }
        let t = self.constant(target.clone());
        let diff = self.sub(pred, t)?;
        let sq = self.mul(diff, diff)?;
        let mse = self.mean(sq);
        Ok(match self.l2_penalty(params, lambda) {
            Some(pen) => self.add(mse, pen)?,
            None => mse,
        })
    }

    /// Batch-mean softmax cross-entropy plus the L2 penalty.
    pub fn loss_crossentropy_l2(
        &mut self,
        logits: Var,
        labels: &[usize],
        params: &[Var],
        lambda: f64,
    ) -> Result<Var> {
        let ce = self.softmax_cross_entropy(logits, labels)?;
        Ok(match self.l2_penalty(params, lambda) {
            Some(pen) => self.add(ce, pen)?,
            None => ce,
        })
    }
}

/// One-hot `[n, classes]` matrix.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Param(format!("label {l} out of range for {classes} classes")));
        }
        data[i * classes + l] = 1.0;
    }
    Tensor::new(vec![labels.len(), classes], data)
}
