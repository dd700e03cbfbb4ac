use std::fmt;
use std::str::FromStr;

use super::{ParamId, ParamStore};
use crate::error::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    id: ParamId,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam (β₁=0.9, β₂=0.999, ε=1e-8, bias-corrected) or plain SGD.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    step: u64,
    moments: Vec<Moments>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, store: &ParamStore) -> Self {
        let moments = match kind {
            OptimizerKind::Adam => store
                .trainable_ids()
                .map(|id| {
                    let n = store.get(id).len();
                    Moments {
                        id,
                        m: vec![0.0; n],
                        v: vec![0.0; n],
                    }
                })
                .collect(),
            OptimizerKind::Sgd => Vec::new(),
        };
        Optimizer {
            kind,
            learning_rate,
            step: 0,
            moments,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// Applies one update from the gradients accumulated in `store`.
    /// Parameters without a gradient are treated as having zero gradient.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                let ids: Vec<ParamId> = store.trainable_ids().collect();
                for id in ids {
                    let t = store.get_mut(id);
                    let Some(g) = t.grad().map(<[f64]>::to_vec) else { continue };
                    t.data_mut().iter_mut().zip(&g).for_each(|(p, g)| *p -= lr * g);
                }
            }
            OptimizerKind::Adam => {
                let bc1 = 1.0 - BETA1.powi(self.step as i32);
                let bc2 = 1.0 - BETA2.powi(self.step as i32);
                for mo in &mut self.moments {
                    let t = store.get_mut(mo.id);
                    if t.len() != mo.m.len() {
                        return Err(Error::shape("optimizer_step", t.shape(), &[mo.m.len()]));
                    }
                    let Some(g) = t.grad().map(<[f64]>::to_vec) else {
                        // Zero gradient: moments decay, parameters move by the
                        // remaining momentum only.
                        for i in 0..mo.m.len() {
                            mo.m[i] *= BETA1;
                            mo.v[i] *= BETA2;
                        }
                        apply_adam(t.data_mut(), &mo.m, &mo.v, lr, bc1, bc2);
                        continue;
                    };
                    for i in 0..g.len() {
                        mo.m[i] = BETA1 * mo.m[i] + (1.0 - BETA1) * g[i];
                        mo.v[i] = BETA2 * mo.v[i] + (1.0 - BETA2) * g[i] * g[i];
                    }
                    apply_adam(t.data_mut(), &mo.m, &mo.v, lr, bc1, bc2);
                }
            }
        }
        Ok(())
    }
}

fn apply_adam(p: &mut [f64], m: &[f64], v: &[f64], lr: f64, bc1: f64, bc2: f64) {
    for i in 0..p.len() {
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        p[i] -= lr * mh / (vh.sqrt() + EPSILON);
    }
}
