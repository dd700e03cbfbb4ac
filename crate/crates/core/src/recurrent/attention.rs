use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{glorot_uniform, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Attention {
    /// `2H × A`
    pub w: ParamId,
    /// `A`
    pub b: ParamId,
    /// `A × 1` shared context vector.
    pub u: ParamId,
}

impl Attention {
    pub fn init<R: Rng>(store: &mut ParamStore, prefix: &str, width: usize, size: usize, rng: &mut R) -> Self {
        Attention {
            w: store.weight(&format!("{prefix}.W_w"), glorot_uniform(rng, &[width, size], width, size)),
            b: store.bias(&format!("{prefix}.b_w"), Tensor::zeros(&[size])),
            u: store.weight(&format!("{prefix}.u_w"), glorot_uniform(rng, &[size, 1], size, 1)),
        }
    }

    pub fn find(store: &ParamStore, prefix: &str) -> Result<Self> {
        let get = |n: &str| {
            let name = format!("{prefix}.{n}");
            store
                .find(&name)
                .ok_or_else(|| Error::format("checkpoint", format!("missing parameter {name}")))
        };
        Ok(Attention {
            w: get("W_w")?,
            b: get("b_w")?,
            u: get("u_w")?,
        })
    }
}

/// Attention weights `α: [B, T]` and pooled summary `s: [B, W]` of a
/// sequence `y: [B, T, W]`:
///
/// ```text
/// u_t = tanh(y_t·W_w + b_w)
/// α   = softmax_t(u_t·u_w)
/// s   = Σ_t α_t y_t
/// ```
pub fn attention_weights(tape: &mut Tape, store: &ParamStore, att: &Attention, y: Var) -> Result<(Var, Var)> {
    let s = tape.shape(y).to_vec();
    let width = store.get(att.w).shape()[0];
    if s.len() != 3 || s[2] != width {
        return Err(Error::shape("attention_apply", &s, store.get(att.w).shape()));
    }
    let (bs, tl) = (s[0], s[1]);
    let w = tape.param(store, att.w);
    let b = tape.param(store, att.b);
    let u = tape.param(store, att.u);
    let flat = tape.reshape(y, &[bs * tl, width])?;
    let proj = tape.matmul(flat, w)?;
    let proj = tape.add_bias(proj, b)?;
    let ut = tape.tanh(proj);
    let scores = tape.matmul(ut, u)?;
    let scores = tape.reshape(scores, &[bs, tl])?;
    let alpha = tape.softmax(scores);
    let a3 = tape.reshape(alpha, &[bs, 1, tl])?;
    let pooled = tape.batch_matmul(a3, y)?;
    let pooled = tape.reshape(pooled, &[bs, width])?;
    Ok((alpha, pooled))
}

pub fn attention_apply(tape: &mut Tape, store: &ParamStore, att: &Attention, y: Var) -> Result<Var> {
    Ok(attention_weights(tape, store, att, y)?.1)
}
