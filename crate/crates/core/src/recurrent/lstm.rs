use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{glorot_uniform, ParamId, ParamStore, Tape, Tensor, Var};

/// Gate order used for every per-gate array: input, forget, output, candidate.
pub const GATES: [&str; 4] = ["i", "f", "o", "g"];

/// Parameter handles of one LSTM cell. Input weights are `input × hidden`,
/// recurrent weights `hidden × hidden`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmCell {
    pub w_x: [ParamId; 4],
    pub w_h: [ParamId; 4],
    pub b: [ParamId; 4],
}

impl LstmCell {
    /// Glorot-uniform weights, zero biases except a forget bias of 1.
    pub fn init<R: Rng>(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut ids = |kind: &str, make: &mut dyn FnMut(usize) -> (Tensor, bool)| -> [ParamId; 4] {
            let mut out = Vec::with_capacity(4);
            for (k, g) in GATES.iter().enumerate() {
                let (t, weight) = make(k);
                let name = format!("{prefix}.{kind}{g}");
                out.push(if weight { store.weight(&name, t) } else { store.bias(&name, t) });
            }
            out.try_into().unwrap()
        };
        let w_x = ids("W_x", &mut |_| (glorot_uniform(rng, &[input, hidden], input, hidden), true));
        let w_h = ids("W_h", &mut |_| (glorot_uniform(rng, &[hidden, hidden], hidden, hidden), true));
        let b = ids("b_", &mut |k| (Tensor::full(&[hidden], if k == 1 { 1.0 } else { 0.0 }), false));
        LstmCell { w_x, w_h, b }
    }

    /// Looks the cell up by name prefix.
    pub fn find(store: &ParamStore, prefix: &str) -> Result<Self> {
        let get = |kind: &str| -> Result<[ParamId; 4]> {
            let mut out = Vec::with_capacity(4);
            for g in GATES {
                let name = format!("{prefix}.{kind}{g}");
                out.push(
                    store
                        .find(&name)
                        .ok_or_else(|| Error::format("checkpoint", format!("missing parameter {name}")))?,
                );
            }
            Ok(out.try_into().unwrap())
        };
        Ok(LstmCell {
            w_x: get("W_x")?,
            w_h: get("W_h")?,
            b: get("b_")?,
        })
    }

    pub fn input_size(&self, store: &ParamStore) -> usize {
        store.get(self.w_x[0]).shape()[0]
    }

    pub fn hidden_size(&self, store: &ParamStore) -> usize {
        store.get(self.w_h[0]).shape()[0]
    }
}

/// One LSTM update:
///
/// ```text
/// i, f, o = σ(x·W_x + h·W_h + b)
/// g       = tanh(x·W_x + h·W_h + b)
/// c_t     = f ⊙ c_prev + i ⊙ g
/// h_t     = o ⊙ tanh(c_t)
/// ```
pub fn lstm_cell_step(
    tape: &mut Tape,
    store: &ParamStore,
    cell: &LstmCell,
    x_t: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let hidden = cell.hidden_size(store);
    let batch = tape.shape(x_t).first().copied().unwrap_or(0);
    for v in [h_prev, c_prev] {
        if tape.shape(v) != [batch, hidden] {
            return Err(Error::shape("lstm_cell_step", tape.shape(v), &[batch, hidden]));
        }
    }
    let mut gates = [x_t; 4];
    for k in 0..4 {
        let wx = tape.param(store, cell.w_x[k]);
        let wh = tape.param(store, cell.w_h[k]);
        let b = tape.param(store, cell.b[k]);
        let xw = tape.matmul(x_t, wx)?;
        let hw = tape.matmul(h_prev, wh)?;
        let pre = tape.add(xw, hw)?;
        let pre = tape.add_bias(pre, b)?;
        gates[k] = if k == 3 { tape.tanh(pre) } else { tape.sigmoid(pre) };
    }
    let [i, f, o, g] = gates;
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// Runs `cell` over the time steps of `x: [B, T, C]` in the given order,
/// returning the hidden state at each visited step, indexed by time.
fn run_direction(
    tape: &mut Tape,
    store: &ParamStore,
    cell: &LstmCell,
    x: Var,
    reverse: bool,
) -> Result<Vec<Var>> {
    let (bs, tl) = (tape.shape(x)[0], tape.shape(x)[1]);
    let hidden = cell.hidden_size(store);
    let mut h = tape.constant(Tensor::zeros(&[bs, hidden]));
    let mut c = h;
    let mut out = vec![h; tl];
    let steps: Box<dyn Iterator<Item = usize>> = if reverse { Box::new((0..tl).rev()) } else { Box::new(0..tl) };
    for t in steps {
        let x_t = tape.select_axis1(x, t)?;
        (h, c) = lstm_cell_step(tape, store, cell, x_t, h, c)?;
        out[t] = h;
    }
    Ok(out)
}

/// Bidirectional pass over `x: [B, T, C]`. The forward cell reads
/// `t = 0..T`, the backward cell reads `t = T-1..0`; the output at `t`
/// concatenates both states at `t`, giving `[B, T, 2H]`.
pub fn bilstm_forward(
    tape: &mut Tape,
    store: &ParamStore,
    forward: &LstmCell,
    backward: &LstmCell,
    x: Var,
) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let channels = forward.input_size(store);
    if s.len() != 3 || s[2] != channels || backward.input_size(store) != channels || s[1] == 0 {
        return Err(Error::shape("bilstm_forward", &s, &[channels]));
    }
    let fw = run_direction(tape, store, forward, x, false)?;
    let bw = run_direction(tape, store, backward, x, true)?;
    let fw = tape.stack_axis1(&fw)?;
    let bw = tape.stack_axis1(&bw)?;
    tape.concat_last(&[fw, bw])
}
