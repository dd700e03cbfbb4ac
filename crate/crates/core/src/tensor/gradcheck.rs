use super::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Central-difference step.
pub const STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so entries whose true gradient
/// is ~0 are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// (parameter name, flat index) of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
    /// Set when a non-finite value was met.
    pub diagnostic: Option<String>,
}

impl GradCheckReport {
    fn new(tolerance: f64) -> Self {
        GradCheckReport {
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst: None,
            checked: 0,
            tolerance,
            passed: true,
            diagnostic: None,
        }
    }

    fn record(&mut self, name: &str, index: usize, analytic: f64, numeric: f64) {
        self.checked += 1;
        if !analytic.is_finite() || !numeric.is_finite() {
            self.passed = false;
            self.diagnostic.get_or_insert_with(|| {
                format!("non-finite gradient at {name}[{index}]: autodiff {analytic}, numeric {numeric}")
            });
            return;
        }
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        self.max_abs_error = self.max_abs_error.max(abs);
        if rel > self.max_rel_error {
            self.max_rel_error = rel;
            self.worst = Some((name.to_string(), index));
        }
        if rel > self.tolerance {
            self.passed = false;
        }
    }
}

/// Checks the autodiff gradient of a scalar program `f(θ)` against central
/// differences. θ is registered as parameter 0 of a private store, so `f`
/// must not look up parameters from another store on the same tape; use
/// [`gradient_check_params`] for model inputs.
pub fn gradient_check<F>(f: F, theta: &Tensor, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut store = ParamStore::new();
    let id = store.weight("theta", theta.clone());
    let mut tape = Tape::new();
    let v = tape.param(&store, id);
    let loss = f(&mut tape, v)?;
    tape.backward(loss, &mut store)?;
    let analytic = store
        .get(id)
        .grad()
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; theta.len()]);

    let eval = |t: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(t);
        let l = f(&mut tape, v)?;
        scalar(&tape, l)
    };
    let mut report = GradCheckReport::new(tolerance);
    for i in 0..theta.len() {
        let mut plus = theta.clone();
        plus.data_mut()[i] += STEP;
        let mut minus = theta.clone();
        minus.data_mut()[i] -= STEP;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * STEP);
        report.record("theta", i, analytic[i], numeric);
    }
    Ok(report)
}

/// Gradient check over every trainable tensor of a parameter store.
/// `f` must rebuild the loss from scratch (fresh tape, same seeds) each call.
/// At most `max_per_param` evenly spaced entries of each tensor are probed.
pub fn gradient_check_params<F>(
    store: &ParamStore,
    f: F,
    tolerance: f64,
    max_per_param: usize,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut work = store.clone();
    work.zero_grads();
    let mut tape = Tape::new();
    let loss = f(&mut tape, &work)?;
    tape.backward(loss, &mut work)?;
    let analytic: Vec<(ParamId, Vec<f64>)> = work
        .trainable_ids()
        .map(|id| {
            let g = work
                .get(id)
                .grad()
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; work.get(id).len()]);
            (id, g)
        })
        .collect();
    work.zero_grads();

    let mut report = GradCheckReport::new(tolerance);
    for (id, grad) in analytic {
        let n = grad.len();
        let stride = (n / max_per_param.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + STEP;
            let fp = eval_store(&f, &work)?;
            work.get_mut(id).data_mut()[i] = orig - STEP;
            let fm = eval_store(&f, &work)?;
            work.get_mut(id).data_mut()[i] = orig;
            let name = work.name(id).to_string();
            report.record(&name, i, grad[i], (fp - fm) / (2.0 * STEP));
        }
    }
    Ok(report)
}

fn eval_store<F>(f: &F, store: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let l = f(&mut tape, store)?;
    scalar(&tape, l)
}

fn scalar(tape: &Tape, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.len() != 1 {
        return Err(Error::Param(format!("gradient check needs a scalar, got {:?}", t.shape())));
    }
    Ok(t.data()[0])
}
