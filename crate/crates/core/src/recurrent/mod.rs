//! Stage-1 network: a bidirectional LSTM over raw EEG segments, attention
//! pooling across time, and a fully connected feature layer whose
//! activations become the node signals of the graph classifier.

mod attention;
mod lstm;

pub use attention::{attention_apply, attention_weights, Attention};
pub use lstm::{bilstm_forward, lstm_cell_step, LstmCell, GATES};

use rand::Rng;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::tensor::{
    glorot_uniform, one_hot, BatchStats, Mode, OptimizerKind, Optimizer, ParamId, ParamStore, SeedStream, Tape,
    Tensor, Var,
};
use crate::train::{argmax_rows, check_labels, ensure_finite, minibatches, update_running, TrainHistory, BN_EPS};

/// Rows per chunk when running the model without gradients.
const INFERENCE_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Config {
    /// Input channels per time step.
    pub channels: usize,
    /// LSTM cell size per direction.
    pub hidden: usize,
    pub attention: usize,
    /// Width of the feature layer (the graph's node count).
    pub features: usize,
    pub classes: usize,
    pub dropout: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            channels: 64,
            hidden: 256,
            attention: 8,
            features: 64,
            classes: 4,
            dropout: 0.25,
            batch_size: 1024,
            learning_rate: 1e-4,
            l2: 1e-7,
            epochs: 50,
            optimizer: OptimizerKind::Adam,
        }
    }
}

/// Outputs of one stage-1 forward pass.
#[derive(Debug, Clone)]
pub struct Stage1Output {
    /// `[B, T, 2H]` after dropout.
    pub sequence: Var,
    /// `[B, features]`, non-negative.
    pub features: Var,
    /// `[B, classes]`, raw.
    pub logits: Var,
    /// Present in train mode, for the running batch-norm estimates.
    pub stats: Option<BatchStats>,
}

#[derive(Debug, Clone)]
pub struct Stage1Model {
    pub store: ParamStore,
    pub forward: LstmCell,
    pub backward: LstmCell,
    pub attention: Attention,
    pub fc_w: ParamId,
    pub fc_b: ParamId,
    pub bn_gamma: ParamId,
    pub bn_beta: ParamId,
    pub bn_mean: ParamId,
    pub bn_var: ParamId,
    pub cls_w: ParamId,
    pub cls_b: ParamId,
    pub dropout: f64,
}

impl Stage1Model {
    pub fn new(config: &Stage1Config, seeds: &SeedStream) -> Result<Self> {
        let c = config;
        if [c.channels, c.hidden, c.attention, c.features, c.classes].contains(&0) {
            return Err(Error::Config("stage-1 layer sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&c.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", c.dropout)));
        }
        let mut rng = seeds.rng("stage1.init");
        let mut store = ParamStore::new();
        let forward = LstmCell::init(&mut store, "rnn.fwd", c.channels, c.hidden, &mut rng);
        let backward = LstmCell::init(&mut store, "rnn.bwd", c.channels, c.hidden, &mut rng);
        let width = 2 * c.hidden;
        let attention = Attention::init(&mut store, "rnn.att", width, c.attention, &mut rng);
        let f = c.features;
        let fc_w = store.weight("rnn.fc.W", glorot_uniform(&mut rng, &[width, f], width, f));
        let fc_b = store.bias("rnn.fc.b", Tensor::zeros(&[f]));
        let bn_gamma = store.bias("rnn.bn.gamma", Tensor::full(&[f], 1.0));
        let bn_beta = store.bias("rnn.bn.beta", Tensor::zeros(&[f]));
        let bn_mean = store.buffer("rnn.bn.mean", Tensor::zeros(&[f]));
        let bn_var = store.buffer("rnn.bn.var", Tensor::full(&[f], 1.0));
        let cls_w = store.weight("rnn.cls.W", glorot_uniform(&mut rng, &[f, c.classes], f, c.classes));
        let cls_b = store.bias("rnn.cls.b", Tensor::zeros(&[c.classes]));
        Ok(Stage1Model {
            store,
            forward,
            backward,
            attention,
            fc_w,
            fc_b,
            bn_gamma,
            bn_beta,
            bn_mean,
            bn_var,
            cls_w,
            cls_b,
            dropout: c.dropout,
        })
    }

    /// Rebuilds a model from checkpoint tensors; layer sizes are read from
    /// the stored shapes.
    pub fn from_checkpoint(ckpt: &Checkpoint, dropout: f64) -> Result<Self> {
        let dim = |name: &str, axis: usize| -> Result<usize> {
            ckpt.shape(name)?
                .get(axis)
                .copied()
                .ok_or_else(|| Error::format("checkpoint", format!("{name} has too few dimensions")))
        };
        let config = Stage1Config {
            channels: dim("rnn.fwd.W_xi", 0)?,
            hidden: dim("rnn.fwd.W_xi", 1)?,
            attention: dim("rnn.att.W_w", 1)?,
            features: dim("rnn.fc.W", 1)?,
            classes: dim("rnn.cls.W", 1)?,
            dropout,
            ..Stage1Config::default()
        };
        let mut model = Stage1Model::new(&config, &SeedStream::new(0))?;
        ckpt.restore(&mut model.store)?;
        Ok(model)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(&self.store)
    }

    pub fn channels(&self) -> usize {
        self.forward.input_size(&self.store)
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden_size(&self.store)
    }

    pub fn feature_width(&self) -> usize {
        self.store.get(self.fc_w).shape()[1]
    }

    pub fn classes(&self) -> usize {
        self.store.get(self.cls_w).shape()[1]
    }

    /// BiLSTM → dropout → attention → feature head, on `x: [B, T, C]`.
    pub fn forward<R: Rng>(&self, tape: &mut Tape, x: Var, mode: Mode, rng: &mut R) -> Result<Stage1Output> {
        let y = bilstm_forward(tape, &self.store, &self.forward, &self.backward, x)?;
        let sequence = tape.dropout(y, self.dropout, mode, rng)?;
        let s = attention_apply(tape, &self.store, &self.attention, sequence)?;
        let (features, logits, stats) = self.feature_head(tape, s, mode, rng)?;
        Ok(Stage1Output {
            sequence,
            features,
            logits,
            stats,
        })
    }

    /// `features = dropout(softplus(BN(s·W_fc + b_fc)))`,
    /// `logits = features·W_cls + b_cls`.
    pub fn feature_head<R: Rng>(
        &self,
        tape: &mut Tape,
        s: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Var, Var, Option<BatchStats>)> {
        let p = |tape: &mut Tape, id| tape.param(&self.store, id);
        let (w, b) = (p(tape, self.fc_w), p(tape, self.fc_b));
        let (gamma, beta) = (p(tape, self.bn_gamma), p(tape, self.bn_beta));
        let z = tape.matmul(s, w)?;
        let z = tape.add_bias(z, b)?;
        let running = (self.store.get(self.bn_mean).data(), self.store.get(self.bn_var).data());
        let (z, stats) = tape.batch_norm(z, gamma, beta, running, mode, BN_EPS)?;
        let a = tape.softplus(z);
        let features = tape.dropout(a, self.dropout, mode, rng)?;
        let (cw, cb) = (p(tape, self.cls_w), p(tape, self.cls_b));
        let logits = tape.matmul(features, cw)?;
        let logits = tape.add_bias(logits, cb)?;
        Ok((features, logits, stats))
    }

    /// Stage-1 objective on one batch: mean squared error between
    /// `softmax(logits)` and the one-hot labels, plus L2 on the weights.
    pub fn loss(&self, tape: &mut Tape, out: &Stage1Output, labels: &[usize], l2: f64) -> Result<Var> {
        let probs = tape.softmax(out.logits);
        let target = one_hot(labels, self.classes())?;
        let decayed: Vec<Var> = self
            .store
            .decayed_ids()
            .into_iter()
            .map(|id| tape.param(&self.store, id))
            .collect();
        tape.loss_mse_l2(probs, &target, &decayed, l2)
    }

    /// Eval-mode feature and logit rows for every sample of `x: [M, T, C]`,
    /// in input order.
    pub fn infer(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let m = check_input(x, self.channels())?;
        let (f, k) = (self.feature_width(), self.classes());
        let mut features = Vec::with_capacity(m * f);
        let mut logits = Vec::with_capacity(m * k);
        let mut unused = rand::rngs::mock::StepRng::new(0, 0);
        for start in (0..m).step_by(INFERENCE_CHUNK) {
            let end = (start + INFERENCE_CHUNK).min(m);
            let mut tape = Tape::new();
            let xv = tape.constant(x.slice_rows(start, end));
            let out = self.forward(&mut tape, xv, Mode::Eval, &mut unused)?;
            features.extend_from_slice(tape.value(out.features).data());
            logits.extend_from_slice(tape.value(out.logits).data());
        }
        Ok((Tensor::new(vec![m, f], features)?, Tensor::new(vec![m, k], logits)?))
    }
}

fn check_input(x: &Tensor, channels: usize) -> Result<usize> {
    let s = x.shape();
    if s.len() != 3 || s[2] != channels || s[1] == 0 {
        return Err(Error::shape("stage-1 input", s, &[0, 0, channels]));
    }
    Ok(s[0])
}

/// Trains `model` on `x: [M, T, C]` with Adam (or SGD) over shuffled
/// mini-batches, updating the batch-norm running statistics as it goes.
pub fn stage1_train(
    model: &mut Stage1Model,
    x: &Tensor,
    labels: &[usize],
    config: &Stage1Config,
    seeds: &SeedStream,
) -> Result<TrainHistory> {
    let m = check_input(x, model.channels())?;
    if m == 0 {
        return Err(Error::Data("stage-1 training set is empty".into()));
    }
    if labels.len() != m {
        return Err(Error::Data(format!("{} labels for {m} samples", labels.len())));
    }
    check_labels(labels, model.classes())?;
    if m < 2 {
        return Err(Error::Data("batch norm needs at least two training samples".into()));
    }
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, &model.store);
    let mut history = TrainHistory::default();
    for epoch in 0..config.epochs {
        let batches = minibatches(m, config.batch_size, &mut seeds.rng_indexed("stage1.shuffle", epoch as u64));
        let mut drop_rng = seeds.rng_indexed("stage1.dropout", epoch as u64);
        let (mut total, mut correct) = (0.0, 0usize);
        for batch in batches {
            let mut tape = Tape::new();
            let xb = tape.constant(x.gather_rows(&batch));
            let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let out = model.forward(&mut tape, xb, Mode::Train, &mut drop_rng)?;
            let loss = model.loss(&mut tape, &out, &yb, config.l2)?;
            let value = tape.value(loss).data()[0];
            ensure_finite(value, epoch)?;
            total += value * batch.len() as f64;
            let pred = argmax_rows(tape.value(out.logits).data(), model.classes());
            correct += pred.iter().zip(&yb).filter(|(p, y)| p == y).count();
            model.store.zero_grads();
            tape.backward(loss, &mut model.store)?;
            opt.step(&mut model.store)?;
            if let Some(stats) = &out.stats {
                update_running(&mut model.store, model.bn_mean, model.bn_var, stats);
            }
        }
        history.loss.push(total / m as f64);
        history.accuracy.push(correct as f64 / m as f64);
    }
    Ok(history)
}

/// Feature-layer activations `[M, features]` of every sample, in order.
pub fn extract_features(model: &Stage1Model, x: &Tensor) -> Result<Tensor> {
    Ok(model.infer(x)?.0)
}
