//! Stage-2 classifier: stacked Chebyshev graph convolutions over the
//! feature-correlation graph, each followed by batch norm, softplus and
//! pairwise graph max-pooling, then one linear softmax layer.

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::graph::{chebyshev_conv, graph_max_pool, GraphHierarchy};
use crate::tensor::{
    glorot_uniform, BatchStats, Mode, Optimizer, OptimizerKind, ParamId, ParamStore, SeedStream, Tape, Tensor,
    Var,
};
use crate::train::{argmax_rows, check_labels, ensure_finite, minibatches, update_running, TrainHistory, BN_EPS};

const INFERENCE_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct GcnConfig {
    /// Output channels of each convolution layer.
    pub filters: Vec<usize>,
    /// Chebyshev order K (number of polynomial terms).
    pub order: usize,
    pub classes: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
}

impl Default for GcnConfig {
    fn default() -> Self {
        GcnConfig {
            filters: vec![16, 32, 64, 128, 256, 512],
            order: 2,
            classes: 4,
            batch_size: 16,
            learning_rate: 1e-7,
            l2: 1e-7,
            optimizer: OptimizerKind::Adam,
            epochs: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GcnLayer {
    /// `K × f_in × f_out`
    pub theta: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
}

#[derive(Debug, Clone)]
pub struct GcnModel {
    pub store: ParamStore,
    pub layers: Vec<GcnLayer>,
    pub cls_w: ParamId,
    pub cls_b: ParamId,
    pub hierarchy: GraphHierarchy,
}

/// Class decisions and softmax probabilities `[M, classes]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<usize>,
    pub probabilities: Tensor,
}

impl GcnModel {
    pub fn new(config: &GcnConfig, hierarchy: GraphHierarchy, seeds: &SeedStream) -> Result<Self> {
        let layers = config.filters.len();
        if layers == 0 || config.filters.contains(&0) || config.classes == 0 {
            return Err(Error::Config("gcn layer sizes must be positive".into()));
        }
        if config.order == 0 {
            return Err(Error::Config("chebyshev order must be at least 1".into()));
        }
        if hierarchy.levels() < layers {
            return Err(Error::Config(format!(
                "{layers} pooling layers need {layers} coarsening levels, graph has {}",
                hierarchy.levels()
            )));
        }
        let mut rng = seeds.rng("gcn.init");
        let mut store = ParamStore::new();
        let mut specs = Vec::with_capacity(layers);
        let mut f_in = 1;
        for (l, &f_out) in config.filters.iter().enumerate() {
            let k = config.order;
            let theta = store.weight(
                &format!("gcn.l{l}.theta"),
                glorot_uniform(&mut rng, &[k, f_in, f_out], k * f_in, f_out),
            );
            specs.push(GcnLayer {
                theta,
                gamma: store.bias(&format!("gcn.l{l}.bn.gamma"), Tensor::full(&[f_out], 1.0)),
                beta: store.bias(&format!("gcn.l{l}.bn.beta"), Tensor::zeros(&[f_out])),
                mean: store.buffer(&format!("gcn.l{l}.bn.mean"), Tensor::zeros(&[f_out])),
                var: store.buffer(&format!("gcn.l{l}.bn.var"), Tensor::full(&[f_out], 1.0)),
            });
            f_in = f_out;
        }
        let flat = hierarchy.sizes[layers] * f_in;
        let cls_w = store.weight("gcn.cls.W", glorot_uniform(&mut rng, &[flat, config.classes], flat, config.classes));
        let cls_b = store.bias("gcn.cls.b", Tensor::zeros(&[config.classes]));
        Ok(GcnModel {
            store,
            layers: specs,
            cls_w,
            cls_b,
            hierarchy,
        })
    }

    /// Rebuilds a model from checkpoint tensors over `hierarchy`; filter
    /// counts and Chebyshev order are read from the stored shapes.
    pub fn from_checkpoint(ckpt: &Checkpoint, hierarchy: GraphHierarchy) -> Result<Self> {
        let mut filters = Vec::new();
        let mut order = 0;
        while let Some(b) = ckpt.get(&format!("gcn.l{}.theta", filters.len())) {
            if b.shape.len() != 3 {
                return Err(Error::format("checkpoint", format!("{} must be rank 3", b.name)));
            }
            order = b.shape[0];
            filters.push(b.shape[2]);
        }
        let classes = ckpt.shape("gcn.cls.W")?.get(1).copied().unwrap_or(0);
        let config = GcnConfig {
            filters,
            order,
            classes,
            ..GcnConfig::default()
        };
        let mut model = GcnModel::new(&config, hierarchy, &SeedStream::new(0))
            .map_err(|e| Error::format("checkpoint", e.to_string()))?;
        ckpt.restore(&mut model.store)?;
        Ok(model)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(&self.store)
    }

    pub fn classes(&self) -> usize {
        self.store.get(self.cls_w).shape()[1]
    }

    pub fn order(&self) -> usize {
        self.store.get(self.layers[0].theta).shape()[0]
    }

    /// Node count of the input graph before padding.
    pub fn input_width(&self) -> usize {
        self.hierarchy.real_nodes
    }

    /// Reorders feature rows `[M, nodes]` into the hierarchy's pooled node
    /// order with zero-filled padding, giving `[M, padded]`.
    pub fn prepare(&self, features: &Tensor) -> Result<Tensor> {
        let s = features.shape();
        if s.len() != 2 || s[1] != self.input_width() {
            return Err(Error::shape("gcn input", s, &[0, self.input_width()]));
        }
        let mut data = Vec::with_capacity(s[0] * self.hierarchy.sizes[0]);
        for row in features.data().chunks(s[1].max(1)) {
            data.extend(self.hierarchy.permute_row(row)?);
        }
        Tensor::new(vec![s[0], self.hierarchy.sizes[0]], data)
    }

    /// Logits `[B, classes]` from prepared input `[B, padded]`, plus the
    /// per-layer batch statistics in train mode.
    pub fn forward(&self, tape: &mut Tape, x: Var, mode: Mode) -> Result<(Var, Vec<BatchStats>)> {
        let s = tape.shape(x).to_vec();
        let n0 = self.hierarchy.sizes[0];
        if s.len() != 2 || s[1] != n0 {
            return Err(Error::shape("gcn_forward", &s, &[0, n0]));
        }
        let bs = s[0];
        let k = self.order();
        let mut h = tape.reshape(x, &[bs, n0, 1])?;
        let mut stats = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let n = self.hierarchy.sizes[l];
            let theta = tape.param(&self.store, layer.theta);
            let conv = chebyshev_conv(tape, theta, &self.hierarchy.laplacians[l], h, k)?;
            let f = tape.shape(conv)[2];
            let flat = tape.reshape(conv, &[bs * n, f])?;
            let gamma = tape.param(&self.store, layer.gamma);
            let beta = tape.param(&self.store, layer.beta);
            let running = (self.store.get(layer.mean).data(), self.store.get(layer.var).data());
            let (normed, st) = tape.batch_norm(flat, gamma, beta, running, mode, BN_EPS)?;
            stats.extend(st);
            let act = tape.softplus(normed);
            let act = tape.reshape(act, &[bs, n, f])?;
            h = graph_max_pool(tape, act, &self.hierarchy.fake[l])?;
        }
        let width: usize = tape.shape(h)[1..].iter().product();
        let flat = tape.reshape(h, &[bs, width])?;
        let w = tape.param(&self.store, self.cls_w);
        let b = tape.param(&self.store, self.cls_b);
        let logits = tape.matmul(flat, w)?;
        Ok((tape.add_bias(logits, b)?, stats))
    }

    /// Batch-mean cross-entropy plus L2 on the convolution and classifier
    /// weights.
    pub fn loss(&self, tape: &mut Tape, logits: Var, labels: &[usize], l2: f64) -> Result<Var> {
        let decayed: Vec<Var> = self
            .store
            .decayed_ids()
            .into_iter()
            .map(|id| tape.param(&self.store, id))
            .collect();
        tape.loss_crossentropy_l2(logits, labels, &decayed, l2)
    }

    /// Eval-mode logits `[M, classes]` for raw feature rows `[M, nodes]`.
    pub fn logits(&self, features: &Tensor) -> Result<Tensor> {
        let x = self.prepare(features)?;
        let m = x.shape()[0];
        let k = self.classes();
        let mut out = Vec::with_capacity(m * k);
        for start in (0..m).step_by(INFERENCE_CHUNK) {
            let end = (start + INFERENCE_CHUNK).min(m);
            let mut tape = Tape::new();
            let xv = tape.constant(x.slice_rows(start, end));
            let (logits, _) = self.forward(&mut tape, xv, Mode::Eval)?;
            out.extend_from_slice(tape.value(logits).data());
        }
        Tensor::new(vec![m, k], out)
    }

    pub fn predict(&self, features: &Tensor) -> Result<Prediction> {
        Ok(predict_from_logits(&self.logits(features)?))
    }
}

/// Softmax probabilities and argmax labels, ties going to the lowest class.
pub fn predict_from_logits(logits: &Tensor) -> Prediction {
    let k = logits.shape().get(1).copied().unwrap_or(1).max(1);
    let labels = argmax_rows(logits.data(), k);
    let mut probs = logits.data().to_vec();
    for row in probs.chunks_mut(k) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    Prediction {
        labels,
        probabilities: Tensor::new(logits.shape().to_vec(), probs).expect("same shape"),
    }
}

/// Trains `model` on feature rows `[M, nodes]` with cross-entropy over
/// shuffled mini-batches.
pub fn gcn_train(
    model: &mut GcnModel,
    features: &Tensor,
    labels: &[usize],
    config: &GcnConfig,
    seeds: &SeedStream,
) -> Result<TrainHistory> {
    let x = model.prepare(features)?;
    let m = x.shape()[0];
    if m == 0 {
        return Err(Error::Data("gcn training set is empty".into()));
    }
    if labels.len() != m {
        return Err(Error::Data(format!("{} labels for {m} samples", labels.len())));
    }
    if m < 2 {
        return Err(Error::Data("batch norm needs at least two training samples".into()));
    }
    check_labels(labels, model.classes())?;
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, &model.store);
    let mut history = TrainHistory::default();
    for epoch in 0..config.epochs {
        let batches = minibatches(m, config.batch_size, &mut seeds.rng_indexed("gcn.shuffle", epoch as u64));
        let (mut total, mut correct) = (0.0, 0usize);
        for batch in batches {
            let mut tape = Tape::new();
            let xb = tape.constant(x.gather_rows(&batch));
            let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (logits, stats) = model.forward(&mut tape, xb, Mode::Train)?;
            let loss = model.loss(&mut tape, logits, &yb, config.l2)?;
            let value = tape.value(loss).data()[0];
            ensure_finite(value, epoch)?;
            total += value * batch.len() as f64;
            let pred = argmax_rows(tape.value(logits).data(), model.classes());
            correct += pred.iter().zip(&yb).filter(|(p, y)| p == y).count();
            model.store.zero_grads();
            tape.backward(loss, &mut model.store)?;
            opt.step(&mut model.store)?;
            for (layer, st) in model.layers.iter().zip(&stats) {
                update_running(&mut model.store, layer.mean, layer.var, st);
            }
        }
        history.loss.push(total / m as f64);
        history.accuracy.push(correct as f64 / m as f64);
    }
    Ok(history)
}
