use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    tensor: Tensor,
    /// Updated by the optimizer.
    trainable: bool,
    /// Included in the L2 penalty.
    decay: bool,
}

/// Named collection of model tensors: trainable parameters plus
/// non-trainable buffers such as batch-norm running statistics.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Trainable tensor that takes part in weight decay.
    pub fn weight(&mut self, name: &str, tensor: Tensor) -> ParamId {
        self.push(name, tensor, true, true)
    }

    /// Trainable tensor exempt from weight decay (biases, norm scales).
    pub fn bias(&mut self, name: &str, tensor: Tensor) -> ParamId {
        self.push(name, tensor, true, false)
    }

    /// Non-trainable state carried in checkpoints.
    pub fn buffer(&mut self, name: &str, tensor: Tensor) -> ParamId {
        self.push(name, tensor, false, false)
    }

    fn push(&mut self, name: &str, tensor: Tensor, trainable: bool, decay: bool) -> ParamId {
        assert!(
            self.find(name).is_none(),
            "duplicate parameter name {name}"
        );
        self.entries.push(Entry {
            name: name.to_string(),
            tensor,
            trainable,
            decay,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|id| self.entries[id.0].trainable)
    }

    pub fn decayed_ids(&self) -> Vec<ParamId> {
        self.ids().filter(|id| self.entries[id.0].decay).collect()
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn zero_grads(&mut self) {
        self.entries.iter_mut().for_each(|e| e.tensor.zero_grad());
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    /// Replaces the data of an existing entry by name, checking the shape.
    pub fn load(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::format("checkpoint", format!("unexpected parameter {name}")))?;
        let t = &mut self.entries[id.0].tensor;
        if t.shape() != shape {
            return Err(Error::format(
                "checkpoint",
                format!("parameter {name} has shape {shape:?}, model expects {:?}", t.shape()),
            ));
        }
        t.data_mut().copy_from_slice(&data);
        Ok(())
    }
}

/// Uniform in ±sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}
