use rand::Rng as _;

use crate::data::Rng;
use crate::error::{Error, Result};

use super::Matrix;

/// Index of a parameter inside its [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Matrix,
    grad: Matrix,
    first_moment: Matrix,
    second_moment: Matrix,
}

/// Named learnable tensors with gradient slots and optimizer state.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    entries: Vec<Entry>,
    step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> Result<ParamId> {
        let name = name.into();
        if self.id(&name).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name:?}")));
        }
        let (r, c) = value.shape();
        self.entries.push(Entry {
            name,
            value,
            grad: Matrix::zeros(r, c),
            first_moment: Matrix::zeros(r, c),
            second_moment: Matrix::zeros(r, c),
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    /// Adds a parameter drawn uniformly from `±sqrt(6 / (fan_in + fan_out))`.
    pub fn add_scaled_uniform(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut Rng,
    ) -> Result<ParamId> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.add(name, Matrix::from_vec(fan_in, fan_out, data)?)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
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

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].grad
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.data().len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().fill(0.0);
        }
    }

    /// Adds `grads` into the gradient slots (never overwrites).
    pub fn accumulate_grads(&mut self, grads: &ParamGrads) {
        for (e, g) in self.entries.iter_mut().zip(&grads.grads) {
            if let Some(g) = g {
                e.grad.add_assign(g);
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub(crate) fn entries_for_checkpoint(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }

    /// Copies values from `other` by name; every parameter must be present
    /// with the same shape.
    pub fn load_values_from(&mut self, other: &ParameterStore) -> Result<()> {
        for e in &mut self.entries {
            let src = other
                .id(&e.name)
                .map(|id| other.value(id))
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {:?}", e.name)))?;
            if src.shape() != e.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {:?} has shape {:?}, expected {:?}",
                    e.name,
                    src.shape(),
                    e.value.shape()
                )));
            }
            e.value = src.clone();
        }
        if other.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model expects {}",
                other.len(),
                self.len()
            )));
        }
        Ok(())
    }
}

/// Gradients for every parameter of a store, produced by one backward pass.
#[derive(Clone, Debug)]
pub struct ParamGrads {
    grads: Vec<Option<Matrix>>,
}

impl ParamGrads {
    pub fn zeros_like(store: &ParameterStore) -> Self {
        Self {
            grads: vec![None; store.len()],
        }
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Matrix) {
        match &mut self.grads[id.0] {
            Some(existing) => existing.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub fn add(&mut self, other: &ParamGrads) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads[id.0].as_ref()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Adaptive moment estimation.
    Adam,
    /// Plain SGD with heavy-ball momentum `beta1`.
    SgdMomentum,
}

impl std::str::FromStr for OptimizerKind {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> crate::error::Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::SgdMomentum),
            other => Err(crate::error::Error::InvalidArgument(format!(
                "unknown optimizer {other:?} (expected adam or sgd)"
            ))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::SgdMomentum => "sgd",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Applies one update in place, increments the step counter and zeroes the
/// gradients.
pub fn optimizer_step(store: &mut ParameterStore, cfg: &OptimizerConfig) {
    store.step += 1;
    let t = store.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for e in &mut store.entries {
        let values = e.value.data_mut();
        let grads = e.grad.data_mut();
        let m = e.first_moment.data_mut();
        let v = e.second_moment.data_mut();
        match cfg.kind {
            OptimizerKind::Adam => {
                for i in 0..values.len() {
                    let g = grads[i];
                    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    values[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                }
            }
            OptimizerKind::SgdMomentum => {
                for i in 0..values.len() {
                    m[i] = cfg.beta1 * m[i] + grads[i];
                    values[i] -= cfg.lr * m[i];
                }
            }
        }
        grads.fill(0.0);
    }
}

pub const MIN_LEARNING_RATE: f64 = 1e-5;

/// Step decay: `initial · rate^⌊epoch / step_epochs⌋`, floored at `1e-5`
/// (or at `initial` when that is already smaller).
pub fn lr_decay(epoch: usize, initial_lr: f64, decay_rate: f64, step_epochs: usize) -> f64 {
    let steps = epoch / step_epochs.max(1);
    let lr = initial_lr * decay_rate.powi(steps as i32);
    lr.max(MIN_LEARNING_RATE.min(initial_lr))
}
