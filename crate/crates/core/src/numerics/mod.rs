//! Dense matrices, reverse-mode differentiation, parameters and optimizers.

pub mod checkpoint;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod matrix;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use graph::{Gradients, Graph, Var};
pub use kernels::{matmul, row_softmax};
pub use matrix::{FeatureMatrix, Matrix};
pub use params::{
    lr_decay, optimizer_step, OptimizerConfig, OptimizerKind, ParamGrads, ParamId, ParameterStore,
};

use crate::data::Rng;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

/// `activation(x · weight + bias)` without recording a tape.
pub fn mlp_layer(x: &Matrix, weight: &Matrix, bias: &Matrix, activation: Activation) -> Result<Matrix> {
    let y = kernels::add_bias(&matmul(x, weight)?, bias)?;
    Ok(match activation {
        Activation::Relu => kernels::relu(&y),
        Activation::None => y,
    })
}

/// Mean cross-entropy of `logits` against `targets`, optionally
/// class-weighted, without recording a tape.
pub fn cross_entropy(logits: &Matrix, targets: &[usize], class_weights: Option<&[f64]>) -> Result<f64> {
    let w = kernels::cross_entropy_point_weights(logits, targets, class_weights)?;
    Ok(kernels::cross_entropy_forward(logits, targets, &w).0)
}

/// A fully connected layer with bias.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
}

impl Linear {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        let weight = store.add_scaled_uniform(format!("{name}.weight"), c_in, c_out, rng)?;
        let bias = store.add(format!("{name}.bias"), Matrix::zeros(1, c_out))?;
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self, store: &ParameterStore) -> usize {
        store.value(self.weight).rows()
    }

    pub fn out_dim(&self, store: &ParameterStore) -> usize {
        store.value(self.weight).cols()
    }

    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, x: Var) -> Result<Var> {
        if g.value(x).cols() != self.in_dim(store) {
            return Err(Error::shape(
                "linear",
                format!(
                    "input has {} channels, layer expects {}",
                    g.value(x).cols(),
                    self.in_dim(store)
                ),
            ));
        }
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w)?;
        let y = g.add_bias(y, b)?;
        Ok(match self.activation {
            Activation::Relu => g.relu(y),
            Activation::None => y,
        })
    }
}
