//! Deterministic multilayer perceptron with sigmoid hidden layers and
//! mask-aware mini-batch SGD.
//!
//! Weight matrix `i` (0-based) has shape `(sizes[i + 1], sizes[i])`, so entry
//! `(j, k)` connects neuron `k` of layer `i` to neuron `j` of layer `i + 1`.
//! Biases are trained but never masked.

mod io;
mod metrics;
mod model;
mod params;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{read_mask, read_params, write_mask, write_mask_csv, write_params, write_params_csv};
pub use metrics::{evaluate, predict_class, Evaluation};
pub use model::{forward, gradients, loss, sigmoid, sigmoid_lipschitz_check, Gradients};
pub use params::{init_params, DenseParams, InitScheme, Mask};
pub use train::{train, NoopObserver, TrainConfig, TrainObserver, TrainResult};

#[derive(Debug, Error)]
pub enum NnetError {
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch} (iteration {iteration}): loss = {loss}")]
    Divergence { epoch: usize, iteration: usize, loss: f64 },
    #[error("evaluation data is empty")]
    EmptyData,
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Sigmoid,
}

/// Output layer and its loss: a single sigmoid unit with binary cross-entropy, or
/// softmax with categorical cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    SigmoidBce,
    SoftmaxCe,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub sizes: Vec<usize>,
    #[serde(default)]
    pub hidden_activation: Activation,
    pub output_head: OutputHead,
}

impl LayerSpec {
    /// Picks the head from the output width: one unit means binary.
    pub fn new(sizes: Vec<usize>) -> Result<Self, NnetError> {
        let head = match sizes.last() {
            Some(1) => OutputHead::SigmoidBce,
            _ => OutputHead::SoftmaxCe,
        };
        let spec = Self {
            sizes,
            hidden_activation: Activation::Sigmoid,
            output_head: head,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Inputs, hidden widths, outputs; the output width follows the class count.
    pub fn for_classes(n_inputs: usize, hidden: &[usize], n_classes: usize) -> Result<Self, NnetError> {
        let outputs = if n_classes == 2 { 1 } else { n_classes };
        let mut sizes = vec![n_inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(outputs);
        Self::new(sizes)
    }

    pub fn validate(&self) -> Result<(), NnetError> {
        if self.sizes.len() < 2 {
            return Err(NnetError::InvalidSpec(format!(
                "need at least input and output widths, got {:?}",
                self.sizes
            )));
        }
        if self.sizes.contains(&0) {
            return Err(NnetError::InvalidSpec(format!("zero width in {:?}", self.sizes)));
        }
        match (self.output_head, self.outputs()) {
            (OutputHead::SigmoidBce, 1) => Ok(()),
            (OutputHead::SigmoidBce, n) => Err(NnetError::InvalidSpec(format!(
                "sigmoid-BCE head needs 1 output, got {n}"
            ))),
            (OutputHead::SoftmaxCe, n) if n >= 2 => Ok(()),
            (OutputHead::SoftmaxCe, n) => Err(NnetError::InvalidSpec(format!(
                "softmax head needs >= 2 outputs, got {n}"
            ))),
        }
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn outputs(&self) -> usize {
        *self.sizes.last().expect("validated spec")
    }

    /// Shape `(rows, cols)` of weight matrix `i` (0-based).
    pub fn weight_shape(&self, i: usize) -> (usize, usize) {
        (self.sizes[i + 1], self.sizes[i])
    }

    /// Number of weight connections, biases excluded.
    pub fn n_connections(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1]).sum()
    }

    /// Number of classes this network predicts.
    pub fn n_classes(&self) -> usize {
        match self.output_head {
            OutputHead::SigmoidBce => 2,
            OutputHead::SoftmaxCe => self.outputs(),
        }
    }
}
