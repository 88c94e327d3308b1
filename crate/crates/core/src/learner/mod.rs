//! From-scratch differentiable models, losses, optimizers and evaluation.
//!
//! Two model kinds share one parameter/gradient representation
//! ([`ParameterSet`]):
//!
//! * `lstm-classifier`: one LSTM cell step from a zero state over the
//!   feature vector, then ReLU dense layers and a linear logit layer.
//! * `softmax-regression`: a single linear logit layer (convex loss).
//!
//! Softmax is applied inside [`loss`] and prediction, never in [`forward`].

mod lstm;
mod metrics;
mod model;
mod optim;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use lstm::{lstm_cell_forward, GateTrace, LstmState};
pub(crate) use metrics::argmax_rows;
pub use metrics::{evaluate, predict, ClassCounts, MetricsReport};
pub use model::{backward, forward, init_model, loss, parameter_layout, softmax, Gradient};
pub use optim::{optimizer_step, OptimizerState};
pub use train::{train_local, LocalTrainer, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearnerKind {
    LstmClassifier,
    SoftmaxRegression,
}

impl std::str::FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm-classifier" | "lstm" => Ok(LearnerKind::LstmClassifier),
            "softmax-regression" | "softmax" => Ok(LearnerKind::SoftmaxRegression),
            other => Err(Error::Config(format!("unknown learner kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Model architecture plus local training hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub kind: LearnerKind,
    pub input_dim: usize,
    pub num_classes: usize,
    pub hidden_size: usize,
    pub dense_sizes: Vec<usize>,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Seeds the per-epoch batch shuffle.
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            kind: LearnerKind::LstmClassifier,
            input_dim: 7,
            num_classes: 22,
            hidden_size: 64,
            dense_sizes: vec![64, 32],
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.001,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 32,
            epochs: 100,
            seed: 0,
        }
    }
}

impl LearnerConfig {
    pub fn softmax_regression() -> Self {
        LearnerConfig { kind: LearnerKind::SoftmaxRegression, dense_sizes: Vec::new(), ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.input_dim == 0 || self.num_classes < 2 {
            return bad("input_dim must be >= 1 and num_classes >= 2");
        }
        if self.kind == LearnerKind::LstmClassifier
            && (self.hidden_size == 0 || self.dense_sizes.contains(&0))
        {
            return bad("hidden and dense layer sizes must be positive");
        }
        // Zero is accepted so that "frozen" clients can be expressed.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.adam_epsilon.is_nan() || self.adam_epsilon <= 0.0 {
            return bad("adam epsilon must be positive");
        }
        Ok(())
    }
}
