use super::{LearnerConfig, OptimizerKind};
use crate::error::Result;
use crate::tensor::ParameterSet;

/// Optimizer memory carried across steps (and across rounds on a client).
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Sgd,
    Adam { step: u64, moments: Option<(ParameterSet, ParameterSet)> },
}

impl OptimizerState {
    pub fn new(config: &LearnerConfig) -> Self {
        match config.optimizer {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::Adam => OptimizerState::Adam { step: 0, moments: None },
        }
    }
}

/// Applies one update in place: plain `p -= lr * g` for SGD, bias-corrected
/// moment estimates for Adam.
pub fn optimizer_step(
    params: &mut ParameterSet,
    grads: &ParameterSet,
    state: &mut OptimizerState,
    config: &LearnerConfig,
) -> Result<()> {
    params.ensure_same_schema(grads)?;
    let lr = config.learning_rate;
    match state {
        OptimizerState::Sgd => {
            for (p, g) in params.tensors_mut().iter_mut().zip(grads.tensors()) {
                p.values_mut().iter_mut().zip(g.values()).for_each(|(p, g)| *p -= lr * g);
            }
        }
        OptimizerState::Adam { step, moments } => {
            let (m, v) = moments.get_or_insert_with(|| (params.zeros_like(), params.zeros_like()));
            m.ensure_same_schema(grads)?;
            *step += 1;
            let (b1, b2, eps) = (config.adam_beta1, config.adam_beta2, config.adam_epsilon);
            let correction1 = 1.0 - b1.powf(*step as f64);
            let correction2 = 1.0 - b2.powf(*step as f64);
            let tensors = params.tensors_mut().iter_mut().zip(grads.tensors()).zip(m.tensors_mut()).zip(v.tensors_mut());
            for (((p, g), m), v) in tensors {
                let iter = p.values_mut().iter_mut().zip(g.values()).zip(m.values_mut()).zip(v.values_mut());
                for (((p, &g), m), v) in iter {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / correction1;
                    let v_hat = *v / correction2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}
