use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{backward, optimizer_step, LearnerConfig, OptimizerState};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::ParameterSet;

/// Result of one call to local training.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParameterSet,
    /// Mean per-sample loss of each epoch, measured on each batch before
    /// its update.
    pub epoch_losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Local trainer that keeps its optimizer moments and shuffle stream
/// between calls, so a long-lived client continues where it left off.
#[derive(Debug, Clone)]
pub struct LocalTrainer {
    config: LearnerConfig,
    optimizer: OptimizerState,
    rng: ChaCha8Rng,
}

impl LocalTrainer {
    pub fn new(config: LearnerConfig) -> Result<Self> {
        config.validate()?;
        Ok(LocalTrainer {
            optimizer: OptimizerState::new(&config),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
        })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    /// Runs `epochs` passes of `ceil(n / batch_size)` mini-batches, drawing a
    /// fresh permutation at the start of each epoch.
    pub fn train(&mut self, mut params: ParameterSet, shard: &Dataset) -> Result<TrainOutcome> {
        if shard.is_empty() {
            return Err(Error::Data("cannot train on an empty shard".into()));
        }
        let n = shard.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut epoch_losses = Vec::with_capacity(self.config.epochs);
        for _ in 0..self.config.epochs {
            order.shuffle(&mut self.rng);
            let mut total = 0.0;
            for batch in order.chunks(self.config.batch_size) {
                let x = shard.features.select(ndarray::Axis(0), batch);
                let y: Vec<usize> = batch.iter().map(|&i| shard.labels[i]).collect();
                let g = backward(&params, &self.config, x.view(), &y)?;
                total += g.loss * batch.len() as f64;
                optimizer_step(&mut params, &g.grads, &mut self.optimizer, &self.config)?;
            }
            epoch_losses.push(total / n as f64);
        }
        if !params.is_finite() {
            return Err(Error::Data("training diverged to non-finite parameters".into()));
        }
        Ok(TrainOutcome { params, epoch_losses })
    }
}

/// One-shot local training with a fresh optimizer state.
pub fn train_local(params: ParameterSet, shard: &Dataset, config: &LearnerConfig) -> Result<TrainOutcome> {
    LocalTrainer::new(config.clone())?.train(params, shard)
}
