//! Round loops for the CFL server and client roles, the DFL node role, the
//! in-process simulator and the comparison baselines.

mod baseline;
mod cfl;
mod dfl;
mod diagnostics;
mod report;
mod simulate;
mod timing;

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::aggregation::Divisor;
use crate::data::{preprocess, train_test_split, Dataset};
use crate::error::{Error, Result};
use crate::learner::LearnerConfig;
use crate::transport::WireDtype;

pub use baseline::{
    compare_response_times, run_cloud_client, run_cloud_server, run_local_only, simulate_cloud_only,
    BaselineComparison, CloudClientOutcome,
};
pub use cfl::{run_cfl_client, run_cfl_server, ClientConfig, ClientOutcome, ClientRound};
pub use dfl::{connect_peers_tcp, run_dfl_node, NodeConfig, NodeOutcome, NodeRound};
pub use diagnostics::{convergence_diagnostics, ConvergenceDiagnostics, Trend};
pub use report::{Abort, ExperimentReport, NodeSummary, ResponseTimeStats, RoundRecord, SERIES_COLUMNS};
pub use simulate::{simulate, SimulationConfig, SimulationOutcome};
pub use timing::{Phase, PhaseClock, TimingBreakdown};

/// Round-level settings shared by every role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoundConfig {
    pub rounds: u32,
    /// Share of connected clients sampled each round, in (0, 1].
    pub client_fraction: f64,
    pub expected_clients: usize,
    /// Early stop once two consecutive global accuracies differ by less
    /// than this (from round 3 on). 0 disables early stopping.
    pub stop_delta: f64,
    pub learner: LearnerConfig,
    pub barrier_timeout_secs: f64,
    /// DFL nodes count their own parameters in the neighbor average.
    pub include_self: bool,
    pub divisor: Divisor,
    pub wire_dtype: WireDtype,
    /// Base seed: model initialization uses it directly, every other random
    /// stream is derived from it.
    pub seed: u64,
}

impl Default for RoundConfig {
    fn default() -> Self {
        RoundConfig {
            rounds: 10,
            client_fraction: 1.0,
            expected_clients: 5,
            stop_delta: 0.001,
            learner: LearnerConfig::default(),
            barrier_timeout_secs: 120.0,
            include_self: false,
            divisor: Divisor::Participating,
            wire_dtype: WireDtype::F64,
            seed: 0,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(Error::Config(format!("client fraction {} must lie in (0, 1]", self.client_fraction)));
        }
        if self.expected_clients == 0 {
            return Err(Error::Config("at least one client is required".into()));
        }
        if !(self.stop_delta >= 0.0 && self.stop_delta.is_finite()) {
            return Err(Error::Config(format!("stop delta {} must be >= 0", self.stop_delta)));
        }
        if !(self.barrier_timeout_secs > 0.0 && self.barrier_timeout_secs.is_finite()) {
            return Err(Error::Config("barrier timeout must be positive".into()));
        }
        if let Divisor::FixedCount(n) = self.divisor {
            if n != self.expected_clients {
                return Err(Error::Config(format!("divisor {n} differs from {} clients", self.expected_clients)));
            }
        }
        self.learner.validate()
    }

    /// `max(ceil(f_c * N_c), 1)`.
    pub fn sample_size(&self) -> usize {
        ((self.client_fraction * self.expected_clients as f64).ceil() as usize).clamp(1, self.expected_clients)
    }

    pub fn barrier_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.barrier_timeout_secs)
    }
}

/// Independent random streams derived from the base seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStream {
    EvalSplit = 1,
    Shards = 2,
    LocalSplit = 3,
    Trainer = 4,
    Sampling = 5,
}

/// SplitMix64 finalizer over `(base, stream, id)`.
pub fn derive_seed(base: u64, stream: SeedStream, id: u64) -> u64 {
    let mut z = base
        ^ (stream as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ id.wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A participant's private data after its local train/test split and
/// scaling with statistics fitted on the train side only.
#[derive(Debug, Clone)]
pub struct LocalData {
    pub train: Dataset,
    pub test: Dataset,
}

impl LocalData {
    /// Splits `shard` at `test_fraction`. Shards too small to split are used
    /// whole on both sides.
    pub fn prepare(shard: &Dataset, test_fraction: f64, seed: u64) -> Result<LocalData> {
        if shard.is_empty() {
            return Err(Error::Data("local shard is empty".into()));
        }
        let (train, test) = match train_test_split(shard, test_fraction, seed) {
            Ok(parts) => parts,
            Err(Error::Data(msg)) => {
                log::warn!("local split skipped: {msg}; evaluating on the training rows");
                (shard.clone(), shard.clone())
            }
            Err(e) => return Err(e),
        };
        let (train, stats) = preprocess(&train, None)?;
        let (test, _) = preprocess(&test, Some(&stats))?;
        Ok(LocalData { train, test })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_size_rounds_up() {
        let cfg = RoundConfig { client_fraction: 0.5, expected_clients: 10, ..Default::default() };
        assert_eq!(cfg.sample_size(), 5);
        let cfg = RoundConfig { client_fraction: 0.05, expected_clients: 10, ..Default::default() };
        assert_eq!(cfg.sample_size(), 1);
        let cfg = RoundConfig { client_fraction: 0.34, expected_clients: 3, ..Default::default() };
        assert_eq!(cfg.sample_size(), 2);
    }

    #[test]
    fn validation() {
        assert!(RoundConfig::default().validate().is_ok());
        for bad in [
            RoundConfig { rounds: 0, ..Default::default() },
            RoundConfig { client_fraction: 0.0, ..Default::default() },
            RoundConfig { client_fraction: 1.5, ..Default::default() },
            RoundConfig { stop_delta: -1.0, ..Default::default() },
            RoundConfig { divisor: Divisor::FixedCount(4), ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for stream in [SeedStream::EvalSplit, SeedStream::Shards, SeedStream::LocalSplit, SeedStream::Trainer] {
            for id in 0..50 {
                assert!(seen.insert(derive_seed(7, stream, id)));
            }
        }
    }
}
