use std::path::Path;

use serde::{Deserialize, Serialize};

use super::diagnostics::ConvergenceDiagnostics;
use super::timing::TimingBreakdown;
use super::RoundConfig;
use crate::aggregation::NodeId;
use crate::error::{Error, Result};
use crate::learner::MetricsReport;
use crate::topology::TopologyKind;

/// Header of `series.csv`.
pub const SERIES_COLUMNS: [&str; 10] =
    ["round", "loss", "accuracy", "precision", "recall", "f1", "t_init", "t_train", "t_exchange", "t_aggregate"];

/// One participant's view of a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRoundEntry {
    pub id: NodeId,
    pub train_loss: f64,
    pub samples: u64,
    /// Held-out metrics, when the participant evaluates every round.
    pub metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    /// Sample-weighted mean of the participants' final-epoch training loss.
    pub loss: f64,
    /// Global model on the held-out evaluation set.
    pub metrics: MetricsReport,
    /// Norm of the loss gradient of the global model on the evaluation set.
    pub grad_norm: f64,
    pub participants: Vec<NodeId>,
    /// Time spent during this round; round 1 also carries initialization.
    pub timing: TimingBreakdown,
    pub nodes: Vec<NodeRoundEntry>,
}

/// Final state of one participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub id: NodeId,
    pub neighbors: Vec<NodeId>,
    pub train_samples: usize,
    pub test_samples: usize,
    pub metrics: MetricsReport,
    pub timing: TimingBreakdown,
    /// Seconds from submitting a prediction request to receiving the answer.
    pub response_time_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseTimeStats {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl ResponseTimeStats {
    pub fn from_samples(samples: &[f64]) -> Option<ResponseTimeStats> {
        if samples.is_empty() {
            return None;
        }
        Some(ResponseTimeStats {
            count: samples.len(),
            mean: samples.iter().sum::<f64>() / samples.len() as f64,
            min: samples.iter().copied().fold(f64::INFINITY, f64::min),
            max: samples.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// Why a run ended before its configured round count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abort {
    pub round: u32,
    pub error: String,
    pub exit_code: i32,
}

impl Abort {
    pub fn new(round: u32, error: &Error) -> Abort {
        Abort { round, error: error.to_string(), exit_code: error.exit_code() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: String,
    pub topology: Option<TopologyKind>,
    pub nodes: usize,
    pub seed: u64,
    pub config: RoundConfig,
    pub rounds: Vec<RoundRecord>,
    pub stopped_early_at: Option<u32>,
    pub final_metrics: Option<MetricsReport>,
    pub timing: TimingBreakdown,
    pub node_reports: Vec<NodeSummary>,
    pub response_time: Option<ResponseTimeStats>,
    pub diagnostics: Option<ConvergenceDiagnostics>,
    /// Per-epoch training loss, for single-learner baselines.
    pub loss_trajectory: Vec<f64>,
    pub aborted: Option<Abort>,
}

impl ExperimentReport {
    pub fn new(scenario: impl Into<String>, topology: Option<TopologyKind>, nodes: usize, config: &RoundConfig) -> Self {
        ExperimentReport {
            scenario: scenario.into(),
            topology,
            nodes,
            seed: config.seed,
            config: config.clone(),
            rounds: Vec::new(),
            stopped_early_at: None,
            final_metrics: None,
            timing: TimingBreakdown::default(),
            node_reports: Vec::new(),
            response_time: None,
            diagnostics: None,
            loss_trajectory: Vec::new(),
            aborted: None,
        }
    }

    pub fn executed_rounds(&self) -> usize {
        self.rounds.len()
    }

    pub fn loss_series(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.loss).collect()
    }

    pub fn accuracy_series(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.metrics.accuracy).collect()
    }

    /// Every timing breakdown in the report: global, per round, per node.
    pub fn all_timings(&self) -> Vec<TimingBreakdown> {
        let mut out = vec![self.timing];
        out.extend(self.rounds.iter().map(|r| r.timing));
        out.extend(self.node_reports.iter().map(|n| n.timing));
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Per-round series, one row per executed round.
    pub fn series_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(SERIES_COLUMNS)?;
        for r in &self.rounds {
            let m = &r.metrics;
            let t = &r.timing;
            w.write_record(
                [r.round as f64, r.loss, m.accuracy, m.precision, m.recall, m.f1, t.t_init, t.t_train, t.t_exchange, t.t_aggregate]
                    .iter()
                    .map(|v| v.to_string()),
            )?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Writes `report.json` and `series.csv` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json()?)?;
        std::fs::write(dir.join("series.csv"), self.series_csv()?)?;
        Ok(())
    }
}
