//! In-process reproduction of a full deployment over loopback channels.
//!
//! Every participant runs on its own thread. Aggregation orders inputs by
//! sender id, so the numbers do not depend on thread scheduling and a run
//! is a pure function of the dataset and configuration.

use serde::{Deserialize, Serialize};

use super::cfl::{run_cfl_client, serve, ClientConfig, ClientOutcome};
use super::dfl::{run_dfl_node, NodeConfig, NodeOutcome};
use super::diagnostics::convergence_diagnostics;
use super::report::{ExperimentReport, NodeRoundEntry, NodeSummary, ResponseTimeStats, RoundRecord};
use super::timing::TimingBreakdown;
use super::{derive_seed, RoundConfig, SeedStream};
use crate::aggregation::{fedavg, ModelUpdate, NodeId};
use crate::data::{preprocess, split_shards, train_test_split, Dataset};
use crate::error::{Error, Result};
use crate::learner::{backward, evaluate};
use crate::topology::{Topology, TopologyKind};
use crate::transport::{loopback_listener, loopback_pair_fragmented, Channel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub topology: TopologyKind,
    /// Clients of a star (plus its server), or nodes of a ring or mesh.
    pub nodes: usize,
    pub round: RoundConfig,
    /// Share of the dataset held out as the global evaluation set.
    pub eval_fraction: f64,
    /// Share of each participant's shard held out for local evaluation.
    pub local_test_fraction: f64,
    pub stratified: bool,
    /// Deliver every write in pieces of at most this many bytes.
    pub fragment: Option<usize>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            topology: TopologyKind::Star,
            nodes: 5,
            round: RoundConfig::default(),
            eval_fraction: 0.2,
            local_test_fraction: 0.2,
            stratified: true,
            fragment: None,
        }
    }
}

impl SimulationConfig {
    /// The global evaluation set and one raw shard per participant.
    pub fn partition(&self, dataset: &Dataset) -> Result<(Dataset, Vec<Dataset>)> {
        let seed = self.round.seed;
        let (pool, eval) = train_test_split(dataset, self.eval_fraction, derive_seed(seed, SeedStream::EvalSplit, 0))?;
        let shards = split_shards(&pool, self.nodes, self.stratified, derive_seed(seed, SeedStream::Shards, 0))?;
        Ok((eval, shards))
    }

    /// One raw shard per participant drawn from the whole dataset, with no
    /// evaluation hold-out.
    pub fn shard_pool(&self, dataset: &Dataset) -> Result<Vec<Dataset>> {
        split_shards(dataset, self.nodes, self.stratified, derive_seed(self.round.seed, SeedStream::Shards, 0))
    }

    fn topology(&self) -> Result<Topology> {
        match self.topology {
            TopologyKind::Star => Topology::new(TopologyKind::Star, self.nodes + 1),
            kind => Topology::new(kind, self.nodes),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub report: ExperimentReport,
    pub clients: Vec<ClientOutcome>,
    pub nodes: Vec<NodeOutcome>,
}

pub fn simulate(config: &SimulationConfig, dataset: &Dataset) -> Result<SimulationOutcome> {
    config.topology()?;
    let (eval, shards) = config.partition(dataset)?;
    match config.topology {
        TopologyKind::Star => simulate_star(config, &eval, &shards),
        _ => simulate_decentralized(config, &eval, &shards),
    }
}

fn first_error<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

fn simulate_star(config: &SimulationConfig, eval: &Dataset, shards: &[Dataset]) -> Result<SimulationOutcome> {
    let round = RoundConfig { expected_clients: config.nodes, ..config.round.clone() };
    round.validate()?;
    let (mut acceptor, mut connector) = loopback_listener();
    if let Some(f) = config.fragment {
        connector = connector.with_fragment(f);
    }
    let (served, clients) = std::thread::scope(|s| {
        let handles: Vec<_> = shards
            .iter()
            .enumerate()
            .map(|(i, shard)| {
                let client = ClientConfig::derived(i as NodeId + 1, &round, config.local_test_fraction);
                let connector = connector.clone();
                s.spawn(move || {
                    let channel = connector.connect()?;
                    drop(connector);
                    run_cfl_client(channel, shard, &client)
                })
            })
            .collect();
        drop(connector);
        let served = serve(&round, &mut acceptor, eval);
        drop(acceptor);
        let clients: Vec<Result<ClientOutcome>> =
            handles.into_iter().map(|h| h.join().expect("client thread panicked")).collect();
        (served, clients)
    });
    let (mut report, failure) = served?;
    if let Some(e) = failure {
        // A client's own failure explains a server-side abort better than
        // the dropped connection the server saw.
        let cause = clients.into_iter().filter_map(Result::err).find(|c| !matches!(c, Error::Connection(_)));
        return Err(cause.unwrap_or(e));
    }
    let clients = first_error(clients)?;
    report.node_reports = clients
        .iter()
        .map(|c| NodeSummary {
            id: c.id,
            neighbors: vec![0],
            train_samples: c.train_samples,
            test_samples: c.test_samples,
            metrics: c.metrics.clone(),
            timing: c.timing,
            response_time_secs: c.response_time_secs,
        })
        .collect();
    let response: Vec<f64> = clients.iter().map(|c| c.response_time_secs).collect();
    report.response_time = ResponseTimeStats::from_samples(&response);
    Ok(SimulationOutcome { report, clients, nodes: Vec::new() })
}

fn simulate_decentralized(config: &SimulationConfig, eval: &Dataset, shards: &[Dataset]) -> Result<SimulationOutcome> {
    let round = &config.round;
    round.validate()?;
    let topology = config.topology()?;
    let n = topology.node_count();
    let mut peers: Vec<Vec<Channel>> = (0..n).map(|_| Vec::new()).collect();
    for i in 0..n {
        for j in topology.neighbors(i as NodeId)?.into_iter().map(|j| j as usize).filter(|&j| j > i) {
            let (a, b) = loopback_pair_fragmented(config.fragment.unwrap_or(usize::MAX));
            peers[i].push(a);
            peers[j].push(b);
        }
    }
    let results: Vec<Result<NodeOutcome>> = std::thread::scope(|s| {
        let handles: Vec<_> = peers
            .into_iter()
            .zip(shards)
            .enumerate()
            .map(|(i, (channels, shard))| {
                let node = NodeConfig { record_trajectory: true, ..NodeConfig::derived(i as NodeId, round, config.local_test_fraction) };
                let topology = &topology;
                s.spawn(move || run_dfl_node(&node, topology, channels, shard))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("node thread panicked")).collect()
    });
    let nodes = first_error(results)?;

    let (eval, _) = preprocess(eval, None)?;
    let mut report = ExperimentReport::new("dfl", Some(config.topology), n, round);
    for r in 0..round.rounds as usize {
        let round_no = r as u32 + 1;
        let updates: Vec<ModelUpdate> =
            nodes.iter().map(|node| ModelUpdate::new(node.id, round_no, node.trajectory[r].clone())).collect();
        let consensus = fedavg(&updates)?;
        let metrics = evaluate(&consensus, &round.learner, &eval)?;
        let grad_norm = backward(&consensus, &round.learner, eval.features.view(), &eval.labels)?.grads.squared_norm().sqrt();
        let samples: usize = nodes.iter().map(|node| node.train_samples).sum();
        let loss = nodes.iter().map(|node| node.rounds[r].train_loss * node.train_samples as f64).sum::<f64>()
            / samples as f64;
        let timings: Vec<TimingBreakdown> = nodes.iter().map(|node| node.rounds[r].timing).collect();
        report.rounds.push(RoundRecord {
            round: round_no,
            loss,
            metrics,
            grad_norm,
            participants: nodes.iter().map(|node| node.id).collect(),
            timing: TimingBreakdown::mean(&timings).unwrap_or_default(),
            nodes: nodes
                .iter()
                .map(|node| NodeRoundEntry {
                    id: node.id,
                    train_loss: node.rounds[r].train_loss,
                    samples: node.train_samples as u64,
                    metrics: Some(node.rounds[r].metrics.clone()),
                })
                .collect(),
        });
    }
    report.final_metrics = report.rounds.last().map(|r| r.metrics.clone());
    let timings: Vec<TimingBreakdown> = nodes.iter().map(|node| node.timing).collect();
    report.timing = TimingBreakdown::mean(&timings).ok_or_else(|| Error::Config("no nodes".into()))?;
    report.node_reports = nodes.iter().map(NodeOutcome::summary).collect();
    let response: Vec<f64> = nodes.iter().map(|node| node.response_time_secs).collect();
    report.response_time = ResponseTimeStats::from_samples(&response);
    let grad_norms: Vec<f64> = report.rounds.iter().map(|r| r.grad_norm).collect();
    report.diagnostics = Some(convergence_diagnostics(&report.loss_series(), &grad_norms));
    Ok(SimulationOutcome { report, clients: Vec::new(), nodes })
}
