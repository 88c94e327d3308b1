//! Decentralized FL: serverless nodes averaging with their topology
//! neighbors.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::report::NodeSummary;
use super::timing::{Phase, PhaseClock, TimingBreakdown};
use super::{derive_seed, LocalData, RoundConfig, SeedStream};
use crate::aggregation::{neighbor_average, ModelUpdate, NodeId};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::learner::{backward, evaluate, init_model, predict, LearnerConfig, LocalTrainer, MetricsReport};
use crate::tensor::ParameterSet;
use crate::topology::{Topology, TopologyFile, TopologyKind};
use crate::transport::{
    connect_tcp, decode_json, decode_params, encode_json, encode_params, Acceptor, Channel, Frame, FrameSender, Hello,
    MessageType, TcpAcceptor, WireDtype,
};

const READER_POLL: Duration = Duration::from_millis(100);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub id: NodeId,
    pub rounds: u32,
    /// Local training settings; `learner.seed` drives the batch shuffle.
    pub learner: LearnerConfig,
    /// Shared by every node so all start from the same model.
    pub init_seed: u64,
    pub include_self: bool,
    pub local_test_fraction: f64,
    pub split_seed: u64,
    pub barrier_timeout_secs: f64,
    pub wire_dtype: WireDtype,
    /// Keep a copy of the parameters after every round.
    pub record_trajectory: bool,
}

impl NodeConfig {
    pub fn derived(id: NodeId, round: &RoundConfig, local_test_fraction: f64) -> NodeConfig {
        NodeConfig {
            id,
            rounds: round.rounds,
            learner: LearnerConfig { seed: derive_seed(round.seed, SeedStream::Trainer, id as u64), ..round.learner.clone() },
            init_seed: round.seed,
            include_self: round.include_self,
            local_test_fraction,
            split_seed: derive_seed(round.seed, SeedStream::LocalSplit, id as u64),
            barrier_timeout_secs: round.barrier_timeout_secs,
            wire_dtype: round.wire_dtype,
            record_trajectory: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRound {
    pub round: u32,
    pub train_loss: f64,
    /// Averaged model on the local test split.
    pub metrics: MetricsReport,
    /// Gradient norm of the averaged model on the local test split.
    pub grad_norm: f64,
    pub timing: TimingBreakdown,
}

#[derive(Debug, Clone)]
pub struct NodeOutcome {
    pub id: NodeId,
    pub neighbors: Vec<NodeId>,
    pub params: ParameterSet,
    pub rounds: Vec<NodeRound>,
    /// Parameters after each round's averaging, if recorded.
    pub trajectory: Vec<ParameterSet>,
    pub metrics: MetricsReport,
    pub timing: TimingBreakdown,
    pub response_time_secs: f64,
    pub train_samples: usize,
    pub test_samples: usize,
}

impl NodeOutcome {
    pub fn summary(&self) -> NodeSummary {
        NodeSummary {
            id: self.id,
            neighbors: self.neighbors.clone(),
            train_samples: self.train_samples,
            test_samples: self.test_samples,
            metrics: self.metrics.clone(),
            timing: self.timing,
            response_time_secs: self.response_time_secs,
        }
    }
}

/// Binds this node's address, dials lower-id neighbors and accepts the
/// higher-id ones.
pub fn connect_peers_tcp(file: &TopologyFile, id: NodeId, timeout: Duration) -> Result<Vec<Channel>> {
    let topology = file.topology()?;
    let neighbors = topology.neighbors(id)?;
    let mut acceptor = TcpAcceptor::bind(&file.node(id)?.socket_addr())?;
    let mut channels = Vec::with_capacity(neighbors.len());
    for &j in neighbors.iter().filter(|&&j| j < id) {
        channels.push(connect_tcp(&file.node(j)?.socket_addr(), timeout)?);
    }
    for _ in neighbors.iter().filter(|&&j| j > id) {
        channels.push(acceptor.accept(timeout)?);
    }
    Ok(channels)
}

fn handshake(
    config: &NodeConfig,
    neighbors: &[NodeId],
    schema_id: &str,
    mut peers: Vec<Channel>,
) -> Result<BTreeMap<NodeId, Channel>> {
    let timeout = Duration::from_secs_f64(config.barrier_timeout_secs);
    let hello = encode_json(&Hello { rounds: Some(config.rounds), schema_id: schema_id.to_string() })?;
    for channel in &mut peers {
        channel.send(&Frame::new(MessageType::Hello, 0, config.id, hello.clone()))?;
    }
    let mut by_id = BTreeMap::new();
    for mut channel in peers {
        let frame = channel.recv(timeout)?.expect(MessageType::Hello)?;
        let theirs: Hello = decode_json(&frame.payload)?;
        let j = frame.sender_id;
        if theirs.rounds != Some(config.rounds) {
            return Err(Error::RoundSync(format!(
                "node {j} is configured for {:?} rounds, node {} for {}",
                theirs.rounds, config.id, config.rounds
            )));
        }
        if theirs.schema_id != schema_id {
            return Err(Error::Protocol(format!("node {j} model schema {} differs from {schema_id}", theirs.schema_id)));
        }
        if !neighbors.contains(&j) {
            return Err(Error::Config(format!("node {j} is not a neighbor of node {}", config.id)));
        }
        channel.set_peer(format!("node {j}"));
        if by_id.insert(j, channel).is_some() {
            return Err(Error::Protocol(format!("node {j} connected twice")));
        }
    }
    if by_id.len() != neighbors.len() {
        return Err(Error::Config(format!(
            "node {} has {} peer channels for neighbors {neighbors:?}",
            config.id,
            by_id.len()
        )));
    }
    Ok(by_id)
}

/// Updates received so far, keyed by round and sender. Updates can arrive a
/// round early when a neighbor finishes its barrier first.
struct Inbox {
    events: mpsc::Receiver<(NodeId, Result<Frame>)>,
    pending: BTreeMap<(u32, NodeId), ParameterSet>,
    closed: BTreeMap<NodeId, String>,
}

impl Inbox {
    fn collect(&mut self, round: u32, neighbors: &[NodeId], own: &ParameterSet, timeout: Duration) -> Result<Vec<ModelUpdate>> {
        let deadline = Instant::now() + timeout;
        loop {
            if neighbors.iter().all(|j| self.pending.contains_key(&(round, *j))) {
                return Ok(neighbors
                    .iter()
                    .map(|&j| ModelUpdate::new(j, round, self.pending.remove(&(round, j)).expect("checked")))
                    .collect());
            }
            if let Some((j, why)) = self.closed.iter().find(|(j, _)| !self.pending.contains_key(&(round, **j))) {
                return Err(Error::Connection(format!("node {j} left before round {round}: {why}")));
            }
            let remaining = deadline.saturating_duration_since(Instant::now());
            let (j, event) = match self.events.recv_timeout(remaining) {
                Ok(e) => e,
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    let missing: Vec<_> =
                        neighbors.iter().filter(|j| !self.pending.contains_key(&(round, **j))).collect();
                    return Err(Error::RoundSync(format!(
                        "round {round} updates from {missing:?} not received within {:.1}s",
                        timeout.as_secs_f64()
                    )));
                }
                Err(mpsc::RecvTimeoutError::Disconnected) => {
                    return Err(Error::Connection("all neighbor channels closed".into()))
                }
            };
            let frame = match event {
                Ok(frame) => frame,
                Err(e) => {
                    self.closed.insert(j, e.to_string());
                    continue;
                }
            };
            if frame.sender_id != j {
                return Err(Error::Protocol(format!("node {j} sent a frame stamped {}", frame.sender_id)));
            }
            let frame = frame.expect(MessageType::ModelUpdate)?;
            if frame.round < round {
                log::warn!("dropping stale round-{} update from node {j}", frame.round);
                continue;
            }
            let params = decode_params(&frame.payload)?;
            if !params.same_schema(own) {
                return Err(Error::Aggregation(format!("node {j} sent a foreign schema")));
            }
            if self.pending.insert((frame.round, j), params).is_some() {
                return Err(Error::Protocol(format!("node {j} sent two round-{} updates", frame.round)));
            }
        }
    }
}

fn broadcast(senders: &mut BTreeMap<NodeId, FrameSender>, frame: &Frame) -> Result<()> {
    senders.values_mut().try_for_each(|s| s.send(frame))
}

/// Node loop: train locally, send the result to every neighbor, wait for
/// all neighbors' updates of the same round, replace the local model with
/// their average. Runs every configured round.
///
/// `peers` holds one connected channel per neighbor, in any order; the
/// opening hello identifies each one.
pub fn run_dfl_node(config: &NodeConfig, topology: &Topology, peers: Vec<Channel>, shard: &Dataset) -> Result<NodeOutcome> {
    let mut clock = PhaseClock::start();
    if config.rounds == 0 {
        return Err(Error::Config("rounds must be >= 1".into()));
    }
    if topology.kind() == TopologyKind::Star {
        return Err(Error::Config("decentralized nodes need a ring or mesh topology".into()));
    }
    let neighbors = topology.neighbors(config.id)?;
    let local = LocalData::prepare(shard, config.local_test_fraction, config.split_seed)?;
    let mut params = init_model(&config.learner, config.init_seed)?;
    let peers = handshake(config, &neighbors, &params.schema_id(), peers)?;
    let mut trainer = LocalTrainer::new(config.learner.clone())?;
    let timeout = Duration::from_secs_f64(config.barrier_timeout_secs);
    clock.charge(Phase::Init);

    let done = AtomicBool::new(false);
    std::thread::scope(|s| {
        let (tx, rx) = mpsc::channel();
        let mut senders = BTreeMap::new();
        for (j, channel) in peers {
            let (sender, mut receiver) = channel.split();
            senders.insert(j, sender);
            let tx = tx.clone();
            let done = &done;
            s.spawn(move || loop {
                match receiver.recv(READER_POLL) {
                    Err(Error::Timeout(..)) if !done.load(Ordering::Relaxed) => continue,
                    Err(Error::Timeout(..)) => break,
                    event => {
                        let last = event.is_err();
                        if tx.send((j, event)).is_err() || last {
                            break;
                        }
                    }
                }
            });
        }
        drop(tx);
        let mut inbox = Inbox { events: rx, pending: BTreeMap::new(), closed: BTreeMap::new() };

        let result = (|| -> Result<NodeOutcome> {
            let mut rounds = Vec::with_capacity(config.rounds as usize);
            let mut trajectory = Vec::new();
            let mut before = TimingBreakdown::default();
            for round in 1..=config.rounds {
                let outcome = trainer.train(params.clone(), &local.train)?;
                clock.charge(Phase::Train);
                let frame = Frame::new(MessageType::ModelUpdate, round, config.id, encode_params(&outcome.params, config.wire_dtype)?);
                broadcast(&mut senders, &frame)?;
                let updates = inbox.collect(round, &neighbors, &outcome.params, timeout)?;
                clock.charge(Phase::Exchange);
                params = neighbor_average(&updates, neighbors.len(), config.id, &outcome.params, config.include_self)?;
                let metrics = evaluate(&params, &config.learner, &local.test)?;
                let grad_norm =
                    backward(&params, &config.learner, local.test.features.view(), &local.test.labels)?.grads.squared_norm().sqrt();
                if config.record_trajectory {
                    trajectory.push(params.clone());
                }
                clock.charge(Phase::Aggregate);
                let now = clock.snapshot();
                rounds.push(NodeRound {
                    round,
                    train_loss: outcome.final_loss().unwrap_or(f64::NAN),
                    metrics,
                    grad_norm,
                    timing: now.difference(&before),
                });
                before = now;
            }
            let started = Instant::now();
            predict(&params, &config.learner, &local.test)?;
            let response_time_secs = started.elapsed().as_secs_f64();
            let metrics = evaluate(&params, &config.learner, &local.test)?;
            clock.charge(Phase::Aggregate);
            Ok(NodeOutcome {
                id: config.id,
                neighbors: neighbors.clone(),
                params: params.clone(),
                rounds,
                trajectory,
                metrics,
                timing: clock.snapshot(),
                response_time_secs,
                train_samples: local.train.len(),
                test_samples: local.test.len(),
            })
        })();
        done.store(true, Ordering::Relaxed);
        drop(senders);
        result
    })
}
