//! Comparison baselines: a cloud-only predictor that receives raw data, and
//! a server that trains alone on its own shard.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::cfl::ClientConfig;
use super::report::{ExperimentReport, NodeSummary, ResponseTimeStats, RoundRecord};
use super::simulate::SimulationConfig;
use super::timing::{Phase, PhaseClock};
use super::{derive_seed, LocalData, RoundConfig, SeedStream};
use crate::aggregation::NodeId;
use crate::data::{preprocess, train_test_split, Dataset};
use crate::error::{Error, Result};
use crate::learner::{
    argmax_rows, backward, evaluate, forward, init_model, softmax, train_local, LearnerConfig, MetricsReport,
};
use crate::topology::{TopologyKind, SERVER_ID};
use crate::transport::{
    decode_predictions, encode_predictions, loopback_listener, Acceptor, Channel, Frame, MessageType, PredictRequest,
};

#[derive(Debug, Clone)]
pub struct CloudClientOutcome {
    pub id: NodeId,
    pub metrics: MetricsReport,
    /// Seconds from sending the request to receiving the predictions.
    pub response_time_secs: f64,
    pub train_samples: usize,
    pub test_samples: usize,
}

/// Raw local split of a shard, with the same rows a federated client with
/// the same split seed would use.
fn raw_split(shard: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    match train_test_split(shard, test_fraction, seed) {
        Err(Error::Data(_)) => Ok((shard.clone(), shard.clone())),
        other => other,
    }
}

/// Uploads the raw local training rows plus the local test features, and
/// scores the returned class probabilities against the local test labels.
pub fn run_cloud_client(
    mut channel: Channel,
    shard: &Dataset,
    config: &ClientConfig,
) -> Result<CloudClientOutcome> {
    let (train, test) = raw_split(shard, config.local_test_fraction, config.split_seed)?;
    let request = PredictRequest {
        train_features: train.features.clone(),
        train_labels: train.labels.clone(),
        query_features: test.features.clone(),
    };
    let frame = Frame::new(MessageType::PredictRequest, 1, config.id, request.encode()?);
    let started = Instant::now();
    channel.send(&frame)?;
    let reply = channel.recv(Duration::from_secs_f64(config.idle_timeout_secs))?.expect(MessageType::PredictResponse)?;
    let response_time_secs = started.elapsed().as_secs_f64();
    let probabilities = decode_predictions(&reply.payload)?;
    if probabilities.dim() != (test.len(), config.learner.num_classes) {
        return Err(Error::Protocol(format!(
            "expected {}x{} probabilities, got {:?}",
            test.len(),
            config.learner.num_classes,
            probabilities.dim()
        )));
    }
    let loss = test
        .labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probabilities[[i, y]].max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / test.len() as f64;
    let predicted = argmax_rows(&probabilities);
    let metrics = MetricsReport::from_predictions(&test.labels, &predicted, config.learner.num_classes, loss)?;
    Ok(CloudClientOutcome {
        id: config.id,
        metrics,
        response_time_secs,
        train_samples: train.len(),
        test_samples: test.len(),
    })
}

/// Collects one PREDICT_REQUEST per client, trains a single model on the
/// union of the uploaded rows, answers every request, and evaluates the
/// central model on `eval_set`.
pub fn run_cloud_server(config: &RoundConfig, acceptor: &mut dyn Acceptor, eval_set: &Dataset) -> Result<ExperimentReport> {
    let mut clock = PhaseClock::start();
    config.validate()?;
    let timeout = config.barrier_timeout();
    let mut channels = BTreeMap::new();
    for _ in 0..config.expected_clients {
        let channel = acceptor.accept(timeout)?;
        channels.insert(channels.len(), channel);
    }
    clock.charge(Phase::Init);

    let mut requests = BTreeMap::new();
    let mut by_sender = BTreeMap::new();
    for (_, mut channel) in channels {
        let frame = channel.recv(timeout)?.expect(MessageType::PredictRequest)?;
        let id = frame.sender_id;
        if requests.insert(id, PredictRequest::decode(&frame.payload)?).is_some() {
            return Err(Error::Protocol(format!("two requests from client {id}")));
        }
        by_sender.insert(id, channel);
    }
    clock.charge(Phase::Exchange);

    let parts: Vec<Dataset> = requests
        .values()
        .map(|r| Dataset::new(r.train_features.clone(), r.train_labels.clone(), eval_set.class_names.clone()))
        .collect::<Result<_>>()?;
    let union = Dataset::concat(&parts)?;
    let (union, stats) = preprocess(&union, None)?;
    let learner = LearnerConfig { seed: derive_seed(config.seed, SeedStream::Trainer, SERVER_ID as u64), ..config.learner.clone() };
    let started = Instant::now();
    let outcome = train_local(init_model(&learner, config.seed)?, &union, &learner)?;
    log::info!("central model trained on {} rows in {:.2}s", union.len(), started.elapsed().as_secs_f64());
    clock.charge(Phase::Train);

    let mut replies = Vec::with_capacity(requests.len());
    for (id, request) in &requests {
        let query = Dataset::new(request.query_features.clone(), vec![0; request.query_features.nrows()], eval_set.class_names.clone())?;
        let (query, _) = preprocess(&query, Some(&stats))?;
        let probabilities = softmax(&forward(&outcome.params, &learner, query.features.view())?.view());
        replies.push((*id, encode_predictions(&probabilities)?));
    }
    let (eval, _) = preprocess(eval_set, Some(&stats))?;
    let metrics = evaluate(&outcome.params, &learner, &eval)?;
    let grad_norm = backward(&outcome.params, &learner, eval.features.view(), &eval.labels)?.grads.squared_norm().sqrt();
    clock.charge(Phase::Aggregate);
    for (id, payload) in replies {
        by_sender.get_mut(&id).expect("request sender").send(&Frame::new(MessageType::PredictResponse, 1, SERVER_ID, payload))?;
    }
    clock.charge(Phase::Exchange);

    let mut report = ExperimentReport::new("cloud-only", Some(TopologyKind::Star), requests.len() + 1, config);
    let timing = clock.snapshot();
    report.rounds.push(RoundRecord {
        round: 1,
        loss: outcome.final_loss().unwrap_or(f64::NAN),
        metrics: metrics.clone(),
        grad_norm,
        participants: requests.keys().copied().collect(),
        timing,
        nodes: Vec::new(),
    });
    report.final_metrics = Some(metrics);
    report.loss_trajectory = outcome.epoch_losses;
    report.timing = timing;
    Ok(report)
}

/// Runs the cloud-only scenario in process with the same shards, local
/// splits and query rows as [`super::simulate`] would give a star of
/// `config.nodes` clients.
pub fn simulate_cloud_only(config: &SimulationConfig, dataset: &Dataset) -> Result<ExperimentReport> {
    let round = RoundConfig { expected_clients: config.nodes, ..config.round.clone() };
    round.validate()?;
    let (eval, shards) = config.partition(dataset)?;
    let (mut acceptor, connector) = loopback_listener();
    let (served, clients) = std::thread::scope(|s| {
        let handles: Vec<_> = shards
            .iter()
            .enumerate()
            .map(|(i, shard)| {
                let client = ClientConfig::derived(i as NodeId + 1, &round, config.local_test_fraction);
                let connector = connector.clone();
                s.spawn(move || run_cloud_client(connector.connect()?, shard, &client))
            })
            .collect();
        drop(connector);
        let served = run_cloud_server(&round, &mut acceptor, &eval);
        drop(acceptor);
        let clients: Vec<Result<CloudClientOutcome>> =
            handles.into_iter().map(|h| h.join().expect("client thread panicked")).collect();
        (served, clients)
    });
    let mut report = served?;
    let clients: Vec<CloudClientOutcome> = clients.into_iter().collect::<Result<_>>()?;
    report.node_reports = clients
        .iter()
        .map(|c| NodeSummary {
            id: c.id,
            neighbors: vec![SERVER_ID],
            train_samples: c.train_samples,
            test_samples: c.test_samples,
            metrics: c.metrics.clone(),
            timing: Default::default(),
            response_time_secs: c.response_time_secs,
        })
        .collect();
    let samples: Vec<f64> = clients.iter().map(|c| c.response_time_secs).collect();
    report.response_time = ResponseTimeStats::from_samples(&samples);
    Ok(report)
}

/// The server trains alone on its own global shard (80/20 local split),
/// with the same learner and epochs a client uses in one round.
pub fn run_local_only(config: &SimulationConfig, dataset: &Dataset) -> Result<ExperimentReport> {
    let round = &config.round;
    round.validate()?;
    let mut clock = PhaseClock::start();
    let (eval, _) = config.partition(dataset)?;
    let local = LocalData::prepare(&eval, config.local_test_fraction, derive_seed(round.seed, SeedStream::LocalSplit, 0))?;
    let learner = LearnerConfig { seed: derive_seed(round.seed, SeedStream::Trainer, SERVER_ID as u64), ..round.learner.clone() };
    let init = init_model(&learner, round.seed)?;
    clock.charge(Phase::Init);
    let outcome = train_local(init, &local.train, &learner)?;
    clock.charge(Phase::Train);
    let metrics = evaluate(&outcome.params, &learner, &local.test)?;
    let grad_norm = backward(&outcome.params, &learner, local.test.features.view(), &local.test.labels)?.grads.squared_norm().sqrt();
    clock.charge(Phase::Aggregate);

    let mut report = ExperimentReport::new("local-only", Some(TopologyKind::Star), 1, round);
    let timing = clock.snapshot();
    report.rounds.push(RoundRecord {
        round: 1,
        loss: outcome.final_loss().unwrap_or(f64::NAN),
        metrics: metrics.clone(),
        grad_norm,
        participants: vec![SERVER_ID],
        timing,
        nodes: Vec::new(),
    });
    report.final_metrics = Some(metrics);
    report.loss_trajectory = outcome.epoch_losses;
    report.timing = timing;
    Ok(report)
}

/// Cloud-only and federated results of one scenario, side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub cloud: ExperimentReport,
    pub federated: ExperimentReport,
    pub cloud_response: ResponseTimeStats,
    pub federated_response: ResponseTimeStats,
    /// Mean federated response time over mean cloud response time.
    pub response_time_ratio: f64,
    pub cloud_accuracy: f64,
    pub federated_accuracy: f64,
}

impl BaselineComparison {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn compare_response_times(cloud: ExperimentReport, federated: ExperimentReport) -> Result<BaselineComparison> {
    let missing = |which: &str| Error::Data(format!("{which} report has no response times"));
    let cloud_response = cloud.response_time.ok_or_else(|| missing("cloud"))?;
    let federated_response = federated.response_time.ok_or_else(|| missing("federated"))?;
    if cloud_response.mean <= 0.0 {
        return Err(Error::Data("cloud response time is not positive".into()));
    }
    let accuracy = |r: &ExperimentReport| r.final_metrics.as_ref().map_or(0.0, |m| m.accuracy);
    Ok(BaselineComparison {
        response_time_ratio: federated_response.mean / cloud_response.mean,
        cloud_accuracy: accuracy(&cloud),
        federated_accuracy: accuracy(&federated),
        cloud,
        federated,
        cloud_response,
        federated_response,
    })
}
