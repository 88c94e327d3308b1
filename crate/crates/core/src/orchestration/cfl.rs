//! Centralized FL: a FedAvg server and its clients over frame channels.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::diagnostics::convergence_diagnostics;
use super::report::{Abort, ExperimentReport, NodeRoundEntry, RoundRecord};
use super::timing::{Phase, PhaseClock, TimingBreakdown};
use super::{derive_seed, LocalData, RoundConfig, SeedStream};
use crate::aggregation::{fedavg_with, ModelUpdate, NodeId};
use crate::data::{preprocess, Dataset};
use crate::error::{Error, Result};
use crate::learner::{backward, evaluate, init_model, predict, LearnerConfig, LocalTrainer, MetricsReport};
use crate::tensor::ParameterSet;
use crate::topology::{TopologyKind, SERVER_ID};
use crate::transport::{
    decode_json, decode_params, encode_json, encode_params, Acceptor, Channel, Frame, Hello, MessageType,
    TrainingReport, WireDtype,
};

/// Settings of one CFL client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub id: NodeId,
    /// Local training settings; `learner.seed` drives the batch shuffle.
    pub learner: LearnerConfig,
    /// Seed of the initial model kept when released before any round.
    pub init_seed: u64,
    pub local_test_fraction: f64,
    pub split_seed: u64,
    /// Longest wait for the next server message.
    pub idle_timeout_secs: f64,
    pub wire_dtype: WireDtype,
}

impl ClientConfig {
    /// Client `id` of a run driven by `round`, with seeds derived from the
    /// base seed.
    pub fn derived(id: NodeId, round: &RoundConfig, local_test_fraction: f64) -> ClientConfig {
        ClientConfig {
            id,
            learner: LearnerConfig { seed: derive_seed(round.seed, SeedStream::Trainer, id as u64), ..round.learner.clone() },
            init_seed: round.seed,
            local_test_fraction,
            split_seed: derive_seed(round.seed, SeedStream::LocalSplit, id as u64),
            idle_timeout_secs: round.barrier_timeout_secs.max(3600.0),
            wire_dtype: round.wire_dtype,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRound {
    pub round: u32,
    pub train_loss: f64,
    pub train_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ClientOutcome {
    pub id: NodeId,
    /// Parameters saved at release.
    pub params: ParameterSet,
    /// Saved parameters on the local test split.
    pub metrics: MetricsReport,
    pub timing: TimingBreakdown,
    pub rounds: Vec<ClientRound>,
    /// Time to predict the local test split with the saved model.
    pub response_time_secs: f64,
    pub train_samples: usize,
    pub test_samples: usize,
}

fn secs(d: f64) -> Duration {
    Duration::from_secs_f64(d)
}

/// Client loop: train on every MODEL_PARAMS, answer with MODEL_UPDATE and
/// METRICS_REPORT, and stop at RELEASE. A release carrying parameters
/// replaces the local model; an empty release keeps it.
pub fn run_cfl_client(mut channel: Channel, shard: &Dataset, config: &ClientConfig) -> Result<ClientOutcome> {
    let mut clock = PhaseClock::start();
    let local = LocalData::prepare(shard, config.local_test_fraction, config.split_seed)?;
    let mut params = init_model(&config.learner, config.init_seed)?;
    let schema_id = params.schema_id();
    let idle = secs(config.idle_timeout_secs);

    channel.send(&Frame::new(
        MessageType::Hello,
        0,
        config.id,
        encode_json(&Hello { rounds: None, schema_id: schema_id.clone() })?,
    ))?;
    let reply: Hello = decode_json(&channel.recv(idle)?.expect(MessageType::Hello)?.payload)?;
    if reply.schema_id != schema_id {
        return Err(Error::Protocol(format!("server model schema {} differs from local {schema_id}", reply.schema_id)));
    }
    let mut trainer = LocalTrainer::new(config.learner.clone())?;
    clock.charge(Phase::Init);

    let mut rounds = Vec::new();
    let mut last_round = 0;
    loop {
        let frame = channel.recv(idle)?;
        match frame.msg_type {
            MessageType::ModelParams => {
                if frame.round <= last_round {
                    return Err(Error::RoundSync(format!("round {} after round {last_round}", frame.round)));
                }
                let global = decode_params(&frame.payload)?;
                global.ensure_same_schema(&params)?;
                clock.charge(Phase::Exchange);
                let started = Instant::now();
                let outcome = trainer.train(global, &local.train)?;
                let train_seconds = started.elapsed().as_secs_f64();
                clock.charge(Phase::Train);
                params = outcome.params;
                let train_loss = outcome.epoch_losses.last().copied().unwrap_or(f64::NAN);
                channel.send_params(MessageType::ModelUpdate, frame.round, config.id, &params, config.wire_dtype)?;
                let report = TrainingReport {
                    round: frame.round,
                    samples: local.train.len() as u64,
                    train_loss,
                    train_seconds,
                };
                channel.send(&Frame::new(MessageType::MetricsReport, frame.round, config.id, encode_json(&report)?))?;
                clock.charge(Phase::Exchange);
                rounds.push(ClientRound { round: frame.round, train_loss, train_seconds });
                last_round = frame.round;
            }
            MessageType::Release => {
                if !frame.payload.is_empty() {
                    let released = decode_params(&frame.payload)?;
                    released.ensure_same_schema(&params)?;
                    params = released;
                }
                clock.charge(Phase::Exchange);
                break;
            }
            other => return Err(Error::Protocol(format!("client {} got unexpected {other:?}", config.id))),
        }
    }

    let started = Instant::now();
    predict(&params, &config.learner, &local.test)?;
    let response_time_secs = started.elapsed().as_secs_f64();
    let metrics = evaluate(&params, &config.learner, &local.test)?;
    clock.charge(Phase::Aggregate);
    Ok(ClientOutcome {
        id: config.id,
        params,
        metrics,
        timing: clock.snapshot(),
        rounds,
        response_time_secs,
        train_samples: local.train.len(),
        test_samples: local.test.len(),
    })
}

fn accept_clients(
    acceptor: &mut dyn Acceptor,
    config: &RoundConfig,
    schema_id: &str,
) -> Result<BTreeMap<NodeId, Channel>> {
    let timeout = config.barrier_timeout();
    let deadline = Instant::now() + timeout;
    let mut clients = BTreeMap::new();
    while clients.len() < config.expected_clients {
        let remaining = deadline.saturating_duration_since(Instant::now());
        let mut channel = acceptor.accept(remaining).map_err(|e| match e {
            Error::Timeout(..) => Error::Timeout(
                timeout.as_secs_f64(),
                format!("{} of {} clients", config.expected_clients - clients.len(), config.expected_clients),
            ),
            e => e,
        })?;
        let frame = match channel.recv(remaining.max(Duration::from_millis(1))) {
            Ok(f) if f.msg_type == MessageType::Hello => f,
            Ok(f) => {
                log::warn!("dropping connection that opened with {:?}", f.msg_type);
                continue;
            }
            Err(e) => {
                log::warn!("dropping connection without hello: {e}");
                continue;
            }
        };
        let hello: Hello = match decode_json(&frame.payload) {
            Ok(h) => h,
            Err(e) => {
                log::warn!("dropping connection with malformed hello: {e}");
                continue;
            }
        };
        let reply = Hello { rounds: Some(config.rounds), schema_id: schema_id.to_string() };
        if let Err(e) = channel.send(&Frame::new(MessageType::Hello, 0, SERVER_ID, encode_json(&reply)?)) {
            log::warn!("dropping client {}: {e}", frame.sender_id);
            continue;
        }
        let id = frame.sender_id;
        let rejection = if id == SERVER_ID {
            Some("client id 0 is reserved for the server".to_string())
        } else if clients.contains_key(&id) {
            Some(format!("client id {id} already connected"))
        } else if hello.schema_id != schema_id {
            Some(format!("client {id} schema {} differs from {schema_id}", hello.schema_id))
        } else {
            hello.rounds.filter(|&r| r != config.rounds).map(|r| format!("client {id} expects {r} rounds"))
        };
        match rejection {
            Some(reason) => log::warn!("rejecting connection: {reason}"),
            None => {
                log::info!("client {id} connected ({}/{})", clients.len() + 1, config.expected_clients);
                channel.set_peer(format!("client {id}"));
                clients.insert(id, channel);
            }
        }
    }
    Ok(clients)
}

/// Reads MODEL_UPDATE then METRICS_REPORT of `round` from one client.
/// Frames of earlier rounds are dropped.
fn receive_update(
    channel: &mut Channel,
    id: NodeId,
    round: u32,
    deadline: Instant,
) -> Result<(ModelUpdate, TrainingReport)> {
    let mut update = None;
    loop {
        let remaining = deadline.saturating_duration_since(Instant::now());
        if remaining.is_zero() {
            return Err(Error::RoundSync(format!("client {id} missed the round {round} barrier")));
        }
        let frame = channel.recv(remaining)?;
        if frame.sender_id != id {
            return Err(Error::Protocol(format!("client {id} sent a frame stamped {}", frame.sender_id)));
        }
        if frame.round < round {
            log::warn!("dropping stale round-{} {:?} from client {id}", frame.round, frame.msg_type);
            continue;
        }
        if frame.round > round {
            return Err(Error::RoundSync(format!("client {id} sent round {} during round {round}", frame.round)));
        }
        match (frame.msg_type, update.take()) {
            (MessageType::ModelUpdate, None) => update = Some(decode_params(&frame.payload)?),
            (MessageType::MetricsReport, Some(params)) => {
                let report: TrainingReport = decode_json(&frame.payload)?;
                return Ok((ModelUpdate::new(id, round, params), report));
            }
            (other, _) => {
                return Err(Error::Protocol(format!("client {id} sent {other:?} out of order in round {round}")))
            }
        }
    }
}

/// Barrier: one receiver thread per sampled client.
fn collect_round(
    clients: &mut BTreeMap<NodeId, Channel>,
    sampled: &[NodeId],
    round: u32,
    timeout: Duration,
) -> Result<Vec<(ModelUpdate, TrainingReport)>> {
    let deadline = Instant::now() + timeout;
    std::thread::scope(|s| {
        let handles: Vec<_> = clients
            .iter_mut()
            .filter(|(id, _)| sampled.contains(id))
            .map(|(&id, channel)| s.spawn(move || receive_update(channel, id, round, deadline)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("receiver thread panicked")).collect()
    })
}

fn release(clients: &mut BTreeMap<NodeId, Channel>, round: u32, payload: &[u8]) {
    for (id, channel) in clients.iter_mut() {
        if let Err(e) = channel.send(&Frame::new(MessageType::Release, round, SERVER_ID, payload.to_vec())) {
            log::warn!("could not release client {id}: {e}");
        }
    }
}

/// Server loop: wait for `expected_clients` hellos, then per round sample
/// clients, broadcast the global model, wait for every sampled update,
/// average, and evaluate on `eval_set`. Errors during a round end the run:
/// the report records the abort and every client is released.
pub fn run_cfl_server(config: &RoundConfig, acceptor: &mut dyn Acceptor, eval_set: &Dataset) -> Result<ExperimentReport> {
    serve(config, acceptor, eval_set).map(|(report, _)| report)
}

/// Like [`run_cfl_server`], also handing back the error behind an abort.
pub(crate) fn serve(
    config: &RoundConfig,
    acceptor: &mut dyn Acceptor,
    eval_set: &Dataset,
) -> Result<(ExperimentReport, Option<Error>)> {
    let mut clock = PhaseClock::start();
    config.validate()?;
    let (eval, _) = preprocess(eval_set, None)?;
    let learner = &config.learner;
    let mut global = init_model(learner, config.seed)?;
    let schema_id = global.schema_id();
    let mut clients = accept_clients(acceptor, config, &schema_id)?;
    let ids: Vec<NodeId> = clients.keys().copied().collect();
    let mut sampler = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SeedStream::Sampling, 0));
    clock.charge(Phase::Init);

    let mut report = ExperimentReport::new("cfl", Some(TopologyKind::Star), ids.len() + 1, config);
    let mut before = TimingBreakdown::default();
    let mut failure = None;
    for round in 1..=config.rounds {
        let mut sampled: Vec<NodeId> = ids.choose_multiple(&mut sampler, config.sample_size()).copied().collect();
        sampled.sort_unstable();
        let step = (|| -> Result<RoundRecord> {
            let payload = encode_params(&global, config.wire_dtype)?;
            for id in &sampled {
                let frame = Frame::new(MessageType::ModelParams, round, SERVER_ID, payload.clone());
                clients.get_mut(id).expect("sampled from connected ids").send(&frame)?;
            }
            clock.charge(Phase::Exchange);
            let results = collect_round(&mut clients, &sampled, round, config.barrier_timeout())?;
            let slowest = results.iter().map(|(_, r)| r.train_seconds).fold(0.0, f64::max);
            clock.charge_split(Phase::Train, slowest, Phase::Exchange);

            if let Some((u, _)) = results.iter().find(|(u, _)| !u.params.same_schema(&global)) {
                return Err(Error::Aggregation(format!("client {} sent a foreign schema", u.sender_id)));
            }
            let updates: Vec<ModelUpdate> = results.iter().map(|(u, _)| u.clone()).collect();
            global = fedavg_with(&updates, config.divisor)?;
            let metrics = evaluate(&global, learner, &eval)?;
            let grad_norm = backward(&global, learner, eval.features.view(), &eval.labels)?.grads.squared_norm().sqrt();
            let samples: u64 = results.iter().map(|(_, r)| r.samples).sum();
            let loss = results.iter().map(|(_, r)| r.train_loss * r.samples as f64).sum::<f64>() / samples.max(1) as f64;
            clock.charge(Phase::Aggregate);
            let nodes = results
                .iter()
                .map(|(u, r)| NodeRoundEntry { id: u.sender_id, train_loss: r.train_loss, samples: r.samples, metrics: None })
                .collect();
            Ok(RoundRecord { round, loss, metrics, grad_norm, participants: sampled.clone(), timing: before, nodes })
        })();
        match step {
            Ok(mut record) => {
                let now = clock.snapshot();
                record.timing = now.difference(&before);
                before = now;
                log::info!(
                    "round {round}: loss {:.5}, accuracy {:.4}, {} clients",
                    record.loss,
                    record.metrics.accuracy,
                    sampled.len()
                );
                report.rounds.push(record);
            }
            Err(e) => {
                log::error!("round {round} aborted: {e}");
                report.aborted = Some(Abort::new(round, &e));
                release(&mut clients, round, &[]);
                clock.charge(Phase::Exchange);
                failure = Some(e);
                break;
            }
        }
        if should_stop(&report.rounds, config.stop_delta) {
            log::info!("accuracy settled; stopping after round {round}");
            report.stopped_early_at = Some(round);
            break;
        }
    }

    if report.aborted.is_none() {
        let last = report.rounds.last().map_or(0, |r| r.round);
        release(&mut clients, last, &encode_params(&global, config.wire_dtype)?);
        clock.charge(Phase::Exchange);
    }
    report.final_metrics = report.rounds.last().map(|r| r.metrics.clone());
    let grad_norms: Vec<f64> = report.rounds.iter().map(|r| r.grad_norm).collect();
    report.diagnostics = Some(convergence_diagnostics(&report.loss_series(), &grad_norms));
    report.timing = clock.snapshot();
    Ok((report, failure))
}

/// From round 3 on, stop when accuracy moved by less than `stop_delta`.
pub(crate) fn should_stop(rounds: &[RoundRecord], stop_delta: f64) -> bool {
    match rounds {
        [.., prev, last] if stop_delta > 0.0 && last.round >= 3 => {
            (last.metrics.accuracy - prev.metrics.accuracy).abs() < stop_delta
        }
        _ => false,
    }
}
