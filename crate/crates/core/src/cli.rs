//! The `fedcrop` command line.
//!
//! Every run-level setting can come from a JSON config file (`--config`,
//! shaped like [`RoundConfig`]); flags given on the command line win.
//! Exit codes: 0 success, 2 usage, 3 data, 4 protocol or connection,
//! 5 round synchronization. `FEDCROP_LOG` sets the log filter.

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::aggregation::Divisor;
use crate::data::{synthetic_crop_dataset, Dataset, CROP_CLASSES};
use crate::error::{Error, Result};
use crate::learner::{LearnerKind, OptimizerKind};
use crate::orchestration::{
    compare_response_times, connect_peers_tcp, convergence_diagnostics, run_cfl_client, run_cfl_server, run_dfl_node,
    run_local_only, simulate, simulate_cloud_only, ClientConfig, ExperimentReport, NodeConfig, NodeOutcome,
    ResponseTimeStats, RoundConfig, RoundRecord, SimulationConfig,
};
use crate::topology::{TopologyFile, TopologyKind, SERVER_ID};
use crate::transport::{connect_tcp, TcpAcceptor, WireDtype};

#[derive(Debug, Parser)]
#[command(name = "fedcrop", version, about = "Centralized and decentralized federated learning for crop classification")]
pub struct Cli {
    /// JSON file with run settings; command-line flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed for initialization, splits, shuffles and sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a crop CSV into client shards plus a global evaluation set.
    Split(SplitArgs),
    /// Run the FedAvg server.
    CflServer(CflServerArgs),
    /// Run one CFL client.
    CflClient(CflClientArgs),
    /// Run one decentralized node.
    DflNode(DflNodeArgs),
    /// Run a whole scenario in process.
    Simulate(SimulateArgs),
    /// Run a comparison baseline.
    Baseline(BaselineArgs),
    /// Write a seeded synthetic crop CSV.
    Synth(SynthArgs),
}

/// Learner and round settings shared by the training subcommands.
#[derive(Debug, Args, Default)]
pub struct TrainingFlags {
    /// Model family: lstm or softmax.
    #[arg(long, value_parser = parse_learner)]
    pub learner: Option<LearnerKind>,
    /// Local optimizer: adam or sgd.
    #[arg(long, value_parser = parse_optimizer)]
    pub optimizer: Option<OptimizerKind>,
    /// Learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Local epochs per round.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// LSTM hidden width.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Dense layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub dense: Option<Vec<usize>>,
    /// Accuracy change below which a CFL run stops early (0 disables).
    #[arg(long)]
    pub stop_delta: Option<f64>,
    /// Seconds to wait at each barrier.
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Divide the FedAvg sum by the configured client count instead of the
    /// number of received updates.
    #[arg(long)]
    pub fixed_divisor: bool,
    /// Count a DFL node's own parameters in its neighbor average.
    #[arg(long)]
    pub include_self: bool,
    /// Float width of parameters on the wire.
    #[arg(long, value_enum)]
    pub wire_dtype: Option<WireArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WireArg {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TopologyArg {
    Star,
    Ring,
    Mesh,
}

impl From<TopologyArg> for TopologyKind {
    fn from(t: TopologyArg) -> Self {
        match t {
            TopologyArg::Star => TopologyKind::Star,
            TopologyArg::Ring => TopologyKind::Ring,
            TopologyArg::Mesh => TopologyKind::Mesh,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineMode {
    CloudOnly,
    LocalOnly,
}

fn parse_learner(s: &str) -> std::result::Result<LearnerKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_optimizer(s: &str) -> std::result::Result<OptimizerKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Crop CSV to split.
    #[arg(long)]
    pub input: PathBuf,
    /// Number of client shards.
    #[arg(long)]
    pub shards: usize,
    /// Deal every class evenly across shards (the default).
    #[arg(long, conflicts_with = "shards_random")]
    pub stratified: bool,
    /// Shuffle rows into shards without regard to class.
    #[arg(long)]
    pub shards_random: bool,
    /// Share held out as `eval.csv`; 0 shards every row.
    #[arg(long, default_value_t = 0.2)]
    pub eval_fraction: f64,
    /// Directory for `shard_{i}.csv` and `eval.csv`.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CflServerArgs {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:7000")]
    pub bind: String,
    /// Clients to wait for before the first round.
    #[arg(long)]
    pub clients: Option<usize>,
    /// Maximum number of rounds.
    #[arg(long)]
    pub rounds: Option<u32>,
    /// Share of clients sampled each round.
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Global evaluation CSV.
    #[arg(long)]
    pub eval: PathBuf,
    #[command(flatten)]
    pub training: TrainingFlags,
}

#[derive(Debug, Args)]
pub struct CflClientArgs {
    /// Server address.
    #[arg(long)]
    pub server: String,
    /// This client's shard CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Client id (1 or above, unique per server).
    #[arg(long)]
    pub id: u32,
    /// Share of the shard held out for local testing.
    #[arg(long, default_value_t = 0.2)]
    pub local_test_fraction: f64,
    #[command(flatten)]
    pub training: TrainingFlags,
}

#[derive(Debug, Args)]
pub struct DflNodeArgs {
    /// This node's id in the topology file.
    #[arg(long)]
    pub id: u32,
    /// JSON topology file with every node's address.
    #[arg(long)]
    pub topology: PathBuf,
    /// Overrides the kind named in the topology file.
    #[arg(long, value_enum)]
    pub kind: Option<TopologyArg>,
    /// This node's shard CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Number of rounds; every node must agree.
    #[arg(long)]
    pub rounds: Option<u32>,
    /// Share of the shard held out for local testing.
    #[arg(long, default_value_t = 0.2)]
    pub local_test_fraction: f64,
    #[command(flatten)]
    pub training: TrainingFlags,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Star runs FedAvg; ring and mesh run server-free averaging.
    #[arg(long, value_enum)]
    pub topology: TopologyArg,
    /// Clients of a star, or nodes of a ring or mesh.
    #[arg(long)]
    pub nodes: usize,
    /// Crop CSV to partition across nodes.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Maximum number of rounds.
    #[arg(long)]
    pub rounds: Option<u32>,
    /// Share of star clients sampled each round.
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Shuffle rows into shards without regard to class.
    #[arg(long)]
    pub shards_random: bool,
    #[command(flatten)]
    pub training: TrainingFlags,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// cloud-only uploads raw rows to the server; local-only trains the server alone on its eval shard.
    #[arg(long, value_enum)]
    pub mode: BaselineMode,
    /// Crop CSV to partition.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Clients whose shards feed the baseline.
    #[arg(long, default_value_t = 5)]
    pub nodes: usize,
    /// Rounds for the federated side of the comparison.
    #[arg(long)]
    pub rounds: Option<u32>,
    #[command(flatten)]
    pub training: TrainingFlags,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Rows per crop.
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    /// CSV file to write.
    #[arg(long)]
    pub output: PathBuf,
}

impl Cli {
    fn base_config(&self) -> Result<RoundConfig> {
        let mut config = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => RoundConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        Ok(config)
    }
}

impl TrainingFlags {
    fn apply(&self, config: &mut RoundConfig) {
        let learner = &mut config.learner;
        if let Some(kind) = self.learner {
            learner.kind = kind;
            if kind == LearnerKind::SoftmaxRegression && self.dense.is_none() {
                learner.dense_sizes.clear();
            }
        }
        if let Some(v) = self.optimizer {
            learner.optimizer = v;
        }
        if let Some(v) = self.lr {
            learner.learning_rate = v;
        }
        if let Some(v) = self.epochs {
            learner.epochs = v;
        }
        if let Some(v) = self.batch_size {
            learner.batch_size = v;
        }
        if let Some(v) = self.hidden {
            learner.hidden_size = v;
        }
        if let Some(v) = &self.dense {
            learner.dense_sizes = v.clone();
        }
        if let Some(v) = self.stop_delta {
            config.stop_delta = v;
        }
        if let Some(v) = self.timeout {
            config.barrier_timeout_secs = v;
        }
        if self.fixed_divisor {
            config.divisor = Divisor::FixedCount(config.expected_clients);
        }
        if self.include_self {
            config.include_self = true;
        }
        if let Some(w) = self.wire_dtype {
            config.wire_dtype = match w {
                WireArg::F32 => WireDtype::F32,
                WireArg::F64 => WireDtype::F64,
            };
        }
    }
}

/// Parses `std::env::args`, runs the subcommand and returns the exit code.
pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("FEDCROP_LOG", "info")).try_init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command line. `Ok` carries the exit code of a run that
/// finished with a report but ended early on an error.
pub fn run(cli: &Cli) -> Result<i32> {
    let config = cli.base_config()?;
    match &cli.command {
        Command::Split(args) => split(args, &config),
        Command::CflServer(args) => cfl_server(args, config, &cli.out),
        Command::CflClient(args) => cfl_client(args, config, &cli.out),
        Command::DflNode(args) => dfl_node(args, config, &cli.out),
        Command::Simulate(args) => run_simulation(args, config, &cli.out),
        Command::Baseline(args) => baseline(args, config, &cli.out),
        Command::Synth(args) => {
            synthetic_crop_dataset(config.seed, args.per_class).write_csv(&args.output)?;
            Ok(0)
        }
    }
}

fn split(args: &SplitArgs, config: &RoundConfig) -> Result<i32> {
    let dataset = Dataset::load_csv(&args.input)?;
    let sim = SimulationConfig {
        nodes: args.shards,
        stratified: !args.shards_random,
        eval_fraction: args.eval_fraction,
        round: config.clone(),
        ..SimulationConfig::default()
    };
    let (eval, shards) = if args.eval_fraction == 0.0 {
        (None, sim.shard_pool(&dataset)?)
    } else {
        let (eval, shards) = sim.partition(&dataset)?;
        (Some(eval), shards)
    };
    std::fs::create_dir_all(&args.out_dir)?;
    for (i, shard) in shards.iter().enumerate() {
        let path = args.out_dir.join(format!("shard_{}.csv", i + 1));
        shard.write_csv(&path)?;
        log::info!("{}: {} rows", path.display(), shard.len());
    }
    if let Some(eval) = eval {
        let path = args.out_dir.join("eval.csv");
        eval.write_csv(&path)?;
        log::info!("{}: {} rows", path.display(), eval.len());
    }
    Ok(0)
}

/// Loads a shard or evaluation file against the fixed crop list, so label
/// indices agree across participants even when a file lacks some crops.
fn load_part(path: &Path) -> Result<Dataset> {
    let classes: Vec<String> = CROP_CLASSES.iter().map(|c| c.to_string()).collect();
    Dataset::load_csv_with_classes(path, &classes)
}

fn write_report(report: &ExperimentReport, out: &Path) -> Result<i32> {
    report.write_to(out)?;
    log::info!("wrote {}", out.join("report.json").display());
    Ok(report.aborted.as_ref().map_or(0, |a| a.exit_code))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn cfl_server(args: &CflServerArgs, mut config: RoundConfig, out: &Path) -> Result<i32> {
    if let Some(v) = args.clients {
        config.expected_clients = v;
    }
    if let Some(v) = args.rounds {
        config.rounds = v;
    }
    if let Some(v) = args.fraction {
        config.client_fraction = v;
    }
    args.training.apply(&mut config);
    config.validate()?;
    let eval = load_part(&args.eval)?;
    let mut acceptor = TcpAcceptor::bind(&args.bind)?;
    log::info!("listening on {} for {} clients", acceptor.local_addr()?, config.expected_clients);
    let report = run_cfl_server(&config, &mut acceptor, &eval)?;
    write_report(&report, out)
}

fn cfl_client(args: &CflClientArgs, mut config: RoundConfig, out: &Path) -> Result<i32> {
    args.training.apply(&mut config);
    config.learner.validate()?;
    if args.id == SERVER_ID {
        return Err(Error::Config("client ids start at 1".into()));
    }
    let shard = load_part(&args.data)?;
    let client = ClientConfig::derived(args.id, &config, args.local_test_fraction);
    let channel = connect_tcp(&args.server, config.barrier_timeout())?;
    let outcome = run_cfl_client(channel, &shard, &client)?;
    let summary = serde_json::json!({
        "id": outcome.id,
        "config": client,
        "metrics": outcome.metrics,
        "timing": outcome.timing,
        "rounds": outcome.rounds,
        "response_time_secs": outcome.response_time_secs,
        "train_samples": outcome.train_samples,
        "test_samples": outcome.test_samples,
    });
    write_json(&summary, &out.join("report.json"))?;
    write_json(&outcome.params, &out.join("model.json"))?;
    log::info!("local accuracy {:.4}; model saved to {}", outcome.metrics.accuracy, out.join("model.json").display());
    Ok(0)
}

/// A node-local report: per-round local metrics and timing.
pub fn node_report(outcome: &NodeOutcome, config: &RoundConfig, kind: TopologyKind, nodes: usize) -> ExperimentReport {
    let mut report = ExperimentReport::new("dfl-node", Some(kind), nodes, config);
    report.rounds = outcome
        .rounds
        .iter()
        .map(|r| RoundRecord {
            round: r.round,
            loss: r.train_loss,
            metrics: r.metrics.clone(),
            grad_norm: r.grad_norm,
            participants: vec![outcome.id],
            timing: r.timing,
            nodes: Vec::new(),
        })
        .collect();
    report.final_metrics = Some(outcome.metrics.clone());
    report.timing = outcome.timing;
    report.node_reports = vec![outcome.summary()];
    report.response_time = ResponseTimeStats::from_samples(&[outcome.response_time_secs]);
    let grad_norms: Vec<f64> = report.rounds.iter().map(|r| r.grad_norm).collect();
    report.diagnostics = Some(convergence_diagnostics(&report.loss_series(), &grad_norms));
    report
}

fn dfl_node(args: &DflNodeArgs, mut config: RoundConfig, out: &Path) -> Result<i32> {
    if let Some(v) = args.rounds {
        config.rounds = v;
    }
    args.training.apply(&mut config);
    config.validate()?;
    let mut file = TopologyFile::load(&args.topology)?;
    if let Some(kind) = args.kind {
        file.kind = kind.into();
    }
    let topology = file.topology()?;
    let shard = load_part(&args.data)?;
    let node = NodeConfig::derived(args.id, &config, args.local_test_fraction);
    let peers = connect_peers_tcp(&file, args.id, config.barrier_timeout().max(Duration::from_secs(1)))?;
    let outcome = run_dfl_node(&node, &topology, peers, &shard)?;
    let report = node_report(&outcome, &config, file.kind, topology.node_count());
    write_json(&outcome.params, &out.join("model.json"))?;
    write_report(&report, out)
}

fn simulation_config(
    topology: TopologyKind,
    nodes: usize,
    rounds: Option<u32>,
    training: &TrainingFlags,
    mut config: RoundConfig,
) -> SimulationConfig {
    if let Some(v) = rounds {
        config.rounds = v;
    }
    if topology == TopologyKind::Star {
        config.expected_clients = nodes;
    }
    training.apply(&mut config);
    SimulationConfig { topology, nodes, round: config, ..SimulationConfig::default() }
}

fn run_simulation(args: &SimulateArgs, mut config: RoundConfig, out: &Path) -> Result<i32> {
    if let Some(v) = args.fraction {
        config.client_fraction = v;
    }
    let mut sim = simulation_config(args.topology.into(), args.nodes, args.rounds, &args.training, config);
    sim.stratified = !args.shards_random;
    let dataset = Dataset::load_csv(&args.dataset)?;
    sim.round.learner.num_classes = dataset.num_classes();
    let outcome = simulate(&sim, &dataset)?;
    if let Some(m) = &outcome.report.final_metrics {
        log::info!("global accuracy {:.4} after {} rounds", m.accuracy, outcome.report.executed_rounds());
    }
    write_report(&outcome.report, out)
}

fn baseline(args: &BaselineArgs, config: RoundConfig, out: &Path) -> Result<i32> {
    let mut sim = simulation_config(TopologyKind::Star, args.nodes, args.rounds, &args.training, config);
    let dataset = Dataset::load_csv(&args.dataset)?;
    sim.round.learner.num_classes = dataset.num_classes();
    match args.mode {
        BaselineMode::LocalOnly => {
            let report = run_local_only(&sim, &dataset)?;
            if let Some(m) = &report.final_metrics {
                log::info!("server-only accuracy {:.4}", m.accuracy);
            }
            write_report(&report, out)
        }
        BaselineMode::CloudOnly => {
            let cloud = simulate_cloud_only(&sim, &dataset)?;
            cloud.write_to(out.join("cloud"))?;
            let federated = simulate(&sim, &dataset)?.report;
            federated.write_to(out.join("cfl"))?;
            let comparison = compare_response_times(cloud, federated)?;
            write_json(&comparison, &out.join("comparison.json"))?;
            log::info!(
                "mean response time: cloud {:.4}s, federated {:.6}s (ratio {:.6})",
                comparison.cloud_response.mean,
                comparison.federated_response.mean,
                comparison.response_time_ratio
            );
            Ok(0)
        }
    }
}
