//! Centralized FL on a star: one FedAvg server and five clients, all in
//! process over loopback channels.
//!
//! ```text
//! cargo run --example cfl_star [-- path/to/crop.csv]
//! ```

use fedcrop::data::{synthetic_crop_dataset, Dataset};
use fedcrop::orchestration::{simulate, RoundConfig, SimulationConfig};
use fedcrop::topology::TopologyKind;

fn main() -> fedcrop::Result<()> {
    let dataset = match std::env::args().nth(1) {
        Some(path) => Dataset::load_csv(path)?,
        None => synthetic_crop_dataset(0, 100),
    };
    let config = SimulationConfig {
        topology: TopologyKind::Star,
        nodes: 5,
        round: RoundConfig { rounds: 10, seed: 1, ..RoundConfig::default() },
        ..SimulationConfig::default()
    };
    let outcome = simulate(&config, &dataset)?;
    let report = &outcome.report;
    println!("round  loss      accuracy  f1      seconds");
    for r in &report.rounds {
        println!(
            "{:>5}  {:<8.5}  {:<8.4}  {:<6.4}  {:.2}",
            r.round, r.loss, r.metrics.accuracy, r.metrics.f1, r.timing.t_total
        );
    }
    if let Some(stop) = report.stopped_early_at {
        println!("accuracy settled; stopped after round {stop}");
    }
    for c in &outcome.clients {
        println!("client {}: local accuracy {:.4} on {} rows", c.id, c.metrics.accuracy, c.test_samples);
    }
    let t = report.timing;
    println!(
        "server time: init {:.2}s, train {:.2}s, exchange {:.2}s, aggregate {:.2}s, total {:.2}s",
        t.t_init, t.t_train, t.t_exchange, t.t_aggregate, t.t_total
    );
    Ok(())
}
