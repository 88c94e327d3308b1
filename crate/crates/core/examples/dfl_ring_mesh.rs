//! Decentralized FL without a server: the same shards trained on a ring and
//! on a mesh, each node averaging its neighbors' models every round.
//!
//! ```text
//! cargo run --example dfl_ring_mesh [-- nodes [path/to/crop.csv]]
//! ```

use fedcrop::data::{synthetic_crop_dataset, Dataset};
use fedcrop::orchestration::{simulate, RoundConfig, SimulationConfig};
use fedcrop::topology::{Topology, TopologyKind};

fn main() -> fedcrop::Result<()> {
    let nodes: usize = std::env::args().nth(1).map_or(4, |n| n.parse().expect("node count"));
    let dataset = match std::env::args().nth(2) {
        Some(path) => Dataset::load_csv(path)?,
        None => synthetic_crop_dataset(0, 100),
    };
    for kind in [TopologyKind::Ring, TopologyKind::Mesh] {
        let config = SimulationConfig { topology: kind, nodes, round: RoundConfig::default(), ..SimulationConfig::default() };
        let outcome = simulate(&config, &dataset)?;
        let topology = Topology::new(kind, nodes)?;
        println!("{kind} of {nodes} nodes, {} model transfers per round", topology.exchanges_per_round());
        for r in &outcome.report.rounds {
            println!("  round {:>2}: consensus accuracy {:.4}, mean train loss {:.5}", r.round, r.metrics.accuracy, r.loss);
        }
        for node in &outcome.nodes {
            println!("  node {} (neighbors {:?}): local accuracy {:.4}", node.id, node.neighbors, node.metrics.accuracy);
        }
    }
    Ok(())
}
