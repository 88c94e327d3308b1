//! FedAvg over real TCP sockets: a server bound to an ephemeral port and
//! three clients connecting to it, each on its own thread.
//!
//! ```text
//! cargo run --example tcp_cfl
//! ```

use std::time::Duration;

use fedcrop::data::synthetic_crop_dataset;
use fedcrop::learner::LearnerConfig;
use fedcrop::orchestration::{run_cfl_client, run_cfl_server, ClientConfig, RoundConfig, SimulationConfig};
use fedcrop::transport::{connect_tcp, TcpAcceptor};

fn main() -> fedcrop::Result<()> {
    let learner = LearnerConfig { epochs: 20, ..LearnerConfig::default() };
    let round = RoundConfig { rounds: 3, expected_clients: 3, learner, ..RoundConfig::default() };
    let sim = SimulationConfig { nodes: 3, round: round.clone(), ..SimulationConfig::default() };
    let (eval, shards) = sim.partition(&synthetic_crop_dataset(0, 100))?;

    let mut acceptor = TcpAcceptor::bind("127.0.0.1:0")?;
    let address = acceptor.local_addr()?.to_string();
    println!("server listening on {address}");
    let clients: Vec<_> = shards
        .into_iter()
        .enumerate()
        .map(|(i, shard)| {
            let config = ClientConfig::derived(i as u32 + 1, &round, sim.local_test_fraction);
            let address = address.clone();
            std::thread::spawn(move || run_cfl_client(connect_tcp(&address, Duration::from_secs(10))?, &shard, &config))
        })
        .collect();
    let report = run_cfl_server(&round, &mut acceptor, &eval)?;
    for r in &report.rounds {
        println!("round {}: global accuracy {:.4}, clients {:?}", r.round, r.metrics.accuracy, r.participants);
    }
    for handle in clients {
        let outcome = handle.join().expect("client thread")?;
        println!("client {}: released model scores {:.4} locally", outcome.id, outcome.metrics.accuracy);
    }
    Ok(())
}
