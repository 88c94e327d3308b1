//! Cloud-only baseline versus federated learning: clients upload raw rows
//! and ask the server for predictions, or hold a trained model and predict
//! locally. Prints both response times and their ratio.
//!
//! ```text
//! cargo run --example cloud_baseline [-- path/to/crop.csv]
//! ```

use fedcrop::data::{synthetic_crop_dataset, Dataset};
use fedcrop::orchestration::{compare_response_times, simulate, simulate_cloud_only, RoundConfig, SimulationConfig};

fn main() -> fedcrop::Result<()> {
    let dataset = match std::env::args().nth(1) {
        Some(path) => Dataset::load_csv(path)?,
        None => synthetic_crop_dataset(0, 100),
    };
    let config = SimulationConfig { nodes: 5, round: RoundConfig::default(), ..SimulationConfig::default() };
    let cloud = simulate_cloud_only(&config, &dataset)?;
    let federated = simulate(&config, &dataset)?.report;
    let c = compare_response_times(cloud, federated)?;
    println!("cloud-only: accuracy {:.4}, mean response {:.4}s over {} requests", c.cloud_accuracy, c.cloud_response.mean, c.cloud_response.count);
    println!("federated:  accuracy {:.4}, mean response {:.6}s over {} clients", c.federated_accuracy, c.federated_response.mean, c.federated_response.count);
    println!("federated / cloud response time: {:.5}", c.response_time_ratio);
    Ok(())
}
