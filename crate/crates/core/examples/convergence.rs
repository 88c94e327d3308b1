//! Convergence diagnostics for FedAvg on the convex softmax-regression
//! learner: the global gradient norm per round and the loss trend.
//!
//! ```text
//! cargo run --example convergence
//! ```

use fedcrop::data::synthetic_crop_dataset;
use fedcrop::learner::LearnerConfig;
use fedcrop::orchestration::{simulate, RoundConfig, SimulationConfig};

fn main() -> fedcrop::Result<()> {
    let round = RoundConfig { learner: LearnerConfig::softmax_regression(), stop_delta: 0.0, ..RoundConfig::default() };
    let config = SimulationConfig { nodes: 5, round, ..SimulationConfig::default() };
    let report = simulate(&config, &synthetic_crop_dataset(0, 100))?.report;
    println!("round  loss      |grad|^2   accuracy");
    for r in &report.rounds {
        println!("{:>5}  {:<8.5}  {:<9.3e}  {:.4}", r.round, r.loss, r.grad_norm * r.grad_norm, r.metrics.accuracy);
    }
    if let Some(d) = &report.diagnostics {
        println!(
            "mean |grad|^2: first {} rounds {:.3e}, last {} rounds {:.3e}; loss trend {:?}",
            d.window, d.first_window_mean, d.window, d.last_window_mean, d.trend
        );
    }
    Ok(())
}
