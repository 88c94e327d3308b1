//! Compares back-propagated gradients with central finite differences for
//! the LSTM classifier and for softmax regression.
//!
//! ```text
//! cargo run --example gradient_check
//! ```

use fedcrop::learner::{backward, forward, init_model, loss, LearnerConfig, LearnerKind};
use fedcrop::ParameterSet;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> fedcrop::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for kind in [LearnerKind::LstmClassifier, LearnerKind::SoftmaxRegression] {
        let config = LearnerConfig { kind, input_dim: 7, num_classes: 4, hidden_size: 5, dense_sizes: vec![6, 3], ..LearnerConfig::default() };
        let params = init_model(&config, 2)?;
        let x = Array2::from_shape_fn((6, 7), |_| rng.gen_range(-1.0..1.0));
        let y: Vec<usize> = (0..6).map(|_| rng.gen_range(0..4)).collect();
        let analytic = backward(&params, &config, x.view(), &y)?.grads;
        let objective = |p: &ParameterSet| -> fedcrop::Result<f64> { loss(&forward(p, &config, x.view())?.view(), &y) };
        let h = 1e-5;
        println!("{kind:?}");
        for (ti, grad) in analytic.tensors().iter().enumerate() {
            let (mut diff, mut norm) = (0.0f64, 0.0f64);
            for k in 0..grad.len() {
                let mut plus = params.clone();
                plus.tensors_mut()[ti].values_mut()[k] += h;
                let mut minus = params.clone();
                minus.tensors_mut()[ti].values_mut()[k] -= h;
                let numeric = (objective(&plus)? - objective(&minus)?) / (2.0 * h);
                diff += (grad.values()[k] - numeric).powi(2);
                norm += grad.values()[k].powi(2) + numeric.powi(2);
            }
            println!("  {:<14} {:>4} values, relative error {:.2e}", grad.name(), grad.len(), diff.sqrt() / norm.sqrt().max(1e-12));
        }
    }
    Ok(())
}
