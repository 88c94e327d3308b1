//! Empirical check that the squared global gradient norm shrinks over a run.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trend {
    Decreasing,
    Flat,
    NonDecreasing,
    InsufficientData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceDiagnostics {
    /// `(1/r) * sum_{i<=r} |grad_i|^2` after each round `r`.
    pub running_mean_sq_grad: Vec<f64>,
    /// Mean squared norm over the first `window` rounds.
    pub first_window_mean: f64,
    /// Mean squared norm over the last `window` rounds.
    pub last_window_mean: f64,
    /// `floor(rounds / 3)`.
    pub window: usize,
    pub trend: Trend,
    pub first_loss: Option<f64>,
    pub last_loss: Option<f64>,
    pub note: Option<String>,
}

/// Compares the mean squared gradient norm of the first and last thirds of
/// the run. `grad_norms` holds unsquared norms, one per round.
pub fn convergence_diagnostics(loss_series: &[f64], grad_norms: &[f64]) -> ConvergenceDiagnostics {
    let squares: Vec<f64> = grad_norms.iter().map(|g| g * g).collect();
    let running_mean_sq_grad = squares
        .iter()
        .scan(0.0, |sum, s| {
            *sum += s;
            Some(*sum)
        })
        .enumerate()
        .map(|(i, sum)| sum / (i + 1) as f64)
        .collect();
    let window = squares.len() / 3;
    let mean = |xs: &[f64]| if xs.is_empty() { 0.0 } else { xs.iter().sum::<f64>() / xs.len() as f64 };
    let (first_window_mean, last_window_mean, trend, note) = if window == 0 {
        (0.0, 0.0, Trend::InsufficientData, Some(format!("{} rounds; at least 3 are needed", squares.len())))
    } else {
        let first = mean(&squares[..window]);
        let last = mean(&squares[squares.len() - window..]);
        let trend = if last < first {
            Trend::Decreasing
        } else if last == first {
            Trend::Flat
        } else {
            Trend::NonDecreasing
        };
        (first, last, trend, None)
    };
    ConvergenceDiagnostics {
        running_mean_sq_grad,
        first_window_mean,
        last_window_mean,
        window,
        trend,
        first_loss: loss_series.first().copied(),
        last_loss: loss_series.last().copied(),
        note,
    }
}
