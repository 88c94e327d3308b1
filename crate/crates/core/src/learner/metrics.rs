use ndarray::Axis;
use serde::{Deserialize, Serialize};

use super::{forward, loss, LearnerConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::ParameterSet;

/// One-vs-rest confusion counts of a single class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    /// α
    pub true_positive: u64,
    /// β
    pub true_negative: u64,
    /// γ
    pub false_positive: u64,
    /// ρ
    pub false_negative: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean, 0 when both inputs are 0.
pub(crate) fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.true_positive + self.true_negative + self.false_positive + self.false_negative
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.true_positive + self.true_negative, self.total())
    }

    pub fn precision(&self) -> f64 {
        ratio(self.true_positive, self.true_positive + self.false_positive)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.true_positive, self.true_positive + self.false_negative)
    }

    pub fn f1(&self) -> f64 {
        harmonic(self.precision(), self.recall())
    }
}

/// Accuracy is micro (correct / total). Precision and recall are macro
/// averages over every configured class, absent classes contributing 0.
/// F1 is the harmonic mean of those two averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub loss: f64,
    pub samples: u64,
    pub per_class: Vec<ClassCounts>,
}

impl MetricsReport {
    pub fn from_predictions(truth: &[usize], predicted: &[usize], num_classes: usize, loss: f64) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Data(format!("{} labels vs {} predictions", truth.len(), predicted.len())));
        }
        if truth.is_empty() {
            return Err(Error::Data("cannot score an empty dataset".into()));
        }
        if truth.iter().chain(predicted).any(|&c| c >= num_classes) {
            return Err(Error::Data(format!("class index outside [0, {num_classes})")));
        }
        let n = truth.len() as u64;
        let mut per_class = vec![ClassCounts::default(); num_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t == p {
                per_class[t].true_positive += 1;
            } else {
                per_class[p].false_positive += 1;
                per_class[t].false_negative += 1;
            }
        }
        for c in &mut per_class {
            c.true_negative = n - c.true_positive - c.false_positive - c.false_negative;
        }
        let correct = truth.iter().zip(predicted).filter(|(t, p)| t == p).count() as u64;
        let k = num_classes as f64;
        let precision = per_class.iter().map(ClassCounts::precision).sum::<f64>() / k;
        let recall = per_class.iter().map(ClassCounts::recall).sum::<f64>() / k;
        Ok(MetricsReport {
            accuracy: ratio(correct, n),
            precision,
            recall,
            f1: harmonic(precision, recall),
            loss,
            samples: n,
            per_class,
        })
    }
}

/// Arg-max class per row; ties resolve to the lowest class index.
pub fn predict(params: &ParameterSet, config: &LearnerConfig, dataset: &Dataset) -> Result<Vec<usize>> {
    Ok(argmax_rows(&forward(params, config, dataset.features.view())?))
}

pub(crate) fn argmax_rows(logits: &ndarray::Array2<f64>) -> Vec<usize> {
    logits
        .axis_iter(Axis(0))
        .map(|row| row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best }))
        .collect()
}

pub fn evaluate(params: &ParameterSet, config: &LearnerConfig, dataset: &Dataset) -> Result<MetricsReport> {
    if dataset.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let logits = forward(params, config, dataset.features.view())?;
    let l = loss(&logits.view(), &dataset.labels)?;
    let predicted = argmax_rows(&logits);
    MetricsReport::from_predictions(&dataset.labels, &predicted, config.num_classes, l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_predictions_score_one() {
        let y = [0, 1, 2, 2, 1];
        let m = MetricsReport::from_predictions(&y, &y, 3, 0.0).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn counts_formulas() {
        let c = ClassCounts { true_positive: 5, true_negative: 3, false_positive: 1, false_negative: 1 };
        assert_eq!(c.accuracy(), 0.8);
        assert_eq!(c.precision(), 5.0 / 6.0);
        assert_eq!(c.recall(), 5.0 / 6.0);
        assert!((c.f1() - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn binary_counts_from_labels() {
        // 5 TP, 3 TN, 1 FP, 1 FN for the positive class 1.
        let truth = [1, 1, 1, 1, 1, 0, 0, 0, 0, 1];
        let pred = [1, 1, 1, 1, 1, 0, 0, 0, 1, 0];
        let m = MetricsReport::from_predictions(&truth, &pred, 2, 0.0).unwrap();
        let pos = m.per_class[1];
        assert_eq!(pos, ClassCounts { true_positive: 5, true_negative: 3, false_positive: 1, false_negative: 1 });
        assert_eq!(m.accuracy, 0.8);
    }

    #[test]
    fn absent_classes_count_as_zero() {
        let m = MetricsReport::from_predictions(&[0, 1], &[0, 1], 4, 0.0).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.recall, 0.5);
        assert_eq!(m.f1, 0.5);
    }

    #[test]
    fn f1_zero_when_nothing_is_right() {
        let m = MetricsReport::from_predictions(&[0, 0], &[1, 1], 2, 0.0).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn counts_sum_to_dataset_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth: Vec<usize> = (0..50).map(|_| rng.gen_range(0..4)).collect();
        let pred: Vec<usize> = (0..50).map(|_| rng.gen_range(0..4)).collect();
        let m = MetricsReport::from_predictions(&truth, &pred, 4, 0.0).unwrap();
        assert!(m.per_class.iter().all(|c| c.total() == 50));
        let mean_correct = truth.iter().zip(&pred).filter(|(a, b)| a == b).count() as f64 / 50.0;
        assert_eq!(m.accuracy, mean_correct);
    }

    #[test]
    fn empty_is_data_error() {
        assert!(matches!(MetricsReport::from_predictions(&[], &[], 2, 0.0), Err(Error::Data(_))));
    }
}
