use serde::{Deserialize, Serialize};

use super::TrainError;

/// Precision, recall and F1 of one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

fn check(truth: &[usize], pred: &[usize], num_classes: usize) -> Result<(), TrainError> {
    if truth.is_empty() {
        return Err(TrainError::EmptyLabels);
    }
    if truth.len() != pred.len() {
        return Err(TrainError::LabelLength {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    if let Some(&bad) = truth.iter().chain(pred).find(|&&y| y >= num_classes) {
        return Err(TrainError::LabelOutOfRange {
            label: bad,
            classes: num_classes,
        });
    }
    Ok(())
}

/// Per-class metrics indexed by class id. F1 is 0 when precision and recall
/// are both 0; precision of a never-predicted class is 0.
pub fn per_class_metrics(truth: &[usize], pred: &[usize], num_classes: usize) -> Result<Vec<ClassMetrics>, TrainError> {
    check(truth, pred, num_classes)?;
    let mut tp = vec![0usize; num_classes];
    let mut predicted = vec![0usize; num_classes];
    let mut support = vec![0usize; num_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        support[t] += 1;
        predicted[p] += 1;
        if t == p {
            tp[t] += 1;
        }
    }
    Ok((0..num_classes)
        .map(|c| {
            let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            let precision = ratio(tp[c], predicted[c]);
            let recall = ratio(tp[c], support[c]);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support: support[c],
            }
        })
        .collect())
}

/// Support-weighted mean of per-class metrics.
pub fn weighted_f1_from_table(table: &[ClassMetrics]) -> f64 {
    let total: usize = table.iter().map(|m| m.support).sum();
    if total == 0 {
        return 0.0;
    }
    table.iter().map(|m| m.f1 * m.support as f64).sum::<f64>() / total as f64
}

/// Per-class F1 averaged with weights equal to each class's true count.
pub fn support_weighted_f1(truth: &[usize], pred: &[usize], num_classes: usize) -> Result<f64, TrainError> {
    Ok(weighted_f1_from_table(&per_class_metrics(truth, pred, num_classes)?))
}

pub fn accuracy(truth: &[usize], pred: &[usize]) -> Result<f64, TrainError> {
    if truth.is_empty() {
        return Err(TrainError::EmptyLabels);
    }
    if truth.len() != pred.len() {
        return Err(TrainError::LabelLength {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    let hits = truth.iter().zip(pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}
