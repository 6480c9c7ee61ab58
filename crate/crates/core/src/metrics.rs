//! Classification metrics.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// Per-class F1 averaged with weights `n_k / N` from the true labels.
    pub weighted_f1: f64,
}

/// `counts[true][predicted]`.
pub fn confusion_matrix(predictions: &[usize], labels: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    if predictions.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = predictions.iter().chain(labels).find(|&&c| c >= classes) {
        return Err(Error::Data(format!("class {bad} out of range for {classes} classes")));
    }
    let mut m = vec![vec![0usize; classes]; classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        m[y][p] += 1;
    }
    Ok(m)
}

pub fn metrics(predictions: &[usize], labels: &[usize], classes: usize) -> Result<Metrics> {
    if labels.is_empty() {
        return Err(Error::Data("metrics over an empty set".into()));
    }
    let m = confusion_matrix(predictions, labels, classes)?;
    let n = labels.len() as f64;
    let correct: usize = (0..classes).map(|k| m[k][k]).sum();
    // Σ n_k·F1_k is accumulated first and divided once, so a perfect
    // prediction gives exactly 1.
    let mut weighted = 0.0;
    for k in 0..classes {
        let support: usize = m[k].iter().sum();
        if support == 0 {
            continue;
        }
        let predicted: usize = m.iter().map(|row| row[k]).sum();
        let tp = m[k][k] as f64;
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = tp / support as f64;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        weighted += support as f64 * f1;
    }
    Ok(Metrics {
        accuracy: correct as f64 / n,
        weighted_f1: weighted / n,
    })
}
