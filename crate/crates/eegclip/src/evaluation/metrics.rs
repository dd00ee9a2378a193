//! Balanced accuracy and the record type every evaluation regime reports.

use std::fmt;

use ndarray::Array2;

use crate::report::Task;
use crate::{Error, Result};

/// How a score was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Frozen contrastive encoder with a trained probe on top.
    EegClipProbe,
    /// Supervised end-to-end model trained on the task itself.
    TaskSpecific,
    /// Encoder pretrained on a different task, frozen, new head on the task.
    AlternativeTask,
    /// Prompt-prototype similarity with no task-specific training.
    ZeroShot,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::EegClipProbe => "eegclip_probe",
            Method::TaskSpecific => "task_specific",
            Method::AlternativeTask => "alternative_task",
            Method::ZeroShot => "zero_shot",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One evaluation cell: a task scored by one method over `n_eval`
/// recordings. `ci80` is the 10th/90th percentile band over seeds and is
/// present only for multi-seed sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskMetrics {
    pub task: Task,
    pub method: Method,
    pub balanced_accuracy: f64,
    pub n_eval: usize,
    pub ci80: Option<(f64, f64)>,
}

/// Mean per-class recall over the classes present in `labels`. With both
/// classes present this is the usual balanced accuracy; with one class it
/// degenerates to that class's recall.
pub fn balanced_accuracy(predictions: &[bool], labels: &[bool]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} predictions against {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::validation("balanced accuracy of an empty set"));
    }
    let mut recalls = Vec::with_capacity(2);
    for class in [false, true] {
        let total = labels.iter().filter(|&&l| l == class).count();
        if total == 0 {
            continue;
        }
        let correct = predictions
            .iter()
            .zip(labels)
            .filter(|&(&p, &l)| l == class && p == class)
            .count();
        recalls.push(correct as f64 / total as f64);
    }
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Means of `values` grouped by key, in first-appearance order of the keys.
/// The recording-level aggregation rule: window outputs in, one score per
/// recording out.
pub(crate) fn grouped_means(keys: &[String], values: &[f64]) -> Vec<(String, f64)> {
    debug_assert_eq!(keys.len(), values.len());
    let mut order: Vec<String> = Vec::new();
    let mut sums: std::collections::HashMap<&str, (f64, usize)> = std::collections::HashMap::new();
    for (key, &value) in keys.iter().zip(values) {
        let entry = sums.entry(key.as_str()).or_insert_with(|| {
            order.push(key.clone());
            (0.0, 0)
        });
        entry.0 += value;
        entry.1 += 1;
    }
    order
        .into_iter()
        .map(|key| {
            let (sum, count) = sums[key.as_str()];
            (key, sum / count as f64)
        })
        .collect()
}

/// Mean softmax cross-entropy over rows with integer class targets.
/// Returns the loss and its gradient with respect to the logits; the
/// max-subtracted form stays finite for any logit scale.
pub(crate) fn softmax_ce(logits: &Array2<f64>, targets: &[usize]) -> (f64, Array2<f64>) {
    let (n, k) = logits.dim();
    debug_assert_eq!(n, targets.len());
    debug_assert!(targets.iter().all(|&t| t < k));
    let mut loss = 0.0;
    let mut d = Array2::<f64>::zeros((n, k));
    let weight = 1.0 / n as f64;
    for (i, &target) in targets.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += weight * (lse - row[target]);
        for j in 0..k {
            let softmax = (row[j] - lse).exp();
            d[[i, j]] = weight * (softmax - if j == target { 1.0 } else { 0.0 });
        }
    }
    (loss, d)
}
