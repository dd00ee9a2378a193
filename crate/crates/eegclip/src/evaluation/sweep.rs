//! Few-shot sweeps over nested training fractions.
//!
//! Every cell of the sweep is one (fraction, seed) pair: the probe refits
//! on the plan's fixed subset for that fraction with a seed-specific
//! initialization and validation slice, then scores on the full eval set.
//! Cells are independent of each other; per-seed results are keyed by seed
//! index, so collection order cannot change the outcome. A subset too
//! degenerate to train (one class) yields a missing cell, never an invented
//! number.

use std::collections::HashSet;

use crate::evaluation::embed::EmbeddingTable;
use crate::evaluation::metrics::{Method, TaskMetrics};
use crate::evaluation::probe::{probe_eval_on_ids, ProbeConfig, ProbeKind};
use crate::evaluation::split::{Fraction, SplitPlan};
use crate::report::Task;
use crate::util::{derive_seed, median, percentile};
use crate::{Error, Result};

/// One fraction's column of the sweep.
#[derive(Debug, Clone)]
pub struct FewShotPoint {
    pub fraction: Fraction,
    /// Recordings in this fraction's training subset.
    pub n_train: usize,
    /// Per-seed balanced accuracies, indexed by seed. Empty when the cell
    /// is missing.
    pub per_seed: Vec<f64>,
    /// Median over seeds with the 10th/90th percentile band when more than
    /// one seed ran; `None` marks a missing cell.
    pub metrics: Option<TaskMetrics>,
}

/// Sweeps the probe over the plan's fraction subsets. Each requested
/// fraction must exist in the plan, which pins the subsets: every method
/// sweeping the same plan trains on identical ids. `ci80` needs at least
/// two seeds; the reporting setup uses ten.
pub fn few_shot_sweep(
    table: &EmbeddingTable,
    task: Task,
    split: &SplitPlan,
    fractions: &[Fraction],
    kind: ProbeKind,
    n_seeds: usize,
    base_seed: u64,
) -> Result<Vec<FewShotPoint>> {
    if n_seeds == 0 {
        return Err(Error::validation("few-shot sweep needs at least one seed"));
    }
    if fractions.is_empty() {
        return Err(Error::validation("few-shot sweep needs at least one fraction"));
    }
    let eval_ids: HashSet<String> = split.eval.iter().cloned().collect();
    let mut points = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let subset = split.subset_for(fraction).ok_or_else(|| {
            Error::validation(format!("fraction {fraction} is not part of the split plan"))
        })?;
        let train_ids: HashSet<String> = subset.iter().cloned().collect();

        let mut per_seed = Vec::with_capacity(n_seeds);
        let mut n_eval = 0;
        let mut degenerate = false;
        for seed_index in 0..n_seeds {
            let cfg = ProbeConfig {
                seed: derive_seed(base_seed, &format!("fewshot/{fraction}/seed/{seed_index}")),
                ..ProbeConfig::new(kind)
            };
            match probe_eval_on_ids(
                table,
                task,
                &train_ids,
                &eval_ids,
                &cfg,
                Method::EegClipProbe,
            ) {
                Ok(metrics) => {
                    per_seed.push(metrics.balanced_accuracy);
                    n_eval = metrics.n_eval;
                }
                Err(Error::Validation(reason)) => {
                    log::warn!("fraction {fraction}: cell missing ({reason})");
                    degenerate = true;
                    break;
                }
                Err(other) => return Err(other),
            }
        }

        let metrics = if degenerate || per_seed.is_empty() {
            None
        } else {
            Some(TaskMetrics {
                task,
                method: Method::EegClipProbe,
                balanced_accuracy: median(&per_seed).expect("nonempty"),
                n_eval,
                ci80: if per_seed.len() >= 2 {
                    Some((
                        percentile(&per_seed, 0.1).expect("nonempty"),
                        percentile(&per_seed, 0.9).expect("nonempty"),
                    ))
                } else {
                    None
                },
            })
        };
        points.push(FewShotPoint {
            fraction,
            n_train: subset.len(),
            per_seed: if degenerate { Vec::new() } else { per_seed },
            metrics,
        });
    }
    Ok(points)
}

/// One tab-separated record per fitted (fraction, seed) cell:
/// `task method fraction seed balanced_accuracy`.
pub fn sweep_records(task: Task, method: Method, points: &[FewShotPoint]) -> String {
    let mut out = String::from("task\tmethod\tfraction\tseed\tbalanced_accuracy\n");
    for point in points {
        for (seed, ba) in point.per_seed.iter().enumerate() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{:?}\n",
                task.as_str(),
                method.as_str(),
                point.fraction,
                seed,
                ba
            ));
        }
    }
    out
}

/// Summary curve as CSV: one row per fraction with the median and the 80%
/// band. Missing cells keep their row with empty value fields.
pub fn sweep_curve_csv(points: &[FewShotPoint]) -> String {
    let mut out = String::from("fraction,n_train,median,p10,p90\n");
    for point in points {
        match &point.metrics {
            Some(m) => {
                let (lo, hi) = m.ci80.unwrap_or((m.balanced_accuracy, m.balanced_accuracy));
                out.push_str(&format!(
                    "{},{},{:?},{:?},{:?}\n",
                    point.fraction, point.n_train, m.balanced_accuracy, lo, hi
                ));
            }
            None => {
                out.push_str(&format!("{},{},,,\n", point.fraction, point.n_train));
            }
        }
    }
    out
}
