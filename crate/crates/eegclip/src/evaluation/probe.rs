//! Probes over frozen embeddings.
//!
//! A probe sees only the embedding table, never the encoder, so fitting one
//! cannot move encoder weights by construction. Training happens at window
//! level; reported metrics aggregate to recording level elsewhere.

use std::collections::HashSet;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::evaluation::embed::{task_rows, EmbeddingTable};
use crate::evaluation::metrics::{balanced_accuracy, grouped_means, softmax_ce, Method, TaskMetrics};
use crate::evaluation::split::SplitPlan;
use crate::nn::layers::{Linear, Relu};
use crate::nn::{zero_grads, Adam, AdamConfig, Mode, ParamGroup, Parameterized, TensorView};
use crate::report::Task;
use crate::util::derive_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeKind {
    /// Multinomial logistic regression: one linear layer.
    LogReg,
    /// Three linear layers with rectifier activations, hidden width equal
    /// to the input width.
    Mlp3,
}

impl ProbeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeKind::LogReg => "logreg",
            ProbeKind::Mlp3 => "mlp3",
        }
    }

    pub fn parse(text: &str) -> Result<ProbeKind> {
        match text {
            "logreg" => Ok(ProbeKind::LogReg),
            "mlp3" => Ok(ProbeKind::Mlp3),
            other => Err(Error::validation(format!("unknown probe kind {other:?}"))),
        }
    }
}

/// Probe fitting hyperparameters. The defaults are the reporting setup:
/// full-batch Adam at 1e-3 for at most 200 epochs, early-stopped on a 10%
/// validation slice.
#[derive(Debug, Clone)]
pub struct ProbeConfig {
    pub kind: ProbeKind,
    pub lr: f64,
    pub max_epochs: usize,
    pub val_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl ProbeConfig {
    pub fn new(kind: ProbeKind) -> Self {
        ProbeConfig {
            kind,
            lr: 1e-3,
            max_epochs: 200,
            val_fraction: 0.1,
            patience: 20,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::validation("probe lr must be positive"));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::validation("probe epochs and patience must be positive"));
        }
        if !(0.0..=0.5).contains(&self.val_fraction) {
            return Err(Error::validation("val_fraction must be in [0, 0.5]"));
        }
        Ok(())
    }
}

/// A trained classification head. Holds one linear layer for logreg, three
/// with rectifiers between for the MLP; probes always compute in f64.
pub struct Probe {
    kind: ProbeKind,
    input_dim: usize,
    n_classes: usize,
    layers: Vec<Linear<f64>>,
    relus: Vec<Relu<f64>>,
    epochs_trained: usize,
}

impl Parameterized<f64> for Probe {
    fn visit_tensors(&mut self, prefix: &str, f: &mut dyn FnMut(TensorView<'_, f64>)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_tensors(&format!("{prefix}probe.l{}", i + 1), f);
        }
    }
}

impl Probe {
    fn new(kind: ProbeKind, input_dim: usize, n_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, "probe/init"));
        let dims: Vec<(usize, usize)> = match kind {
            ProbeKind::LogReg => vec![(input_dim, n_classes)],
            ProbeKind::Mlp3 => vec![
                (input_dim, input_dim),
                (input_dim, input_dim),
                (input_dim, n_classes),
            ],
        };
        let layers: Vec<Linear<f64>> = dims
            .iter()
            .map(|&(i, o)| Linear::new(i, o, ParamGroup::Main, &mut rng))
            .collect();
        let relus = (0..layers.len().saturating_sub(1)).map(|_| Relu::new()).collect();
        Probe {
            kind,
            input_dim,
            n_classes,
            layers,
            relus,
            epochs_trained: 0,
        }
    }

    pub fn kind(&self) -> ProbeKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn epochs_trained(&self) -> usize {
        self.epochs_trained
    }

    fn forward(&mut self, x: &Array2<f64>, mode: Mode) -> Array2<f64> {
        let mut h = self.layers[0].forward(x, mode);
        for i in 1..self.layers.len() {
            h = self.relus[i - 1].forward(&h, mode);
            h = self.layers[i].forward(&h, mode);
        }
        h
    }

    fn backward(&mut self, d_logits: &Array2<f64>) {
        let mut d = self.layers.last_mut().expect("probe has layers").backward(d_logits);
        for i in (0..self.layers.len() - 1).rev() {
            d = self.relus[i].backward(&d);
            d = self.layers[i].backward(&d);
        }
    }

    /// Softmax class probabilities, one row per input row.
    pub fn predict_proba(&mut self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim {
            return Err(Error::validation(format!(
                "probe expects {} features, got {}",
                self.input_dim,
                x.ncols()
            )));
        }
        let logits = self.forward(x, Mode::Eval);
        let mut probs = logits;
        for mut row in probs.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        Ok(probs)
    }

    /// Binary decisions: probability of class `true` above one half.
    pub fn predict(&mut self, x: &Array2<f64>) -> Result<Vec<bool>> {
        let probs = self.predict_proba(x)?;
        Ok(probs.column(1).iter().map(|&p| p > 0.5).collect())
    }
}

/// Fits a probe with default hyperparameters.
pub fn fit_probe(x: &Array2<f64>, y: &[bool], kind: ProbeKind) -> Result<Probe> {
    fit_probe_with(x, y, &ProbeConfig::new(kind))
}

/// Fits a probe on window-level `(embedding, label)` pairs. Both classes
/// must be present. A stratified 10% slice is held out for early stopping;
/// the best-validation weights are restored before returning.
pub fn fit_probe_with(x: &Array2<f64>, y: &[bool], cfg: &ProbeConfig) -> Result<Probe> {
    cfg.validate()?;
    let n = x.nrows();
    if n != y.len() {
        return Err(Error::validation(format!(
            "{} embeddings against {} labels",
            n,
            y.len()
        )));
    }
    if n == 0 {
        return Err(Error::validation("probe training set is empty"));
    }
    let positives = y.iter().filter(|&&l| l).count();
    if positives == 0 || positives == n {
        return Err(Error::validation(
            "probe training labels are single-class; need both classes",
        ));
    }

    // Stratified validation slice: take a share of each class, but always
    // leave at least one training example per class.
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, "probe/val_slice"));
    let mut val_rows: Vec<usize> = Vec::new();
    let mut train_rows: Vec<usize> = Vec::new();
    for class in [false, true] {
        let mut members: Vec<usize> = (0..n).filter(|&i| y[i] == class).collect();
        members.shuffle(&mut rng);
        let mut n_val = (members.len() as f64 * cfg.val_fraction).round() as usize;
        n_val = n_val.min(members.len() - 1);
        val_rows.extend_from_slice(&members[..n_val]);
        train_rows.extend_from_slice(&members[n_val..]);
    }
    train_rows.sort_unstable();
    val_rows.sort_unstable();

    let gather = |rows: &[usize]| -> (Array2<f64>, Vec<usize>) {
        let mut mat = Array2::zeros((rows.len(), x.ncols()));
        let mut targets = Vec::with_capacity(rows.len());
        for (r, &i) in rows.iter().enumerate() {
            mat.row_mut(r).assign(&x.row(i));
            targets.push(y[i] as usize);
        }
        (mat, targets)
    };
    let (train_x, train_y) = gather(&train_rows);
    let (val_x, val_y) = gather(&val_rows);

    let mut probe = Probe::new(cfg.kind, x.ncols(), 2, cfg.seed);
    let mut opt = Adam::new(AdamConfig {
        lr: cfg.lr,
        weight_decay: 0.0,
        ..AdamConfig::default()
    });

    let mut best: Option<(f64, usize, Vec<Vec<f64>>)> = None;
    for epoch in 0..cfg.max_epochs {
        zero_grads(&mut probe);
        let logits = probe.forward(&train_x, Mode::Train);
        let (_, d_logits) = softmax_ce(&logits, &train_y);
        probe.backward(&d_logits);
        opt.step(&mut probe);
        probe.epochs_trained = epoch + 1;

        if !val_rows.is_empty() {
            let val_logits = probe.forward(&val_x, Mode::Eval);
            let (val_loss, _) = softmax_ce(&val_logits, &val_y);
            let improved = best.as_ref().map(|(b, _, _)| val_loss < *b).unwrap_or(true);
            if improved {
                best = Some((val_loss, epoch, snapshot(&mut probe)));
            } else if let Some((_, at, _)) = best {
                if epoch - at >= cfg.patience {
                    break;
                }
            }
        }
    }
    if let Some((_, _, weights)) = best {
        restore(&mut probe, &weights);
    }
    Ok(probe)
}

fn snapshot(probe: &mut Probe) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    probe.visit_tensors("", &mut |t| out.push(t.value.to_vec()));
    out
}

fn restore(probe: &mut Probe, weights: &[Vec<f64>]) {
    let mut idx = 0;
    probe.visit_tensors("", &mut |t| {
        t.value.copy_from_slice(&weights[idx]);
        idx += 1;
    });
}

/// Fits a probe on one id set and scores another at recording level. The
/// recording decision is the mean window probability of class `true`
/// against one half.
pub fn probe_eval_on_ids(
    table: &EmbeddingTable,
    task: Task,
    train_ids: &HashSet<String>,
    eval_ids: &HashSet<String>,
    cfg: &ProbeConfig,
    method: Method,
) -> Result<TaskMetrics> {
    let (train_rows, train_y) = task_rows(table, task, |id| train_ids.contains(id));
    if train_rows.is_empty() {
        return Err(Error::validation(format!(
            "no labeled {} training windows in the chosen ids",
            task.as_str()
        )));
    }
    let train_x = table.features(&train_rows);
    let mut probe = fit_probe_with(&train_x, &train_y, cfg)?;

    score_probe(table, &mut probe, task, eval_ids, method)
}

/// Scores an already fitted probe on the windows of `eval_ids`.
pub fn score_probe(
    table: &EmbeddingTable,
    probe: &mut Probe,
    task: Task,
    eval_ids: &HashSet<String>,
    method: Method,
) -> Result<TaskMetrics> {
    let (eval_rows, _) = task_rows(table, task, |id| eval_ids.contains(id));
    if eval_rows.is_empty() {
        return Err(Error::validation(format!(
            "no labeled {} evaluation windows in the chosen ids",
            task.as_str()
        )));
    }
    let eval_x = table.features(&eval_rows);
    let probs = probe.predict_proba(&eval_x)?;
    let mut keys = Vec::with_capacity(eval_rows.len());
    let mut label_of = std::collections::HashMap::new();
    for &i in &eval_rows {
        let row = &table.rows[i];
        keys.push(row.recording_id.clone());
        label_of.insert(
            row.recording_id.clone(),
            row.labels.class(task).expect("filtered to labeled"),
        );
    }
    let p_true: Vec<f64> = probs.column(1).iter().cloned().collect();
    let per_recording = grouped_means(&keys, &p_true);

    let mut predictions = Vec::with_capacity(per_recording.len());
    let mut labels = Vec::with_capacity(per_recording.len());
    for (id, mean_p) in &per_recording {
        labels.push(label_of[id]);
        predictions.push(*mean_p > 0.5);
    }
    Ok(TaskMetrics {
        task,
        method,
        balanced_accuracy: balanced_accuracy(&predictions, &labels)?,
        n_eval: per_recording.len(),
        ci80: None,
    })
}

/// The frozen-probe evaluation regime: fit on the plan's task-train ids,
/// score on its eval ids.
pub fn probe_eval(
    table: &EmbeddingTable,
    task: Task,
    split: &SplitPlan,
    cfg: &ProbeConfig,
) -> Result<TaskMetrics> {
    let train: HashSet<String> = split.task_train.iter().cloned().collect();
    let eval: HashSet<String> = split.eval.iter().cloned().collect();
    probe_eval_on_ids(table, task, &train, &eval, cfg, Method::EegClipProbe)
}
