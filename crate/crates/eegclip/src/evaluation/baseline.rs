//! Supervised baselines bracketing the contrastive model.
//!
//! `task_specific` trains the convolutional encoder plus a classification
//! head end to end on the task itself: the fully supervised upper bound.
//! `alternative_task` pretrains the same architecture on a different task,
//! freezes the encoder, and fits a fresh linear head on the target task:
//! the transfer lower bound. Both score at recording level by mean window
//! probability.

use std::collections::HashMap;

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::data::Recording;
use crate::encoders::{Deep4Config, Deep4Encoder};
use crate::evaluation::embed::stack_windows;
use crate::evaluation::metrics::{
    balanced_accuracy, grouped_means, softmax_ce, Method, TaskMetrics,
};
use crate::evaluation::probe::{fit_probe_with, Probe, ProbeConfig, ProbeKind};
use crate::evaluation::split::SplitPlan;
use crate::nn::layers::Linear;
use crate::nn::{zero_grads, Adam, AdamConfig, Float, Mode, ParamGroup, Parameterized, TensorView};
use crate::report::{LabelSet, Task};
use crate::signal::{preprocess, window, PreprocessConfig, WindowConfig};
use crate::util::derive_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    TaskSpecific,
    AlternativeTask,
}

impl BaselineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::TaskSpecific => "task_specific",
            BaselineKind::AlternativeTask => "alternative_task",
        }
    }

    pub fn parse(text: &str) -> Result<BaselineKind> {
        match text {
            "task_specific" => Ok(BaselineKind::TaskSpecific),
            "alternative_task" => Ok(BaselineKind::AlternativeTask),
            other => Err(Error::validation(format!("unknown baseline kind {other:?}"))),
        }
    }
}

/// Supervised training hyperparameters; defaults mirror the contrastive
/// trainer so the comparison is architecture against architecture.
#[derive(Debug, Clone)]
pub struct BaselineConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            epochs: 20,
            batch_size: 64,
            lr: 5e-3,
            weight_decay: 5e-4,
            seed: 0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::validation("epochs and batch_size must be positive"));
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::validation("lr must be positive"));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::validation("weight_decay must be nonnegative"));
        }
        Ok(())
    }
}

/// The convolutional encoder with a two-class linear head.
pub struct SupervisedNet<F: Float> {
    pub encoder: Deep4Encoder<F>,
    pub head: Linear<F>,
}

impl<F: Float> Parameterized<F> for SupervisedNet<F> {
    fn visit_tensors(&mut self, prefix: &str, f: &mut dyn FnMut(TensorView<'_, F>)) {
        self.encoder.visit_tensors(&format!("{prefix}eeg"), f);
        self.head.visit_tensors(&format!("{prefix}head"), f);
    }
}

impl<F: Float> SupervisedNet<F> {
    pub fn new(cfg: &Deep4Config, rng: &mut ChaCha12Rng) -> Result<Self> {
        let encoder = Deep4Encoder::new(cfg.clone(), rng)?;
        let head = Linear::new(cfg.embedding_dim, 2, ParamGroup::Main, rng);
        Ok(SupervisedNet { encoder, head })
    }

    fn forward(
        &mut self,
        x: &Array3<F>,
        mode: Mode,
        rng: &mut ChaCha12Rng,
    ) -> Result<Array2<F>> {
        let features = self.encoder.forward(x, mode, rng)?;
        Ok(self.head.forward(&features, mode))
    }

    fn backward(&mut self, d_logits: &Array2<F>) {
        let d_features = self.head.backward(d_logits);
        self.encoder.backward(&d_features);
    }
}

/// Per-window training material for one task over one id set.
struct LabeledWindows {
    mats: Vec<Array2<f32>>,
    targets: Vec<usize>,
    recording_of: Vec<String>,
}

fn collect_labeled_windows(
    by_id: &HashMap<&str, &Recording>,
    ids: &[String],
    labels: &HashMap<String, LabelSet>,
    task: Task,
    pre: &PreprocessConfig,
    win: &WindowConfig,
) -> Result<LabeledWindows> {
    let mut out = LabeledWindows {
        mats: Vec::new(),
        targets: Vec::new(),
        recording_of: Vec::new(),
    };
    for id in ids {
        let recording = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::validation(format!("id {id} not in the corpus")))?;
        let class = labels.get(id).and_then(|l| l.class(task)).ok_or_else(|| {
            Error::validation(format!("recording {id} has no {} label", task.as_str()))
        })?;
        let clean = preprocess(recording, pre)?;
        for w in window(&clean, win)? {
            out.mats.push(w.data);
            out.targets.push(class as usize);
            out.recording_of.push(id.clone());
        }
    }
    if out.mats.is_empty() {
        return Err(Error::validation("no training windows for the baseline"));
    }
    Ok(out)
}

/// Trains encoder plus head end to end with softmax cross-entropy.
fn train_supervised<F: Float>(
    data: &LabeledWindows,
    eeg_cfg: &Deep4Config,
    cfg: &BaselineConfig,
) -> Result<SupervisedNet<F>> {
    let mut init_rng = ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, "baseline/init"));
    let mut net = SupervisedNet::new(eeg_cfg, &mut init_rng)?;
    let mut dropout_rng = ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, "baseline/dropout"));
    let mut opt = Adam::new(AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    });

    let n = data.mats.len();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng =
            ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, &format!("baseline/epoch/{epoch}")));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mats: Vec<Array2<f32>> = batch.iter().map(|&i| data.mats[i].clone()).collect();
            let targets: Vec<usize> = batch.iter().map(|&i| data.targets[i]).collect();
            let x: Array3<F> = stack_windows(&mats);
            zero_grads(&mut net);
            let logits = net.forward(&x, Mode::Train, &mut dropout_rng)?;
            let logits64 = logits.mapv(|v| v.as_f64());
            let (loss, d64) = softmax_ce(&logits64, &targets);
            net.backward(&d64.mapv(F::of));
            opt.step(&mut net);
            total += loss * batch.len() as f64;
        }
        log::info!("baseline epoch {epoch}: mean loss {:.6}", total / n as f64);
    }
    Ok(net)
}

/// `p(class true)` for each window through the trained net, eval mode.
fn window_probabilities<F: Float>(
    net: &mut SupervisedNet<F>,
    data: &LabeledWindows,
    batch_size: usize,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let mut probs = Vec::with_capacity(data.mats.len());
    for chunk in data.mats.chunks(batch_size) {
        let x: Array3<F> = stack_windows(chunk);
        let logits = net.forward(&x, Mode::Eval, &mut rng)?;
        for row in logits.rows() {
            let margin = row[1].as_f64() - row[0].as_f64();
            probs.push(sigmoid(margin));
        }
    }
    Ok(probs)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Encoder-only embeddings of the windows, for the frozen-transfer path.
fn embed_windows<F: Float>(
    net: &mut SupervisedNet<F>,
    data: &LabeledWindows,
    batch_size: usize,
) -> Result<Array2<f64>> {
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let dim = net.encoder.embedding_dim();
    let mut out = Array2::zeros((data.mats.len(), dim));
    let mut at = 0;
    for chunk in data.mats.chunks(batch_size) {
        let x: Array3<F> = stack_windows(chunk);
        let features = net.encoder.forward(&x, Mode::Eval, &mut rng)?;
        for row in features.rows() {
            for (j, v) in row.iter().enumerate() {
                out[[at, j]] = v.as_f64();
            }
            at += 1;
        }
    }
    Ok(out)
}

/// Recording-level decisions from window probabilities: mean probability
/// against one half.
fn recording_decisions(
    data: &LabeledWindows,
    probs: &[f64],
) -> (Vec<bool>, Vec<bool>, usize) {
    let per_recording = grouped_means(&data.recording_of, probs);
    let mut label_of = HashMap::new();
    for (id, &target) in data.recording_of.iter().zip(&data.targets) {
        label_of.insert(id.as_str(), target == 1);
    }
    let mut predictions = Vec::with_capacity(per_recording.len());
    let mut truth = Vec::with_capacity(per_recording.len());
    for (id, mean_p) in &per_recording {
        predictions.push(*mean_p > 0.5);
        truth.push(label_of[id.as_str()]);
    }
    let n = per_recording.len();
    (predictions, truth, n)
}

/// Runs one supervised baseline over a split plan.
///
/// `alt_task` is required for `alternative_task`, must differ from `task`,
/// and is rejected for `task_specific`. Every id the baseline touches must
/// carry the labels it needs.
#[allow(clippy::too_many_arguments)]
pub fn run_baseline<F: Float>(
    kind: BaselineKind,
    task: Task,
    alt_task: Option<Task>,
    corpus: &[Recording],
    labels: &HashMap<String, LabelSet>,
    split: &SplitPlan,
    pre: &PreprocessConfig,
    win: &WindowConfig,
    eeg_cfg: &Deep4Config,
    cfg: &BaselineConfig,
) -> Result<TaskMetrics> {
    cfg.validate()?;
    if eeg_cfg.n_channels != pre.channel_subset.len() {
        return Err(Error::Config(format!(
            "encoder expects {} channels but preprocessing selects {}",
            eeg_cfg.n_channels,
            pre.channel_subset.len()
        )));
    }
    if eeg_cfg.input_samples != win.length_samples {
        return Err(Error::Config(format!(
            "encoder expects {}-sample windows but windowing produces {}",
            eeg_cfg.input_samples, win.length_samples
        )));
    }
    let by_id: HashMap<&str, &Recording> = corpus.iter().map(|r| (r.id.as_str(), r)).collect();

    match kind {
        BaselineKind::TaskSpecific => {
            if alt_task.is_some() {
                return Err(Error::validation(
                    "alt_task only applies to the alternative_task baseline",
                ));
            }
            let train =
                collect_labeled_windows(&by_id, &split.task_train, labels, task, pre, win)?;
            let mut net = train_supervised::<F>(&train, eeg_cfg, cfg)?;
            let eval = collect_labeled_windows(&by_id, &split.eval, labels, task, pre, win)?;
            let probs = window_probabilities(&mut net, &eval, cfg.batch_size)?;
            let (predictions, truth, n_eval) = recording_decisions(&eval, &probs);
            Ok(TaskMetrics {
                task,
                method: Method::TaskSpecific,
                balanced_accuracy: balanced_accuracy(&predictions, &truth)?,
                n_eval,
                ci80: None,
            })
        }
        BaselineKind::AlternativeTask => {
            let alt = alt_task.ok_or_else(|| {
                Error::validation("the alternative_task baseline needs an alt_task")
            })?;
            if alt == task {
                return Err(Error::validation(
                    "transfer must come from a different task than the one probed",
                ));
            }
            // Pretrain end to end on the alternative task, over the same ids
            // the contrastive model pretrains on.
            let pretrain =
                collect_labeled_windows(&by_id, &split.contrastive_train, labels, alt, pre, win)?;
            let mut net = train_supervised::<F>(&pretrain, eeg_cfg, cfg)?;

            // Freeze the encoder; fit a fresh linear head on the target task.
            let train =
                collect_labeled_windows(&by_id, &split.task_train, labels, task, pre, win)?;
            let train_x = embed_windows(&mut net, &train, cfg.batch_size)?;
            let train_y: Vec<bool> = train.targets.iter().map(|&t| t == 1).collect();
            let probe_cfg = ProbeConfig {
                seed: derive_seed(cfg.seed, "baseline/probe"),
                ..ProbeConfig::new(ProbeKind::LogReg)
            };
            let mut probe: Probe = fit_probe_with(&train_x, &train_y, &probe_cfg)?;

            let eval = collect_labeled_windows(&by_id, &split.eval, labels, task, pre, win)?;
            let eval_x = embed_windows(&mut net, &eval, cfg.batch_size)?;
            let probs: Vec<f64> = probe
                .predict_proba(&eval_x)?
                .column(1)
                .iter()
                .cloned()
                .collect();
            let (predictions, truth, n_eval) = recording_decisions(&eval, &probs);
            Ok(TaskMetrics {
                task,
                method: Method::AlternativeTask,
                balanced_accuracy: balanced_accuracy(&predictions, &truth)?,
                n_eval,
                ci80: None,
            })
        }
    }
}
