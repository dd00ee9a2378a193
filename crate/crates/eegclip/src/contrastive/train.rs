//! Pair assembly and the contrastive training loop.
//!
//! Every window of a recording pairs with the same text: the selected
//! report sections of that recording. Windows from one recording may
//! land in the same batch and then act as negatives for each other's
//! text; training tolerates that approximation.

use std::time::Instant;

use ndarray::{Array1, Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::{info_nce_with_grads, ContrastiveConfig, EegClipModel, EmbeddingPair};
use crate::data::Recording;
use crate::encoders::{Deep4Config, TextTower};
use crate::nn::{zero_grads, Adam, AdamConfig, Float, Mode};
use crate::report::{parse_report, select_sections, SectionSelection};
use crate::signal::{preprocess, window, PreprocessConfig, WindowConfig};
use crate::util::derive_seed;
use crate::{Error, Result};

/// Aligned training material: all windows of a corpus plus the per-
/// recording text each window pairs with.
#[derive(Debug, Clone)]
pub struct PairSet<F: Float> {
    pub recording_ids: Vec<String>,
    /// Selected report sections, one entry per recording.
    pub texts: Vec<String>,
    /// Preprocessed windows, each `[channels x samples]`.
    pub windows: Vec<Array2<F>>,
    /// Index into `texts`/`recording_ids` for each window.
    pub window_recording: Vec<usize>,
    pub window_starts: Vec<usize>,
}

impl<F: Float> PairSet<F> {
    pub fn n_windows(&self) -> usize {
        self.windows.len()
    }

    pub fn n_recordings(&self) -> usize {
        self.recording_ids.len()
    }

    /// The text window `w` pairs with.
    pub fn text_of(&self, w: usize) -> &str {
        &self.texts[self.window_recording[w]]
    }

    /// Structural consistency between the parallel vectors.
    pub fn validate(&self) -> Result<()> {
        if self.texts.len() != self.recording_ids.len() {
            return Err(Error::validation(format!(
                "{} texts for {} recordings",
                self.texts.len(),
                self.recording_ids.len()
            )));
        }
        if self.window_recording.len() != self.windows.len()
            || self.window_starts.len() != self.windows.len()
        {
            return Err(Error::validation(
                "window bookkeeping vectors disagree in length".to_string(),
            ));
        }
        if let Some(&bad) = self
            .window_recording
            .iter()
            .find(|&&r| r >= self.recording_ids.len())
        {
            return Err(Error::validation(format!(
                "window references recording {bad} of {}",
                self.recording_ids.len()
            )));
        }
        Ok(())
    }
}

/// Preprocesses and windows every recording and attaches the selected
/// report text. Requires at least two distinct recordings to survive
/// preprocessing, otherwise the contrastive objective has no negatives.
pub fn build_pairs<F: Float>(
    corpus: &[Recording],
    pre: &PreprocessConfig,
    win: &WindowConfig,
    sel: &SectionSelection,
) -> Result<PairSet<F>> {
    pre.validate()?;
    win.validate()?;
    sel.validate()?;
    if corpus.is_empty() {
        return Err(Error::validation("corpus is empty".to_string()));
    }
    let mut pairs = PairSet {
        recording_ids: Vec::new(),
        texts: Vec::new(),
        windows: Vec::new(),
        window_recording: Vec::new(),
        window_starts: Vec::new(),
    };
    for rec in corpus {
        let processed = preprocess(rec, pre)?;
        let windows = window(&processed, win)?;
        let text = select_sections(&parse_report(&rec.report_text), sel);
        if text.is_empty() {
            log::warn!("recording {}: selected sections are empty", rec.id);
        }
        let rec_idx = pairs.recording_ids.len();
        pairs.recording_ids.push(rec.id.clone());
        pairs.texts.push(text);
        for w in windows {
            pairs
                .windows
                .push(w.data.mapv(|v| F::of(v as f64)));
            pairs.window_recording.push(rec_idx);
            pairs.window_starts.push(w.start_sample);
        }
    }
    let mut distinct = pairs.recording_ids.clone();
    distinct.sort();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::validation(format!(
            "contrastive training needs at least two distinct recordings, found {}",
            distinct.len()
        )));
    }
    Ok(pairs)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_time_s: f64,
}

/// A fitted model plus its training history.
pub struct TrainedModel<F: Float> {
    pub model: EegClipModel<F>,
    pub log: Vec<EpochRecord>,
}

fn to_f64<F: Float>(x: &Array2<F>) -> Array2<f64> {
    x.mapv(|v| v.as_f64())
}

fn stack_windows<F: Float>(pairs: &PairSet<F>, idx: &[usize]) -> Array3<F> {
    let (c, t) = pairs.windows[idx[0]].dim();
    let mut x = Array3::<F>::zeros((idx.len(), c, t));
    for (row, &w) in idx.iter().enumerate() {
        x.index_axis_mut(ndarray::Axis(0), row)
            .assign(&pairs.windows[w]);
    }
    x
}

fn train_batch<F: Float>(
    model: &mut EegClipModel<F>,
    pairs: &PairSet<F>,
    idx: &[usize],
    cc: &ContrastiveConfig,
    opt: &mut Adam,
    dropout_rng: &mut ChaCha12Rng,
) -> Result<f64> {
    zero_grads(model);
    let x = stack_windows(pairs, idx);
    let texts: Vec<&str> = idx.iter().map(|&w| pairs.text_of(w)).collect();
    let z_eeg = model.encode_windows(&x, Mode::Train, dropout_rng)?;
    let z_text = model.encode_texts(&texts, Mode::Train);

    let ze = to_f64(&z_eeg);
    let zt = to_f64(&z_text);
    let sim = ze.dot(&zt.t());
    let g = info_nce_with_grads(&sim, model.log_inv_tau(), cc.symmetric)?;

    let d_eeg = g.d_sim.dot(&zt).mapv(F::of);
    let d_text = g.d_sim.t().dot(&ze).mapv(F::of);
    model.backward_eeg(&d_eeg);
    model.backward_text(&d_text);
    model.accumulate_temperature_grad(g.d_log_inv_tau);

    opt.step(model);
    model.clamp_temperature(cc.temperature_clamp.0, cc.temperature_clamp.1);
    Ok(g.loss)
}

/// Fits an already-assembled model on prepared pairs. Per epoch the
/// window order is reshuffled from the seed; trailing batches shorter
/// than two pairs are skipped because the loss is undefined for them.
pub fn train_model<F: Float>(
    mut model: EegClipModel<F>,
    pairs: &PairSet<F>,
    cc: &ContrastiveConfig,
) -> Result<TrainedModel<F>> {
    cc.validate()?;
    pairs.validate()?;
    let n = pairs.n_windows();
    if n < 2 {
        return Err(Error::validation(format!(
            "training needs at least two windows, found {n}"
        )));
    }
    let mut opt = Adam::new(AdamConfig {
        lr: cc.lr,
        weight_decay: cc.weight_decay,
        text_lr_ratio: cc.text_lr_ratio,
        ..AdamConfig::default()
    });
    let mut dropout_rng =
        ChaCha12Rng::seed_from_u64(derive_seed(cc.seed, "train/dropout"));
    let mut log = Vec::with_capacity(cc.epochs);
    for epoch in 1..=cc.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng =
            ChaCha12Rng::seed_from_u64(derive_seed(cc.seed, &format!("train/epoch/{epoch}")));
        order.shuffle(&mut shuffle_rng);

        let mut total = 0.0;
        let mut rows = 0usize;
        for chunk in order.chunks(cc.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let loss = train_batch(&mut model, pairs, chunk, cc, &mut opt, &mut dropout_rng)?;
            total += loss * chunk.len() as f64;
            rows += chunk.len();
        }
        // n >= 2 guarantees the first chunk trains, so rows > 0.
        let mean_loss = total / rows as f64;
        let wall_time_s = if cc.deterministic {
            0.0
        } else {
            started.elapsed().as_secs_f64()
        };
        log::info!("epoch {epoch}/{}: mean loss {mean_loss:.6}", cc.epochs);
        log.push(EpochRecord {
            epoch,
            mean_loss,
            wall_time_s,
        });
    }
    Ok(TrainedModel { model, log })
}

/// End-to-end training: preprocess and window the corpus, build the
/// model from the seed, and fit it.
#[allow(clippy::too_many_arguments)]
pub fn train<F: Float>(
    corpus: &[Recording],
    pre: &PreprocessConfig,
    win: &WindowConfig,
    sel: &SectionSelection,
    eeg_cfg: &Deep4Config,
    text_tower: TextTower<F>,
    shared_dim: usize,
    cc: &ContrastiveConfig,
) -> Result<TrainedModel<F>> {
    cc.validate()?;
    if eeg_cfg.n_channels != pre.channel_subset.len() {
        return Err(Error::Config(format!(
            "encoder expects {} channels but preprocessing selects {}",
            eeg_cfg.n_channels,
            pre.channel_subset.len()
        )));
    }
    if eeg_cfg.input_samples != win.length_samples {
        return Err(Error::Config(format!(
            "encoder expects {} samples but windows have {}",
            eeg_cfg.input_samples, win.length_samples
        )));
    }
    let pairs = build_pairs::<F>(corpus, pre, win, sel)?;
    let mut init_rng = ChaCha12Rng::seed_from_u64(derive_seed(cc.seed, "model/init"));
    let model = EegClipModel::new(
        eeg_cfg.clone(),
        text_tower,
        shared_dim,
        cc.init_temperature,
        cc.learn_temperature,
        &mut init_rng,
    )?;
    train_model(model, &pairs, cc)
}

/// Projects every pair into the shared space in eval mode. Output order
/// follows the pair set; both vectors of each pair are unit-norm.
pub fn embed_pairs<F: Float>(
    model: &mut EegClipModel<F>,
    pairs: &PairSet<F>,
    batch_size: usize,
) -> Result<Vec<EmbeddingPair>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    pairs.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let mut out = Vec::with_capacity(pairs.n_windows());
    let all: Vec<usize> = (0..pairs.n_windows()).collect();
    for chunk in all.chunks(batch_size) {
        let x = stack_windows(pairs, chunk);
        let texts: Vec<&str> = chunk.iter().map(|&w| pairs.text_of(w)).collect();
        let z_eeg = model.encode_windows(&x, Mode::Eval, &mut rng)?;
        let z_text = model.encode_texts(&texts, Mode::Eval);
        for (row, &w) in chunk.iter().enumerate() {
            let eeg_proj: Array1<f64> =
                z_eeg.row(row).iter().map(|v| v.as_f64()).collect();
            let text_proj: Array1<f64> =
                z_text.row(row).iter().map(|v| v.as_f64()).collect();
            out.push(EmbeddingPair {
                eeg_proj,
                text_proj,
                recording_id: pairs.recording_ids[pairs.window_recording[w]].clone(),
                window_start: pairs.window_starts[w],
            });
        }
    }
    Ok(out)
}
