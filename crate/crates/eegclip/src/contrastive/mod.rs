//! Contrastive alignment of EEG window embeddings with report-text
//! embeddings: cosine similarity between the two projected batches, the
//! temperature-scaled InfoNCE objective, and the training loop that fits
//! the dual-encoder model.
//!
//! All loss math runs in `f64` regardless of the model's float type, so
//! the objective and its gradients can be checked against finite
//! differences at full precision.

pub(crate) mod model;
mod store;
pub(crate) mod train;

pub use model::EegClipModel;
pub use train::{build_pairs, embed_pairs, train, train_model, EpochRecord, PairSet, TrainedModel};

use ndarray::{Array1, Array2};

use crate::{Error, Result};

/// Hyperparameters of the contrastive objective and its optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveConfig {
    /// Initial softmax temperature.
    pub init_temperature: f64,
    /// When false the temperature stays at its initial value.
    pub learn_temperature: bool,
    /// `(lo, hi)` bounds applied to the temperature after every step.
    pub temperature_clamp: (f64, f64),
    /// Average the EEG-to-text and text-to-EEG directions; false keeps
    /// only the EEG-to-text direction.
    pub symmetric: bool,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Multiplier on `lr` for the text-encoder parameter group.
    pub text_lr_ratio: f64,
    pub seed: u64,
    /// Zeroes logged wall times so training output is bit-reproducible.
    pub deterministic: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            init_temperature: 0.07,
            learn_temperature: true,
            temperature_clamp: (1e-3, 100.0),
            symmetric: true,
            batch_size: 64,
            epochs: 20,
            lr: 5e-3,
            weight_decay: 5e-4,
            text_lr_ratio: 1e-3,
            seed: 0,
            deterministic: true,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.temperature_clamp;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config(
                "temperature clamp needs 0 < lo <= hi".into(),
            ));
        }
        if !(self.init_temperature >= lo && self.init_temperature <= hi) {
            return Err(Error::Config(format!(
                "init_temperature {} outside clamp [{lo}, {hi}]",
                self.init_temperature
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(
                "batch_size must be at least 2; a contrastive batch needs negatives".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.weight_decay < 0.0 || self.text_lr_ratio < 0.0 {
            return Err(Error::Config(
                "weight_decay and text_lr_ratio must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// One aligned (EEG window, report text) pair in the shared space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPair {
    pub eeg_proj: Array1<f64>,
    pub text_proj: Array1<f64>,
    pub recording_id: String,
    pub window_start: usize,
}

impl EmbeddingPair {
    /// Checks both vectors share a dimension and are unit-norm within 1e-6.
    pub fn validate(&self) -> Result<()> {
        if self.eeg_proj.len() != self.text_proj.len() {
            return Err(Error::validation(format!(
                "pair for {}: eeg dim {} != text dim {}",
                self.recording_id,
                self.eeg_proj.len(),
                self.text_proj.len()
            )));
        }
        for (label, v) in [("eeg", &self.eeg_proj), ("text", &self.text_proj)] {
            let norm = v.dot(v).sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::validation(format!(
                    "pair for {}: {label} projection norm {norm} is not unit",
                    self.recording_id
                )));
            }
        }
        Ok(())
    }
}

/// Pairwise dot products of two batches of unit vectors: `S[i][j] =
/// dot(X[i], Y[j])`. Rows are assumed unit-norm, making each entry a
/// cosine in `[-1, 1]`.
pub fn similarity_matrix(x: &Array2<f64>, y: &Array2<f64>) -> Result<Array2<f64>> {
    if x.dim() != y.dim() {
        return Err(Error::validation(format!(
            "similarity needs matching shapes, got {:?} and {:?}",
            x.dim(),
            y.dim()
        )));
    }
    Ok(x.dot(&y.t()))
}

/// Loss value and the gradients training needs.
#[derive(Debug, Clone)]
pub struct LossGrads {
    pub loss: f64,
    /// Gradient with respect to the similarity matrix.
    pub d_sim: Array2<f64>,
    /// Gradient with respect to the log inverse temperature.
    pub d_log_inv_tau: f64,
}

/// InfoNCE over a similarity matrix whose diagonal holds the matched
/// pairs: mean over rows of the cross-entropy that picks the diagonal
/// entry out of its row at the given temperature; when `symmetric`, the
/// average of that and the column-wise direction.
pub fn info_nce_loss(sim: &Array2<f64>, temperature: f64, symmetric: bool) -> Result<f64> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::validation(format!(
            "temperature must be a positive finite number, got {temperature}"
        )));
    }
    Ok(info_nce_with_grads(sim, -temperature.ln(), symmetric)?.loss)
}

/// [`info_nce_loss`] plus gradients, parameterized by `log_inv_tau =
/// ln(1/temperature)` because that is the quantity training optimizes.
/// Numerically stabilized by max subtraction, so scaled similarities of
/// magnitude up to 1e4 stay finite.
pub fn info_nce_with_grads(
    sim: &Array2<f64>,
    log_inv_tau: f64,
    symmetric: bool,
) -> Result<LossGrads> {
    let (n, m) = sim.dim();
    if n != m {
        return Err(Error::validation(format!(
            "similarity matrix must be square, got {n}x{m}"
        )));
    }
    if n < 2 {
        return Err(Error::validation(
            "contrastive loss needs at least two pairs; one pair has no negatives".to_string(),
        ));
    }
    if !log_inv_tau.is_finite() {
        return Err(Error::validation(format!(
            "log inverse temperature must be finite, got {log_inv_tau}"
        )));
    }
    let scale = log_inv_tau.exp();
    let logits = sim * scale;

    let mut loss = 0.0;
    let mut d_logits = Array2::<f64>::zeros((n, n));
    // Each direction is a mean over n cross-entropy terms; with the
    // symmetric average every term carries weight 1/(2n) instead of 1/n.
    let weight = if symmetric { 0.5 / n as f64 } else { 1.0 / n as f64 };

    // Row direction: for each EEG embedding, softmax over the texts.
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += weight * (lse - logits[[i, i]]);
        for j in 0..n {
            let p = (logits[[i, j]] - lse).exp();
            d_logits[[i, j]] += weight * (p - if i == j { 1.0 } else { 0.0 });
        }
    }

    // Column direction: for each text embedding, softmax over the EEG rows.
    if symmetric {
        for j in 0..n {
            let col = logits.column(j);
            let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + col.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += weight * (lse - logits[[j, j]]);
            for i in 0..n {
                let p = (logits[[i, j]] - lse).exp();
                d_logits[[i, j]] += weight * (p - if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    // logits = sim * e^p with p the log inverse temperature, so
    // d logits / d p = logits and d logits / d sim = e^p.
    let d_log_inv_tau = (&d_logits * &logits).sum();
    let d_sim = &d_logits * scale;
    Ok(LossGrads {
        loss,
        d_sim,
        d_log_inv_tau,
    })
}
