//! Similarity sources and the frequency-domain gradient map computation.
//!
//! A [`SimilarityGradient`] turns one window into a scalar similarity and
//! the gradient at the window input. [`frequency_gradients_with`] pulls
//! that gradient back onto real-DFT coefficients per channel and averages
//! per-bin values across a window set; [`frequency_gradients`] is the
//! trained-model entry point, scoring cosine similarity to one prompt.

use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::contrastive::EegClipModel;
use crate::interpret::map::{GradientMap, GradientMode};
use crate::interpret::rdft::Rdft;
use crate::nn::{zero_grads, Float, Mode};
use crate::signal::{PreprocessConfig, Window};
use crate::{Error, Result};

/// A scalar similarity differentiable at the window input.
pub trait SimilarityGradient {
    /// Similarity of one `channels x samples` window and the gradient of
    /// that similarity at the input, in the window's shape.
    fn value_and_input_grad(&mut self, window: &Array2<f64>) -> Result<(f64, Array2<f64>)>;
}

/// Cosine similarity between a window's shared-space projection and one
/// prompt's text projection, differentiated through the whole EEG branch
/// in inference mode. Both projections leave their heads unit-normalized,
/// so the dot product is the cosine.
pub struct PromptSimilarity<'m, F: Float> {
    model: &'m mut EegClipModel<F>,
    prototype: Array2<F>,
}

impl<'m, F: Float> PromptSimilarity<'m, F> {
    /// Projects `prompt` once through the text branch.
    pub fn new(model: &'m mut EegClipModel<F>, prompt: &str) -> Self {
        let prototype = model.encode_texts(&[prompt], Mode::Eval);
        PromptSimilarity { model, prototype }
    }
}

impl<F: Float> SimilarityGradient for PromptSimilarity<'_, F> {
    fn value_and_input_grad(&mut self, window: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        let (c, t) = window.dim();
        let mut x = Array3::<F>::zeros((1, c, t));
        for ch in 0..c {
            for s in 0..t {
                x[[0, ch, s]] = F::of(window[[ch, s]]);
            }
        }
        // Inference mode never draws from the generator.
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let z = self.model.encode_windows(&x, Mode::Eval, &mut rng)?;
        let value = z
            .row(0)
            .iter()
            .zip(self.prototype.row(0))
            .map(|(a, b)| a.as_f64() * b.as_f64())
            .sum();
        let dx = self.model.backward_eeg(&self.prototype.clone());
        // Analysis must leave no gradient residue behind for a later
        // training step to pick up.
        zero_grads(self.model);
        Ok((value, dx.index_axis(Axis(0), 0).mapv(|v| v.as_f64())))
    }
}

/// Fixed linear functional `<weights, window>`: the input gradient is the
/// weight matrix itself, independent of the window. Stands in for a model
/// whose EEG branch is a known band-pass filter.
pub struct LinearSimilarity {
    pub weights: Array2<f64>,
}

impl LinearSimilarity {
    /// Hann-windowed cosine at `center_hz`, replicated on every channel: a
    /// linear band-pass whose gradient mass concentrates around the center
    /// frequency.
    pub fn band_atom(channels: usize, samples: usize, rate_hz: f64, center_hz: f64) -> Self {
        assert!(channels > 0 && samples > 1 && rate_hz > 0.0);
        let row: Vec<f64> = (0..samples)
            .map(|t| {
                let hann = 0.5
                    * (1.0
                        - (std::f64::consts::TAU * t as f64 / (samples - 1) as f64).cos());
                hann * (std::f64::consts::TAU * center_hz * t as f64 / rate_hz).cos()
            })
            .collect();
        let weights =
            Array2::from_shape_fn((channels, samples), |(_, t)| row[t]);
        LinearSimilarity { weights }
    }
}

impl SimilarityGradient for LinearSimilarity {
    fn value_and_input_grad(&mut self, window: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        if window.dim() != self.weights.dim() {
            return Err(Error::validation(format!(
                "window is {:?} but the functional expects {:?}",
                window.dim(),
                self.weights.dim()
            )));
        }
        let value = window.iter().zip(self.weights.iter()).map(|(x, w)| x * w).sum();
        Ok((value, self.weights.clone()))
    }
}

/// Averages per-window frequency-domain gradients of `source` into a map.
/// All windows must share one shape with `channels.len()` rows. Cells
/// accumulate sequentially in input order, so a fixed order reproduces
/// identical bits; reordering moves cells only by rounding.
pub fn frequency_gradients_with(
    source: &mut dyn SimilarityGradient,
    windows: &[Window],
    channels: &[String],
    rate_hz: f64,
    prompt: &str,
    mode: GradientMode,
) -> Result<GradientMap> {
    if windows.is_empty() {
        return Err(Error::validation("no windows to build a gradient map from"));
    }
    if rate_hz <= 0.0 {
        return Err(Error::validation("sample rate must be positive"));
    }
    let (c, t) = windows[0].data.dim();
    if c != channels.len() {
        return Err(Error::validation(format!(
            "windows have {c} channels but {} names were given",
            channels.len()
        )));
    }
    if t < 2 {
        return Err(Error::validation("windows need at least 2 samples"));
    }
    for (i, w) in windows.iter().enumerate() {
        if w.data.dim() != (c, t) {
            return Err(Error::validation(format!(
                "window {i} is {:?}, expected ({c}, {t})",
                w.data.dim()
            )));
        }
    }

    let rdft = Rdft::new(t);
    let bins = rdft.n_bins();
    let mut acc = Array2::<f64>::zeros((c, bins));
    for w in windows {
        let xf = w.data.mapv(f64::from);
        let (_, grad) = source.value_and_input_grad(&xf)?;
        for ch in 0..c {
            let g_row: Vec<f64> = grad.row(ch).to_vec();
            let pulled = rdft.pullback(&g_row);
            match mode {
                GradientMode::Magnitude => {
                    for (k, &(re, im)) in pulled.iter().enumerate() {
                        acc[[ch, k]] += re.hypot(im);
                    }
                }
                GradientMode::Signed => {
                    let x_row: Vec<f64> = xf.row(ch).to_vec();
                    let spectrum = rdft.forward(&x_row);
                    for (k, (&(gre, gim), &(xre, xim))) in
                        pulled.iter().zip(spectrum.iter()).enumerate()
                    {
                        let amp = xre.hypot(xim).max(1e-12);
                        acc[[ch, k]] += (gre * xre + gim * xim) / amp;
                    }
                }
            }
        }
    }
    acc /= windows.len() as f64;

    let map = GradientMap {
        channels: channels.to_vec(),
        freq_axis_hz: (0..bins).map(|k| k as f64 * rate_hz / t as f64).collect(),
        magnitudes: acc,
        prompt: prompt.to_string(),
        n_windows_averaged: windows.len(),
        mode,
    };
    map.validate()?;
    Ok(map)
}

/// Gradient map of the cosine similarity to `prompt`, differentiated
/// through a trained model over `windows`. Channel names and the sample
/// rate come from the preprocessing that produced the windows; an empty
/// channel subset falls back to positional names.
pub fn frequency_gradients<F: Float>(
    model: &mut EegClipModel<F>,
    windows: &[Window],
    pre: &PreprocessConfig,
    prompt: &str,
    mode: GradientMode,
) -> Result<GradientMap> {
    let Some(first) = windows.first() else {
        return Err(Error::validation("no windows to build a gradient map from"));
    };
    let channels = if pre.channel_subset.is_empty() {
        (0..first.data.nrows()).map(|i| format!("ch{i:02}")).collect()
    } else {
        pre.channel_subset.clone()
    };
    let mut source = PromptSimilarity::new(model, prompt);
    frequency_gradients_with(
        &mut source,
        windows,
        &channels,
        pre.target_rate_hz,
        prompt,
        mode,
    )
}
