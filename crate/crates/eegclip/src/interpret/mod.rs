//! Frequency-domain attribution: which frequencies drive a similarity.
//!
//! The input gradient of the cosine similarity between a window's
//! projection and one prompt's projection is pulled back onto the
//! window's real-DFT coefficients. Per-bin values are averaged across a
//! window set into a [`GradientMap`]; per-channel band sums feed
//! topographic display. The pullback differentiates through an exact
//! inverse-DFT reconstruction, so finite differences over coefficients
//! can check every map cell.

mod gradient;
mod map;
mod rdft;

pub use gradient::{
    frequency_gradients, frequency_gradients_with, LinearSimilarity, PromptSimilarity,
    SimilarityGradient,
};
pub use map::{gradient_map_csv, topographic_aggregate, GradientMap, GradientMode};
pub use rdft::{irdft, n_bins, Rdft};
