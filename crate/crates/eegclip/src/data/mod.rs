//! Dataset container format, manifests and the planted-structure synthetic
//! corpus used by the desk-scale test battery.
//!
//! A corpus on disk is a directory of signal containers (one per recording,
//! see [`container`]), UTF-8 report files, optional `.meta` sidecars for
//! age/gender, a tab-separated manifest listing the recordings, and an
//! optional `labels.tsv` carrying a per-recording class flag (the
//! normal/abnormal diagnosis for clinical corpora, the planted class for
//! synthetic ones).

pub mod container;
pub mod labels;
pub mod manifest;
pub mod synthetic;

pub use container::{read_array, read_recording, write_array, write_recording};
pub use labels::LabelTable;
pub use manifest::{load_manifest, write_manifest};
pub use synthetic::{
    generate_synthetic_corpus, write_synthetic_corpus, ClassSpec, SyntheticRecording,
    SyntheticSpec, STANDARD_CHANNELS,
};

use ndarray::Array2;
use std::path::PathBuf;

/// Official-split marker carried through the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitHint {
    Train,
    Eval,
}

impl SplitHint {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitHint::Train => "train",
            SplitHint::Eval => "eval",
        }
    }
}

/// One manifest entry: where a recording's files live.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordingRef {
    pub id: String,
    pub signal_path: PathBuf,
    pub report_path: PathBuf,
    pub split_hint: Option<SplitHint>,
}

/// Patient gender as declared in the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gender {
    M,
    F,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::M => "M",
            Gender::F => "F",
        }
    }

    pub fn parse(s: &str) -> Option<Gender> {
        match s.trim() {
            "M" | "m" => Some(Gender::M),
            "F" | "f" => Some(Gender::F),
            _ => None,
        }
    }
}

/// A fully loaded recording: the multichannel signal in microvolts plus the
/// metadata and report text that travel with it.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub id: String,
    /// `[channels × samples]`, microvolts.
    pub signal: Array2<f32>,
    pub rate_hz: f64,
    pub channel_names: Vec<String>,
    pub age_years: Option<u32>,
    pub gender: Option<Gender>,
    pub report_text: String,
}

impl Recording {
    pub fn n_channels(&self) -> usize {
        self.signal.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.signal.ncols()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.rate_hz
    }

    /// Checks the structural invariants: row count matches channel names,
    /// positive rate, and a finite signal.
    pub fn validate(&self) -> crate::Result<()> {
        if self.signal.nrows() != self.channel_names.len() {
            return Err(crate::Error::validation(format!(
                "recording {}: {} signal rows but {} channel names",
                self.id,
                self.signal.nrows(),
                self.channel_names.len()
            )));
        }
        if self.rate_hz.is_nan() || self.rate_hz <= 0.0 {
            return Err(crate::Error::validation(format!(
                "recording {}: rate_hz must be positive, got {}",
                self.id, self.rate_hz
            )));
        }
        if self.signal.iter().any(|v| !v.is_finite()) {
            return Err(crate::Error::validation(format!(
                "recording {}: signal contains NaN or Inf",
                self.id
            )));
        }
        Ok(())
    }
}
