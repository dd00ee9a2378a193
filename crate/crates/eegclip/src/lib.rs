//! Contrastive alignment of EEG windows with clinical-report text, plus the
//! evaluation battery that goes with it: frozen probes, zero-shot prompts,
//! few-shot label-budget sweeps, and frequency-domain gradient maps.
//!
//! The crate is organized as a pipeline:
//!
//! * [`data`] reads and writes recordings, manifests, and label tables, and
//!   can generate planted-structure synthetic corpora for end-to-end checks.
//! * [`report`] parses clinical reports into named sections and derives
//!   recording-level labels from them.
//! * [`signal`] preprocesses raw multichannel signals and cuts them into
//!   fixed-length windows.
//! * [`nn`] is a small reverse-mode neural-network toolkit (convolution,
//!   batch norm, pooling, linear layers, Adam).
//! * [`encoders`] builds the two towers: a convolutional EEG encoder and
//!   pluggable text encoders, each followed by a projection head.
//! * [`contrastive`] trains the towers with a symmetric InfoNCE objective.
//! * [`evaluation`] measures what the embeddings learned.
//! * [`interpret`] attributes similarity scores to input frequency bands.

pub mod cli;
pub mod config;
pub mod contrastive;
pub mod data;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod interpret;
pub mod nn;
pub mod report;
pub mod signal;
pub mod util;

pub use error::{Error, Result};
