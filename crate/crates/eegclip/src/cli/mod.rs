//! Command-line surface: run configuration, the commands behind each
//! subcommand, and the SVG plot writer.
//!
//! The commands live here rather than in the binary so tests and other
//! programs can drive a whole experiment without spawning processes. One
//! master seed in the config governs every stochastic stage through
//! derived per-stage seeds, so any command can recompute another's
//! decisions, the split plan above all, instead of reading them from disk.

mod commands;
mod config;
mod plot;

pub use commands::{
    cmd_eval, cmd_export_embeddings, cmd_gradients, cmd_plot, cmd_synth, cmd_train, metrics_tsv,
    resolve_model_dir, Regime, CHECKPOINT_ROOT_VAR,
};
pub use config::{stage, RunConfig, TextEncoderChoice};
pub use plot::{line_plot_svg, Series};
