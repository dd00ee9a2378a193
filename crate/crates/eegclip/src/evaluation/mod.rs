//! The evaluation battery: split planning, frozen-probe classification,
//! zero-shot prototype classification, supervised baselines, and few-shot
//! sweeps, all reporting balanced accuracy.
//!
//! Three rules hold everywhere. Splits assign whole recordings, so no
//! recording straddles a boundary. Reported metrics are recording-level:
//! window outputs are averaged per recording before the class decision.
//! And nothing on an evaluation path may move encoder weights; probes see
//! only a precomputed embedding table, which makes that a property of the
//! types rather than a convention.

mod baseline;
mod embed;
mod metrics;
mod probe;
mod split;
mod sweep;
mod zero_shot;

pub use baseline::{run_baseline, BaselineConfig, BaselineKind, SupervisedNet};
pub use embed::{derive_label_map, embed_corpus, EmbeddingTable, WindowEmbedding};
pub use metrics::{balanced_accuracy, Method, TaskMetrics};
pub use probe::{
    fit_probe, fit_probe_with, probe_eval, probe_eval_on_ids, score_probe, Probe, ProbeConfig,
    ProbeKind,
};
pub use split::{
    make_split_plan, standard_plan_from_sets, Fraction, SplitMode, SplitPlan, DEFAULT_FRACTIONS,
};
pub use sweep::{few_shot_sweep, sweep_curve_csv, sweep_records, FewShotPoint};
pub use zero_shot::{
    zero_shot_classify, zero_shot_eval, zero_shot_score, zero_shot_with_prompts,
};
