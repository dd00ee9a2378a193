//! Zero-shot classification by prompt prototypes.
//!
//! Each class is represented by the text-head projection of one describing
//! sentence. A recording's score is the mean over its windows of the
//! similarity margin between the two prototypes; no task-specific training
//! happens anywhere on this path.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::contrastive::EegClipModel;
use crate::data::Recording;
use crate::evaluation::embed::stack_windows;
use crate::evaluation::metrics::{balanced_accuracy, Method, TaskMetrics};
use crate::nn::{Float, Mode};
use crate::report::{build_prompts, LabelSet, Task};
use crate::signal::{preprocess, window, PreprocessConfig, WindowConfig};
use crate::{Error, Result};

/// Mean margin of class-b over class-a similarity. Permutation-invariant in
/// the windows; adding one constant to every similarity cancels out.
pub fn zero_shot_score(sim_a: &[f64], sim_b: &[f64]) -> f64 {
    debug_assert_eq!(sim_a.len(), sim_b.len());
    let n = sim_a.len().max(1) as f64;
    sim_a
        .iter()
        .zip(sim_b)
        .map(|(a, b)| b - a)
        .sum::<f64>()
        / n
}

/// Classifies one recording against an explicit prompt pair. Returns the
/// chosen class (`false` for prompt A, `true` for prompt B) and the score;
/// class B wins only on a strictly positive score, so ties fall to A.
pub fn zero_shot_with_prompts<F: Float>(
    model: &mut EegClipModel<F>,
    recording: &Recording,
    prompt_a: &str,
    prompt_b: &str,
    pre: &PreprocessConfig,
    win: &WindowConfig,
) -> Result<(bool, f64)> {
    let clean = preprocess(recording, pre)?;
    let windows = window(&clean, win)?;
    let mats: Vec<_> = windows.into_iter().map(|w| w.data).collect();
    let x = stack_windows::<F>(&mats);
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let z = model.encode_windows(&x, Mode::Eval, &mut rng)?;
    let prototypes = model.encode_texts(&[prompt_a, prompt_b], Mode::Eval);

    let mut sim_a = Vec::with_capacity(z.nrows());
    let mut sim_b = Vec::with_capacity(z.nrows());
    for row in z.rows() {
        let mut a = 0.0;
        let mut b = 0.0;
        for (j, v) in row.iter().enumerate() {
            a += v.as_f64() * prototypes[[0, j]].as_f64();
            b += v.as_f64() * prototypes[[1, j]].as_f64();
        }
        sim_a.push(a);
        sim_b.push(b);
    }
    let score = zero_shot_score(&sim_a, &sim_b);
    Ok((score > 0.0, score))
}

/// Classifies one recording with the task's canonical prompt pair.
pub fn zero_shot_classify<F: Float>(
    model: &mut EegClipModel<F>,
    recording: &Recording,
    task: Task,
    pre: &PreprocessConfig,
    win: &WindowConfig,
) -> Result<(bool, f64)> {
    let (a, b) = build_prompts(task);
    zero_shot_with_prompts(model, recording, a, b, pre, win)
}

/// Balanced accuracy of zero-shot decisions over `eval_ids`. Recordings
/// without the task's label are skipped; prompts default to the task's
/// canonical pair unless overridden.
#[allow(clippy::too_many_arguments)]
pub fn zero_shot_eval<F: Float>(
    model: &mut EegClipModel<F>,
    corpus: &[Recording],
    labels: &HashMap<String, LabelSet>,
    task: Task,
    eval_ids: &[String],
    prompts: Option<(&str, &str)>,
    pre: &PreprocessConfig,
    win: &WindowConfig,
) -> Result<TaskMetrics> {
    let by_id: HashMap<&str, &Recording> = corpus.iter().map(|r| (r.id.as_str(), r)).collect();
    let (prompt_a, prompt_b) = prompts.unwrap_or_else(|| build_prompts(task));
    let mut predictions = Vec::new();
    let mut truth = Vec::new();
    for id in eval_ids {
        let recording = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::validation(format!("eval id {id} not in the corpus")))?;
        let Some(label) = labels.get(id).and_then(|l| l.class(task)) else {
            continue;
        };
        let (class, _) =
            zero_shot_with_prompts(model, recording, prompt_a, prompt_b, pre, win)?;
        predictions.push(class);
        truth.push(label);
    }
    if truth.is_empty() {
        return Err(Error::validation(format!(
            "no {} labels among the evaluation ids",
            task.as_str()
        )));
    }
    Ok(TaskMetrics {
        task,
        method: Method::ZeroShot,
        balanced_accuracy: balanced_accuracy(&predictions, &truth)?,
        n_eval: truth.len(),
        ci80: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrastive::model::tests::tiny_model;
    use rand::seq::SliceRandom;
    use rand::Rng;

    #[test]
    fn score_is_the_mean_margin() {
        let sim_a = [0.1, 0.2, 0.3];
        let sim_b = [0.4, 0.1, 0.6];
        let want = ((0.4 - 0.1) + (0.1 - 0.2) + (0.6 - 0.3)) / 3.0;
        assert!((zero_shot_score(&sim_a, &sim_b) - want).abs() < 1e-15);
    }

    #[test]
    fn score_invariances() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let sim_a: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sim_b: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let base = zero_shot_score(&sim_a, &sim_b);

        // Window order: permuting both the same way changes nothing.
        let mut order: Vec<usize> = (0..20).collect();
        order.shuffle(&mut rng);
        let pa: Vec<f64> = order.iter().map(|&i| sim_a[i]).collect();
        let pb: Vec<f64> = order.iter().map(|&i| sim_b[i]).collect();
        assert_eq!(zero_shot_score(&pa, &pb), base);

        // A common additive shift cancels exactly.
        let sa: Vec<f64> = sim_a.iter().map(|v| v + 7.5).collect();
        let sb: Vec<f64> = sim_b.iter().map(|v| v + 7.5).collect();
        assert!((zero_shot_score(&sa, &sb) - base).abs() < 1e-9);

        // A positive rescale preserves the sign, hence the decision.
        let ra: Vec<f64> = sim_a.iter().map(|v| v * 3.0).collect();
        let rb: Vec<f64> = sim_b.iter().map(|v| v * 3.0).collect();
        assert_eq!(zero_shot_score(&ra, &rb) > 0.0, base > 0.0);
    }

    #[test]
    fn equal_prototypes_tie_toward_class_a() {
        let mut model = tiny_model::<f32>(5);
        let spec = crate::data::synthetic::tests::two_class_spec(2, 3);
        let corpus = crate::data::synthetic::generate_synthetic_corpus(&spec).unwrap();
        let pre = PreprocessConfig {
            channel_subset: vec!["CH01".into(), "CH02".into()],
            skip_s: 0.0,
            keep_s: 10.0,
            clip_uv: 800.0,
            target_rate_hz: 100.0,
            scale_divisor: 30.0,
        };
        let win = WindowConfig {
            length_samples: 64,
            stride_samples: 64,
        };
        // The same text twice gives identical prototypes: score exactly 0.
        let (class, score) = zero_shot_with_prompts(
            &mut model,
            &corpus[0].recording,
            "same words",
            "same words",
            &pre,
            &win,
        )
        .unwrap();
        assert_eq!(score, 0.0);
        assert!(!class, "ties must fall to class a");
    }

    #[test]
    fn canonical_prompts_reach_the_text_tower() {
        // The pathological pair must embed exactly the fixed prompt strings;
        // a precomputed encoder covering only those strings proves it.
        use crate::encoders::{PrecomputedTextEncoder, TextTower};
        let (a, b) = build_prompts(Task::Pathological);
        // 8-d features keep the head's hidden layers wide enough that the
        // random init cannot silence every ReLU unit for either prompt.
        let entries = vec![
            (
                a.to_string(),
                vec![1.0, -0.5, 0.25, 0.7, -0.9, 0.4, 0.6, -0.2],
            ),
            (
                b.to_string(),
                vec![-0.3, 1.0, -0.8, 0.1, 0.5, -0.6, 0.2, 0.9],
            ),
        ];
        let enc = PrecomputedTextEncoder::from_entries(&entries).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mut model = EegClipModel::<f64>::new(
            crate::contrastive::model::tests::tiny_eeg_cfg(),
            TextTower::frozen(Box::new(enc)),
            4,
            0.07,
            true,
            &mut rng,
        )
        .unwrap();
        let spec = crate::data::synthetic::tests::two_class_spec(2, 3);
        let corpus = crate::data::synthetic::generate_synthetic_corpus(&spec).unwrap();
        let pre = PreprocessConfig {
            channel_subset: vec!["CH01".into(), "CH02".into()],
            skip_s: 0.0,
            keep_s: 10.0,
            clip_uv: 800.0,
            target_rate_hz: 100.0,
            scale_divisor: 30.0,
        };
        let win = WindowConfig {
            length_samples: 64,
            stride_samples: 64,
        };
        // The task entry point scores identically to passing the canonical
        // strings by hand, so exactly those strings get embedded.
        let by_task =
            zero_shot_classify(&mut model, &corpus[0].recording, Task::Pathological, &pre, &win)
                .unwrap();
        let by_hand =
            zero_shot_with_prompts(&mut model, &corpus[0].recording, a, b, &pre, &win).unwrap();
        assert_eq!(by_task, by_hand);
        // A different prompt misses the table (embedding as zeros), which
        // moves the score: the exact strings are load-bearing.
        let (_, other) = zero_shot_with_prompts(
            &mut model,
            &corpus[0].recording,
            "not a known prompt",
            b,
            &pre,
            &win,
        )
        .unwrap();
        assert_ne!(other, by_hand.1);
    }
}
