//! The operations behind the command-line tool, callable as a library.
//!
//! Every command takes a [`RunConfig`] plus explicit directories and
//! returns the paths it wrote; nothing lands outside the given output
//! directory. Models train and load as `f32`. The split plan is never
//! persisted: it is recomputed from the config's derived seed, which by
//! construction yields the identical plan in every command.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::cli::config::{stage, RunConfig, TextEncoderChoice};
use crate::cli::plot::{line_plot_svg, Series};
use crate::contrastive::{train, TrainedModel};
use crate::data::{
    load_manifest, read_recording, write_synthetic_corpus, Gender, LabelTable, Recording,
};
use crate::encoders::{BagEmbedding, HashedBow, PrecomputedTextEncoder, TextTower};
use crate::error::{Error, Result};
use crate::evaluation::{
    derive_label_map, embed_corpus, few_shot_sweep, make_split_plan, probe_eval, run_baseline,
    sweep_curve_csv, sweep_records, zero_shot_eval, BaselineConfig, ProbeConfig, SplitPlan,
    TaskMetrics,
};
use crate::interpret::{frequency_gradients, gradient_map_csv, GradientMap, GradientMode};
use crate::report::LabelSet;
use crate::signal::{preprocess, window};

/// Name of the environment variable pointing at a directory of pretrained
/// checkpoints; `--model` arguments resolve against it as a fallback.
pub const CHECKPOINT_ROOT_VAR: &str = "EEGCLIP_CHECKPOINTS";

/// The four evaluation regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Probe,
    ZeroShot,
    FewShot,
    Baseline,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Probe => "probe",
            Regime::ZeroShot => "zero_shot",
            Regime::FewShot => "few_shot",
            Regime::Baseline => "baseline",
        }
    }

    pub fn parse(text: &str) -> Result<Regime> {
        match text {
            "probe" => Ok(Regime::Probe),
            "zero_shot" => Ok(Regime::ZeroShot),
            "few_shot" => Ok(Regime::FewShot),
            "baseline" => Ok(Regime::Baseline),
            other => Err(Error::Config(format!(
                "unknown regime {other:?}; expected probe, zero_shot, few_shot, or baseline"
            ))),
        }
    }
}

/// Resolves a model directory: taken as-is when it exists, otherwise
/// looked up under the checkpoint root from [`CHECKPOINT_ROOT_VAR`].
pub fn resolve_model_dir(arg: &Path) -> Result<PathBuf> {
    let root = std::env::var_os(CHECKPOINT_ROOT_VAR).map(PathBuf::from);
    resolve_model_dir_in(arg, root.as_deref())
}

fn resolve_model_dir_in(arg: &Path, root: Option<&Path>) -> Result<PathBuf> {
    if arg.is_dir() {
        return Ok(arg.to_path_buf());
    }
    if let Some(root) = root {
        let candidate = root.join(arg);
        if candidate.is_dir() {
            return Ok(candidate);
        }
    }
    Err(Error::io(
        arg,
        std::io::Error::new(std::io::ErrorKind::NotFound, "model directory not found"),
    ))
}

/// Generates the configured synthetic corpus under `out_dir` and returns
/// the manifest path.
pub fn cmd_synth(cfg: &RunConfig, out_dir: &Path) -> Result<PathBuf> {
    write_synthetic_corpus(&cfg.synth, out_dir)
}

/// Trains on the plan's contrastive split and saves the model plus its
/// training log under `out_dir/model`, returning that directory.
pub fn cmd_train(cfg: &RunConfig, out_dir: &Path) -> Result<PathBuf> {
    let (corpus, labels) = load_corpus(cfg)?;
    let plan = split_for(cfg, &corpus, &labels)?;
    let chosen: std::collections::HashSet<&str> =
        plan.contrastive_train.iter().map(|s| s.as_str()).collect();
    let subset: Vec<Recording> = corpus
        .iter()
        .filter(|r| chosen.contains(r.id.as_str()))
        .cloned()
        .collect();
    let tower = build_text_tower(cfg)?;
    let mut trained = train(
        &subset,
        &cfg.pre,
        &cfg.win,
        &cfg.sections,
        &cfg.eeg,
        tower,
        cfg.shared_dim,
        &cfg.contrastive,
    )?;
    let model_dir = out_dir.join("model");
    trained.save(&model_dir)?;
    Ok(model_dir)
}

/// Runs one evaluation regime against a saved model and writes its metric
/// tables under `out_dir`, returning every file written.
pub fn cmd_eval(
    cfg: &RunConfig,
    model_dir: &Path,
    regime: Regime,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let (corpus, labels) = load_corpus(cfg)?;
    let label_map = derive_label_map(&corpus, &labels);
    let plan = split_for(cfg, &corpus, &labels)?;
    let mut trained = TrainedModel::<f32>::load(model_dir)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut written = Vec::new();
    match regime {
        Regime::Probe => {
            let table = embed_corpus(
                &mut trained.model,
                &corpus,
                &label_map,
                &cfg.pre,
                &cfg.win,
                cfg.contrastive.batch_size,
            )?;
            let mut probe_cfg = ProbeConfig::new(cfg.probe_kind);
            probe_cfg.seed = cfg.stage_seed(stage::PROBE);
            let rows = per_task(cfg, |task| probe_eval(&table, task, &plan, &probe_cfg))?;
            written.push(write_text(
                &out_dir.join("metrics_probe.tsv"),
                &metrics_tsv(&rows),
            )?);
        }
        Regime::ZeroShot => {
            let prompts = cfg
                .zero_shot_prompts
                .as_ref()
                .map(|(a, b)| (a.as_str(), b.as_str()));
            let rows = per_task(cfg, |task| {
                zero_shot_eval(
                    &mut trained.model,
                    &corpus,
                    &label_map,
                    task,
                    &plan.eval,
                    prompts,
                    &cfg.pre,
                    &cfg.win,
                )
            })?;
            written.push(write_text(
                &out_dir.join("metrics_zero_shot.tsv"),
                &metrics_tsv(&rows),
            )?);
        }
        Regime::FewShot => {
            let table = embed_corpus(
                &mut trained.model,
                &corpus,
                &label_map,
                &cfg.pre,
                &cfg.win,
                cfg.contrastive.batch_size,
            )?;
            let base_seed = cfg.stage_seed(stage::FEWSHOT);
            let mut produced = false;
            for &task in &cfg.tasks {
                let points = match few_shot_sweep(
                    &table,
                    task,
                    &plan,
                    &cfg.fractions,
                    cfg.probe_kind,
                    cfg.n_eval_seeds,
                    base_seed,
                ) {
                    Ok(points) => points,
                    Err(err) => {
                        log::warn!("skipping task {}: {err}", task.as_str());
                        continue;
                    }
                };
                produced = true;
                let records = sweep_records(task, crate::evaluation::Method::EegClipProbe, &points);
                written.push(write_text(
                    &out_dir.join(format!("few_shot_records_{}.tsv", task.as_str())),
                    &records,
                )?);
                written.push(write_text(
                    &out_dir.join(format!("few_shot_curve_{}.csv", task.as_str())),
                    &sweep_curve_csv(&points),
                )?);
            }
            if !produced {
                return Err(Error::validation("every task failed; no metrics produced"));
            }
        }
        Regime::Baseline => {
            let base_cfg = BaselineConfig {
                epochs: cfg.contrastive.epochs,
                batch_size: cfg.contrastive.batch_size,
                lr: cfg.contrastive.lr,
                weight_decay: cfg.contrastive.weight_decay,
                seed: cfg.stage_seed(stage::BASELINE),
            };
            let rows = per_task(cfg, |task| {
                run_baseline::<f32>(
                    cfg.baseline_kind,
                    task,
                    cfg.baseline_alt_task,
                    &corpus,
                    &label_map,
                    &plan,
                    &cfg.pre,
                    &cfg.win,
                    &cfg.eeg,
                    &base_cfg,
                )
            })?;
            written.push(write_text(
                &out_dir.join("metrics_baseline.tsv"),
                &metrics_tsv(&rows),
            )?);
        }
    }
    Ok(written)
}

/// Averaged frequency-domain gradient map for `prompt` over the plan's
/// eval recordings; writes a CSV and an SVG plot under `out_dir`.
pub fn cmd_gradients(
    cfg: &RunConfig,
    model_dir: &Path,
    prompt: &str,
    mode: GradientMode,
    out_dir: &Path,
) -> Result<(PathBuf, PathBuf)> {
    let (corpus, labels) = load_corpus(cfg)?;
    let plan = split_for(cfg, &corpus, &labels)?;
    let eval_ids: std::collections::HashSet<&str> =
        plan.eval.iter().map(|s| s.as_str()).collect();
    let eval_corpus: Vec<&Recording> = corpus
        .iter()
        .filter(|r| eval_ids.contains(r.id.as_str()))
        .collect();
    let mut windows = Vec::new();
    for recording in &eval_corpus {
        let clean = preprocess(recording, &cfg.pre)?;
        windows.extend(window(&clean, &cfg.win)?);
    }

    let mut trained = TrainedModel::<f32>::load(model_dir)?;
    let map = frequency_gradients(&mut trained.model, &windows, &cfg.pre, prompt, mode)?;

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv_path = write_text(&out_dir.join("gradients.csv"), &gradient_map_csv(&map))?;
    let svg_path = write_text(&out_dir.join("gradients.svg"), &gradient_plot(&map)?)?;
    Ok((csv_path, svg_path))
}

/// Writes every window's shared-space projection with its labels as CSV
/// under `out_dir` and returns the file path.
pub fn cmd_export_embeddings(
    cfg: &RunConfig,
    model_dir: &Path,
    out_dir: &Path,
) -> Result<PathBuf> {
    let (corpus, labels) = load_corpus(cfg)?;
    let label_map = derive_label_map(&corpus, &labels);
    let mut trained = TrainedModel::<f32>::load(model_dir)?;

    let mut meta: Vec<(String, usize, LabelSet)> = Vec::new();
    let mut mats: Vec<Array2<f32>> = Vec::new();
    for recording in &corpus {
        let clean = preprocess(recording, &cfg.pre)?;
        let label_set = label_map.get(&recording.id).copied().unwrap_or_default();
        for w in window(&clean, &cfg.win)? {
            meta.push((recording.id.clone(), w.start_sample, label_set));
            mats.push(w.data);
        }
    }

    let dim = trained.model.shared_dim();
    let mut csv = String::from("recording_id,window_start");
    for i in 0..dim {
        csv.push_str(&format!(",e{i:02}"));
    }
    csv.push_str(",pathological,age_over_50,gender,medication\n");

    // Eval mode ignores the generator; a fixed one keeps the call honest.
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let batch = cfg.contrastive.batch_size;
    for (chunk_idx, chunk) in mats.chunks(batch).enumerate() {
        let (c, t) = chunk[0].dim();
        let mut x = Array3::<f32>::zeros((chunk.len(), c, t));
        for (row, w) in chunk.iter().enumerate() {
            x.index_axis_mut(ndarray::Axis(0), row).assign(w);
        }
        let z = trained.model.encode_windows(&x, crate::nn::Mode::Eval, &mut rng)?;
        for row in 0..chunk.len() {
            let (id, start, label_set) = &meta[chunk_idx * batch + row];
            csv.push_str(&format!("{id},{start}"));
            for v in z.row(row) {
                csv.push_str(&format!(",{:?}", *v as f64));
            }
            csv.push_str(&format!(
                ",{},{},{},{}\n",
                flag_cell(label_set.pathological),
                flag_cell(label_set.age_over_50),
                label_set.gender.map(Gender::as_str).unwrap_or(""),
                flag_cell(label_set.medication_positive),
            ));
        }
    }

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_text(&out_dir.join("embeddings.csv"), &csv)
}

/// Re-renders a CSV written by `cmd_eval` or `cmd_gradients` as an SVG
/// next to nothing else: the plot lands under `out_dir` named after the
/// input file.
pub fn cmd_plot(csv_path: &Path, out_dir: &Path) -> Result<PathBuf> {
    let text = std::fs::read_to_string(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let header = text.lines().next().unwrap_or("");
    let svg = if header == "channel,freq_hz,magnitude" {
        gradient_csv_plot(&text, csv_path)?
    } else if header == "fraction,n_train,median,p10,p90" {
        sweep_csv_plot(&text, csv_path)?
    } else {
        return Err(Error::Config(format!(
            "{}: unrecognized csv header {header:?}",
            csv_path.display()
        )));
    };
    let stem = csv_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("plot");
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_text(&out_dir.join(format!("{stem}.svg")), &svg)
}

fn load_corpus(cfg: &RunConfig) -> Result<(Vec<Recording>, LabelTable)> {
    let manifest = cfg
        .manifest
        .as_deref()
        .ok_or_else(|| Error::Config("data.manifest is not set".into()))?;
    let refs = load_manifest(manifest)?;
    let corpus: Vec<Recording> = refs.iter().map(read_recording).collect::<Result<_>>()?;
    if corpus.is_empty() {
        return Err(Error::validation(format!(
            "{}: manifest lists no recordings",
            manifest.display()
        )));
    }
    let labels = match cfg.labels_path() {
        Some(path) if path.is_file() => LabelTable::load(&path)?,
        _ => LabelTable::new(),
    };
    Ok((corpus, labels))
}

fn split_for(cfg: &RunConfig, corpus: &[Recording], labels: &LabelTable) -> Result<SplitPlan> {
    let ids: Vec<(String, Option<bool>)> = corpus
        .iter()
        .map(|r| (r.id.clone(), labels.flag(&r.id)))
        .collect();
    make_split_plan(&ids, cfg.split_mode, &cfg.fractions, cfg.stage_seed(stage::SPLIT))
}

fn build_text_tower(cfg: &RunConfig) -> Result<TextTower<f32>> {
    Ok(match &cfg.text {
        TextEncoderChoice::HashedBow { dim, max_tokens } => TextTower::frozen(Box::new(
            HashedBow::new(*dim, *max_tokens, cfg.stage_seed(stage::TEXT)),
        )),
        TextEncoderChoice::Precomputed { table } => {
            TextTower::frozen(Box::new(PrecomputedTextEncoder::load(table)?))
        }
        TextEncoderChoice::Bag {
            buckets,
            dim,
            max_tokens,
        } => {
            let seed = cfg.stage_seed(stage::TEXT);
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            TextTower::bag(BagEmbedding::new(*buckets, *dim, *max_tokens, seed, &mut rng))
        }
    })
}

/// Runs `eval` for every configured task. A failing task is skipped with a
/// warning so one degenerate label set cannot void the rest; all tasks
/// failing is an error.
fn per_task(
    cfg: &RunConfig,
    mut eval: impl FnMut(crate::report::Task) -> Result<TaskMetrics>,
) -> Result<Vec<TaskMetrics>> {
    let mut rows = Vec::new();
    for &task in &cfg.tasks {
        match eval(task) {
            Ok(metrics) => rows.push(metrics),
            Err(err) => log::warn!("skipping task {}: {err}", task.as_str()),
        }
    }
    if rows.is_empty() {
        return Err(Error::validation("every task failed; no metrics produced"));
    }
    Ok(rows)
}

/// Metric rows as TSV; floats keep full precision.
pub fn metrics_tsv(rows: &[TaskMetrics]) -> String {
    let mut out = String::from("task\tmethod\tbalanced_accuracy\tn_eval\tci80_lo\tci80_hi\n");
    for m in rows {
        let (lo, hi) = match m.ci80 {
            Some((lo, hi)) => (format!("{lo:?}"), format!("{hi:?}")),
            None => (String::new(), String::new()),
        };
        out.push_str(&format!(
            "{}\t{}\t{:?}\t{}\t{}\t{}\n",
            m.task.as_str(),
            m.method.as_str(),
            m.balanced_accuracy,
            m.n_eval,
            lo,
            hi
        ));
    }
    out
}

fn flag_cell(v: Option<bool>) -> &'static str {
    match v {
        Some(true) => "1",
        Some(false) => "0",
        None => "",
    }
}

fn write_text(path: &Path, content: &str) -> Result<PathBuf> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, content).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

fn gradient_plot(map: &GradientMap) -> Result<String> {
    let series: Vec<Series> = map
        .channels
        .iter()
        .enumerate()
        .map(|(c, name)| Series {
            name: name.clone(),
            points: map
                .freq_axis_hz
                .iter()
                .enumerate()
                .map(|(k, &f)| (f, map.magnitudes[[c, k]]))
                .collect(),
        })
        .collect();
    line_plot_svg(
        &format!("gradient spectrum: {}", map.prompt),
        "frequency (Hz)",
        "mean gradient magnitude",
        &series,
    )
}

fn gradient_csv_plot(text: &str, path: &Path) -> Result<String> {
    let mut by_channel: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        let [channel, freq, mag] = parts.as_slice() else {
            return Err(Error::parse(path, idx + 1, "expected 3 columns"));
        };
        let point = (
            parse_cell(freq, path, idx + 1)?,
            parse_cell(mag, path, idx + 1)?,
        );
        match by_channel.iter_mut().find(|(name, _)| name == channel) {
            Some((_, pts)) => pts.push(point),
            None => by_channel.push((channel.to_string(), vec![point])),
        }
    }
    let series: Vec<Series> = by_channel
        .into_iter()
        .map(|(name, points)| Series { name, points })
        .collect();
    line_plot_svg("gradient spectrum", "frequency (Hz)", "mean gradient magnitude", &series)
}

fn sweep_csv_plot(text: &str, path: &Path) -> Result<String> {
    let mut median = Vec::new();
    let mut p10 = Vec::new();
    let mut p90 = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        let [_, n_train, med, lo, hi] = parts.as_slice() else {
            return Err(Error::parse(path, idx + 1, "expected 5 columns"));
        };
        // Missing cells serialize as empty fields.
        if med.is_empty() {
            continue;
        }
        let x = parse_cell(n_train, path, idx + 1)?;
        median.push((x, parse_cell(med, path, idx + 1)?));
        p10.push((x, parse_cell(lo, path, idx + 1)?));
        p90.push((x, parse_cell(hi, path, idx + 1)?));
    }
    let series = vec![
        Series { name: "median".into(), points: median },
        Series { name: "p10".into(), points: p10 },
        Series { name: "p90".into(), points: p90 },
    ];
    line_plot_svg(
        "few-shot balanced accuracy",
        "training recordings",
        "balanced accuracy",
        &series,
    )
}

fn parse_cell(raw: &str, path: &Path, line: usize) -> Result<f64> {
    raw.parse()
        .map_err(|_| Error::parse(path, line, format!("cannot parse {raw:?} as a number")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::Method;
    use crate::report::Task;

    #[test]
    fn regimes_parse_their_canonical_names_only() {
        for r in [Regime::Probe, Regime::ZeroShot, Regime::FewShot, Regime::Baseline] {
            assert_eq!(Regime::parse(r.as_str()).unwrap(), r);
        }
        assert!(Regime::parse("zeroshot").is_err());
        assert!(Regime::parse("").is_err());
    }

    #[test]
    fn metrics_rows_serialize_with_full_precision() {
        let rows = vec![
            TaskMetrics {
                task: Task::Pathological,
                method: Method::EegClipProbe,
                balanced_accuracy: 0.8471,
                n_eval: 50,
                ci80: Some((0.8, 0.9)),
            },
            TaskMetrics {
                task: Task::Age,
                method: Method::ZeroShot,
                balanced_accuracy: 0.5,
                n_eval: 10,
                ci80: None,
            },
        ];
        let tsv = metrics_tsv(&rows);
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "task\tmethod\tbalanced_accuracy\tn_eval\tci80_lo\tci80_hi");
        assert_eq!(lines[1], "pathological\teegclip_probe\t0.8471\t50\t0.8\t0.9");
        assert_eq!(lines[2], "age\tzero_shot\t0.5\t10\t\t");
    }

    #[test]
    fn model_dir_resolution_prefers_the_literal_path() {
        let dir = tempfile::tempdir().unwrap();
        let local = dir.path().join("model");
        std::fs::create_dir(&local).unwrap();
        let root = dir.path().join("checkpoints");
        std::fs::create_dir_all(root.join("model")).unwrap();

        assert_eq!(resolve_model_dir_in(&local, Some(&root)).unwrap(), local);
        assert_eq!(
            resolve_model_dir_in(Path::new("model"), Some(&root)).unwrap(),
            root.join("model")
        );
        assert!(resolve_model_dir_in(Path::new("missing"), Some(&root)).is_err());
        assert!(resolve_model_dir_in(Path::new("missing"), None).is_err());
    }

    #[test]
    fn plot_command_dispatches_on_the_header() {
        let dir = tempfile::tempdir().unwrap();
        let grad = dir.path().join("gradients.csv");
        std::fs::write(
            &grad,
            "channel,freq_hz,magnitude\nT3,0,0.5\nT3,1,0.25\nT5,0,0.1\nT5,1,0.2\n",
        )
        .unwrap();
        let svg = cmd_plot(&grad, dir.path()).unwrap();
        assert_eq!(svg, dir.path().join("gradients.svg"));
        let text = std::fs::read_to_string(&svg).unwrap();
        assert_eq!(text.matches("<polyline").count(), 2);

        let curve = dir.path().join("few_shot_curve_pathological.csv");
        std::fs::write(
            &curve,
            "fraction,n_train,median,p10,p90\n1/2,40,0.9,0.85,0.95\n1/10,8,0.7,0.6,0.8\n",
        )
        .unwrap();
        let svg = cmd_plot(&curve, dir.path()).unwrap();
        let text = std::fs::read_to_string(&svg).unwrap();
        assert_eq!(text.matches("<polyline").count(), 3);

        let junk = dir.path().join("junk.csv");
        std::fs::write(&junk, "a,b\n1,2\n").unwrap();
        assert!(matches!(cmd_plot(&junk, dir.path()), Err(Error::Config(_))));
    }

    #[test]
    fn empty_flag_cells_mark_missing_labels() {
        assert_eq!(flag_cell(Some(true)), "1");
        assert_eq!(flag_cell(Some(false)), "0");
        assert_eq!(flag_cell(None), "");
    }
}
