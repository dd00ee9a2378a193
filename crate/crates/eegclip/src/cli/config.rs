//! Run configuration: one INI file describing a whole experiment.
//!
//! A single `seed` key governs every stochastic stage; each stage derives
//! its own seed from it by stable hashing, so two runs from the same file
//! agree stage by stage while no two stages share a stream.

use std::path::{Path, PathBuf};

use crate::config::Ini;
use crate::contrastive::ContrastiveConfig;
use crate::data::{ClassSpec, SyntheticSpec};
use crate::encoders::Deep4Config;
use crate::error::{Error, Result};
use crate::evaluation::{BaselineKind, Fraction, ProbeKind, SplitMode, DEFAULT_FRACTIONS};
use crate::report::{SectionName, SectionSelection, Task};
use crate::signal::{PreprocessConfig, WindowConfig};
use crate::util::derive_seed;

/// Which text encoder the run builds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TextEncoderChoice {
    /// Seed-hashed bag of words; no pretrained weights, fully offline.
    HashedBow { dim: usize, max_tokens: usize },
    /// Embeddings read from a `text\tvalues` table produced elsewhere.
    Precomputed { table: PathBuf },
    /// Trainable bucket-embedding bag.
    Bag {
        buckets: usize,
        dim: usize,
        max_tokens: usize,
    },
}

/// Everything a command needs, resolved from one file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Master seed; all stage seeds derive from it.
    pub seed: u64,
    /// Zeroes wall-clock fields in logs so reruns are byte-identical.
    pub deterministic: bool,
    pub manifest: Option<PathBuf>,
    /// Pathology-flag table; defaults to `labels.tsv` beside the manifest.
    pub labels: Option<PathBuf>,
    /// Fully resolved corpus recipe, seed already derived.
    pub synth: SyntheticSpec,
    pub pre: PreprocessConfig,
    pub win: WindowConfig,
    pub sections: SectionSelection,
    pub eeg: Deep4Config,
    pub text: TextEncoderChoice,
    /// Training hyperparameters, seed already derived.
    pub contrastive: ContrastiveConfig,
    pub shared_dim: usize,
    pub split_mode: SplitMode,
    pub fractions: Vec<Fraction>,
    pub tasks: Vec<Task>,
    pub probe_kind: ProbeKind,
    /// Seeds per few-shot cell and per baseline repeat.
    pub n_eval_seeds: usize,
    pub baseline_kind: BaselineKind,
    /// Pretraining task for the alternative-task baseline.
    pub baseline_alt_task: Option<Task>,
    /// Overrides the built-in prompt pair for every zero-shot task when set.
    pub zero_shot_prompts: Option<(String, String)>,
}

/// Stage labels for seed derivation; one per stochastic stage.
pub mod stage {
    pub const SYNTH: &str = "synth";
    pub const TEXT: &str = "text";
    pub const SPLIT: &str = "split";
    pub const TRAIN: &str = "train";
    pub const PROBE: &str = "probe";
    pub const FEWSHOT: &str = "fewshot";
    pub const BASELINE: &str = "baseline";
}

impl RunConfig {
    /// The stage seed for `label`; see [`stage`] for the fixed labels.
    pub fn stage_seed(&self, label: &str) -> u64 {
        derive_seed(self.seed, label)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        Self::from_ini(&Ini::from_file(path)?)
    }

    pub fn parse(text: &str, origin: &str) -> Result<RunConfig> {
        Self::from_ini(&Ini::parse(text, origin)?)
    }

    /// Resolves the labels path: explicit key, else `labels.tsv` next to
    /// the manifest, else `None`.
    pub fn labels_path(&self) -> Option<PathBuf> {
        if self.labels.is_some() {
            return self.labels.clone();
        }
        let manifest = self.manifest.as_deref()?;
        Some(manifest.parent().unwrap_or(Path::new(".")).join("labels.tsv"))
    }

    fn from_ini(ini: &Ini) -> Result<RunConfig> {
        ini.expect_sections(&[
            "run",
            "data",
            "synthetic",
            "preprocess",
            "window",
            "report",
            "encoder",
            "text",
            "contrastive",
            "split",
            "eval",
        ])?;

        let run = ini.section("run");
        run.expect_keys(&["seed", "deterministic"])?;
        let seed: u64 = run.parse_or("seed", 0)?;
        let deterministic: bool = run.parse_or("deterministic", false)?;

        let data = ini.section("data");
        data.expect_keys(&["manifest", "labels"])?;
        let manifest = data.get("manifest").map(PathBuf::from);
        let labels = data.get("labels").map(PathBuf::from);

        let synth = read_synth(ini, seed)?;
        let pre = read_preprocess(ini)?;
        let win = read_window(ini)?;
        let sections = read_sections(ini)?;
        let eeg = read_encoder(ini)?;
        let text = read_text(ini)?;
        let (contrastive, shared_dim) = read_contrastive(ini, seed, deterministic)?;
        let (split_mode, fractions) = read_split(ini)?;

        let eval = ini.section("eval");
        eval.expect_keys(&[
            "tasks",
            "probe",
            "n_seeds",
            "baseline",
            "alt_task",
            "prompt_a",
            "prompt_b",
        ])?;
        let tasks = match eval.get("tasks") {
            None => Task::ALL.to_vec(),
            Some(raw) => parse_names(raw, "eval.tasks", Task::parse)?,
        };
        let probe_kind = match eval.get("probe") {
            None => ProbeKind::LogReg,
            Some(raw) => ProbeKind::parse(raw)?,
        };
        let n_eval_seeds: usize = eval.parse_or("n_seeds", 10)?;
        if n_eval_seeds == 0 {
            return Err(Error::Config("eval.n_seeds must be positive".into()));
        }
        let baseline_kind = match eval.get("baseline") {
            None => BaselineKind::TaskSpecific,
            Some(raw) => BaselineKind::parse(raw)?,
        };
        let baseline_alt_task = match eval.get("alt_task") {
            None => None,
            Some(raw) => Some(Task::parse(raw)?),
        };
        if baseline_kind == BaselineKind::AlternativeTask && baseline_alt_task.is_none() {
            return Err(Error::Config(
                "eval.baseline = alternative_task needs eval.alt_task".into(),
            ));
        }
        let zero_shot_prompts = match (eval.get("prompt_a"), eval.get("prompt_b")) {
            (Some(a), Some(b)) => Some((a.to_string(), b.to_string())),
            (None, None) => None,
            _ => {
                return Err(Error::Config(
                    "eval.prompt_a and eval.prompt_b must be set together".into(),
                ))
            }
        };

        let cfg = RunConfig {
            seed,
            deterministic,
            manifest,
            labels,
            synth,
            pre,
            win,
            sections,
            eeg,
            text,
            contrastive,
            shared_dim,
            split_mode,
            fractions,
            tasks,
            probe_kind,
            n_eval_seeds,
            baseline_kind,
            baseline_alt_task,
            zero_shot_prompts,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.pre.validate()?;
        self.win.validate()?;
        self.sections.validate()?;
        self.eeg.validate()?;
        self.contrastive.validate()?;
        if self.shared_dim == 0 {
            return Err(Error::Config("contrastive.shared_dim must be positive".into()));
        }
        if self.tasks.is_empty() {
            return Err(Error::Config("eval.tasks must be nonempty".into()));
        }
        if self.fractions.is_empty() {
            return Err(Error::Config("split.fractions must be nonempty".into()));
        }
        match &self.text {
            TextEncoderChoice::HashedBow { dim, .. } if *dim == 0 => {
                Err(Error::Config("text.dim must be positive".into()))
            }
            TextEncoderChoice::Bag { buckets, dim, .. } if *buckets == 0 || *dim == 0 => {
                Err(Error::Config("text.buckets and text.dim must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

impl Default for RunConfig {
    /// The all-defaults configuration, equal to `parse("")`.
    fn default() -> Self {
        RunConfig::parse("", "<default>").expect("empty config must resolve")
    }
}

fn parse_names<T>(raw: &str, context: &str, parse: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    let items: Vec<T> = raw
        .split(',')
        .map(|item| parse(item.trim()))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("{context} must be nonempty")));
    }
    Ok(items)
}

fn read_synth(ini: &Ini, master_seed: u64) -> Result<SyntheticSpec> {
    let sec = ini.section("synthetic");
    sec.expect_keys(&[
        "n_recordings",
        "n_channels",
        "rate_hz",
        "duration_s",
        "noise_sigma",
        "amplitude_uv",
        "class_names",
        "class_hz",
        "tone_channels",
    ])?;
    let names: Vec<String> = match sec.get("class_names") {
        None => vec!["slow".into(), "fast".into()],
        Some(raw) => parse_names(raw, "synthetic.class_names", |s| Ok(s.to_string()))?,
    };
    let hz: Vec<f64> = match sec.get("class_hz") {
        None => vec![6.0, 20.0],
        Some(_) => sec.parse_list("class_hz")?,
    };
    if names.len() != hz.len() {
        return Err(Error::Config(format!(
            "synthetic.class_names lists {} classes but class_hz lists {}",
            names.len(),
            hz.len()
        )));
    }
    let amplitude_uv: f64 = sec.parse_or("amplitude_uv", 40.0)?;
    let classes = names
        .into_iter()
        .zip(hz)
        .map(|(name, center_hz)| ClassSpec {
            template: format!("prominent rhythmic {name} activity at {center_hz} hertz."),
            name,
            center_hz,
            amplitude_uv,
        })
        .collect();
    let tone_channels = match sec.get("tone_channels") {
        None => None,
        Some(_) => Some(sec.parse_list("tone_channels")?),
    };
    Ok(SyntheticSpec {
        n_recordings: sec.parse_or("n_recordings", 200)?,
        n_channels: sec.parse_or("n_channels", 4)?,
        rate_hz: sec.parse_or("rate_hz", 100.0)?,
        duration_s: sec.parse_or("duration_s", 10.0)?,
        classes,
        noise_sigma: sec.parse_or("noise_sigma", 10.0)?,
        seed: derive_seed(master_seed, stage::SYNTH),
        tone_channels,
    })
}

fn read_preprocess(ini: &Ini) -> Result<PreprocessConfig> {
    let sec = ini.section("preprocess");
    sec.expect_keys(&[
        "channels",
        "skip_s",
        "keep_s",
        "clip_uv",
        "target_rate_hz",
        "scale_divisor",
    ])?;
    let defaults = PreprocessConfig::default();
    let channel_subset = match sec.get("channels") {
        None => defaults.channel_subset,
        Some(raw) => parse_names(raw, "preprocess.channels", |s| Ok(s.to_string()))?,
    };
    Ok(PreprocessConfig {
        channel_subset,
        skip_s: sec.parse_or("skip_s", defaults.skip_s)?,
        keep_s: sec.parse_or("keep_s", defaults.keep_s)?,
        clip_uv: sec.parse_or("clip_uv", defaults.clip_uv)?,
        target_rate_hz: sec.parse_or("target_rate_hz", defaults.target_rate_hz)?,
        scale_divisor: sec.parse_or("scale_divisor", defaults.scale_divisor)?,
    })
}

fn read_window(ini: &Ini) -> Result<WindowConfig> {
    let sec = ini.section("window");
    sec.expect_keys(&["length_samples", "stride_samples"])?;
    let defaults = WindowConfig::default();
    Ok(WindowConfig {
        length_samples: sec.parse_or("length_samples", defaults.length_samples)?,
        stride_samples: sec.parse_or("stride_samples", defaults.stride_samples)?,
    })
}

fn read_sections(ini: &Ini) -> Result<SectionSelection> {
    let sec = ini.section("report");
    sec.expect_keys(&["sections"])?;
    match sec.get("sections") {
        None => Ok(SectionSelection::All),
        Some("all") => Ok(SectionSelection::All),
        Some(raw) => Ok(SectionSelection::Subset(parse_names(
            raw,
            "report.sections",
            SectionName::parse,
        )?)),
    }
}

fn read_encoder(ini: &Ini) -> Result<Deep4Config> {
    let sec = ini.section("encoder");
    sec.expect_keys(&[
        "n_channels",
        "input_samples",
        "block_filters",
        "temporal_kernel",
        "pool_size",
        "pool_stride",
        "dropout_p",
        "embedding_dim",
    ])?;
    let defaults = Deep4Config::default();
    let block_filters = match sec.get("block_filters") {
        None => defaults.block_filters,
        Some(_) => {
            let list: Vec<usize> = sec.parse_list("block_filters")?;
            <[usize; 4]>::try_from(list.as_slice()).map_err(|_| {
                Error::Config(format!(
                    "encoder.block_filters needs exactly 4 entries, got {}",
                    list.len()
                ))
            })?
        }
    };
    Ok(Deep4Config {
        n_channels: sec.parse_or("n_channels", defaults.n_channels)?,
        input_samples: sec.parse_or("input_samples", defaults.input_samples)?,
        block_filters,
        temporal_kernel: sec.parse_or("temporal_kernel", defaults.temporal_kernel)?,
        pool_size: sec.parse_or("pool_size", defaults.pool_size)?,
        pool_stride: sec.parse_or("pool_stride", defaults.pool_stride)?,
        dropout_p: sec.parse_or("dropout_p", defaults.dropout_p)?,
        embedding_dim: sec.parse_or("embedding_dim", defaults.embedding_dim)?,
    })
}

fn read_text(ini: &Ini) -> Result<TextEncoderChoice> {
    let sec = ini.section("text");
    sec.expect_keys(&["kind", "dim", "max_tokens", "table", "buckets"])?;
    let kind = sec.get("kind").unwrap_or("hashed_bow");
    match kind {
        "hashed_bow" => Ok(TextEncoderChoice::HashedBow {
            dim: sec.parse_or("dim", 64)?,
            max_tokens: sec.parse_or("max_tokens", 512)?,
        }),
        "precomputed" => {
            let table = sec.require("table")?;
            Ok(TextEncoderChoice::Precomputed {
                table: PathBuf::from(table),
            })
        }
        "bag" => Ok(TextEncoderChoice::Bag {
            buckets: sec.parse_or("buckets", 4096)?,
            dim: sec.parse_or("dim", 64)?,
            max_tokens: sec.parse_or("max_tokens", 512)?,
        }),
        other => Err(Error::Config(format!("unknown text.kind {other:?}"))),
    }
}

fn read_contrastive(
    ini: &Ini,
    master_seed: u64,
    deterministic: bool,
) -> Result<(ContrastiveConfig, usize)> {
    let sec = ini.section("contrastive");
    sec.expect_keys(&[
        "shared_dim",
        "init_temperature",
        "learn_temperature",
        "temperature_clamp_lo",
        "temperature_clamp_hi",
        "symmetric",
        "batch_size",
        "epochs",
        "lr",
        "weight_decay",
        "text_lr_ratio",
    ])?;
    let defaults = ContrastiveConfig::default();
    let cfg = ContrastiveConfig {
        init_temperature: sec.parse_or("init_temperature", defaults.init_temperature)?,
        learn_temperature: sec.parse_or("learn_temperature", defaults.learn_temperature)?,
        temperature_clamp: (
            sec.parse_or("temperature_clamp_lo", defaults.temperature_clamp.0)?,
            sec.parse_or("temperature_clamp_hi", defaults.temperature_clamp.1)?,
        ),
        symmetric: sec.parse_or("symmetric", defaults.symmetric)?,
        batch_size: sec.parse_or("batch_size", defaults.batch_size)?,
        epochs: sec.parse_or("epochs", defaults.epochs)?,
        lr: sec.parse_or("lr", defaults.lr)?,
        weight_decay: sec.parse_or("weight_decay", defaults.weight_decay)?,
        text_lr_ratio: sec.parse_or("text_lr_ratio", defaults.text_lr_ratio)?,
        seed: derive_seed(master_seed, stage::TRAIN),
        deterministic,
    };
    let shared_dim: usize = sec.parse_or("shared_dim", 64)?;
    Ok((cfg, shared_dim))
}

fn read_split(ini: &Ini) -> Result<(SplitMode, Vec<Fraction>)> {
    let sec = ini.section("split");
    sec.expect_keys(&["mode", "fractions"])?;
    let mode = match sec.get("mode") {
        None => SplitMode::FewShot,
        Some(raw) => SplitMode::parse(raw)?,
    };
    let fractions = match sec.get("fractions") {
        None => DEFAULT_FRACTIONS.to_vec(),
        Some(raw) => parse_names(raw, "split.fractions", Fraction::parse)?,
    };
    Ok((mode, fractions))
}
