//! `eegclip`: one command per pipeline stage, all driven by a single
//! config file. Prints the paths it wrote to stdout; on failure prints one
//! diagnostic line to stderr and exits 2 (config), 3 (data), or 4
//! (runtime).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use eegclip::cli::{
    cmd_eval, cmd_export_embeddings, cmd_gradients, cmd_plot, cmd_synth, cmd_train,
    resolve_model_dir, Regime, RunConfig,
};
use eegclip::interpret::GradientMode;
use eegclip::Result;

#[derive(Parser)]
#[command(
    name = "eegclip",
    about = "Contrastive EEG-report alignment: train, evaluate, explain",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured synthetic corpus.
    Synth {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Directory the corpus is written into.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train a model on the config's contrastive split.
    Train {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Directory the model directory is created under.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Zero wall-clock fields so reruns are byte-identical.
        #[arg(long)]
        deterministic: bool,
    },
    /// Evaluate a saved model under one regime.
    Eval {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Saved model directory; relative names also resolve under
        /// $EEGCLIP_CHECKPOINTS.
        #[arg(long, value_name = "DIR")]
        model: PathBuf,
        /// probe, zero_shot, few_shot, or baseline.
        #[arg(long, value_name = "NAME")]
        regime: String,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long)]
        deterministic: bool,
    },
    /// Frequency-domain gradient attribution for one prompt.
    Gradients {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        #[arg(long, value_name = "DIR")]
        model: PathBuf,
        /// Text whose similarity is differentiated.
        #[arg(long, value_name = "STRING")]
        prompt: String,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Average signed gradients instead of magnitudes.
        #[arg(long)]
        signed: bool,
    },
    /// Write every window's shared-space projection with labels as CSV.
    ExportEmbeddings {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        #[arg(long, value_name = "DIR")]
        model: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Re-render a gradients or few-shot CSV as SVG.
    Plot {
        /// CSV produced by `eval` or `gradients`.
        #[arg(long, value_name = "PATH")]
        csv: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

fn load_config(path: &PathBuf, deterministic: bool) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_file(path)?;
    if deterministic {
        cfg.deterministic = true;
        cfg.contrastive.deterministic = true;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    match cli.command {
        Command::Synth { config, out } => {
            let cfg = load_config(&config, false)?;
            Ok(vec![cmd_synth(&cfg, &out)?])
        }
        Command::Train {
            config,
            out,
            deterministic,
        } => {
            let cfg = load_config(&config, deterministic)?;
            Ok(vec![cmd_train(&cfg, &out)?])
        }
        Command::Eval {
            config,
            model,
            regime,
            out,
            deterministic,
        } => {
            let cfg = load_config(&config, deterministic)?;
            let regime = Regime::parse(&regime)?;
            let model_dir = resolve_model_dir(&model)?;
            cmd_eval(&cfg, &model_dir, regime, &out)
        }
        Command::Gradients {
            config,
            model,
            prompt,
            out,
            signed,
        } => {
            let cfg = load_config(&config, false)?;
            let model_dir = resolve_model_dir(&model)?;
            let mode = if signed {
                GradientMode::Signed
            } else {
                GradientMode::Magnitude
            };
            let (csv, svg) = cmd_gradients(&cfg, &model_dir, &prompt, mode, &out)?;
            Ok(vec![csv, svg])
        }
        Command::ExportEmbeddings { config, model, out } => {
            let cfg = load_config(&config, false)?;
            let model_dir = resolve_model_dir(&model)?;
            Ok(vec![cmd_export_embeddings(&cfg, &model_dir, &out)?])
        }
        Command::Plot { csv, out } => Ok(vec![cmd_plot(&csv, &out)?]),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(written) => {
            for path in written {
                println!("{}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("eegclip: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
