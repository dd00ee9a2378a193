//! Model persistence. A trained model becomes a directory:
//!
//! ```text
//! model.ini          architecture and float width
//! training_log.tsv   epoch, mean_loss, wall_time_s
//! tensors/<name>.eega  one array container per parameter or buffer
//! text_table.tsv     only for a precomputed text encoder
//! ```
//!
//! Reloading rebuilds the skeleton from `model.ini` and fills every
//! tensor from its file; inference outputs after a round trip are
//! bit-identical because values are stored as exact `f64`.

use std::collections::HashSet;
use std::path::Path;

use ndarray::ArrayD;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::{EegClipModel, EpochRecord, TrainedModel};
use crate::config::{Ini, IniWriter};
use crate::data::{read_array, write_array};
use crate::encoders::{
    encoder_from_spec, BagEmbedding, Deep4Config, EncoderSpec, PrecomputedTextEncoder, TextTower,
};
use crate::nn::{Float, Parameterized};
use crate::{Error, Result};

const MODEL_FILE: &str = "model.ini";
const LOG_FILE: &str = "training_log.tsv";
const TENSOR_DIR: &str = "tensors";
const TEXT_TABLE_FILE: &str = "text_table.tsv";

impl<F: Float> TrainedModel<F> {
    /// Writes the model into `dir`, creating it if needed. Fails for a
    /// frozen text encoder that advertises no rebuild recipe.
    pub fn save(&mut self, dir: &Path) -> Result<()> {
        let ini = describe(&self.model)?;
        let table = match &self.model.text_tower {
            TextTower::Frozen { encoder, .. } => match encoder.spec() {
                Some(EncoderSpec::Precomputed { entries }) => Some(entries),
                _ => None,
            },
            TextTower::Bag(_) => None,
        };
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let ini_path = dir.join(MODEL_FILE);
        std::fs::write(&ini_path, ini).map_err(|e| Error::io(&ini_path, e))?;
        if let Some(entries) = table {
            PrecomputedTextEncoder::save(&entries, &dir.join(TEXT_TABLE_FILE))?;
        }
        write_log(&self.log, &dir.join(LOG_FILE))?;

        let tensor_dir = dir.join(TENSOR_DIR);
        let mut status = Ok(());
        self.model.visit_tensors("", &mut |tv| {
            if status.is_err() {
                return;
            }
            let values: Vec<f64> = tv.value.iter().map(|v| v.as_f64()).collect();
            let array = ArrayD::from_shape_vec(tv.shape.clone(), values)
                .expect("tensor view shape matches its data");
            status = write_array(&tensor_dir.join(format!("{}.eega", tv.name)), &array);
        });
        status
    }

    /// Reads a model directory written by [`Self::save`]. The float
    /// width must match the one it was saved with.
    pub fn load(dir: &Path) -> Result<TrainedModel<F>> {
        let ini = Ini::from_file(&dir.join(MODEL_FILE))?;
        ini.expect_sections(&["model", "eeg_encoder", "text"])?;
        let model_sec = ini.require_section("model")?;
        model_sec.expect_keys(&["float", "shared_dim", "learn_temperature"])?;
        let float: String = model_sec.parse_req("float")?;
        if float != F::dtype_name() {
            return Err(Error::Config(format!(
                "model was saved as {float} but is being loaded as {}",
                F::dtype_name()
            )));
        }
        let shared_dim: usize = model_sec.parse_req("shared_dim")?;
        let learn_temperature: bool = model_sec.parse_req("learn_temperature")?;

        let eeg_sec = ini.require_section("eeg_encoder")?;
        eeg_sec.expect_keys(&[
            "n_channels",
            "input_samples",
            "block_filters",
            "temporal_kernel",
            "pool_size",
            "pool_stride",
            "dropout_p",
            "embedding_dim",
        ])?;
        let filters = eeg_sec.parse_list::<usize>("block_filters")?;
        if filters.len() != 4 {
            return Err(Error::Config(format!(
                "block_filters needs 4 entries, got {}",
                filters.len()
            )));
        }
        let eeg_cfg = Deep4Config {
            n_channels: eeg_sec.parse_req("n_channels")?,
            input_samples: eeg_sec.parse_req("input_samples")?,
            block_filters: [filters[0], filters[1], filters[2], filters[3]],
            temporal_kernel: eeg_sec.parse_req("temporal_kernel")?,
            pool_size: eeg_sec.parse_req("pool_size")?,
            pool_stride: eeg_sec.parse_req("pool_stride")?,
            dropout_p: eeg_sec.parse_req("dropout_p")?,
            embedding_dim: eeg_sec.parse_req("embedding_dim")?,
        };

        let text_sec = ini.require_section("text")?;
        let kind = text_sec.require("kind")?;
        // Weight values are overwritten below, so the init seed is fixed.
        let mut init_rng = ChaCha12Rng::seed_from_u64(0);
        let tower: TextTower<F> = match kind {
            "hashed_bow" => {
                text_sec.expect_keys(&["kind", "dim", "max_tokens", "seed"])?;
                TextTower::frozen(encoder_from_spec(&EncoderSpec::HashedBow {
                    dim: text_sec.parse_req("dim")?,
                    max_tokens: text_sec.parse_req("max_tokens")?,
                    seed: text_sec.parse_req("seed")?,
                })?)
            }
            "precomputed" => {
                text_sec.expect_keys(&["kind"])?;
                TextTower::frozen(Box::new(PrecomputedTextEncoder::load(
                    &dir.join(TEXT_TABLE_FILE),
                )?))
            }
            "bag" => {
                text_sec.expect_keys(&["kind", "buckets", "dim", "max_tokens", "seed"])?;
                TextTower::bag(BagEmbedding::new(
                    text_sec.parse_req("buckets")?,
                    text_sec.parse_req("dim")?,
                    text_sec.parse_req("max_tokens")?,
                    text_sec.parse_req("seed")?,
                    &mut init_rng,
                ))
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown text encoder kind {other:?}"
                )))
            }
        };

        let mut model = EegClipModel::new(
            eeg_cfg,
            tower,
            shared_dim,
            // Placeholder; the stored parameter overwrites it below.
            0.07,
            learn_temperature,
            &mut init_rng,
        )?;

        let tensor_dir = dir.join(TENSOR_DIR);
        let mut seen = HashSet::new();
        let mut status = Ok(());
        model.visit_tensors("", &mut |tv| {
            if status.is_err() {
                return;
            }
            let path = tensor_dir.join(format!("{}.eega", tv.name));
            if !path.exists() {
                status = Err(Error::Corrupt {
                    path: path.clone(),
                    msg: format!("model directory is missing tensor {}", tv.name),
                });
                return;
            }
            let array = match read_array(&path) {
                Ok(a) => a,
                Err(e) => {
                    status = Err(e);
                    return;
                }
            };
            if array.shape() != tv.shape.as_slice() {
                status = Err(Error::Corrupt {
                    path: path.clone(),
                    msg: format!(
                        "tensor {} has shape {:?}, expected {:?}",
                        tv.name,
                        array.shape(),
                        tv.shape
                    ),
                });
                return;
            }
            for (dst, src) in tv.value.iter_mut().zip(array.iter()) {
                *dst = F::of(*src);
            }
            seen.insert(format!("{}.eega", tv.name));
        });
        status?;

        // Stray tensor files mean the directory does not describe this
        // architecture.
        for entry in std::fs::read_dir(&tensor_dir).map_err(|e| Error::io(&tensor_dir, e))? {
            let entry = entry.map_err(|e| Error::io(&tensor_dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if !seen.contains(&name) {
                return Err(Error::Corrupt {
                    path: entry.path(),
                    msg: "unexpected tensor file".into(),
                });
            }
        }

        let log = read_log(&dir.join(LOG_FILE))?;
        Ok(TrainedModel { model, log })
    }
}

/// Renders `model.ini` for a model, or errors when the text tower has no
/// serializable description.
fn describe<F: Float>(model: &EegClipModel<F>) -> Result<String> {
    let mut w = IniWriter::new();
    w.section("model");
    w.kv("float", F::dtype_name());
    w.kv("shared_dim", model.shared_dim());
    w.kv("learn_temperature", model.temperature_is_learnable());

    let cfg = &model.eeg_encoder.cfg;
    w.section("eeg_encoder");
    w.kv("n_channels", cfg.n_channels);
    w.kv("input_samples", cfg.input_samples);
    w.kv(
        "block_filters",
        cfg.block_filters.map(|f| f.to_string()).join(","),
    );
    w.kv("temporal_kernel", cfg.temporal_kernel);
    w.kv("pool_size", cfg.pool_size);
    w.kv("pool_stride", cfg.pool_stride);
    w.kv("dropout_p", cfg.dropout_p);
    w.kv("embedding_dim", cfg.embedding_dim);

    w.section("text");
    match &model.text_tower {
        TextTower::Frozen { encoder, .. } => match encoder.spec() {
            Some(EncoderSpec::HashedBow {
                dim,
                max_tokens,
                seed,
            }) => {
                w.kv("kind", "hashed_bow");
                w.kv("dim", dim);
                w.kv("max_tokens", max_tokens);
                w.kv("seed", seed);
            }
            Some(EncoderSpec::Precomputed { .. }) => {
                w.kv("kind", "precomputed");
            }
            None => {
                return Err(Error::Config(format!(
                    "text encoder {:?} has no rebuild recipe and cannot be saved",
                    encoder.name()
                )));
            }
        },
        TextTower::Bag(bag) => {
            w.kv("kind", "bag");
            w.kv("buckets", bag.buckets());
            w.kv("dim", bag.output_dim());
            w.kv("max_tokens", bag.max_tokens());
            w.kv("seed", bag.hash_seed());
        }
    }
    Ok(w.finish())
}

fn write_log(log: &[EpochRecord], path: &Path) -> Result<()> {
    let mut out = String::from("epoch\tmean_loss\twall_time_s\n");
    for rec in log {
        // `{:?}` prints the shortest decimal that reparses to the same
        // f64, keeping the log round-trippable.
        out.push_str(&format!(
            "{}\t{:?}\t{:?}\n",
            rec.epoch, rec.mean_loss, rec.wall_time_s
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let parse_err = |lineno: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: lineno + 1,
        msg,
    };
    match lines.next() {
        Some((_, "epoch\tmean_loss\twall_time_s")) => {}
        Some((i, other)) => return Err(parse_err(i, format!("bad header {other:?}"))),
        None => return Err(parse_err(0, "empty log".into())),
    }
    let mut log = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(i, format!("expected 3 fields, got {}", fields.len())));
        }
        let epoch = fields[0]
            .parse()
            .map_err(|e| parse_err(i, format!("bad epoch: {e}")))?;
        let mean_loss = fields[1]
            .parse()
            .map_err(|e| parse_err(i, format!("bad mean_loss: {e}")))?;
        let wall_time_s = fields[2]
            .parse()
            .map_err(|e| parse_err(i, format!("bad wall_time_s: {e}")))?;
        log.push(EpochRecord {
            epoch,
            mean_loss,
            wall_time_s,
        });
    }
    Ok(log)
}
