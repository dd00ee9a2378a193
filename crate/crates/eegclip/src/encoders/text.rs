//! Text encoders: a weightless hashed bag-of-words, a table of externally
//! precomputed embeddings, and a trainable hashed-bucket embedding.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use std::collections::HashMap;
use std::path::Path;

use crate::nn::{Float, Param, ParamGroup, Parameterized, TensorView};
use crate::util::{derive_seed, fnv1a64};
use crate::{Error, Result};

/// Lowercased alphanumeric tokens, truncated to `max_tokens`.
pub fn tokenize(text: &str, max_tokens: usize) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .take(max_tokens)
        .map(|t| t.to_lowercase())
        .collect()
}

/// A fixed (inference-only) text encoder. Implementations must be
/// deterministic: the same text always yields the same vector.
pub trait TextEncoder {
    fn name(&self) -> &str;
    fn max_tokens(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn encode(&self, text: &str) -> Array1<f64>;

    /// Recipe for rebuilding this encoder when a saved model is reloaded.
    /// `None` marks an encoder the model store cannot persist.
    fn spec(&self) -> Option<EncoderSpec> {
        None
    }
}

/// Serializable description of a built-in encoder.
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderSpec {
    HashedBow {
        dim: usize,
        max_tokens: usize,
        seed: u64,
    },
    Precomputed {
        entries: Vec<(String, Vec<f64>)>,
    },
}

/// Rebuilds the encoder a spec describes.
pub fn encoder_from_spec(spec: &EncoderSpec) -> Result<Box<dyn TextEncoder + Send + Sync>> {
    match spec {
        EncoderSpec::HashedBow {
            dim,
            max_tokens,
            seed,
        } => Ok(Box::new(HashedBow::new(*dim, *max_tokens, *seed))),
        EncoderSpec::Precomputed { entries } => {
            Ok(Box::new(PrecomputedTextEncoder::from_entries(entries)?))
        }
    }
}

/// Weightless encoder: tokens are hashed into `output_dim` buckets and the
/// bucket counts are L2-normalized. Used by the offline test suite.
#[derive(Debug, Clone)]
pub struct HashedBow {
    dim: usize,
    max_tokens: usize,
    seed: u64,
}

impl HashedBow {
    pub fn new(dim: usize, max_tokens: usize, seed: u64) -> Self {
        assert!(dim > 0);
        HashedBow {
            dim,
            max_tokens,
            seed,
        }
    }

    fn bucket(&self, token: &str) -> usize {
        (derive_seed(self.seed, token) % self.dim as u64) as usize
    }
}

impl TextEncoder for HashedBow {
    fn name(&self) -> &str {
        "hashed_bow"
    }

    fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Array1<f64> {
        let mut counts = Array1::<f64>::zeros(self.dim);
        for token in tokenize(text, self.max_tokens) {
            counts[self.bucket(&token)] += 1.0;
        }
        let norm = counts.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            counts /= norm;
        }
        counts
    }

    fn spec(&self) -> Option<EncoderSpec> {
        Some(EncoderSpec::HashedBow {
            dim: self.dim,
            max_tokens: self.max_tokens,
            seed: self.seed,
        })
    }
}

fn escape(text: &str) -> String {
    text.replace('\\', "\\\\")
        .replace('\t', "\\t")
        .replace('\n', "\\n")
}

fn unescape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

/// Embeddings computed once by an external checkpoint and loaded as a
/// lookup table. The file has one record per line: the escaped text, a tab,
/// then space-separated values. Texts missing from the table encode as
/// zeros with a logged warning; call [`Self::ensure_covers`] up front to
/// fail fast instead.
#[derive(Debug, Clone)]
pub struct PrecomputedTextEncoder {
    table: HashMap<String, Array1<f64>>,
    dim: usize,
}

impl PrecomputedTextEncoder {
    pub fn load(path: &Path) -> Result<Self> {
        let content =
            std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table = HashMap::new();
        let mut dim = 0usize;
        for (lineno, line) in content.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (text_part, vec_part) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: "expected <text><TAB><values>".into(),
            })?;
            let values: Vec<f64> = vec_part
                .split_whitespace()
                .map(|v| {
                    v.parse::<f64>().map_err(|_| Error::Parse {
                        path: path.to_path_buf(),
                        line: lineno + 1,
                        msg: format!("bad float {v:?}"),
                    })
                })
                .collect::<Result<_>>()?;
            if values.is_empty() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: "empty embedding".into(),
                });
            }
            if dim == 0 {
                dim = values.len();
            } else if values.len() != dim {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: format!("embedding width {} != {}", values.len(), dim),
                });
            }
            table.insert(unescape(text_part), Array1::from_vec(values));
        }
        if table.is_empty() {
            return Err(Error::Corrupt {
                path: path.to_path_buf(),
                msg: "embedding table is empty".into(),
            });
        }
        Ok(PrecomputedTextEncoder { table, dim })
    }

    /// Builds the table directly from `(text, embedding)` pairs.
    pub fn from_entries(entries: &[(String, Vec<f64>)]) -> Result<Self> {
        let mut table = HashMap::new();
        let mut dim = 0usize;
        for (text, values) in entries {
            if values.is_empty() {
                return Err(Error::Config(format!(
                    "empty embedding for text {:?}",
                    text.chars().take(40).collect::<String>()
                )));
            }
            if dim == 0 {
                dim = values.len();
            } else if values.len() != dim {
                return Err(Error::Config(format!(
                    "embedding width {} != {}",
                    values.len(),
                    dim
                )));
            }
            table.insert(text.clone(), Array1::from_vec(values.clone()));
        }
        if table.is_empty() {
            return Err(Error::Config("embedding table is empty".into()));
        }
        Ok(PrecomputedTextEncoder { table, dim })
    }

    /// The table contents, sorted by text so output is deterministic.
    pub fn entries(&self) -> Vec<(String, Vec<f64>)> {
        let mut out: Vec<(String, Vec<f64>)> = self
            .table
            .iter()
            .map(|(k, v)| (k.clone(), v.to_vec()))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Writes a table in the format [`Self::load`] reads.
    pub fn save(entries: &[(String, Vec<f64>)], path: &Path) -> Result<()> {
        let mut out = String::new();
        for (text, values) in entries {
            out.push_str(&escape(text));
            out.push('\t');
            let joined: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&joined.join(" "));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn contains(&self, text: &str) -> bool {
        self.table.contains_key(text)
    }

    /// Errors on the first text the table does not cover.
    pub fn ensure_covers<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for t in texts {
            if !self.contains(t) {
                let preview: String = t.chars().take(60).collect();
                return Err(Error::Config(format!(
                    "embedding table has no entry for text starting {preview:?}"
                )));
            }
        }
        Ok(())
    }
}

impl TextEncoder for PrecomputedTextEncoder {
    fn name(&self) -> &str {
        "precomputed"
    }

    fn max_tokens(&self) -> usize {
        usize::MAX
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Array1<f64> {
        match self.table.get(text) {
            Some(v) => v.clone(),
            None => {
                log::warn!("no precomputed embedding for text; encoding as zeros");
                Array1::zeros(self.dim)
            }
        }
    }

    fn spec(&self) -> Option<EncoderSpec> {
        Some(EncoderSpec::Precomputed {
            entries: self.entries(),
        })
    }
}

/// Trainable text tower: tokens hash into buckets of an embedding matrix
/// and a text's feature vector is the mean of its bucket rows. This gives
/// the text branch real parameters, so the text learning-rate ratio has
/// observable effect.
#[derive(Debug, Clone)]
pub struct BagEmbedding<F: Float> {
    pub emb: Param<F, ndarray::Ix2>,
    buckets: usize,
    dim: usize,
    max_tokens: usize,
    seed: u64,
    cache: Option<Vec<Vec<usize>>>,
}

impl<F: Float> BagEmbedding<F> {
    pub fn new(buckets: usize, dim: usize, max_tokens: usize, seed: u64, rng: &mut impl Rng) -> Self {
        assert!(buckets > 0 && dim > 0);
        let emb = crate::nn::glorot_uniform(rng, ndarray::Ix2(buckets, dim), buckets, dim);
        BagEmbedding {
            emb: Param::new(emb),
            buckets,
            dim,
            max_tokens,
            seed,
            cache: None,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.dim
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    /// Seed of the token-to-bucket hash, not of the weight init.
    pub fn hash_seed(&self) -> u64 {
        self.seed
    }

    fn bucket_ids(&self, text: &str) -> Vec<usize> {
        tokenize(text, self.max_tokens)
            .iter()
            .map(|t| (derive_seed(self.seed, t) % self.buckets as u64) as usize)
            .collect()
    }

    pub fn forward_batch(&mut self, texts: &[&str]) -> Array2<F> {
        let mut out = Array2::<F>::zeros((texts.len(), self.dim));
        let mut ids = Vec::with_capacity(texts.len());
        for (i, text) in texts.iter().enumerate() {
            let buckets = self.bucket_ids(text);
            if !buckets.is_empty() {
                let inv = F::of(1.0 / buckets.len() as f64);
                let mut row = out.row_mut(i);
                for &b in &buckets {
                    for (dst, src) in row.iter_mut().zip(self.emb.value.row(b).iter()) {
                        *dst += *src * inv;
                    }
                }
            }
            ids.push(buckets);
        }
        self.cache = Some(ids);
        out
    }

    pub fn backward(&mut self, d_out: &Array2<F>) {
        let ids = self.cache.take().expect("forward before backward");
        for (i, buckets) in ids.iter().enumerate() {
            if buckets.is_empty() {
                continue;
            }
            let inv = F::of(1.0 / buckets.len() as f64);
            let d_row = d_out.index_axis(Axis(0), i);
            for &b in buckets {
                for (dst, src) in self.emb.grad.row_mut(b).iter_mut().zip(d_row.iter()) {
                    *dst += *src * inv;
                }
            }
        }
    }
}

impl<F: Float> Parameterized<F> for BagEmbedding<F> {
    fn visit_tensors(&mut self, prefix: &str, f: &mut dyn FnMut(TensorView<'_, F>)) {
        f(self.emb.view(format!("{prefix}.emb"), ParamGroup::Text));
    }
}

/// The text side of the model: either a frozen encoder (memoized, since
/// encoding is deterministic) or the trainable bag embedding.
pub enum TextTower<F: Float> {
    Frozen {
        encoder: Box<dyn TextEncoder + Send + Sync>,
        memo: HashMap<u64, Vec<F>>,
    },
    Bag(BagEmbedding<F>),
}

impl<F: Float> TextTower<F> {
    pub fn frozen(encoder: Box<dyn TextEncoder + Send + Sync>) -> Self {
        TextTower::Frozen {
            encoder,
            memo: HashMap::new(),
        }
    }

    pub fn bag(bag: BagEmbedding<F>) -> Self {
        TextTower::Bag(bag)
    }

    pub fn name(&self) -> &str {
        match self {
            TextTower::Frozen { encoder, .. } => encoder.name(),
            TextTower::Bag(_) => "bag_embedding",
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            TextTower::Frozen { encoder, .. } => encoder.output_dim(),
            TextTower::Bag(bag) => bag.output_dim(),
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, TextTower::Bag(_))
    }

    pub fn encode_batch(&mut self, texts: &[&str]) -> Array2<F> {
        match self {
            TextTower::Frozen { encoder, memo } => {
                let mut out = Array2::<F>::zeros((texts.len(), encoder.output_dim()));
                for (i, text) in texts.iter().enumerate() {
                    let key = fnv1a64(text.as_bytes());
                    let row = memo.entry(key).or_insert_with(|| {
                        encoder.encode(text).iter().map(|v| F::of(*v)).collect()
                    });
                    for (dst, src) in out.row_mut(i).iter_mut().zip(row.iter()) {
                        *dst = *src;
                    }
                }
                out
            }
            TextTower::Bag(bag) => bag.forward_batch(texts),
        }
    }

    /// Routes feature gradients to the encoder when it is trainable.
    pub fn backward(&mut self, d_features: &Array2<F>) {
        match self {
            TextTower::Frozen { .. } => {}
            TextTower::Bag(bag) => bag.backward(d_features),
        }
    }
}

impl<F: Float> Parameterized<F> for TextTower<F> {
    fn visit_tensors(&mut self, prefix: &str, f: &mut dyn FnMut(TensorView<'_, F>)) {
        match self {
            TextTower::Frozen { .. } => {}
            TextTower::Bag(bag) => bag.visit_tensors(prefix, f),
        }
    }
}
