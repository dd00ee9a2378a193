//! The two embedding towers: a convolutional EEG encoder and pluggable
//! text encoders, each followed by a projection head into the shared space.

mod projection;
mod text;

pub use projection::ProjectionHead;
pub use text::{
    encoder_from_spec, BagEmbedding, EncoderSpec, HashedBow, PrecomputedTextEncoder, TextEncoder,
    TextTower,
};

use ndarray::{Array2, Array3};
use rand::{Rng, RngCore};

use crate::nn::conv::{Conv1d, FactoredConv};
use crate::nn::layers::{BatchNorm1d, Dropout, Elu, Linear, MaxPool1d};
use crate::nn::{Float, Mode, ParamGroup, Parameterized, TensorView};
use crate::{Error, Result};

/// Architecture of the EEG encoder: four convolution-max-pooling blocks
/// with batch normalization, exponential-linear activations and dropout,
/// then one fully-connected layer to the embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Deep4Config {
    pub n_channels: usize,
    pub input_samples: usize,
    pub block_filters: [usize; 4],
    pub temporal_kernel: usize,
    pub pool_size: usize,
    pub pool_stride: usize,
    pub dropout_p: f64,
    pub embedding_dim: usize,
}

impl Default for Deep4Config {
    fn default() -> Self {
        Deep4Config {
            n_channels: 21,
            input_samples: 1200,
            block_filters: [25, 50, 100, 200],
            temporal_kernel: 10,
            pool_size: 3,
            pool_stride: 3,
            dropout_p: 0.5,
            embedding_dim: 128,
        }
    }
}

impl Deep4Config {
    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 || self.input_samples == 0 {
            return Err(Error::Config("encoder needs channels and samples".into()));
        }
        if self.block_filters.contains(&0) {
            return Err(Error::Config("block filter counts must be positive".into()));
        }
        if self.temporal_kernel == 0 || self.pool_size == 0 || self.pool_stride == 0 {
            return Err(Error::Config("kernel and pool sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config("dropout_p must be in [0,1)".into()));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be positive".into()));
        }
        self.feature_len().map(|_| ())
    }

    /// Time-axis length after each block, computed symbolically.
    pub fn block_out_lens(&self) -> Result<[usize; 4]> {
        let mut t = self.input_samples;
        let mut out = [0usize; 4];
        for (i, slot) in out.iter_mut().enumerate() {
            if t < self.temporal_kernel {
                return Err(Error::Config(format!(
                    "block {}: {} samples left, kernel {} does not fit",
                    i + 1,
                    t,
                    self.temporal_kernel
                )));
            }
            t = t - self.temporal_kernel + 1;
            if t < self.pool_size {
                return Err(Error::Config(format!(
                    "block {}: {} samples left, pool {} does not fit",
                    i + 1,
                    t,
                    self.pool_size
                )));
            }
            t = (t - self.pool_size) / self.pool_stride + 1;
            *slot = t;
        }
        Ok(out)
    }

    /// Flattened feature size in front of the final fully-connected layer.
    pub fn feature_len(&self) -> Result<usize> {
        Ok(self.block_filters[3] * self.block_out_lens()?[3])
    }
}

/// Blocks 2-4: dropout, convolution, batch norm, ELU, max-pool.
#[derive(Debug, Clone)]
struct ConvBlock<F: Float> {
    drop: Dropout<F>,
    conv: Conv1d<F>,
    bn: BatchNorm1d<F>,
    elu: Elu<F>,
    pool: MaxPool1d<F>,
}

impl<F: Float> ConvBlock<F> {
    fn forward(&mut self, x: &Array3<F>, mode: Mode, rng: &mut dyn RngCore) -> Array3<F> {
        let h = self.drop.forward(x, mode, rng);
        let h = self.conv.forward(&h, mode);
        let h = self.bn.forward(&h, mode);
        let h = self.elu.forward(&h, mode);
        self.pool.forward(&h, mode)
    }

    fn backward(&mut self, dy: &Array3<F>) -> Array3<F> {
        let d = self.pool.backward(dy);
        let d = self.elu.backward(&d);
        let d = self.bn.backward(&d);
        let d = self.conv.backward(&d);
        self.drop.backward(&d)
    }
}

impl<F: Float> Parameterized<F> for ConvBlock<F> {
    fn visit_tensors(&mut self, prefix: &str, f: &mut dyn FnMut(TensorView<'_, F>)) {
        self.conv.visit_tensors(&format!("{prefix}.conv"), f);
        self.bn.visit_tensors(&format!("{prefix}.bn"), f);
    }
}

/// The EEG tower: windows `[batch, channels, samples]` to embeddings
/// `[batch, embedding_dim]`.
#[derive(Debug, Clone)]
pub struct Deep4Encoder<F: Float> {
    pub cfg: Deep4Config,
    conv1: FactoredConv<F>,
    bn1: BatchNorm1d<F>,
    elu1: Elu<F>,
    pool1: MaxPool1d<F>,
    blocks: Vec<ConvBlock<F>>,
    fc: Linear<F>,
    flat_dims: (usize, usize),
}

impl<F: Float> Deep4Encoder<F> {
    pub fn new(cfg: Deep4Config, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let f = cfg.block_filters;
        let conv1 = FactoredConv::new(
            cfg.n_channels,
            f[0],
            f[0],
            cfg.temporal_kernel,
            ParamGroup::Main,
            rng,
        );
        let bn1 = BatchNorm1d::new(f[0], ParamGroup::Main);
        let pool1 = MaxPool1d::new(cfg.pool_size, cfg.pool_stride);
        let mut blocks = Vec::with_capacity(3);
        for i in 1..4 {
            blocks.push(ConvBlock {
                drop: Dropout::new(cfg.dropout_p),
                conv: Conv1d::new(f[i - 1], f[i], cfg.temporal_kernel, ParamGroup::Main, rng),
                bn: BatchNorm1d::new(f[i], ParamGroup::Main),
                elu: Elu::new(),
                pool: MaxPool1d::new(cfg.pool_size, cfg.pool_stride),
            });
        }
        let t_final = cfg.block_out_lens()?[3];
        let flat = cfg.feature_len()?;
        let fc = Linear::new(flat, cfg.embedding_dim, ParamGroup::Main, rng);
        Ok(Deep4Encoder {
            cfg,
            conv1,
            bn1,
            elu1: Elu::new(),
            pool1,
            blocks,
            fc,
            flat_dims: (f[3], t_final),
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.cfg.embedding_dim
    }

    /// Encodes a batch of windows. Shape must match the configuration.
    pub fn forward(
        &mut self,
        x: &Array3<F>,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<Array2<F>> {
        let (n, c, t) = x.dim();
        if c != self.cfg.n_channels || t != self.cfg.input_samples {
            return Err(Error::validation(format!(
                "window batch is {c}x{t}, encoder expects {}x{}",
                self.cfg.n_channels, self.cfg.input_samples
            )));
        }
        let h = self.conv1.forward(x, mode);
        let h = self.bn1.forward(&h, mode);
        let h = self.elu1.forward(&h, mode);
        let mut h = self.pool1.forward(&h, mode);
        for b in &mut self.blocks {
            h = b.forward(&h, mode, rng);
        }
        let flat = h
            .into_shape_with_order((n, self.flat_dims.0 * self.flat_dims.1))
            .expect("block output flattens");
        Ok(self.fc.forward(&flat, mode))
    }

    /// Backpropagates to the input, accumulating parameter gradients on the
    /// way. Requires a preceding [`Self::forward`].
    pub fn backward(&mut self, d_embedding: &Array2<F>) -> Array3<F> {
        let d_flat = self.fc.backward(d_embedding);
        let n = d_flat.nrows();
        let mut d = d_flat
            .into_shape_with_order((n, self.flat_dims.0, self.flat_dims.1))
            .expect("gradient reshapes to block output");
        for b in self.blocks.iter_mut().rev() {
            d = b.backward(&d);
        }
        let d = self.pool1.backward(&d);
        let d = self.elu1.backward(&d);
        let d = self.bn1.backward(&d);
        self.conv1.backward(&d)
    }
}

impl<F: Float> Parameterized<F> for Deep4Encoder<F> {
    fn visit_tensors(&mut self, prefix: &str, f: &mut dyn FnMut(TensorView<'_, F>)) {
        self.conv1.visit_tensors(&format!("{prefix}.block1.conv"), f);
        self.bn1.visit_tensors(&format!("{prefix}.block1.bn"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_tensors(&format!("{prefix}.block{}", i + 2), f);
        }
        self.fc.visit_tensors(&format!("{prefix}.fc"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check::{central_diff, max_rel_err};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn tiny_cfg() -> Deep4Config {
        Deep4Config {
            n_channels: 2,
            input_samples: 64,
            block_filters: [2, 2, 2, 2],
            temporal_kernel: 3,
            pool_size: 2,
            pool_stride: 2,
            dropout_p: 0.0,
            embedding_dim: 8,
        }
    }

    #[test]
    fn default_shapes_and_symbolic_feature_len() {
        let cfg = Deep4Config::default();
        assert_eq!(cfg.block_out_lens().unwrap(), [397, 129, 40, 10]);
        assert_eq!(cfg.feature_len().unwrap(), 2000);
    }

    #[test]
    fn forward_shape_default_config() {
        let cfg = Deep4Config::default();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut enc = Deep4Encoder::<f32>::new(cfg, &mut rng).unwrap();
        let x = Array3::<f32>::zeros((2, 21, 1200));
        let y = enc.forward(&x, Mode::Eval, &mut rng).unwrap();
        assert_eq!(y.dim(), (2, 128));
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn forward_shape_training_batch() {
        let cfg = Deep4Config::default();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mut enc = Deep4Encoder::<f32>::new(cfg, &mut rng).unwrap();
        let mut x = Array3::<f32>::zeros((64, 21, 1200));
        for v in x.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let y = enc.forward(&x, Mode::Train, &mut rng).unwrap();
        assert_eq!(y.dim(), (64, 128));
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn identical_windows_embed_identically_in_eval_mode() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let mut enc = Deep4Encoder::<f64>::new(tiny_cfg(), &mut rng).unwrap();
        let mut w = ndarray::Array2::<f64>::zeros((2, 64));
        for v in w.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let mut x = Array3::<f64>::zeros((2, 2, 64));
        x.index_axis_mut(ndarray::Axis(0), 0).assign(&w);
        x.index_axis_mut(ndarray::Axis(0), 1).assign(&w);
        let y = enc.forward(&x, Mode::Eval, &mut rng).unwrap();
        assert_eq!(y.row(0), y.row(1));

        // And twice in a row gives the same answer.
        let y2 = enc.forward(&x, Mode::Eval, &mut rng).unwrap();
        assert_eq!(y, y2);
    }

    #[test]
    fn shape_mismatch_is_a_validation_error() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut enc = Deep4Encoder::<f32>::new(tiny_cfg(), &mut rng).unwrap();
        let x = Array3::<f32>::zeros((1, 3, 64));
        assert!(matches!(
            enc.forward(&x, Mode::Eval, &mut rng),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn config_that_collapses_time_axis_is_rejected() {
        let cfg = Deep4Config {
            input_samples: 20,
            ..Deep4Config::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let mut x = Array3::<f64>::zeros((2, 2, 64));
        for v in x.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let mut r = ndarray::Array2::<f64>::zeros((2, 8));
        for v in r.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }

        for mode in [Mode::Eval, Mode::Train] {
            let make = || {
                Deep4Encoder::<f64>::new(tiny_cfg(), &mut ChaCha12Rng::seed_from_u64(5)).unwrap()
            };
            let mut enc = make();
            let mut noise = ChaCha12Rng::seed_from_u64(6);
            enc.forward(&x, mode, &mut noise).unwrap();
            let dx = enc.backward(&r);

            let mut f = |flat: &[f64]| {
                let xp = Array3::from_shape_vec((2, 2, 64), flat.to_vec()).unwrap();
                let mut e = make();
                let mut noise = ChaCha12Rng::seed_from_u64(6);
                (e.forward(&xp, mode, &mut noise).unwrap() * &r).sum()
            };
            let fd = central_diff(&mut f, x.as_slice().unwrap(), 1e-5);
            let err = max_rel_err(dx.as_slice().unwrap(), &fd);
            assert!(err < 1e-6, "mode {mode:?}: rel err {err}");
        }
    }
}
