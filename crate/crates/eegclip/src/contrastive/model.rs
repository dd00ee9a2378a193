//! The dual-encoder model: convolutional EEG encoder and text encoder,
//! each followed by a projection head into the shared space, plus the
//! learnable softmax temperature.

use ndarray::{arr1, Array2, Array3};
use rand::{Rng, RngCore};

use crate::encoders::{Deep4Config, Deep4Encoder, ProjectionHead, TextTower};
use crate::nn::{buffer_view, Float, Mode, Param, ParamGroup, Parameterized, TensorView};
use crate::{Error, Result};

/// Both towers and the temperature. The temperature is stored as
/// `ln(1/tau)`: the scale applied to similarities before the softmax,
/// which keeps the parameter unconstrained while `tau` stays positive.
pub struct EegClipModel<F: Float> {
    pub eeg_encoder: Deep4Encoder<F>,
    pub eeg_head: ProjectionHead<F>,
    pub text_tower: TextTower<F>,
    pub text_head: ProjectionHead<F>,
    log_inv_tau: Param<F, ndarray::Ix1>,
    learn_temperature: bool,
}

impl<F: Float> EegClipModel<F> {
    pub fn new(
        eeg_cfg: Deep4Config,
        text_tower: TextTower<F>,
        shared_dim: usize,
        init_temperature: f64,
        learn_temperature: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if shared_dim == 0 {
            return Err(Error::Config("shared_dim must be positive".into()));
        }
        if !(init_temperature > 0.0 && init_temperature.is_finite()) {
            return Err(Error::Config(format!(
                "init_temperature must be positive and finite, got {init_temperature}"
            )));
        }
        let eeg_encoder = Deep4Encoder::new(eeg_cfg, rng)?;
        let eeg_head =
            ProjectionHead::new(eeg_encoder.embedding_dim(), shared_dim, ParamGroup::Main, rng);
        let text_head =
            ProjectionHead::new(text_tower.output_dim(), shared_dim, ParamGroup::Main, rng);
        let log_inv_tau = Param::new(arr1(&[F::of((1.0 / init_temperature).ln())]));
        Ok(EegClipModel {
            eeg_encoder,
            eeg_head,
            text_tower,
            text_head,
            log_inv_tau,
            learn_temperature,
        })
    }

    pub fn shared_dim(&self) -> usize {
        self.eeg_head.shared_dim()
    }

    pub fn temperature(&self) -> f64 {
        (-self.log_inv_tau.value[0].as_f64()).exp()
    }

    pub fn log_inv_tau(&self) -> f64 {
        self.log_inv_tau.value[0].as_f64()
    }

    pub fn temperature_is_learnable(&self) -> bool {
        self.learn_temperature
    }

    /// Clamps the temperature into `[lo, hi]` by bounding its parameter.
    pub fn clamp_temperature(&mut self, lo: f64, hi: f64) {
        debug_assert!(lo > 0.0 && lo <= hi);
        let p = self.log_inv_tau.value[0].as_f64();
        self.log_inv_tau.value[0] = F::of(p.clamp((1.0 / hi).ln(), (1.0 / lo).ln()));
    }

    /// Adds the loss gradient of the log inverse temperature; a no-op
    /// when the temperature is fixed.
    pub fn accumulate_temperature_grad(&mut self, d: f64) {
        if self.learn_temperature {
            self.log_inv_tau.grad[0] += F::of(d);
        }
    }

    /// Windows to unit-norm shared-space rows.
    pub fn encode_windows(
        &mut self,
        x: &Array3<F>,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<Array2<F>> {
        let features = self.eeg_encoder.forward(x, mode, rng)?;
        Ok(self.eeg_head.forward(&features, mode))
    }

    /// Texts to unit-norm shared-space rows.
    pub fn encode_texts(&mut self, texts: &[&str], mode: Mode) -> Array2<F> {
        let features = self.text_tower.encode_batch(texts);
        self.text_head.forward(&features, mode)
    }

    /// Backward through head and encoder; returns the gradient at the
    /// window input, which frequency attribution reuses.
    pub fn backward_eeg(&mut self, d_proj: &Array2<F>) -> Array3<F> {
        let d_features = self.eeg_head.backward(d_proj);
        self.eeg_encoder.backward(&d_features)
    }

    /// Backward through the text head into the tower (when trainable).
    pub fn backward_text(&mut self, d_proj: &Array2<F>) {
        let d_features = self.text_head.backward(d_proj);
        self.text_tower.backward(&d_features);
    }
}

impl<F: Float> Parameterized<F> for EegClipModel<F> {
    fn visit_tensors(&mut self, prefix: &str, f: &mut dyn FnMut(TensorView<'_, F>)) {
        self.eeg_encoder.visit_tensors(&format!("{prefix}eeg"), f);
        self.eeg_head.visit_tensors(&format!("{prefix}eeg_head"), f);
        self.text_tower.visit_tensors(&format!("{prefix}text"), f);
        self.text_head.visit_tensors(&format!("{prefix}text_head"), f);
        let name = format!("{prefix}temperature.log_inv_tau");
        if self.learn_temperature {
            f(self.log_inv_tau.view(name, ParamGroup::Temperature));
        } else {
            f(buffer_view(name, &mut self.log_inv_tau.value));
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::contrastive::info_nce_with_grads;
    use crate::encoders::{BagEmbedding, HashedBow};
    use crate::nn::{zero_grads, TensorKind};
    use ndarray::Array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    /// Smallest encoder the shape algebra accepts: 2 channels, 64
    /// samples, final feature length 4.
    pub fn tiny_eeg_cfg() -> Deep4Config {
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

    pub fn tiny_model<F: Float>(seed: u64) -> EegClipModel<F> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        EegClipModel::new(
            tiny_eeg_cfg(),
            TextTower::frozen(Box::new(HashedBow::new(16, 512, 3))),
            8,
            0.07,
            true,
            &mut rng,
        )
        .unwrap()
    }

    pub fn random_batch<F: Float>(n: usize, seed: u64) -> Array3<F> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        Array::from_shape_fn((n, 2, 64), |_| F::of(rng.gen_range(-1.0..1.0)))
    }

    #[test]
    fn projections_are_unit_rows_in_the_shared_dim() {
        let mut m = tiny_model::<f64>(1);
        let x = random_batch(3, 2);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let z = m.encode_windows(&x, Mode::Eval, &mut rng).unwrap();
        assert_eq!(z.dim(), (3, 8));
        let t = m.encode_texts(&["slow waves", "fast waves", "flat record"], Mode::Eval);
        assert_eq!(t.dim(), (3, 8));
        for row in z.rows().into_iter().chain(t.rows()) {
            let norm = row.dot(&row).sqrt();
            assert!((norm - 1.0).abs() < 1e-6, "norm {norm}");
        }
    }

    #[test]
    fn temperature_accessors_and_clamping() {
        let mut m = tiny_model::<f64>(1);
        assert!((m.temperature() - 0.07).abs() < 1e-12);
        assert!((m.log_inv_tau() - (1.0f64 / 0.07).ln()).abs() < 1e-12);
        m.clamp_temperature(0.1, 100.0);
        assert!((m.temperature() - 0.1).abs() < 1e-12);
        m.clamp_temperature(1e-3, 0.05);
        assert!((m.temperature() - 0.05).abs() < 1e-12);
        // Inside the bounds the value is untouched.
        let before = m.log_inv_tau();
        m.clamp_temperature(1e-3, 100.0);
        assert_eq!(m.log_inv_tau(), before);
    }

    #[test]
    fn tensor_names_cover_every_component() {
        let mut m = tiny_model::<f32>(1);
        let mut names = Vec::new();
        m.visit_tensors("", &mut |tv| names.push((tv.name.clone(), tv.kind)));
        let has = |n: &str| names.iter().any(|(name, _)| name == n);
        assert!(has("eeg.block1.conv.wt"));
        assert!(has("eeg.block4.bn.running_var"));
        assert!(has("eeg.fc.w"));
        assert!(has("eeg_head.l1.w"));
        assert!(has("eeg_head.l3.b"));
        assert!(has("text_head.l2.w"));
        assert!(has("temperature.log_inv_tau"));
        let temp = names
            .iter()
            .find(|(n, _)| n == "temperature.log_inv_tau")
            .unwrap();
        assert_eq!(temp.1, TensorKind::Param(ParamGroup::Temperature));
        // A frozen tower contributes no text tensors.
        assert!(!names.iter().any(|(n, _)| n.starts_with("text.")));
    }

    #[test]
    fn fixed_temperature_is_a_buffer_and_bag_tower_is_visible() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let bag = BagEmbedding::<f32>::new(32, 16, 512, 7, &mut rng);
        let mut m = EegClipModel::new(
            tiny_eeg_cfg(),
            TextTower::bag(bag),
            8,
            0.07,
            false,
            &mut rng,
        )
        .unwrap();
        let mut kinds = Vec::new();
        m.visit_tensors("", &mut |tv| kinds.push((tv.name.clone(), tv.kind)));
        let temp = kinds
            .iter()
            .find(|(n, _)| n == "temperature.log_inv_tau")
            .unwrap();
        assert_eq!(temp.1, TensorKind::Buffer);
        assert!(kinds
            .iter()
            .any(|(n, k)| n == "text.emb" && *k == TensorKind::Param(ParamGroup::Text)));

        m.accumulate_temperature_grad(1.0);
        assert_eq!(m.log_inv_tau.grad[0], 0.0);
    }

    /// Pulls the flat values of one named parameter out of the model.
    fn param_values(m: &mut EegClipModel<f64>, name: &str) -> Vec<f64> {
        let mut out = Vec::new();
        m.visit_tensors("", &mut |tv| {
            if tv.name == name {
                out = tv.value.to_vec();
            }
        });
        assert!(!out.is_empty(), "no tensor named {name}");
        out
    }

    fn set_param_entry(m: &mut EegClipModel<f64>, name: &str, idx: usize, v: f64) {
        m.visit_tensors("", &mut |tv| {
            if tv.name == name {
                tv.value[idx] = v;
            }
        });
    }

    fn grad_values(m: &mut EegClipModel<f64>, name: &str) -> Vec<f64> {
        let mut out = Vec::new();
        m.visit_tensors("", &mut |tv| {
            if tv.name == name {
                out = tv.grad.expect("parameter").to_vec();
            }
        });
        out
    }

    /// End-to-end loss of the assembled model on a fixed batch, in eval
    /// mode so repeated forwards are pure.
    fn batch_loss(m: &mut EegClipModel<f64>, x: &Array3<f64>, texts: &[&str]) -> f64 {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let z_eeg = m.encode_windows(x, Mode::Eval, &mut rng).unwrap();
        let z_text = m.encode_texts(texts, Mode::Eval);
        let sim = z_eeg.dot(&z_text.t());
        info_nce_with_grads(&sim, m.log_inv_tau(), true).unwrap().loss
    }

    #[test]
    fn whole_model_gradient_matches_finite_differences() {
        let texts = ["rhythmic slow activity", "low voltage fast record", "sharp waves left"];
        let x = random_batch::<f64>(3, 5);
        let mut m = tiny_model::<f64>(6);

        // Analytic pass.
        zero_grads(&mut m);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let z_eeg = m.encode_windows(&x, Mode::Eval, &mut rng).unwrap();
        let z_text = m.encode_texts(&texts, Mode::Eval);
        let ze = z_eeg.clone();
        let zt = z_text.clone();
        let g = info_nce_with_grads(&ze.dot(&zt.t()), m.log_inv_tau(), true).unwrap();
        m.backward_eeg(&g.d_sim.dot(&zt));
        m.backward_text(&g.d_sim.t().dot(&ze));
        m.accumulate_temperature_grad(g.d_log_inv_tau);

        // Spot-check several parameters across both towers plus the
        // temperature against central differences.
        for name in ["eeg.fc.w", "eeg_head.l1.w", "text_head.l3.w", "temperature.log_inv_tau"] {
            let base = param_values(&mut m, name);
            let analytic = grad_values(&mut m, name);
            let probes: Vec<usize> = if base.len() <= 4 {
                (0..base.len()).collect()
            } else {
                vec![0, base.len() / 3, base.len() - 1]
            };
            for &i in &probes {
                let h = 1e-5;
                set_param_entry(&mut m, name, i, base[i] + h);
                let up = batch_loss(&mut m, &x, &texts);
                set_param_entry(&mut m, name, i, base[i] - h);
                let down = batch_loss(&mut m, &x, &texts);
                set_param_entry(&mut m, name, i, base[i]);
                let fd = (up - down) / (2.0 * h);
                // Hybrid tolerance: absolute floor above finite-difference
                // noise, relative bound for large gradients.
                let tol = 1e-7 + 1e-4 * analytic[i].abs().max(fd.abs());
                assert!(
                    (analytic[i] - fd).abs() < tol,
                    "{name}[{i}]: analytic {} fd {fd}",
                    analytic[i]
                );
            }
        }
    }
}
