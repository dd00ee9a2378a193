//! A small reverse-mode neural-network toolkit on ndarray.
//!
//! Layers own their parameters and caches; forward passes record what the
//! matching backward pass needs, and backward passes accumulate into
//! per-parameter gradient buffers. Everything is generic over the float
//! type: training runs in `f32`, gradient checks in `f64`.
//!
//! There is no autograd graph. Encoders compose layers explicitly and call
//! their backward methods in reverse order, which keeps the computation
//! auditable against finite differences.

pub mod conv;
pub mod layers;

use ndarray::{Array, Dimension};
use rand::Rng;
use std::collections::HashMap;

/// Scalar type for network math. Implemented by `f32` and `f64`.
pub trait Float:
    num_traits::Float
    + num_traits::FromPrimitive
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::DivAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Converts a literal; panics only on non-finite input.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 literal")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("float widens to f64")
    }

    /// Width tag recorded in model snapshots, so a model trained at one
    /// precision is never silently reloaded at another.
    fn dtype_name() -> &'static str {
        match std::mem::size_of::<Self>() {
            4 => "f32",
            8 => "f64",
            _ => "float",
        }
    }
}

impl Float for f32 {}
impl Float for f64 {}

/// Whether stochastic layers are active and batch statistics are used.
/// Caches for backward are recorded in both modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Optimizer group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Full learning rate, weight decay applied.
    Main,
    /// Text-encoder internals: learning rate scaled by the configured ratio.
    Text,
    /// The temperature parameter: full learning rate, no weight decay.
    Temperature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Param(ParamGroup),
    /// Serialized but never touched by the optimizer (e.g. running stats).
    Buffer,
}

/// A flat mutable view of one tensor, yielded by [`Parameterized::visit_tensors`].
pub struct TensorView<'a, F> {
    pub name: String,
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    pub value: &'a mut [F],
    /// Present only for parameters.
    pub grad: Option<&'a mut [F]>,
}

/// Anything holding parameters or buffers the optimizer and serializer
/// should see. Implementations visit tensors in a fixed order with
/// path-like names (`"eeg.fc.w"`).
pub trait Parameterized<F: Float> {
    fn visit_tensors(&mut self, prefix: &str, f: &mut dyn FnMut(TensorView<'_, F>));
}

/// A trainable tensor: value plus accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<F, D: Dimension> {
    pub value: Array<F, D>,
    pub grad: Array<F, D>,
}

impl<F: Float, D: Dimension> Param<F, D> {
    pub fn new(value: Array<F, D>) -> Self {
        let grad = Array::zeros(value.raw_dim());
        Param { value, grad }
    }

    pub fn view(&mut self, name: String, group: ParamGroup) -> TensorView<'_, F> {
        TensorView {
            name,
            kind: TensorKind::Param(group),
            shape: self.value.shape().to_vec(),
            value: self.value.as_slice_mut().expect("params are standard layout"),
            grad: Some(self.grad.as_slice_mut().expect("grads are standard layout")),
        }
    }
}

/// View over a non-trainable buffer.
pub fn buffer_view<'a, F: Float, D: Dimension>(
    name: String,
    value: &'a mut Array<F, D>,
) -> TensorView<'a, F> {
    TensorView {
        name,
        kind: TensorKind::Buffer,
        shape: value.shape().to_vec(),
        value: value.as_slice_mut().expect("buffers are standard layout"),
        grad: None,
    }
}

/// Zeroes every parameter gradient.
pub fn zero_grads<F: Float>(model: &mut impl Parameterized<F>) {
    model.visit_tensors("", &mut |t| {
        if let Some(g) = t.grad {
            for v in g.iter_mut() {
                *v = F::zero();
            }
        }
    });
}

/// Order-sensitive digest over every tensor, parameters and buffers alike.
/// Equal digests mean identical names and bit-identical values; evaluation
/// code uses this to prove a frozen encoder really went untouched.
pub fn tensor_digest<F: Float>(model: &mut impl Parameterized<F>) -> u64 {
    let mut sum = crate::util::Checksum::new();
    model.visit_tensors("", &mut |t| {
        sum.update(t.name.as_bytes());
        sum.update_f64s(t.value.iter().map(|v| v.as_f64()));
    });
    sum.finish()
}

/// Glorot (Xavier) uniform initialization. Sampling happens in f64 so f32
/// and f64 models start from identical values under the same generator
/// state.
pub fn glorot_uniform<F: Float, D: Dimension>(
    rng: &mut impl Rng,
    dim: D,
    fan_in: usize,
    fan_out: usize,
) -> Array<F, D> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut out = Array::zeros(dim);
    for v in out.iter_mut() {
        *v = F::of(rng.gen_range(-limit..limit));
    }
    out
}

/// Adam with PyTorch-style coupled weight decay: the decay term joins the
/// gradient before the moment updates. Moment state is kept in f64 keyed by
/// parameter name.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub text_lr_ratio: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-3,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            text_lr_ratio: 1e-3,
        }
    }
}

#[derive(Debug)]
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    t: u64,
    state: HashMap<String, AdamState>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            state: HashMap::new(),
        }
    }

    /// Applies one update from the accumulated gradients. Gradients are not
    /// cleared; call [`zero_grads`] before the next accumulation.
    pub fn step<F: Float>(&mut self, model: &mut impl Parameterized<F>) {
        self.t += 1;
        let cfg = self.cfg;
        let bias1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bias2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let state = &mut self.state;
        model.visit_tensors("", &mut |tv| {
            let TensorKind::Param(group) = tv.kind else {
                return;
            };
            let grad = tv.grad.expect("parameters carry gradients");
            let (lr, wd) = match group {
                ParamGroup::Main => (cfg.lr, cfg.weight_decay),
                ParamGroup::Text => (cfg.lr * cfg.text_lr_ratio, cfg.weight_decay),
                ParamGroup::Temperature => (cfg.lr, 0.0),
            };
            let entry = state.entry(tv.name).or_insert_with(|| AdamState {
                m: vec![0.0; tv.value.len()],
                v: vec![0.0; tv.value.len()],
            });
            assert_eq!(entry.m.len(), tv.value.len(), "parameter size changed");
            let lanes = tv
                .value
                .iter_mut()
                .zip(grad.iter())
                .zip(entry.m.iter_mut().zip(entry.v.iter_mut()));
            for ((val, g_raw), (m, v)) in lanes {
                let g = g_raw.as_f64() + wd * val.as_f64();
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *val = F::of(val.as_f64() - lr * m_hat / (v_hat.sqrt() + cfg.eps));
            }
        });
    }
}

#[cfg(test)]
pub(crate) mod check {
    //! Finite-difference helpers shared by gradient tests.

    /// Elementwise relative error with an absolute floor, maximized over
    /// the slice.
    pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
        assert_eq!(analytic.len(), numeric.len());
        analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    /// Central finite differences of a scalar function over a flat input.
    pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut grad = vec![0.0; x.len()];
        let mut probe = x.to_vec();
        for i in 0..x.len() {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            grad[i] = (up - down) / (2.0 * h);
        }
        grad
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, Array1};

    struct OneParam {
        p: Param<f64, ndarray::Ix1>,
        group: ParamGroup,
    }

    impl Parameterized<f64> for OneParam {
        fn visit_tensors(&mut self, prefix: &str, f: &mut dyn FnMut(TensorView<'_, f64>)) {
            f(self.p.view(format!("{prefix}p"), self.group));
        }
    }

    fn manual_adam_step(
        theta: f64,
        g_raw: f64,
        cfg: &AdamConfig,
        lr: f64,
        wd: f64,
        m: &mut f64,
        v: &mut f64,
        t: u64,
    ) -> f64 {
        let g = g_raw + wd * theta;
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / (1.0 - cfg.beta1.powi(t as i32));
        let v_hat = *v / (1.0 - cfg.beta2.powi(t as i32));
        theta - lr * m_hat / (v_hat.sqrt() + cfg.eps)
    }

    #[test]
    fn adam_matches_manual_two_steps() {
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.01,
            ..AdamConfig::default()
        };
        let mut model = OneParam {
            p: Param::new(arr1(&[1.0, -2.0])),
            group: ParamGroup::Main,
        };
        let mut opt = Adam::new(cfg);

        let grads = [arr1(&[0.3, -0.7]), arr1(&[-0.2, 0.5])];
        let mut expect = [1.0, -2.0];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        for (t, g) in grads.iter().enumerate() {
            model.p.grad.assign(g);
            opt.step(&mut model);
            for i in 0..2 {
                expect[i] = manual_adam_step(
                    expect[i],
                    g[i],
                    &cfg,
                    cfg.lr,
                    cfg.weight_decay,
                    &mut m[i],
                    &mut v[i],
                    t as u64 + 1,
                );
            }
        }
        for i in 0..2 {
            assert!(
                (model.p.value[i] - expect[i]).abs() < 1e-12,
                "param {i}: {} vs {}",
                model.p.value[i],
                expect[i]
            );
        }
    }

    #[test]
    fn weight_decay_is_coupled_into_gradient() {
        // Zero raw gradient: only the decay term drives the update, and
        // under Adam a constant gradient direction moves by ~lr.
        let cfg = AdamConfig {
            lr: 0.01,
            weight_decay: 0.1,
            ..AdamConfig::default()
        };
        let mut model = OneParam {
            p: Param::new(arr1(&[5.0])),
            group: ParamGroup::Main,
        };
        let mut opt = Adam::new(cfg);
        opt.step(&mut model);
        let g = 0.1 * 5.0;
        let expect = 5.0 - 0.01 * g / (g + cfg.eps);
        assert!((model.p.value[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn text_group_scales_lr_and_temperature_skips_decay() {
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.5,
            text_lr_ratio: 1e-3,
            ..AdamConfig::default()
        };
        // Temperature group with zero gradient: wd off means no movement.
        let mut temp = OneParam {
            p: Param::new(arr1(&[0.7])),
            group: ParamGroup::Temperature,
        };
        Adam::new(cfg).step(&mut temp);
        assert_eq!(temp.p.value[0], 0.7);

        // Same gradient, Main vs Text: movement ratio equals text_lr_ratio.
        let run = |group: ParamGroup| -> f64 {
            let mut m = OneParam {
                p: Param::new(arr1(&[1.0])),
                group,
            };
            m.p.grad.assign(&arr1(&[0.2]));
            let mut opt = Adam::new(AdamConfig {
                weight_decay: 0.0,
                ..cfg
            });
            opt.step(&mut m);
            1.0 - m.p.value[0]
        };
        let main_step = run(ParamGroup::Main);
        let text_step = run(ParamGroup::Text);
        assert!((text_step / main_step - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn zero_grads_clears_only_grads() {
        let mut model = OneParam {
            p: Param::new(arr1(&[1.0, 2.0])),
            group: ParamGroup::Main,
        };
        model.p.grad.assign(&arr1(&[3.0, 4.0]));
        zero_grads(&mut model);
        assert_eq!(model.p.grad, arr1(&[0.0, 0.0]));
        assert_eq!(model.p.value, arr1(&[1.0, 2.0]));
    }

    #[test]
    fn glorot_respects_limit_and_seed() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1);
        let a: Array1<f64> = glorot_uniform(&mut rng, ndarray::Ix1(1000), 50, 50);
        let limit = (6.0 / 100.0_f64).sqrt();
        assert!(a.iter().all(|v| v.abs() < limit));
        // Rough uniformity: mean near 0, spread near limit/sqrt(3).
        let mean = a.sum() / 1000.0;
        assert!(mean.abs() < 0.02);
        let mut rng2 = rand_chacha::ChaCha12Rng::seed_from_u64(1);
        let b: Array1<f64> = glorot_uniform(&mut rng2, ndarray::Ix1(1000), 50, 50);
        assert_eq!(a, b);
    }
}
