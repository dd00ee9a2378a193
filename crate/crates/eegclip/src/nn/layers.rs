//! Dense, activation, dropout, and batch-normalization layers.

use ndarray::{Array, Array1, Array2, Array3, ArrayD, Axis, Dimension};
use rand::{Rng, RngCore};

use super::{buffer_view, Float, Mode, Param, ParamGroup, Parameterized, TensorView};

/// Fully-connected layer: `y = x W^T + b` with `W: [out, in]`.
#[derive(Debug, Clone)]
pub struct Linear<F: Float> {
    pub w: Param<F, ndarray::Ix2>,
    pub b: Param<F, ndarray::Ix1>,
    group: ParamGroup,
    cache_x: Option<Array2<F>>,
}

impl<F: Float> Linear<F> {
    pub fn new(in_dim: usize, out_dim: usize, group: ParamGroup, rng: &mut impl Rng) -> Self {
        let w = super::glorot_uniform(rng, ndarray::Ix2(out_dim, in_dim), in_dim, out_dim);
        Linear {
            w: Param::new(w),
            b: Param::new(Array1::zeros(out_dim)),
            group,
            cache_x: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.value.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.value.nrows()
    }

    pub fn forward(&mut self, x: &Array2<F>, _mode: Mode) -> Array2<F> {
        assert_eq!(x.ncols(), self.in_dim(), "linear input width");
        let y = x.dot(&self.w.value.t()) + &self.b.value;
        self.cache_x = Some(x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Array2<F>) -> Array2<F> {
        let x = self.cache_x.take().expect("forward before backward");
        self.w.grad += &dy.t().dot(&x);
        self.b.grad += &dy.sum_axis(Axis(0));
        dy.dot(&self.w.value)
    }
}

impl<F: Float> Parameterized<F> for Linear<F> {
    fn visit_tensors(&mut self, prefix: &str, f: &mut dyn FnMut(TensorView<'_, F>)) {
        f(self.w.view(format!("{prefix}.w"), self.group));
        f(self.b.view(format!("{prefix}.b"), self.group));
    }
}

/// Exponential linear unit, alpha 1.
#[derive(Debug, Clone, Default)]
pub struct Elu<F: Float> {
    cache_y: Option<ArrayD<F>>,
}

impl<F: Float> Elu<F> {
    pub fn new() -> Self {
        Elu { cache_y: None }
    }

    pub fn forward<D: Dimension>(&mut self, x: &Array<F, D>, _mode: Mode) -> Array<F, D> {
        let y = x.mapv(|v| if v > F::zero() { v } else { v.exp() - F::one() });
        self.cache_y = Some(y.clone().into_dyn());
        y
    }

    pub fn backward<D: Dimension>(&mut self, dy: &Array<F, D>) -> Array<F, D> {
        let y = self
            .cache_y
            .take()
            .expect("forward before backward")
            .into_dimensionality::<D>()
            .expect("cached shape matches");
        // dy/dx = 1 for x>0, else e^x = y + 1.
        let mut dx = y.mapv(|v| if v > F::zero() { F::one() } else { v + F::one() });
        dx *= dy;
        dx
    }
}

/// Rectified linear unit.
#[derive(Debug, Clone, Default)]
pub struct Relu<F: Float> {
    cache_y: Option<ArrayD<F>>,
}

impl<F: Float> Relu<F> {
    pub fn new() -> Self {
        Relu { cache_y: None }
    }

    pub fn forward<D: Dimension>(&mut self, x: &Array<F, D>, _mode: Mode) -> Array<F, D> {
        let y = x.mapv(|v| if v > F::zero() { v } else { F::zero() });
        self.cache_y = Some(y.clone().into_dyn());
        y
    }

    pub fn backward<D: Dimension>(&mut self, dy: &Array<F, D>) -> Array<F, D> {
        let y = self
            .cache_y
            .take()
            .expect("forward before backward")
            .into_dimensionality::<D>()
            .expect("cached shape matches");
        let mut dx = y.mapv(|v| if v > F::zero() { F::one() } else { F::zero() });
        dx *= dy;
        dx
    }
}

/// Inverted dropout: survivors are scaled by `1/(1-p)` during training so
/// evaluation is the identity.
#[derive(Debug, Clone)]
pub struct Dropout<F: Float> {
    pub p: f64,
    cache_mask: Option<ArrayD<F>>,
}

impl<F: Float> Dropout<F> {
    pub fn new(p: f64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout p in [0,1)");
        Dropout { p, cache_mask: None }
    }

    pub fn forward<D: Dimension>(
        &mut self,
        x: &Array<F, D>,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Array<F, D> {
        if mode == Mode::Eval || self.p == 0.0 {
            self.cache_mask = None;
            return x.clone();
        }
        let keep = 1.0 - self.p;
        let scale = F::of(1.0 / keep);
        let mut mask = Array::zeros(x.raw_dim());
        for v in mask.iter_mut() {
            if rng.gen_bool(keep) {
                *v = scale;
            }
        }
        let y = x * &mask;
        self.cache_mask = Some(mask.into_dyn());
        y
    }

    pub fn backward<D: Dimension>(&mut self, dy: &Array<F, D>) -> Array<F, D> {
        match self.cache_mask.take() {
            Some(mask) => {
                let mask = mask.into_dimensionality::<D>().expect("cached shape matches");
                dy * &mask
            }
            None => dy.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct BnCache<F> {
    x_hat: Array3<F>,
    inv_std: Array1<F>,
    mode: Mode,
}

/// Batch normalization over the channel axis of `[batch, channel, time]`
/// tensors. Training normalizes with batch statistics and maintains
/// exponential running statistics; evaluation uses the running values.
#[derive(Debug, Clone)]
pub struct BatchNorm1d<F: Float> {
    pub gamma: Param<F, ndarray::Ix1>,
    pub beta: Param<F, ndarray::Ix1>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
    pub momentum: f64,
    pub eps: f64,
    group: ParamGroup,
    cache: Option<BnCache<F>>,
}

impl<F: Float> BatchNorm1d<F> {
    pub fn new(n_channels: usize, group: ParamGroup) -> Self {
        BatchNorm1d {
            gamma: Param::new(Array1::ones(n_channels)),
            beta: Param::new(Array1::zeros(n_channels)),
            running_mean: Array1::zeros(n_channels),
            running_var: Array1::ones(n_channels),
            momentum: 0.1,
            eps: 1e-5,
            group,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array3<F>, mode: Mode) -> Array3<F> {
        let (n, c, t) = x.dim();
        assert_eq!(c, self.gamma.value.len(), "batchnorm channel count");
        let m = n * t;
        let eps = F::of(self.eps);

        let (mean, inv_std) = match mode {
            Mode::Train => {
                assert!(m > 1, "batch statistics need more than one sample");
                let mut mean = Array1::<F>::zeros(c);
                let mut var = Array1::<F>::zeros(c);
                for ch in 0..c {
                    let lane = x.index_axis(Axis(1), ch);
                    let mu = lane.sum() / F::of(m as f64);
                    let mut acc = F::zero();
                    for &v in lane.iter() {
                        let d = v - mu;
                        acc += d * d;
                    }
                    mean[ch] = mu;
                    var[ch] = acc / F::of(m as f64);
                }
                let mom = F::of(self.momentum);
                let keep = F::of(1.0 - self.momentum);
                // Running variance uses the unbiased estimate.
                let unbias = F::of(m as f64 / (m as f64 - 1.0));
                for ch in 0..c {
                    self.running_mean[ch] = keep * self.running_mean[ch] + mom * mean[ch];
                    self.running_var[ch] =
                        keep * self.running_var[ch] + mom * var[ch] * unbias;
                }
                let inv_std = var.mapv(|v| F::one() / (v + eps).sqrt());
                (mean, inv_std)
            }
            Mode::Eval => {
                let inv_std = self.running_var.mapv(|v| F::one() / (v + eps).sqrt());
                (self.running_mean.clone(), inv_std)
            }
        };

        let mut x_hat = x.clone();
        for ch in 0..c {
            let mu = mean[ch];
            let is = inv_std[ch];
            for v in x_hat.index_axis_mut(Axis(1), ch).iter_mut() {
                *v = (*v - mu) * is;
            }
        }
        let mut y = x_hat.clone();
        for ch in 0..c {
            let g = self.gamma.value[ch];
            let b = self.beta.value[ch];
            for v in y.index_axis_mut(Axis(1), ch).iter_mut() {
                *v = *v * g + b;
            }
        }
        self.cache = Some(BnCache {
            x_hat,
            inv_std,
            mode,
        });
        y
    }

    pub fn backward(&mut self, dy: &Array3<F>) -> Array3<F> {
        let cache = self.cache.take().expect("forward before backward");
        let (n, c, t) = dy.dim();
        let m = F::of((n * t) as f64);
        let mut dx = Array3::<F>::zeros(dy.raw_dim());
        for ch in 0..c {
            let dy_lane = dy.index_axis(Axis(1), ch);
            let xh_lane = cache.x_hat.index_axis(Axis(1), ch);
            let mut sum_dy = F::zero();
            let mut sum_dy_xh = F::zero();
            for (&d, &xh) in dy_lane.iter().zip(xh_lane.iter()) {
                sum_dy += d;
                sum_dy_xh += d * xh;
            }
            self.beta.grad[ch] += sum_dy;
            self.gamma.grad[ch] += sum_dy_xh;

            let g = self.gamma.value[ch];
            let is = cache.inv_std[ch];
            let mut dx_lane = dx.index_axis_mut(Axis(1), ch);
            match cache.mode {
                Mode::Train => {
                    let scale = g * is / m;
                    for ((dst, &d), &xh) in
                        dx_lane.iter_mut().zip(dy_lane.iter()).zip(xh_lane.iter())
                    {
                        *dst = scale * (m * d - sum_dy - xh * sum_dy_xh);
                    }
                }
                Mode::Eval => {
                    let scale = g * is;
                    for (dst, &d) in dx_lane.iter_mut().zip(dy_lane.iter()) {
                        *dst = scale * d;
                    }
                }
            }
        }
        dx
    }
}

impl<F: Float> Parameterized<F> for BatchNorm1d<F> {
    fn visit_tensors(&mut self, prefix: &str, f: &mut dyn FnMut(TensorView<'_, F>)) {
        f(self.gamma.view(format!("{prefix}.gamma"), self.group));
        f(self.beta.view(format!("{prefix}.beta"), self.group));
        f(buffer_view(
            format!("{prefix}.running_mean"),
            &mut self.running_mean,
        ));
        f(buffer_view(
            format!("{prefix}.running_var"),
            &mut self.running_var,
        ));
    }
}

/// Max pooling over the time axis of `[batch, channel, time]`.
#[derive(Debug, Clone)]
pub struct MaxPool1d<F: Float> {
    pub size: usize,
    pub stride: usize,
    cache: Option<(Vec<usize>, usize)>,
    _marker: std::marker::PhantomData<F>,
}

impl<F: Float> MaxPool1d<F> {
    pub fn new(size: usize, stride: usize) -> Self {
        assert!(size > 0 && stride > 0);
        MaxPool1d {
            size,
            stride,
            cache: None,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn out_len(&self, t: usize) -> usize {
        assert!(t >= self.size, "pool input shorter than window");
        (t - self.size) / self.stride + 1
    }

    pub fn forward(&mut self, x: &Array3<F>, _mode: Mode) -> Array3<F> {
        let (n, c, t) = x.dim();
        let to = self.out_len(t);
        let mut y = Array3::<F>::zeros((n, c, to));
        let mut argmax = vec![0usize; n * c * to];
        for b in 0..n {
            for ch in 0..c {
                for o in 0..to {
                    let base = o * self.stride;
                    let mut best = x[[b, ch, base]];
                    let mut best_t = base;
                    for k in 1..self.size {
                        let v = x[[b, ch, base + k]];
                        if v > best {
                            best = v;
                            best_t = base + k;
                        }
                    }
                    y[[b, ch, o]] = best;
                    argmax[(b * c + ch) * to + o] = best_t;
                }
            }
        }
        self.cache = Some((argmax, t));
        y
    }

    pub fn backward(&mut self, dy: &Array3<F>) -> Array3<F> {
        let (argmax, t_in) = self.cache.take().expect("forward before backward");
        let (n, c, to) = dy.dim();
        let mut dx = Array3::<F>::zeros((n, c, t_in));
        for b in 0..n {
            for ch in 0..c {
                for o in 0..to {
                    let src = argmax[(b * c + ch) * to + o];
                    dx[[b, ch, src]] += dy[[b, ch, o]];
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check::{central_diff, max_rel_err};
    use ndarray::{arr1, arr2, arr3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rand_array<D: Dimension>(rng: &mut ChaCha12Rng, dim: D) -> Array<f64, D> {
        let mut a = Array::zeros(dim);
        for v in a.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        a
    }

    #[test]
    fn linear_matches_manual() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut lin = Linear::<f64>::new(2, 3, ParamGroup::Main, &mut rng);
        lin.w.value = arr2(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        lin.b.value = arr1(&[0.1, 0.2, 0.3]);
        let x = arr2(&[[1.0, -1.0]]);
        let y = lin.forward(&x, Mode::Eval);
        assert_eq!(y, arr2(&[[-0.9, -0.8, -0.7]]));
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let x = rand_array(&mut rng, ndarray::Ix2(4, 3));
        let r = rand_array(&mut rng, ndarray::Ix2(4, 2));
        let mut lin = Linear::<f64>::new(3, 2, ParamGroup::Main, &mut rng);

        // Scalar objective: sum(forward(x) * r).
        lin.forward(&x, Mode::Train);
        let dx = lin.backward(&r);

        let w0 = lin.w.value.clone();
        let mut f_input = |flat: &[f64]| {
            let xp = Array2::from_shape_vec((4, 3), flat.to_vec()).unwrap();
            (lin.forward(&xp, Mode::Train) * &r).sum()
        };
        let fd_x = central_diff(&mut f_input, x.as_slice().unwrap(), 1e-6);
        assert!(max_rel_err(dx.as_slice().unwrap(), &fd_x) < 1e-7);

        let mut f_w = |flat: &[f64]| {
            let mut l2 = Linear::<f64>::new(3, 2, ParamGroup::Main, &mut ChaCha12Rng::seed_from_u64(9));
            l2.w.value = Array2::from_shape_vec((2, 3), flat.to_vec()).unwrap();
            l2.b.value = arr1(&[0.0, 0.0]);
            (l2.forward(&x, Mode::Train) * &r).sum()
        };
        let mut lin_for_grad = Linear::<f64>::new(3, 2, ParamGroup::Main, &mut ChaCha12Rng::seed_from_u64(9));
        lin_for_grad.w.value = w0.clone();
        lin_for_grad.b.value = arr1(&[0.0, 0.0]);
        lin_for_grad.forward(&x, Mode::Train);
        lin_for_grad.backward(&r);
        let fd_w = central_diff(&mut f_w, w0.as_slice().unwrap(), 1e-6);
        assert!(max_rel_err(lin_for_grad.w.grad.as_slice().unwrap(), &fd_w) < 1e-7);
    }

    #[test]
    fn elu_values_and_gradient() {
        let mut elu = Elu::<f64>::new();
        let x = arr1(&[1.5, 0.0, -1.0]);
        let y = elu.forward(&x, Mode::Train);
        assert!((y[0] - 1.5).abs() < 1e-12);
        assert_eq!(y[1], 0.0);
        assert!((y[2] - ((-1.0f64).exp() - 1.0)).abs() < 1e-12);

        // Finite differences away from the hinge at zero, where the
        // second-order term would dominate the comparison.
        let x_fd = arr1(&[1.5, 0.3, -1.0]);
        let r = arr1(&[1.0, -2.0, 0.5]);
        let mut elu2 = Elu::<f64>::new();
        elu2.forward(&x_fd, Mode::Train);
        let dx = elu2.backward(&r);
        let mut f = |flat: &[f64]| {
            let xp = arr1(flat);
            (Elu::<f64>::new().forward(&xp, Mode::Train) * &r).sum()
        };
        let fd = central_diff(&mut f, x_fd.as_slice().unwrap(), 1e-6);
        assert!(max_rel_err(dx.as_slice().unwrap(), &fd) < 1e-7);
    }

    #[test]
    fn relu_gradient_matches() {
        let mut relu = Relu::<f64>::new();
        let x = arr1(&[2.0, -3.0, 0.5]);
        let r = arr1(&[0.7, -0.4, 1.1]);
        relu.forward(&x, Mode::Train);
        let dx = relu.backward(&r);
        assert_eq!(dx, arr1(&[0.7, 0.0, 1.1]));
    }

    #[test]
    fn dropout_eval_is_identity_and_train_masks() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut drop = Dropout::<f64>::new(0.5);
        let x = Array2::<f64>::ones((50, 40));
        let y_eval = drop.forward(&x, Mode::Eval, &mut rng);
        assert_eq!(y_eval, x);

        let y = drop.forward(&x, Mode::Train, &mut rng);
        let zeros = y.iter().filter(|v| **v == 0.0).count();
        let frac = zeros as f64 / 2000.0;
        assert!((frac - 0.5).abs() < 0.05, "zero fraction {frac}");
        for v in y.iter() {
            assert!(*v == 0.0 || (*v - 2.0).abs() < 1e-12);
        }
        // Backward applies the identical mask.
        let dy = Array2::<f64>::ones((50, 40));
        let dx = drop.backward(&dy);
        for (a, b) in y.iter().zip(dx.iter()) {
            assert_eq!(*a != 0.0, *b != 0.0);
        }
    }

    #[test]
    fn batchnorm_train_normalizes_and_tracks_running_stats() {
        let mut bn = BatchNorm1d::<f64>::new(2, ParamGroup::Main);
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let mut x = rand_array(&mut rng, ndarray::Ix3(8, 2, 16));
        // Shift channel 1 so the channels differ.
        for v in x.index_axis_mut(Axis(1), 1).iter_mut() {
            *v = *v * 3.0 + 5.0;
        }
        let y = bn.forward(&x, Mode::Train);
        for ch in 0..2 {
            let lane = y.index_axis(Axis(1), ch);
            let m = lane.sum() / 128.0;
            let var = lane.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 128.0;
            assert!(m.abs() < 1e-10, "channel {ch} mean {m}");
            assert!((var - 1.0).abs() < 1e-3, "channel {ch} var {var}");
        }
        // One update moves running stats 10% toward batch stats:
        // mean ~0.1*5, var ~0.9 + 0.1*3.
        assert!(bn.running_mean[1] > 0.4);
        assert!(bn.running_var[1] > 1.1);

        // Eval mode uses running stats: a zero input maps off zero.
        let x0 = Array3::<f64>::zeros((1, 2, 4));
        let y0 = bn.forward(&x0, Mode::Eval);
        assert!(y0[[0, 1, 0]] < 0.0);
    }

    #[test]
    fn batchnorm_gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let x = rand_array(&mut rng, ndarray::Ix3(3, 2, 5));
        let r = rand_array(&mut rng, ndarray::Ix3(3, 2, 5));

        for mode in [Mode::Train, Mode::Eval] {
            let make = || {
                let mut bn = BatchNorm1d::<f64>::new(2, ParamGroup::Main);
                bn.gamma.value = arr1(&[1.3, 0.7]);
                bn.beta.value = arr1(&[0.2, -0.1]);
                bn.running_mean = arr1(&[0.1, -0.3]);
                bn.running_var = arr1(&[0.9, 1.4]);
                bn
            };
            let mut bn = make();
            bn.forward(&x, mode);
            let dx = bn.backward(&r);

            let mut f = |flat: &[f64]| {
                let xp = Array3::from_shape_vec((3, 2, 5), flat.to_vec()).unwrap();
                (make().forward(&xp, mode) * &r).sum()
            };
            let fd = central_diff(&mut f, x.as_slice().unwrap(), 1e-6);
            assert!(
                max_rel_err(dx.as_slice().unwrap(), &fd) < 1e-6,
                "mode {mode:?}"
            );

            // Gamma gradient, train mode only (eval is the same path).
            if mode == Mode::Train {
                let mut f_g = |flat: &[f64]| {
                    let mut bn = make();
                    bn.gamma.value = arr1(flat);
                    (bn.forward(&x, mode) * &r).sum()
                };
                let fd_g = central_diff(&mut f_g, &[1.3, 0.7], 1e-6);
                assert!(max_rel_err(bn.gamma.grad.as_slice().unwrap(), &fd_g) < 1e-6);
            }
        }
    }

    #[test]
    fn maxpool_values_and_scatter() {
        let mut pool = MaxPool1d::<f64>::new(3, 3);
        let x = arr3(&[[[1.0, 5.0, 2.0, 0.0, -1.0, 4.0, 9.0]]]);
        let y = pool.forward(&x, Mode::Train);
        assert_eq!(y, arr3(&[[[5.0, 4.0]]]));
        let dy = arr3(&[[[1.0, 2.0]]]);
        let dx = pool.backward(&dy);
        assert_eq!(dx, arr3(&[[[0.0, 1.0, 0.0, 0.0, 0.0, 2.0, 0.0]]]));
    }

    #[test]
    fn maxpool_gradient_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let x = rand_array(&mut rng, ndarray::Ix3(2, 3, 11));
        let r = rand_array(&mut rng, ndarray::Ix3(2, 3, 3));
        let mut pool = MaxPool1d::<f64>::new(3, 3);
        pool.forward(&x, Mode::Train);
        let dx = pool.backward(&r);
        let mut f = |flat: &[f64]| {
            let xp = Array3::from_shape_vec((2, 3, 11), flat.to_vec()).unwrap();
            (MaxPool1d::<f64>::new(3, 3).forward(&xp, Mode::Train) * &r).sum()
        };
        let fd = central_diff(&mut f, x.as_slice().unwrap(), 1e-6);
        assert!(max_rel_err(dx.as_slice().unwrap(), &fd) < 1e-7);
    }
}
