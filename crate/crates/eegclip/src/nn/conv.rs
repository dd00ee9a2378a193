//! Valid-mode 1-d convolutions via im2col and matrix multiplication.

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::Rng;
use std::ops::AddAssign;

use super::{Float, Mode, Param, ParamGroup, Parameterized, TensorView};

/// Unrolls `[n, c, t]` into `[n*t_out, c*k]` so convolution becomes one
/// matrix product. Row `b*t_out + o`, column `ci*k + kk` holds
/// `x[b, ci, o + kk]`.
fn im2col<F: Float>(x: &Array3<F>, k: usize) -> Array2<F> {
    let (n, c, t) = x.dim();
    assert!(t >= k, "conv input shorter than kernel");
    let t_out = t - k + 1;
    let mut col = Array2::<F>::zeros((n * t_out, c * k));
    for b in 0..n {
        for ci in 0..c {
            let lane = x.slice(s![b, ci, ..]);
            for o in 0..t_out {
                let row = b * t_out + o;
                for kk in 0..k {
                    col[[row, ci * k + kk]] = lane[o + kk];
                }
            }
        }
    }
    col
}

/// Scatters column-space gradients back to input space (the adjoint of
/// [`im2col`]).
fn col2im<F: Float>(dcol: &Array2<F>, n: usize, c: usize, t: usize, k: usize) -> Array3<F> {
    let t_out = t - k + 1;
    let mut dx = Array3::<F>::zeros((n, c, t));
    for b in 0..n {
        for ci in 0..c {
            for o in 0..t_out {
                let row = b * t_out + o;
                for kk in 0..k {
                    dx[[b, ci, o + kk]] += dcol[[row, ci * k + kk]];
                }
            }
        }
    }
    dx
}

/// Shared forward: returns the output and the cached unrolled input.
/// `w2` is the kernel flattened to `[c_out, c_in*k]`.
fn conv_forward<F: Float>(
    x: &Array3<F>,
    w2: &Array2<F>,
    b: &Array1<F>,
    k: usize,
) -> (Array3<F>, Array2<F>) {
    let (n, _c, t) = x.dim();
    let t_out = t - k + 1;
    let c_out = w2.nrows();
    let col = im2col(x, k);
    let y_rows = col.dot(&w2.t()) + b; // [n*t_out, c_out]
    let mut y = Array3::<F>::zeros((n, c_out, t_out));
    for bi in 0..n {
        for o in 0..t_out {
            let row = bi * t_out + o;
            for co in 0..c_out {
                y[[bi, co, o]] = y_rows[[row, co]];
            }
        }
    }
    (y, col)
}

/// Shared backward. Returns `(dw2, db, dx)`.
fn conv_backward<F: Float>(
    dy: &Array3<F>,
    col: &Array2<F>,
    w2: &Array2<F>,
    n: usize,
    c_in: usize,
    t_in: usize,
    k: usize,
) -> (Array2<F>, Array1<F>, Array3<F>) {
    let (_, c_out, t_out) = dy.dim();
    let mut dy_rows = Array2::<F>::zeros((n * t_out, c_out));
    for bi in 0..n {
        for o in 0..t_out {
            let row = bi * t_out + o;
            for co in 0..c_out {
                dy_rows[[row, co]] = dy[[bi, co, o]];
            }
        }
    }
    let dw2 = dy_rows.t().dot(col);
    let db = dy_rows.sum_axis(Axis(0));
    let dcol = dy_rows.dot(w2);
    let dx = col2im(&dcol, n, c_in, t_in, k);
    (dw2, db, dx)
}

/// Plain 1-d convolution, stride 1, no padding. Weight `[c_out, c_in, k]`.
#[derive(Debug, Clone)]
pub struct Conv1d<F: Float> {
    pub w: Param<F, ndarray::Ix3>,
    pub b: Param<F, ndarray::Ix1>,
    group: ParamGroup,
    cache: Option<(Array2<F>, usize, usize)>,
}

impl<F: Float> Conv1d<F> {
    pub fn new(
        c_in: usize,
        c_out: usize,
        k: usize,
        group: ParamGroup,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = c_in * k;
        let fan_out = c_out * k;
        let w = super::glorot_uniform(rng, ndarray::Ix3(c_out, c_in, k), fan_in, fan_out);
        Conv1d {
            w: Param::new(w),
            b: Param::new(Array1::zeros(c_out)),
            group,
            cache: None,
        }
    }

    pub fn kernel(&self) -> usize {
        self.w.value.dim().2
    }

    pub fn out_len(&self, t: usize) -> usize {
        t - self.kernel() + 1
    }

    fn w2(&self) -> Array2<F> {
        let (co, ci, k) = self.w.value.dim();
        self.w
            .value
            .view()
            .into_shape_with_order((co, ci * k))
            .expect("weights are standard layout")
            .to_owned()
    }

    pub fn forward(&mut self, x: &Array3<F>, _mode: Mode) -> Array3<F> {
        let (n, c, t) = x.dim();
        assert_eq!(c, self.w.value.dim().1, "conv input channels");
        let (y, col) = conv_forward(x, &self.w2(), &self.b.value, self.kernel());
        self.cache = Some((col, n, t));
        y
    }

    pub fn backward(&mut self, dy: &Array3<F>) -> Array3<F> {
        let (col, n, t_in) = self.cache.take().expect("forward before backward");
        let (co, ci, k) = self.w.value.dim();
        let (dw2, db, dx) = conv_backward(dy, &col, &self.w2(), n, ci, t_in, k);
        let dw = dw2
            .into_shape_with_order((co, ci, k))
            .expect("gradient reshapes to kernel");
        self.w.grad += &dw;
        self.b.grad += &db;
        dx
    }
}

impl<F: Float> Parameterized<F> for Conv1d<F> {
    fn visit_tensors(&mut self, prefix: &str, f: &mut dyn FnMut(TensorView<'_, F>)) {
        f(self.w.view(format!("{prefix}.w"), self.group));
        f(self.b.view(format!("{prefix}.b"), self.group));
    }
}

/// First-block convolution factored into a temporal kernel per feature and
/// a spatial mix over electrodes, with no nonlinearity in between. The two
/// stages are fused at compute time into one equivalent kernel
/// `weq[g,c,tau] = sum_f ws[g,f,c] * wt[f,tau]`, which avoids materializing
/// the large intermediate while keeping the exact function and gradients of
/// the two-stage form.
#[derive(Debug, Clone)]
pub struct FactoredConv<F: Float> {
    /// Temporal kernels `[n_filters_t, k]`.
    pub wt: Param<F, ndarray::Ix2>,
    /// Spatial mix `[n_out, n_filters_t, n_channels]`.
    pub ws: Param<F, ndarray::Ix3>,
    pub b: Param<F, ndarray::Ix1>,
    group: ParamGroup,
    cache: Option<(Array2<F>, Array3<F>, usize, usize)>,
}

impl<F: Float> FactoredConv<F> {
    pub fn new(
        n_channels: usize,
        n_filters_t: usize,
        n_out: usize,
        k: usize,
        group: ParamGroup,
        rng: &mut impl Rng,
    ) -> Self {
        let wt = super::glorot_uniform(rng, ndarray::Ix2(n_filters_t, k), k, n_filters_t);
        let ws = super::glorot_uniform(
            rng,
            ndarray::Ix3(n_out, n_filters_t, n_channels),
            n_filters_t * n_channels,
            n_out,
        );
        FactoredConv {
            wt: Param::new(wt),
            ws: Param::new(ws),
            b: Param::new(Array1::zeros(n_out)),
            group,
            cache: None,
        }
    }

    pub fn kernel(&self) -> usize {
        self.wt.value.ncols()
    }

    pub fn out_len(&self, t: usize) -> usize {
        t - self.kernel() + 1
    }

    /// The fused equivalent kernel `[n_out, n_channels, k]`.
    pub fn equivalent_kernel(&self) -> Array3<F> {
        let (n_out, _nf, n_ch) = self.ws.value.dim();
        let k = self.kernel();
        let mut weq = Array3::<F>::zeros((n_out, n_ch, k));
        for c in 0..n_ch {
            let mix = self.ws.value.slice(s![.., .., c]); // [n_out, nf]
            let per_channel = mix.dot(&self.wt.value); // [n_out, k]
            weq.slice_mut(s![.., c, ..]).assign(&per_channel);
        }
        weq
    }

    pub fn forward(&mut self, x: &Array3<F>, _mode: Mode) -> Array3<F> {
        let (n, c, t) = x.dim();
        assert_eq!(c, self.ws.value.dim().2, "factored conv input channels");
        let weq = self.equivalent_kernel();
        let (n_out, n_ch, k) = weq.dim();
        let w2 = weq
            .view()
            .into_shape_with_order((n_out, n_ch * k))
            .expect("fused kernel is standard layout")
            .to_owned();
        let (y, col) = conv_forward(x, &w2, &self.b.value, k);
        self.cache = Some((col, weq, n, t));
        y
    }

    pub fn backward(&mut self, dy: &Array3<F>) -> Array3<F> {
        let (col, weq, n, t_in) = self.cache.take().expect("forward before backward");
        let (n_out, n_ch, k) = weq.dim();
        let w2 = weq
            .view()
            .into_shape_with_order((n_out, n_ch * k))
            .expect("fused kernel is standard layout")
            .to_owned();
        let (dw2, db, dx) = conv_backward(dy, &col, &w2, n, n_ch, t_in, k);
        let dweq = dw2
            .into_shape_with_order((n_out, n_ch, k))
            .expect("gradient reshapes to kernel");

        // Chain through the factorization:
        //   dwt[f,tau] = sum_{g,c} dweq[g,c,tau] * ws[g,f,c]
        //   dws[g,f,c] = sum_tau dweq[g,c,tau] * wt[f,tau]
        for c in 0..n_ch {
            let dweq_c = dweq.slice(s![.., c, ..]); // [n_out, k]
            let ws_c = self.ws.value.slice(s![.., .., c]); // [n_out, nf]
            self.wt.grad += &ws_c.t().dot(&dweq_c);
            let dws_c = dweq_c.dot(&self.wt.value.t()); // [n_out, nf]
            self.ws.grad.slice_mut(s![.., .., c]).add_assign(&dws_c);
        }
        self.b.grad += &db;
        dx
    }
}

impl<F: Float> Parameterized<F> for FactoredConv<F> {
    fn visit_tensors(&mut self, prefix: &str, f: &mut dyn FnMut(TensorView<'_, F>)) {
        f(self.wt.view(format!("{prefix}.wt"), self.group));
        f(self.ws.view(format!("{prefix}.ws"), self.group));
        f(self.b.view(format!("{prefix}.b"), self.group));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check::{central_diff, max_rel_err};
    use ndarray::Array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rand3(rng: &mut ChaCha12Rng, d: (usize, usize, usize)) -> Array3<f64> {
        let mut a = Array3::zeros(d);
        for v in a.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        a
    }

    /// Reference convolution by direct summation.
    fn conv_naive(x: &Array3<f64>, w: &Array3<f64>, b: &Array1<f64>) -> Array3<f64> {
        let (n, c_in, t) = x.dim();
        let (c_out, _, k) = w.dim();
        let t_out = t - k + 1;
        let mut y = Array3::zeros((n, c_out, t_out));
        for bi in 0..n {
            for co in 0..c_out {
                for o in 0..t_out {
                    let mut acc = b[co];
                    for ci in 0..c_in {
                        for kk in 0..k {
                            acc += x[[bi, ci, o + kk]] * w[[co, ci, kk]];
                        }
                    }
                    y[[bi, co, o]] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_naive_reference() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let x = rand3(&mut rng, (2, 3, 12));
        let mut conv = Conv1d::<f64>::new(3, 4, 5, ParamGroup::Main, &mut rng);
        for v in conv.b.value.iter_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
        let y = conv.forward(&x, Mode::Train);
        let y_ref = conv_naive(&x, &conv.w.value, &conv.b.value);
        let err = (&y - &y_ref).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-12, "max err {err}");
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let x = rand3(&mut rng, (2, 3, 10));
        let r = rand3(&mut rng, (2, 4, 7));
        let w0: Array3<f64> = {
            let c = Conv1d::<f64>::new(3, 4, 4, ParamGroup::Main, &mut ChaCha12Rng::seed_from_u64(2));
            c.w.value.clone()
        };
        let b0 = Array1::from_vec(vec![0.1, -0.2, 0.3, 0.0]);

        let mut conv = Conv1d::<f64>::new(3, 4, 4, ParamGroup::Main, &mut ChaCha12Rng::seed_from_u64(2));
        conv.b.value = b0.clone();
        conv.forward(&x, Mode::Train);
        let dx = conv.backward(&r);

        let mut f_x = |flat: &[f64]| {
            let xp = Array3::from_shape_vec((2, 3, 10), flat.to_vec()).unwrap();
            let mut c = Conv1d::<f64>::new(3, 4, 4, ParamGroup::Main, &mut ChaCha12Rng::seed_from_u64(2));
            c.b.value = b0.clone();
            (c.forward(&xp, Mode::Train) * &r).sum()
        };
        let fd_x = central_diff(&mut f_x, x.as_slice().unwrap(), 1e-6);
        assert!(max_rel_err(dx.as_slice().unwrap(), &fd_x) < 1e-7);

        let mut f_w = |flat: &[f64]| {
            let mut c = Conv1d::<f64>::new(3, 4, 4, ParamGroup::Main, &mut ChaCha12Rng::seed_from_u64(2));
            c.w.value = Array3::from_shape_vec((4, 3, 4), flat.to_vec()).unwrap();
            c.b.value = b0.clone();
            (c.forward(&x, Mode::Train) * &r).sum()
        };
        let fd_w = central_diff(&mut f_w, w0.as_slice().unwrap(), 1e-6);
        assert!(max_rel_err(conv.w.grad.as_slice().unwrap(), &fd_w) < 1e-7);
        let mut f_b = |flat: &[f64]| {
            let mut c = Conv1d::<f64>::new(3, 4, 4, ParamGroup::Main, &mut ChaCha12Rng::seed_from_u64(2));
            c.b.value = Array1::from_vec(flat.to_vec());
            (c.forward(&x, Mode::Train) * &r).sum()
        };
        let fd_b = central_diff(&mut f_b, b0.as_slice().unwrap(), 1e-6);
        assert!(max_rel_err(conv.b.grad.as_slice().unwrap(), &fd_b) < 1e-7);
    }

    #[test]
    fn factored_conv_equals_explicit_two_stage() {
        // Reference: temporal conv per channel, then 1x1 spatial mix.
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let x = rand3(&mut rng, (2, 3, 9));
        let fact = FactoredConv::<f64>::new(3, 4, 5, 2, ParamGroup::Main, &mut rng);
        let mut fact2 = fact.clone();
        let y = fact2.forward(&x, Mode::Train);

        let (n, c, t) = x.dim();
        let k = 2;
        let t_out = t - k + 1;
        // Stage 1: every (channel, temporal filter) pair.
        let mut stage1 = Array::zeros((n, 4, c, t_out));
        for bi in 0..n {
            for f in 0..4 {
                for ci in 0..c {
                    for o in 0..t_out {
                        let mut acc = 0.0;
                        for kk in 0..k {
                            acc += x[[bi, ci, o + kk]] * fact.wt.value[[f, kk]];
                        }
                        stage1[[bi, f, ci, o]] = acc;
                    }
                }
            }
        }
        // Stage 2: mix across (filter, channel).
        let mut y_ref = Array3::zeros((n, 5, t_out));
        for bi in 0..n {
            for g in 0..5 {
                for o in 0..t_out {
                    let mut acc = fact.b.value[g];
                    for f in 0..4 {
                        for ci in 0..c {
                            acc += fact.ws.value[[g, f, ci]] * stage1[[bi, f, ci, o]];
                        }
                    }
                    y_ref[[bi, g, o]] = acc;
                }
            }
        }
        let err = (&y - &y_ref).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-12, "max err {err}");
    }

    #[test]
    fn factored_conv_gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let x = rand3(&mut rng, (2, 3, 8));
        let r = rand3(&mut rng, (2, 5, 6));
        let make = || FactoredConv::<f64>::new(3, 4, 5, 3, ParamGroup::Main, &mut ChaCha12Rng::seed_from_u64(5));

        let mut fc = make();
        fc.forward(&x, Mode::Train);
        let dx = fc.backward(&r);

        let mut f_x = |flat: &[f64]| {
            let xp = Array3::from_shape_vec((2, 3, 8), flat.to_vec()).unwrap();
            (make().forward(&xp, Mode::Train) * &r).sum()
        };
        let fd_x = central_diff(&mut f_x, x.as_slice().unwrap(), 1e-6);
        assert!(max_rel_err(dx.as_slice().unwrap(), &fd_x) < 1e-7);

        let wt0 = make().wt.value.clone();
        let mut f_wt = |flat: &[f64]| {
            let mut c = make();
            c.wt.value = Array2::from_shape_vec((4, 3), flat.to_vec()).unwrap();
            (c.forward(&x, Mode::Train) * &r).sum()
        };
        let fd_wt = central_diff(&mut f_wt, wt0.as_slice().unwrap(), 1e-6);
        assert!(max_rel_err(fc.wt.grad.as_slice().unwrap(), &fd_wt) < 1e-7);

        let ws0 = make().ws.value.clone();
        let mut f_ws = |flat: &[f64]| {
            let mut c = make();
            c.ws.value = Array3::from_shape_vec((5, 4, 3), flat.to_vec()).unwrap();
            (c.forward(&x, Mode::Train) * &r).sum()
        };
        let fd_ws = central_diff(&mut f_ws, ws0.as_slice().unwrap(), 1e-6);
        assert!(max_rel_err(fc.ws.grad.as_slice().unwrap(), &fd_ws) < 1e-7);
    }
}
