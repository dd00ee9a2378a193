//! Projection heads mapping tower embeddings into the shared space.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::nn::layers::{Linear, Relu};
use crate::nn::{Float, Mode, ParamGroup, Parameterized, TensorView};

/// Three fully-connected layers with ReLU between them, followed by row-wise
/// L2 normalization. Hidden widths equal the input width; the output width
/// is the shared-space dimension.
#[derive(Debug, Clone)]
pub struct ProjectionHead<F: Float> {
    l1: Linear<F>,
    r1: Relu<F>,
    l2: Linear<F>,
    r2: Relu<F>,
    l3: Linear<F>,
    norm_eps: f64,
    cache: Option<(Array2<F>, Array1<F>)>,
}

impl<F: Float> ProjectionHead<F> {
    pub fn new(input_dim: usize, shared_dim: usize, group: ParamGroup, rng: &mut impl Rng) -> Self {
        ProjectionHead {
            l1: Linear::new(input_dim, input_dim, group, rng),
            r1: Relu::new(),
            l2: Linear::new(input_dim, input_dim, group, rng),
            r2: Relu::new(),
            l3: Linear::new(input_dim, shared_dim, group, rng),
            norm_eps: 1e-12,
            cache: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.l1.in_dim()
    }

    pub fn shared_dim(&self) -> usize {
        self.l3.out_dim()
    }

    /// Projects a batch of embeddings; every output row has unit L2 norm
    /// (up to the epsilon guard on all-zero rows).
    pub fn forward(&mut self, x: &Array2<F>, mode: Mode) -> Array2<F> {
        let h = self.l1.forward(x, mode);
        let h = self.r1.forward(&h, mode);
        let h = self.l2.forward(&h, mode);
        let h = self.r2.forward(&h, mode);
        let z = self.l3.forward(&h, mode);

        let eps = F::of(self.norm_eps);
        let mut norms = Array1::<F>::zeros(z.nrows());
        let mut y = z.clone();
        for (i, mut row) in y.axis_iter_mut(Axis(0)).enumerate() {
            let norm = row.iter().map(|v| *v * *v).sum::<F>().sqrt();
            let denom = if norm > eps { norm } else { eps };
            norms[i] = denom;
            for v in row.iter_mut() {
                *v /= denom;
            }
        }
        self.cache = Some((y.clone(), norms));
        y
    }

    /// Backward through normalization and the three layers.
    pub fn backward(&mut self, dy: &Array2<F>) -> Array2<F> {
        let (y, norms) = self.cache.take().expect("forward before backward");
        let mut dz = dy.clone();
        for (i, mut row) in dz.axis_iter_mut(Axis(0)).enumerate() {
            let y_row = y.row(i);
            let dot = y_row
                .iter()
                .zip(row.iter())
                .map(|(a, b)| *a * *b)
                .sum::<F>();
            for (d, yv) in row.iter_mut().zip(y_row.iter()) {
                *d = (*d - *yv * dot) / norms[i];
            }
        }
        let d = self.l3.backward(&dz);
        let d = self.r2.backward(&d);
        let d = self.l2.backward(&d);
        let d = self.r1.backward(&d);
        self.l1.backward(&d)
    }
}

impl<F: Float> Parameterized<F> for ProjectionHead<F> {
    fn visit_tensors(&mut self, prefix: &str, f: &mut dyn FnMut(TensorView<'_, F>)) {
        self.l1.visit_tensors(&format!("{prefix}.l1"), f);
        self.l2.visit_tensors(&format!("{prefix}.l2"), f);
        self.l3.visit_tensors(&format!("{prefix}.l3"), f);
    }
}
