//! Sine-activated coordinate networks: architecture, initialization, forward
//! evaluation, gradients and masked Adam training.
//!
//! A network with `n` hidden layers of width `D` maps an `I`-dimensional
//! coordinate to an `O`-dimensional value:
//!
//! ```text
//! h_0 = x
//! h_{i+1} = sin(omega0 * (W_i h_i + b_i))   for i in 0..n
//! y = W_n h_n + b_n
//! ```
//!
//! Weight matrices are row-major with shapes `W_0: D x I`, `W_i: D x D` for
//! `0 < i < n`, and `W_n: O x D`. All production state is `f32`; every numeric
//! routine is generic over [`Real`] so tests can run the identical code path
//! in `f64`.

mod backprop;
mod optim;

pub use backprop::{loss_and_grads, loss_and_grads_serial, Batch};
pub use optim::{adam_step, fit, AdamState, FitResult};

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;

/// Scalar type the network math is generic over (`f32` in production,
/// `f64` for the finite-difference test path).
pub trait Real: Float + Send + Sync + std::fmt::Debug + 'static {}
impl<T> Real for T where T: Float + Send + Sync + std::fmt::Debug + 'static {}

#[inline]
fn real<T: Real>(x: f32) -> T {
    T::from(x).expect("f32 converts to any Real")
}

/// Fixed batch-chunk length for loss/gradient reduction. Chunk partials are
/// folded in chunk order, so results are bit-identical for any worker count.
pub(crate) const CHUNK: usize = 1024;

/// Architecture descriptor for one network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SirenSpec {
    /// Input coordinate dimension `I`.
    pub in_dim: usize,
    /// Output value dimension `O`.
    pub out_dim: usize,
    /// Number of hidden layers `n` (>= 1).
    pub hidden_layers: usize,
    /// Hidden width `D`.
    pub width: usize,
    /// Frequency scale applied to every hidden pre-activation.
    pub omega0: f32,
}

impl SirenSpec {
    pub const DEFAULT_OMEGA0: f32 = 30.0;

    pub fn new(in_dim: usize, out_dim: usize, hidden_layers: usize, width: usize) -> Self {
        SirenSpec {
            in_dim,
            out_dim,
            hidden_layers,
            width,
            omega0: Self::DEFAULT_OMEGA0,
        }
    }

    pub fn with_omega0(mut self, omega0: f32) -> Self {
        self.omega0 = omega0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::InvalidSpec("in_dim and out_dim must be > 0".into()));
        }
        if self.hidden_layers == 0 {
            return Err(Error::InvalidSpec("at least one hidden layer".into()));
        }
        if self.width == 0 {
            return Err(Error::InvalidSpec("width must be > 0".into()));
        }
        if !(self.omega0.is_finite() && self.omega0 > 0.0) {
            return Err(Error::InvalidSpec("omega0 must be finite and > 0".into()));
        }
        Ok(())
    }

    /// Number of parameter tensors per kind: `n + 1` weight matrices and
    /// `n + 1` bias vectors.
    #[inline]
    pub fn layer_count(&self) -> usize {
        self.hidden_layers + 1
    }

    /// `(rows, cols)` of weight matrix `i`, `0 <= i <= n`.
    pub fn weight_shape(&self, layer: usize) -> (usize, usize) {
        let n = self.hidden_layers;
        debug_assert!(layer <= n);
        let rows = if layer == n { self.out_dim } else { self.width };
        let cols = if layer == 0 { self.in_dim } else { self.width };
        (rows, cols)
    }

    /// Length of bias vector `i`.
    pub fn bias_len(&self, layer: usize) -> usize {
        if layer == self.hidden_layers {
            self.out_dim
        } else {
            self.width
        }
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        let (i, o, n, d) = (self.in_dim, self.out_dim, self.hidden_layers, self.width);
        d * i + (n - 1) * d * d + o * d + n * d + o
    }
}

/// Ordered weight matrices and bias vectors of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSetOf<T> {
    pub weights: Vec<Mat<T>>,
    pub biases: Vec<Vec<T>>,
}

/// Production (32-bit) weight set.
pub type WeightSet = WeightSetOf<f32>;

/// Gradients share the exact tensor shapes of the weight set they derive from.
pub type GradientsOf<T> = WeightSetOf<T>;

impl<T: Real> WeightSetOf<T> {
    /// All-zero parameters conforming to `spec`.
    pub fn zeros(spec: &SirenSpec) -> Self {
        let weights = (0..spec.layer_count())
            .map(|l| {
                let (r, c) = spec.weight_shape(l);
                Mat::from_elem(r, c, T::zero())
            })
            .collect();
        let biases = (0..spec.layer_count())
            .map(|l| vec![T::zero(); spec.bias_len(l)])
            .collect();
        WeightSetOf { weights, biases }
    }

    /// Checks that every tensor shape matches `spec`.
    pub fn conforms(&self, spec: &SirenSpec) -> Result<()> {
        if self.weights.len() != spec.layer_count() || self.biases.len() != spec.layer_count() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} layers, got {} weight / {} bias tensors",
                spec.layer_count(),
                self.weights.len(),
                self.biases.len()
            )));
        }
        for l in 0..spec.layer_count() {
            let (r, c) = spec.weight_shape(l);
            let w = &self.weights[l];
            if (w.rows(), w.cols()) != (r, c) {
                return Err(Error::ShapeMismatch(format!(
                    "weight {l}: expected {r}x{c}, got {}x{}",
                    w.rows(),
                    w.cols()
                )));
            }
            if self.biases[l].len() != spec.bias_len(l) {
                return Err(Error::ShapeMismatch(format!(
                    "bias {l}: expected {}, got {}",
                    spec.bias_len(l),
                    self.biases[l].len()
                )));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Mat::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn all_finite(&self) -> bool {
        self.iter_entries().all(|v| v.is_finite())
    }

    /// Every scalar parameter, weights before the bias of each layer.
    pub fn iter_entries(&self) -> impl Iterator<Item = T> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.as_slice().iter().chain(b.iter()).copied())
    }

    /// In-place `self += other`, entry-wise. Shapes must already conform.
    pub(crate) fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x = *x + *y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = *x + *y;
            }
        }
    }

    /// In-place entry-wise scale.
    pub(crate) fn scale(&mut self, k: T) {
        for w in &mut self.weights {
            for x in w.as_mut_slice() {
                *x = *x * k;
            }
        }
        for b in &mut self.biases {
            for x in b.iter_mut() {
                *x = *x * k;
            }
        }
    }
}

impl WeightSet {
    /// Widened copy for the 64-bit test path.
    pub fn to_f64(&self) -> WeightSetOf<f64> {
        WeightSetOf {
            weights: self.weights.iter().map(|w| w.map(|v| v as f64)).collect(),
            biases: self
                .biases
                .iter()
                .map(|b| b.iter().map(|&v| v as f64).collect())
                .collect(),
        }
    }
}

/// Per-entry freeze flags with the same shapes as a weight set; `true` = frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct FreezeMask {
    pub weights: Vec<Mat<bool>>,
    pub biases: Vec<Vec<bool>>,
}

impl FreezeMask {
    /// All-trainable mask conforming to `spec`.
    pub fn none(spec: &SirenSpec) -> Self {
        let weights = (0..spec.layer_count())
            .map(|l| {
                let (r, c) = spec.weight_shape(l);
                Mat::from_elem(r, c, false)
            })
            .collect();
        let biases = (0..spec.layer_count())
            .map(|l| vec![false; spec.bias_len(l)])
            .collect();
        FreezeMask { weights, biases }
    }

    pub fn count_frozen(&self) -> usize {
        self.weights
            .iter()
            .map(|w| w.as_slice().iter().filter(|&&f| f).count())
            .sum::<usize>()
            + self
                .biases
                .iter()
                .map(|b| b.iter().filter(|&&f| f).count())
                .sum::<usize>()
    }

    pub fn conforms(&self, spec: &SirenSpec) -> Result<()> {
        if self.weights.len() != spec.layer_count() || self.biases.len() != spec.layer_count() {
            return Err(Error::ShapeMismatch("mask layer count".into()));
        }
        for l in 0..spec.layer_count() {
            let (r, c) = spec.weight_shape(l);
            if (self.weights[l].rows(), self.weights[l].cols()) != (r, c)
                || self.biases[l].len() != spec.bias_len(l)
            {
                return Err(Error::ShapeMismatch(format!("mask tensor {l}")));
            }
        }
        Ok(())
    }
}

/// Coordinate/target training pairs, stored flat and row-major:
/// `coords` holds `len * in_dim` scalars, `targets` holds `len * out_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordDatasetOf<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub coords: Vec<T>,
    pub targets: Vec<T>,
}

pub type CoordDataset = CoordDatasetOf<f32>;

impl<T: Real> CoordDatasetOf<T> {
    pub fn new(in_dim: usize, out_dim: usize, coords: Vec<T>, targets: Vec<T>) -> Result<Self> {
        let ds = CoordDatasetOf {
            in_dim,
            out_dim,
            coords,
            targets,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::InvalidSpec("dataset dims must be > 0".into()));
        }
        if self.coords.len() % self.in_dim != 0 || self.targets.len() % self.out_dim != 0 {
            return Err(Error::ShapeMismatch(
                "dataset buffers are not whole samples".into(),
            ));
        }
        if self.coords.len() / self.in_dim != self.targets.len() / self.out_dim {
            return Err(Error::ShapeMismatch(
                "coords and targets disagree on sample count".into(),
            ));
        }
        if !self.coords.iter().chain(self.targets.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("dataset contains NaN/Inf".into()));
        }
        Ok(())
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.coords.len() / self.in_dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// The whole dataset as one batch view.
    pub fn batch(&self) -> Batch<'_, T> {
        Batch {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            coords: &self.coords,
            targets: &self.targets,
        }
    }
}

/// Adam training settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub steps: usize,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    /// Samples per step; `0` = full batch.
    pub batch_size: usize,
    pub seed: u64,
    /// Plateau patience in steps; `0` disables early stopping.
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            steps: 2000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 0,
            seed: 0,
            early_stop_patience: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("betas must be in [0, 1)".into()));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be > 0".into()));
        }
        Ok(())
    }
}

/// Initializes a network: first-layer weights uniform in `[-1/I, 1/I]`,
/// deeper weights uniform in `[-sqrt(6/fan_in)/omega0, +sqrt(6/fan_in)/omega0]`,
/// biases zero. Deterministic for a given seed.
pub fn init_siren(spec: &SirenSpec, seed: u64) -> Result<WeightSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ws = WeightSet::zeros(spec);
    for l in 0..spec.layer_count() {
        let fan_in = spec.weight_shape(l).1;
        let bound = if l == 0 {
            1.0 / fan_in as f32
        } else {
            (6.0 / fan_in as f32).sqrt() / spec.omega0
        };
        for v in ws.weights[l].as_mut_slice() {
            let u: f32 = rng.gen(); // [0, 1)
            *v = bound * (2.0 * u - 1.0);
        }
    }
    Ok(ws)
}

/// Evaluates the network on a flat batch of points (`len * I` scalars) and
/// returns a flat batch of outputs (`len * O`). Pure; the parallel and serial
/// paths return bit-identical buffers.
pub fn forward<T: Real>(spec: &SirenSpec, ws: &WeightSetOf<T>, points: &[T]) -> Result<Vec<T>> {
    check_points(spec, ws, points)?;
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let chunks: Vec<Vec<T>> = points
            .par_chunks(CHUNK * spec.in_dim)
            .map(|chunk| forward_chunk(spec, ws, chunk))
            .collect();
        return Ok(chunks.concat());
    }
    #[cfg(not(feature = "parallel"))]
    Ok(forward_chunk(spec, ws, points))
}

/// Sequential forward evaluation; bit-identical to [`forward`].
pub fn forward_serial<T: Real>(
    spec: &SirenSpec,
    ws: &WeightSetOf<T>,
    points: &[T],
) -> Result<Vec<T>> {
    check_points(spec, ws, points)?;
    Ok(forward_chunk(spec, ws, points))
}

fn check_points<T: Real>(spec: &SirenSpec, ws: &WeightSetOf<T>, points: &[T]) -> Result<()> {
    spec.validate()?;
    ws.conforms(spec)?;
    if points.len() % spec.in_dim != 0 {
        return Err(Error::ShapeMismatch(format!(
            "point buffer length {} is not a multiple of in_dim {}",
            points.len(),
            spec.in_dim
        )));
    }
    Ok(())
}

fn forward_chunk<T: Real>(spec: &SirenSpec, ws: &WeightSetOf<T>, points: &[T]) -> Vec<T> {
    let count = points.len() / spec.in_dim;
    let mut out = vec![T::zero(); count * spec.out_dim];
    let mut h = vec![T::zero(); spec.width];
    let mut h_next = vec![T::zero(); spec.width];
    for (p, y) in points
        .chunks_exact(spec.in_dim)
        .zip(out.chunks_exact_mut(spec.out_dim))
    {
        eval_point(spec, ws, p, &mut h, &mut h_next, y);
    }
    out
}

/// Single-point evaluation into `out`, reusing the two hidden buffers.
fn eval_point<T: Real>(
    spec: &SirenSpec,
    ws: &WeightSetOf<T>,
    point: &[T],
    h: &mut [T],
    h_next: &mut [T],
    out: &mut [T],
) {
    let omega0: T = real(spec.omega0);
    let n = spec.hidden_layers;
    let mut h = h;
    let mut h_next = h_next;
    affine(&ws.weights[0], &ws.biases[0], point, h);
    for v in h.iter_mut() {
        *v = (omega0 * *v).sin();
    }
    for l in 1..n {
        affine(&ws.weights[l], &ws.biases[l], h, h_next);
        for v in h_next.iter_mut() {
            *v = (omega0 * *v).sin();
        }
        std::mem::swap(&mut h, &mut h_next);
    }
    affine(&ws.weights[n], &ws.biases[n], h, out);
}

/// `out = W x + b`, row by row.
#[inline]
fn affine<T: Real>(w: &Mat<T>, b: &[T], x: &[T], out: &mut [T]) {
    for (r, o) in out.iter_mut().enumerate() {
        let row = w.row(r);
        let mut acc = T::zero();
        for (&wv, &xv) in row.iter().zip(x) {
            acc = acc + wv * xv;
        }
        *o = acc + b[r];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> SirenSpec {
        SirenSpec::new(1, 1, 1, 1).with_omega0(1.0)
    }

    #[test]
    fn param_count_matches_shapes() {
        let spec = SirenSpec::new(2, 3, 5, 128);
        let ws = WeightSet::zeros(&spec);
        assert_eq!(ws.param_count(), spec.param_count());
        assert_eq!(spec.param_count(), 128 * 2 + 4 * 128 * 128 + 3 * 128 + 5 * 128 + 3);
    }

    #[test]
    fn init_bounds_and_determinism() {
        let spec = SirenSpec::new(2, 3, 5, 128);
        let ws = init_siren(&spec, 0).unwrap();
        // First layer: uniform in [-1/I, 1/I] with I = 2.
        for &v in ws.weights[0].as_slice() {
            assert!(v.abs() <= 0.5, "first-layer entry {v} out of bound");
        }
        // Deeper layers: |w| <= sqrt(6/128)/30, frozen from the closed form.
        let bound = 0.007216878364870322f32;
        for l in 1..spec.layer_count() {
            for &v in ws.weights[l].as_slice() {
                assert!(v.abs() <= bound, "layer {l} entry {v} exceeds {bound}");
            }
        }
        for b in &ws.biases {
            assert!(b.iter().all(|&v| v == 0.0));
        }
        let again = init_siren(&spec, 0).unwrap();
        assert_eq!(ws, again);
        let other = init_siren(&spec, 1).unwrap();
        assert_ne!(ws, other);
    }

    #[test]
    fn forward_identity_net_is_sine() {
        let spec = tiny_spec();
        let mut ws = WeightSet::zeros(&spec);
        ws.weights[0].set(0, 0, 1.0);
        ws.weights[1].set(0, 0, 1.0);
        let y = forward(&spec, &ws, &[0.5]).unwrap();
        assert!((y[0] - 0.479425538604203f32).abs() < 1e-7, "got {}", y[0]);
    }

    #[test]
    fn forward_zero_net_is_zero() {
        let spec = SirenSpec::new(3, 2, 2, 4);
        let ws = WeightSet::zeros(&spec);
        let y = forward(&spec, &ws, &[0.3, -0.7, 0.1, 1.0, 1.0, 1.0]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_at_origin_returns_final_bias() {
        // With b_0 = 0, sin(0) = 0 kills the single hidden layer's activity.
        let spec = SirenSpec::new(2, 3, 1, 4);
        let mut ws = init_siren(&spec, 7).unwrap();
        ws.biases[1] = vec![0.25, -0.5, 1.5];
        let y = forward(&spec, &ws, &[0.0, 0.0]).unwrap();
        assert_eq!(y, vec![0.25, -0.5, 1.5]);
    }

    #[test]
    fn forward_is_pure_and_serial_matches_parallel() {
        let spec = SirenSpec::new(2, 3, 3, 16);
        let ws = init_siren(&spec, 3).unwrap();
        let pts: Vec<f32> = (0..4096).map(|i| (i as f32 / 2048.0) - 1.0).collect();
        let a = forward(&spec, &ws, &pts).unwrap();
        let b = forward(&spec, &ws, &pts).unwrap();
        let c = forward_serial(&spec, &ws, &pts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn forward_rejects_bad_dims() {
        let spec = SirenSpec::new(2, 1, 1, 4);
        let ws = WeightSet::zeros(&spec);
        assert!(forward(&spec, &ws, &[0.0, 0.0, 0.0]).is_err());
    }
}
