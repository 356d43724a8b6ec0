//! Reverse-mode gradients of the mean squared reconstruction error.
//!
//! The loss over a batch `S` is `L = (1/|S|) * sum_{(x,y) in S} ||f(x) - y||^2`
//! (squared error summed over output dims, averaged over samples).
//!
//! The batch is cut into fixed-length chunks ([`super::CHUNK`] samples). Each
//! chunk accumulates its partial loss and gradient sequentially; partials are
//! folded in chunk order. The fold order never depends on the worker count,
//! so the parallel and sequential paths are bit-identical.

use crate::error::{Error, Result};
use crate::mat::Mat;

use super::{real, GradientsOf, Real, SirenSpec, WeightSetOf, CHUNK};

/// Borrowed view of a training batch: flat row-major coordinate and target
/// buffers with `len * in_dim` and `len * out_dim` scalars.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a, T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub coords: &'a [T],
    pub targets: &'a [T],
}

impl<'a, T: Real> Batch<'a, T> {
    pub fn len(&self) -> usize {
        self.coords.len() / self.in_dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    fn validate(&self, spec: &SirenSpec) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if self.in_dim != spec.in_dim || self.out_dim != spec.out_dim {
            return Err(Error::ShapeMismatch(format!(
                "batch dims {}x{} vs spec {}x{}",
                self.in_dim, self.out_dim, spec.in_dim, spec.out_dim
            )));
        }
        if self.coords.len() % self.in_dim != 0
            || self.targets.len() % self.out_dim != 0
            || self.coords.len() / self.in_dim != self.targets.len() / self.out_dim
        {
            return Err(Error::ShapeMismatch("ragged batch buffers".into()));
        }
        Ok(())
    }
}

/// Mean squared error over the batch plus exact reverse-mode gradients with
/// the weight set's shapes. Uses the parallel reduction when the `parallel`
/// feature is enabled; output is bit-identical either way.
pub fn loss_and_grads<T: Real>(
    spec: &SirenSpec,
    ws: &WeightSetOf<T>,
    batch: &Batch<'_, T>,
) -> Result<(T, GradientsOf<T>)> {
    batch.validate(spec)?;
    ws.conforms(spec)?;

    #[cfg(feature = "parallel")]
    let partials: Vec<(T, GradientsOf<T>)> = {
        use rayon::prelude::*;
        chunk_ranges(batch.len())
            .into_par_iter()
            .map(|(a, b)| chunk_partial(spec, ws, batch, a, b))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<(T, GradientsOf<T>)> = chunk_ranges(batch.len())
        .into_iter()
        .map(|(a, b)| chunk_partial(spec, ws, batch, a, b))
        .collect();

    Ok(fold_partials(spec, batch.len(), partials))
}

/// Sequential twin of [`loss_and_grads`]; bit-identical result.
pub fn loss_and_grads_serial<T: Real>(
    spec: &SirenSpec,
    ws: &WeightSetOf<T>,
    batch: &Batch<'_, T>,
) -> Result<(T, GradientsOf<T>)> {
    batch.validate(spec)?;
    ws.conforms(spec)?;
    let partials: Vec<(T, GradientsOf<T>)> = chunk_ranges(batch.len())
        .into_iter()
        .map(|(a, b)| chunk_partial(spec, ws, batch, a, b))
        .collect();
    Ok(fold_partials(spec, batch.len(), partials))
}

fn chunk_ranges(len: usize) -> Vec<(usize, usize)> {
    (0..len)
        .step_by(CHUNK)
        .map(|a| (a, (a + CHUNK).min(len)))
        .collect()
}

fn fold_partials<T: Real>(
    spec: &SirenSpec,
    batch_len: usize,
    partials: Vec<(T, GradientsOf<T>)>,
) -> (T, GradientsOf<T>) {
    let mut loss = T::zero();
    let mut grads = GradientsOf::zeros(spec);
    for (l, g) in &partials {
        loss = loss + *l;
        grads.add_assign(g);
    }
    let inv_b = T::one() / real::<T>(batch_len as f32);
    grads.scale(inv_b);
    (loss * inv_b, grads)
}

/// Per-sample forward state and backward scratch, reused across a chunk.
struct Scratch<T> {
    /// `acts[i]` is the input to layer `i`; `acts[0]` is the coordinate,
    /// `acts[i]` for `i >= 1` the post-sine activation of hidden layer `i-1`.
    acts: Vec<Vec<T>>,
    /// Pre-activation `W h + b` of each hidden layer.
    preacts: Vec<Vec<T>>,
    out: Vec<T>,
    delta: Vec<T>,
    delta_next: Vec<T>,
}

impl<T: Real> Scratch<T> {
    fn new(spec: &SirenSpec) -> Self {
        let n = spec.hidden_layers;
        let mut acts = Vec::with_capacity(n + 1);
        acts.push(vec![T::zero(); spec.in_dim]);
        for _ in 0..n {
            acts.push(vec![T::zero(); spec.width]);
        }
        Scratch {
            acts,
            preacts: vec![vec![T::zero(); spec.width]; n],
            out: vec![T::zero(); spec.out_dim],
            delta: vec![T::zero(); spec.width.max(spec.out_dim)],
            delta_next: vec![T::zero(); spec.width.max(spec.out_dim)],
        }
    }
}

/// Unnormalized loss and gradient sums over samples `[start, end)`.
fn chunk_partial<T: Real>(
    spec: &SirenSpec,
    ws: &WeightSetOf<T>,
    batch: &Batch<'_, T>,
    start: usize,
    end: usize,
) -> (T, GradientsOf<T>) {
    let mut grads = GradientsOf::zeros(spec);
    let mut scratch = Scratch::new(spec);
    let mut loss = T::zero();
    let two = real::<T>(2.0);
    let omega0 = real::<T>(spec.omega0);
    let n = spec.hidden_layers;

    for s in start..end {
        let x = &batch.coords[s * spec.in_dim..(s + 1) * spec.in_dim];
        let t = &batch.targets[s * spec.out_dim..(s + 1) * spec.out_dim];

        // Forward, saving pre-activations and activations.
        scratch.acts[0].copy_from_slice(x);
        for l in 0..n {
            let (input, rest) = scratch.acts.split_at_mut(l + 1);
            let input = &input[l];
            let act = &mut rest[0];
            let pre = &mut scratch.preacts[l];
            affine_into(&ws.weights[l], &ws.biases[l], input, pre);
            for (a, &z) in act.iter_mut().zip(pre.iter()) {
                *a = (omega0 * z).sin();
            }
        }
        affine_into(&ws.weights[n], &ws.biases[n], &scratch.acts[n], &mut scratch.out);

        // Output delta: d(||y - t||^2)/dy = 2 (y - t). The 1/|S| factor is
        // applied once in the fold.
        for ((d, &y), &tv) in scratch
            .delta
            .iter_mut()
            .zip(scratch.out.iter())
            .zip(t.iter())
        {
            let r = y - tv;
            loss = loss + r * r;
            *d = two * r;
        }

        // Output layer.
        accumulate_layer(
            &mut grads.weights[n],
            &mut grads.biases[n],
            &scratch.delta[..spec.out_dim],
            &scratch.acts[n],
        );

        // Hidden layers, walking backwards.
        for l in (0..n).rev() {
            let rows_above = if l + 1 == n { spec.out_dim } else { spec.width };
            // delta_next = W_{l+1}^T delta, then through the sine.
            let w_above = &ws.weights[l + 1];
            scratch.delta_next[..spec.width].fill(T::zero());
            for r in 0..rows_above {
                let d = scratch.delta[r];
                if d == T::zero() {
                    continue;
                }
                for (acc, &wv) in scratch.delta_next[..spec.width]
                    .iter_mut()
                    .zip(w_above.row(r))
                {
                    *acc = *acc + wv * d;
                }
            }
            for (dv, &z) in scratch.delta_next[..spec.width]
                .iter_mut()
                .zip(scratch.preacts[l].iter())
            {
                *dv = *dv * omega0 * (omega0 * z).cos();
            }
            std::mem::swap(&mut scratch.delta, &mut scratch.delta_next);
            accumulate_layer(
                &mut grads.weights[l],
                &mut grads.biases[l],
                &scratch.delta[..spec.width],
                &scratch.acts[l],
            );
        }
    }
    (loss, grads)
}

#[inline]
fn affine_into<T: Real>(w: &Mat<T>, b: &[T], x: &[T], out: &mut [T]) {
    for (r, o) in out.iter_mut().enumerate() {
        let mut acc = T::zero();
        for (&wv, &xv) in w.row(r).iter().zip(x) {
            acc = acc + wv * xv;
        }
        *o = acc + b[r];
    }
}

/// `gw += delta (outer) input; gb += delta`.
#[inline]
fn accumulate_layer<T: Real>(gw: &mut Mat<T>, gb: &mut [T], delta: &[T], input: &[T]) {
    for (r, &d) in delta.iter().enumerate() {
        gb[r] = gb[r] + d;
        if d == T::zero() {
            continue;
        }
        for (g, &xv) in gw.row_mut(r).iter_mut().zip(input) {
            *g = *g + d * xv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{forward, init_siren, SirenSpec, WeightSetOf};

    fn batch_of<'a>(spec: &SirenSpec, coords: &'a [f32], targets: &'a [f32]) -> Batch<'a, f32> {
        Batch {
            in_dim: spec.in_dim,
            out_dim: spec.out_dim,
            coords,
            targets,
        }
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_grads() {
        let spec = SirenSpec::new(2, 1, 2, 4);
        let ws = init_siren(&spec, 11).unwrap();
        let coords = vec![0.1f32, -0.2, 0.7, 0.3];
        let targets = forward(&spec, &ws, &coords).unwrap();
        let (loss, grads) = loss_and_grads(&spec, &ws, &batch_of(&spec, &coords, &targets)).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter_entries().all(|g| g == 0.0));
    }

    #[test]
    fn uniform_residual_gives_squared_loss() {
        // Output layer all zeros except bias 2, targets 0 => every prediction
        // exceeds its target by 2, so the mean of squared residuals is 4.
        let spec = SirenSpec::new(1, 1, 1, 3);
        let mut ws = WeightSetOf::zeros(&spec);
        ws.biases[1][0] = 2.0;
        let coords = vec![-0.5f32, 0.0, 0.5, 0.9];
        let targets = vec![0.0f32; 4];
        let (loss, _) = loss_and_grads(&spec, &ws, &batch_of(&spec, &coords, &targets)).unwrap();
        assert!((loss - 4.0).abs() < 1e-6);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let spec = SirenSpec::new(1, 1, 1, 1);
        let ws = WeightSetOf::zeros(&spec);
        let coords: Vec<f32> = vec![];
        let targets: Vec<f32> = vec![];
        assert!(matches!(
            loss_and_grads(&spec, &ws, &batch_of(&spec, &coords, &targets)),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn serial_and_parallel_paths_agree_bitwise() {
        let spec = SirenSpec::new(2, 3, 3, 16);
        let ws = init_siren(&spec, 5).unwrap();
        // More than two chunks.
        let count = 3 * super::CHUNK + 37;
        let coords: Vec<f32> = (0..count * 2).map(|i| ((i * 37 % 200) as f32) / 100.0 - 1.0).collect();
        let targets: Vec<f32> = (0..count * 3).map(|i| ((i * 13 % 200) as f32) / 100.0 - 1.0).collect();
        let b = batch_of(&spec, &coords, &targets);
        let (l1, g1) = loss_and_grads(&spec, &ws, &b).unwrap();
        let (l2, g2) = loss_and_grads_serial(&spec, &ws, &b).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
    }

    /// Central finite differences in f64 over every parameter of a tiny net.
    #[test]
    fn gradients_match_finite_differences() {
        let spec = SirenSpec::new(2, 1, 2, 3);
        let ws = init_siren(&spec, 42).unwrap().to_f64();
        let coords: Vec<f64> = vec![0.3, -0.8, -0.1, 0.4, 0.9, 0.2];
        let targets: Vec<f64> = vec![0.5, -0.25, 0.1];
        let b = Batch {
            in_dim: 2,
            out_dim: 1,
            coords: &coords,
            targets: &targets,
        };
        let (_, grads) = loss_and_grads(&spec, &ws, &b).unwrap();
        let h = 1e-5;

        let loss_of = |ws: &WeightSetOf<f64>| -> f64 {
            loss_and_grads(&spec, ws, &b).unwrap().0
        };
        for l in 0..spec.layer_count() {
            for idx in 0..ws.weights[l].len() {
                let mut plus = ws.clone();
                plus.weights[l].as_mut_slice()[idx] += h;
                let mut minus = ws.clone();
                minus.weights[l].as_mut_slice()[idx] -= h;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let an = grads.weights[l].as_slice()[idx];
                let err = if an.abs() < 1e-8 {
                    (an - fd).abs()
                } else {
                    ((an - fd) / an).abs()
                };
                assert!(err < 1e-6, "weight[{l}][{idx}]: analytic {an}, fd {fd}");
            }
            for idx in 0..ws.biases[l].len() {
                let mut plus = ws.clone();
                plus.biases[l][idx] += h;
                let mut minus = ws.clone();
                minus.biases[l][idx] -= h;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let an = grads.biases[l][idx];
                let err = if an.abs() < 1e-8 {
                    (an - fd).abs()
                } else {
                    ((an - fd) / an).abs()
                };
                assert!(err < 1e-6, "bias[{l}][{idx}]: analytic {an}, fd {fd}");
            }
        }
    }
}
