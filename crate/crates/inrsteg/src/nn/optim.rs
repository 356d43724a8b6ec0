//! Masked Adam updates and the training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{
    loss_and_grads, Batch, CoordDataset, FreezeMask, GradientsOf, SirenSpec, TrainConfig,
    WeightSet,
};

/// First and second Adam moments, zero-initialized with the weight shapes.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: GradientsOf<f32>,
    pub v: GradientsOf<f32>,
}

impl AdamState {
    pub fn zeros(spec: &SirenSpec) -> Self {
        AdamState {
            m: GradientsOf::zeros(spec),
            v: GradientsOf::zeros(spec),
        }
    }
}

/// One bias-corrected Adam step at step index `t >= 1`. Entries whose mask
/// flag is `true` are left bit-identical and their moments stay zero.
pub fn adam_step(
    ws: &mut WeightSet,
    state: &mut AdamState,
    grads: &GradientsOf<f32>,
    mask: Option<&FreezeMask>,
    cfg: &TrainConfig,
    t: u64,
) -> Result<()> {
    if t == 0 {
        return Err(Error::InvalidConfig("Adam step index starts at 1".into()));
    }
    if ws.weights.len() != grads.weights.len() || ws.biases.len() != grads.biases.len() {
        return Err(Error::ShapeMismatch("gradient layer count".into()));
    }
    let corr1 = 1.0 - cfg.beta1.powi(t as i32);
    let corr2 = 1.0 - cfg.beta2.powi(t as i32);

    for l in 0..ws.weights.len() {
        if ws.weights[l].len() != grads.weights[l].len()
            || ws.biases[l].len() != grads.biases[l].len()
        {
            return Err(Error::ShapeMismatch(format!("gradient tensor {l}")));
        }
        let wmask = mask.map(|m| m.weights[l].as_slice());
        update_tensor(
            ws.weights[l].as_mut_slice(),
            state.m.weights[l].as_mut_slice(),
            state.v.weights[l].as_mut_slice(),
            grads.weights[l].as_slice(),
            wmask,
            cfg,
            corr1,
            corr2,
        );
        let bmask = mask.map(|m| m.biases[l].as_slice());
        update_tensor(
            &mut ws.biases[l],
            &mut state.m.biases[l],
            &mut state.v.biases[l],
            &grads.biases[l],
            bmask,
            cfg,
            corr1,
            corr2,
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn update_tensor(
    w: &mut [f32],
    m: &mut [f32],
    v: &mut [f32],
    g: &[f32],
    mask: Option<&[bool]>,
    cfg: &TrainConfig,
    corr1: f32,
    corr2: f32,
) {
    for i in 0..w.len() {
        if mask.is_some_and(|f| f[i]) {
            continue;
        }
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = m[i] / corr1;
        let v_hat = v[i] / corr2;
        w[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub weights: WeightSet,
    /// Batch loss observed at each executed step, before the update.
    pub trace: Vec<f32>,
    /// Step at which a non-finite loss aborted training, if any. The returned
    /// weights are the last finite state.
    pub diverged_at: Option<usize>,
    /// True when the plateau criterion stopped the run before `cfg.steps`.
    pub stopped_early: bool,
}

/// Fits the network to `data` with (optionally masked) Adam. Frozen entries
/// are bit-identical on return for any step count. Deterministic for a fixed
/// `(spec, weights, data, cfg)`.
pub fn fit(
    spec: &SirenSpec,
    ws: &WeightSet,
    data: &CoordDataset,
    cfg: &TrainConfig,
    mask: Option<&FreezeMask>,
) -> Result<FitResult> {
    spec.validate()?;
    cfg.validate()?;
    ws.conforms(spec)?;
    data.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if let Some(m) = mask {
        m.conforms(spec)?;
    }

    let mut weights = ws.clone();
    let mut state = AdamState::zeros(spec);
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut schedule = BatchSchedule::new(data, cfg);

    let mut best = f32::INFINITY;
    let mut since_improve = 0usize;
    let mut diverged_at = None;
    let mut stopped_early = false;

    for step in 0..cfg.steps {
        let batch = schedule.next_batch();
        let (loss, grads) = loss_and_grads(spec, &weights, &batch)?;
        if !loss.is_finite() {
            diverged_at = Some(step);
            break;
        }
        trace.push(loss);
        adam_step(&mut weights, &mut state, &grads, mask, cfg, (step + 1) as u64)?;

        if cfg.early_stop_patience > 0 {
            if loss < best * (1.0 - 1e-6) {
                best = loss;
                since_improve = 0;
            } else {
                since_improve += 1;
                if since_improve >= cfg.early_stop_patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    Ok(FitResult {
        weights,
        trace,
        diverged_at,
        stopped_early,
    })
}

/// Full-batch or shuffled-epoch mini-batch selection.
struct BatchSchedule<'a> {
    data: &'a CoordDataset,
    batch_size: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    // Gather buffers reused across steps.
    coords: Vec<f32>,
    targets: Vec<f32>,
}

impl<'a> BatchSchedule<'a> {
    fn new(data: &'a CoordDataset, cfg: &TrainConfig) -> Self {
        let len = data.len();
        let batch_size = if cfg.batch_size == 0 || cfg.batch_size >= len {
            0 // full batch
        } else {
            cfg.batch_size
        };
        BatchSchedule {
            data,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            order: (0..len).collect(),
            cursor: len, // forces a shuffle on first use
            coords: Vec::new(),
            targets: Vec::new(),
        }
    }

    fn next_batch(&mut self) -> Batch<'_, f32> {
        let (i, o) = (self.data.in_dim, self.data.out_dim);
        if self.batch_size == 0 {
            return self.data.batch();
        }
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let picks = &self.order[self.cursor..end];
        self.cursor = end;

        self.coords.clear();
        self.targets.clear();
        for &s in picks {
            self.coords
                .extend_from_slice(&self.data.coords[s * i..(s + 1) * i]);
            self.targets
                .extend_from_slice(&self.data.targets[s * o..(s + 1) * o]);
        }
        Batch {
            in_dim: i,
            out_dim: o,
            coords: &self.coords,
            targets: &self.targets,
        }
    }
}
