//! Two-phase Equilibrium Propagation training.
//!
//! Each example runs a free phase (`beta = 0`) from its persistent particle,
//! then a weakly clamped phase from the free fixed point with
//! `beta = +/- beta_magnitude`. The per-layer update is
//!
//! ```text
//! dW_k = (alpha_k / beta) (rho(u_{k-1}^b) rho(u_k^b)^T - rho(u_{k-1}^0) rho(u_k^0)^T)
//! db_k = (alpha_k / beta) (rho(s_k^b) - rho(s_k^0))
//! ```
//!
//! averaged over the minibatch and applied once per minibatch.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{EqPropError, Result};
use crate::mnist::Dataset;
use crate::model::{grad_theta_unchecked, rho, LayeredParams, NetState, PhaseConfig, Scalar, Topology};
use crate::relax::{relax, FixedPointResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn bytes(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = EqPropError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "32" => Ok(Precision::F32),
            "f64" | "64" => Ok(Precision::F64),
            _ => Err(EqPropError::Config(format!("precision must be f32 or f64, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub beta_magnitude: f64,
    /// Draw the sign of beta at random, once per example per update.
    pub random_beta_sign: bool,
    pub epsilon: f64,
    pub free_iters: usize,
    pub clamped_iters: usize,
    /// One learning rate per state layer, used for both `W_k` and `b_k`.
    pub learning_rates: Vec<f64>,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub rng_seed: u64,
    pub precision: Precision,
}

impl TrainConfig {
    /// Published hyperparameters for the three MNIST architectures
    /// (784-500-10, 784-500-500-10, 784-500-500-500-10).
    pub fn for_topology(topology: &Topology) -> Option<Self> {
        let (free_iters, clamped_iters, rates): (usize, usize, &[f64]) = match topology.sizes() {
            [784, 500, 10] => (20, 4, &[0.1, 0.05]),
            [784, 500, 500, 10] => (100, 6, &[0.4, 0.1, 0.01]),
            [784, 500, 500, 500, 10] => (500, 8, &[0.128, 0.032, 0.008, 0.002]),
            _ => return None,
        };
        Some(TrainConfig {
            beta_magnitude: 1.0,
            random_beta_sign: true,
            epsilon: 0.5,
            free_iters,
            clamped_iters,
            learning_rates: rates.to_vec(),
            minibatch_size: 20,
            epochs: 25,
            rng_seed: 0,
            precision: Precision::F64,
        })
    }

    pub fn validate(&self, topology: &Topology) -> Result<()> {
        if !(self.beta_magnitude > 0.0 && self.beta_magnitude.is_finite()) {
            return Err(EqPropError::Config(format!(
                "beta must be a positive finite magnitude, got {}",
                self.beta_magnitude
            )));
        }
        if self.learning_rates.len() != topology.num_layers() {
            return Err(EqPropError::Config(format!(
                "{} learning rates given for {} layers",
                self.learning_rates.len(),
                topology.num_layers()
            )));
        }
        if let Some(a) = self.learning_rates.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(EqPropError::Config(format!("learning rates must be positive, got {a}")));
        }
        if self.free_iters == 0 || self.clamped_iters == 0 {
            return Err(EqPropError::Config("iteration counts must be at least 1".into()));
        }
        if self.minibatch_size == 0 {
            return Err(EqPropError::Config("minibatch size must be at least 1".into()));
        }
        self.free_phase::<f64>().map(|_| ())
    }

    pub fn free_phase<T: Scalar>(&self) -> Result<PhaseConfig<T>> {
        PhaseConfig::fixed(T::zero(), T::of(self.epsilon), self.free_iters)
    }

    pub fn clamped_phase<T: Scalar>(&self, beta: T) -> Result<PhaseConfig<T>> {
        PhaseConfig::fixed(beta, T::of(self.epsilon), self.clamped_iters)
    }

    /// Draws the signed influence parameter for one example.
    pub fn draw_beta(&self, rng: &mut impl Rng) -> f64 {
        if self.random_beta_sign && rng.random::<bool>() {
            -self.beta_magnitude
        } else {
            self.beta_magnitude
        }
    }
}

/// Glorot-Bengio uniform initialization: `W_k ~ U(-a, a)` with
/// `a = sqrt(6 / (d_{k-1} + d_k))`, biases zero.
pub fn init_params<T: Scalar>(topology: &Topology, rng_seed: u64) -> LayeredParams<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut params = LayeredParams::zeros(topology);
    for w in &mut params.weights {
        let (fan_in, fan_out) = w.dim();
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        w.iter_mut()
            .for_each(|v| *v = T::of(rng.random_range(-bound..=bound)));
    }
    params
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(v: &Array1<T>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Class read out at the free fixed point, starting from `init` or zeros.
pub fn predict<T: Scalar>(
    params: &LayeredParams<T>,
    x: &Array1<T>,
    config: &TrainConfig,
    init: Option<&NetState<T>>,
) -> Result<usize> {
    let topology = params.topology()?;
    let state = init.cloned().unwrap_or_else(|| NetState::zeros(&topology));
    let dummy = Array1::zeros(topology.output_dim());
    let free = relax(state, params, x, &dummy, &config.free_phase()?)?;
    Ok(argmax(free.state.output()))
}

/// Per-example parameter increments and the two fixed points they came from.
#[derive(Clone, Debug)]
pub struct EqPropUpdate<T> {
    /// Increment to add to the parameters (learning rates included).
    pub delta: LayeredParams<T>,
    pub free: FixedPointResult<T>,
    pub clamped: FixedPointResult<T>,
    pub beta: T,
}

fn two_phase<T: Scalar>(
    params: &LayeredParams<T>,
    x: &Array1<T>,
    y_target: &Array1<T>,
    state0: NetState<T>,
    config: &TrainConfig,
    beta: T,
) -> Result<(FixedPointResult<T>, FixedPointResult<T>)> {
    if beta == T::zero() {
        return Err(EqPropError::Config("the clamped phase needs beta != 0".into()));
    }
    let free = relax(state0, params, x, y_target, &config.free_phase()?)?;
    let clamped = relax(free.state.clone(), params, x, y_target, &config.clamped_phase(beta)?)?;
    Ok((free, clamped))
}

/// One example's Equilibrium Propagation step. Returns the increment without
/// applying it. The sign of beta is drawn from `rng` when
/// `config.random_beta_sign` is set.
pub fn eqprop_update<T: Scalar>(
    params: &LayeredParams<T>,
    x: &Array1<T>,
    y_target: &Array1<T>,
    state0: NetState<T>,
    config: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<EqPropUpdate<T>> {
    if config.beta_magnitude == 0.0 {
        return Err(EqPropError::Config("beta must be non-zero".into()));
    }
    let topology = params.topology()?;
    if config.learning_rates.len() != topology.num_layers() {
        return Err(EqPropError::Config(format!(
            "{} learning rates given for {} layers",
            config.learning_rates.len(),
            topology.num_layers()
        )));
    }
    let beta = T::of(config.draw_beta(rng));
    let (free, clamped) = two_phase(params, x, y_target, state0, config, beta)?;
    let g0 = grad_theta_unchecked(params, x, &free.state);
    let gb = grad_theta_unchecked(params, x, &clamped.state);
    let mut delta = gb.sub(&g0);
    for (k, &alpha) in config.learning_rates.iter().enumerate() {
        let scale = -T::of(alpha) / beta;
        delta.weights[k].mapv_inplace(|v| v * scale);
        delta.biases[k].mapv_inplace(|v| v * scale);
    }
    Ok(EqPropUpdate {
        delta,
        free,
        clamped,
        beta,
    })
}

/// Last free fixed point of each training example, used to warm-start the
/// next free phase on that example.
#[derive(Clone, Debug, Default)]
pub struct ParticleStore<T> {
    slots: Vec<Option<NetState<T>>>,
}

impl<T: Scalar> ParticleStore<T> {
    pub fn new(num_examples: usize) -> Self {
        ParticleStore {
            slots: vec![None; num_examples],
        }
    }

    pub fn get(&self, index: usize) -> Option<&NetState<T>> {
        self.slots.get(index).and_then(|s| s.as_ref())
    }

    /// Panics if `state` leaves the unit box.
    pub fn set(&mut self, index: usize, state: NetState<T>) {
        assert!(state.is_boxed() && state.is_finite(), "particle outside the state box");
        if index >= self.slots.len() {
            self.slots.resize(index + 1, None);
        }
        self.slots[index] = Some(state);
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    /// Number of examples with a stored particle.
    pub fn len(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A training example keyed by its dataset index.
#[derive(Clone, Debug)]
pub struct Example<T> {
    pub index: usize,
    pub x: Array1<T>,
    pub target: Array1<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExampleDiagnostics {
    pub index: usize,
    pub beta: f64,
    pub free_energy: f64,
    pub free_cost: f64,
    pub free_residual: f64,
    pub prediction: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinibatchReport {
    pub examples: Vec<ExampleDiagnostics>,
    /// Frobenius norm of the applied update to each `W_k`.
    pub weight_update_norms: Vec<f64>,
}

/// Selects the free or the clamped state from a pair of phase results.
type PhasePick<T> = fn(&(FixedPointResult<T>, FixedPointResult<T>)) -> &NetState<T>;

/// Runs both phases for every example of `batch` (in parallel), applies the
/// mean increment once, and stores each free fixed point as that example's
/// particle. Signs of beta are drawn from `rng` in batch order, and the
/// increments are reduced in batch order, so the result does not depend on
/// the number of threads.
pub fn train_minibatch<T: Scalar>(
    params: &mut LayeredParams<T>,
    batch: &[Example<T>],
    store: &mut ParticleStore<T>,
    config: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<MinibatchReport> {
    if batch.is_empty() {
        return Err(EqPropError::Config("empty minibatch".into()));
    }
    let topology = params.topology()?;
    config.validate(&topology)?;
    let betas: Vec<f64> = batch.iter().map(|_| config.draw_beta(rng)).collect();
    let shared: &LayeredParams<T> = params;
    let phases = batch
        .par_iter()
        .zip(&betas)
        .map(|(ex, &beta)| {
            let init = store
                .get(ex.index)
                .cloned()
                .unwrap_or_else(|| NetState::zeros(&topology));
            two_phase(shared, &ex.x, &ex.target, init, config, T::of(beta))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = batch.len();
    let layers = topology.num_layers();
    let mut weight_update_norms = Vec::with_capacity(layers);
    let mut increments = LayeredParams::zeros(&topology);
    for k in 0..layers {
        // Rows of `lower` are rho(u_{k-1}) / beta; rows of `upper` are rho(u_k).
        let lower = |pick: PhasePick<T>| {
            let d = topology.sizes()[k];
            let mut m = Array2::<T>::zeros((n, d));
            for (e, (row, ph)) in m.axis_iter_mut(Axis(0)).zip(&phases).enumerate() {
                let inv_beta = T::one() / T::of(betas[e]);
                let src = if k == 0 { &batch[e].x } else { &pick(ph).layers[k - 1] };
                ndarray::Zip::from(row).and(src).for_each(|r, &v| *r = rho(v) * inv_beta);
            }
            m
        };
        let upper = |pick: PhasePick<T>| {
            let d = topology.sizes()[k + 1];
            let mut m = Array2::<T>::zeros((n, d));
            for (row, ph) in m.axis_iter_mut(Axis(0)).zip(&phases) {
                ndarray::Zip::from(row).and(&pick(ph).layers[k]).for_each(|r, &v| *r = rho(v));
            }
            m
        };
        let free_pick: PhasePick<T> = |p| &p.0.state;
        let clamped_pick: PhasePick<T> = |p| &p.1.state;
        let (a_b, b_b) = (lower(clamped_pick), upper(clamped_pick));
        let (a_0, b_0) = (lower(free_pick), upper(free_pick));

        let scale = T::of(config.learning_rates[k] / n as f64);
        let w = &mut increments.weights[k];
        general_mat_mul(scale, &a_b.t(), &b_b, T::zero(), w);
        general_mat_mul(-scale, &a_0.t(), &b_0, T::one(), w);

        let bias = &mut increments.biases[k];
        for (e, (row_b, row_0)) in b_b.axis_iter(Axis(0)).zip(b_0.axis_iter(Axis(0))).enumerate() {
            let s = scale / T::of(betas[e]);
            ndarray::Zip::from(&mut *bias)
                .and(row_b)
                .and(row_0)
                .for_each(|acc, &vb, &v0| *acc += s * (vb - v0));
        }
        weight_update_norms.push(w.iter().map(|&v| v * v).sum::<T>().sqrt().to_f64());
    }
    params.scaled_add(T::one(), &increments);
    if !params.is_finite() {
        return Err(EqPropError::NonFinite("parameters after minibatch update".into()));
    }

    let mut examples = Vec::with_capacity(n);
    for ((ex, (free, _)), &beta) in batch.iter().zip(phases).zip(&betas) {
        examples.push(ExampleDiagnostics {
            index: ex.index,
            beta,
            free_energy: free.energy.to_f64(),
            free_cost: free.cost.to_f64(),
            free_residual: free.residual.to_f64(),
            prediction: argmax(free.state.output()),
        });
        store.set(ex.index, free.state);
    }
    Ok(MinibatchReport {
        examples,
        weight_update_norms,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_error_rate: f64,
    /// `None` when the dataset has no validation split.
    pub val_error_rate: Option<f64>,
    /// Mean internal energy at the free fixed points visited during the epoch.
    pub mean_energy: f64,
    pub mean_cost: f64,
    pub wall_seconds: f64,
}

/// Source of every random draw made during training: the per-epoch shuffle
/// and the per-example signs of beta. Both are ChaCha8 streams keyed by the
/// 32-byte seed, so a run can be resumed from the key and the epoch counter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainRng {
    key: [u8; 32],
}

impl TrainRng {
    pub fn from_seed(rng_seed: u64) -> Self {
        TrainRng {
            key: ChaCha8Rng::seed_from_u64(rng_seed).get_seed(),
        }
    }

    pub fn from_key(key: [u8; 32]) -> Self {
        TrainRng { key }
    }

    pub fn key(&self) -> [u8; 32] {
        self.key
    }

    /// Same stream as [`crate::mnist::shuffle_rng`] for the originating seed.
    pub fn shuffle_rng(&self, epoch: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(epoch as u64);
        rng
    }

    pub fn sign_rng(&self, epoch: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream((1 << 63) | epoch as u64);
        rng
    }
}

/// Receives one record per finished epoch, with the parameters at that point.
pub trait MetricsSink<T> {
    /// `epochs_done` counts every epoch trained so far, including resumed ones.
    fn on_epoch(
        &mut self,
        record: &MetricsRecord,
        params: &LayeredParams<T>,
        epochs_done: usize,
        rng: &TrainRng,
    ) -> Result<()>;
}

/// Discards everything.
pub struct NullSink;

impl<T> MetricsSink<T> for NullSink {
    fn on_epoch(&mut self, _: &MetricsRecord, _: &LayeredParams<T>, _: usize, _: &TrainRng) -> Result<()> {
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub params: LayeredParams<T>,
    pub history: Vec<MetricsRecord>,
}

/// Classification error over `indices`, each example relaxed from zeros for
/// `free_iters` steps. Evaluated in parallel.
pub fn error_rate<T: Scalar>(
    params: &LayeredParams<T>,
    dataset: &Dataset,
    indices: &[usize],
    config: &TrainConfig,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(EqPropError::Config("cannot evaluate on an empty split".into()));
    }
    let wrong = indices
        .par_iter()
        .map(|&i| {
            let x = dataset.image::<T>(i);
            predict(params, &x, config, None).map(|p| usize::from(p != dataset.label(i) as usize))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(wrong as f64 / indices.len() as f64)
}

pub fn train<T: Scalar>(
    params: LayeredParams<T>,
    dataset: &Dataset,
    config: &TrainConfig,
    sink: &mut dyn MetricsSink<T>,
) -> Result<TrainOutcome<T>> {
    train_from(params, dataset, config, TrainRng::from_seed(config.rng_seed), 0, sink)
}

/// Trains for `config.epochs` epochs, numbering them from `start_epoch`.
///
/// Particles start from zeros even when resuming.
pub fn train_from<T: Scalar>(
    mut params: LayeredParams<T>,
    dataset: &Dataset,
    config: &TrainConfig,
    rng: TrainRng,
    start_epoch: usize,
    sink: &mut dyn MetricsSink<T>,
) -> Result<TrainOutcome<T>> {
    let topology = params.topology()?;
    config.validate(&topology)?;
    params.validate(&topology)?;
    if dataset.image_len() != topology.input_dim() {
        return Err(EqPropError::dim("image length vs input layer", topology.input_dim(), dataset.image_len()));
    }
    let train_idx: Vec<usize> = dataset.train_indices().collect();
    let val_idx: Vec<usize> = dataset.val_indices().collect();
    let mut store = ParticleStore::new(dataset.len());
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in start_epoch..start_epoch + config.epochs {
        let started = Instant::now();
        let batches = crate::mnist::minibatches_with(&train_idx, config.minibatch_size, &mut rng.shuffle_rng(epoch))?;
        let mut signs = rng.sign_rng(epoch);
        let (mut energy_sum, mut cost_sum, mut seen) = (0.0, 0.0, 0usize);
        for batch in batches {
            let examples: Vec<Example<T>> = batch
                .iter()
                .map(|&i| Example {
                    index: i,
                    x: dataset.image(i),
                    target: dataset.target(i),
                })
                .collect();
            let report = train_minibatch(&mut params, &examples, &mut store, config, &mut signs)?;
            for d in &report.examples {
                energy_sum += d.free_energy;
                cost_sum += d.free_cost;
            }
            seen += report.examples.len();
        }
        let train_error_rate = error_rate(&params, dataset, &train_idx, config)?;
        let val_error_rate = if val_idx.is_empty() {
            None
        } else {
            Some(error_rate(&params, dataset, &val_idx, config)?)
        };
        let record = MetricsRecord {
            epoch: epoch + 1,
            train_error_rate,
            val_error_rate,
            mean_energy: energy_sum / seen.max(1) as f64,
            mean_cost: cost_sum / seen.max(1) as f64,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        sink.on_epoch(&record, &params, epoch + 1, &rng)?;
        history.push(record);
    }
    Ok(TrainOutcome { params, history })
}
