//! Independent routes to the gradient of the objective `J(theta) = C(s0_theta)`
//! and numerical checks of the identities behind Equilibrium Propagation.
//!
//! All oracles work in `f64` and relax to a projected residual of at most
//! `1e-12` (see [`PhaseConfig::oracle`]). Anything that differentiates through
//! a fixed point needs that fixed point strictly inside the unit box, where
//! the hard sigmoid is smooth; [`sample_instance`] draws such
//! problems by rejection.

mod lemma1;
mod stdp;

pub use lemma1::{lemma1_asymmetry, lemma1_check, EquilibriumModel, HopfieldModel, QuadraticModel};
pub use stdp::{stdp_integral_check, stdp_pair_sums, StdpSums, StdpWeights};

use std::fmt;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{EqPropError, Result};
use crate::model::{
    check_problem, cost_unchecked, energy_unchecked, grad_theta_unchecked, rho, rho_prime, LayeredParams, NetState,
    PhaseConfig, Topology,
};
use crate::relax::{relax, relax_output_clamped, FixedPointResult};
use crate::train::init_params;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradMethod {
    EqProp,
    FdObjective,
    Rbp,
    Chl,
}

impl fmt::Display for GradMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradMethod::EqProp => "eqprop",
            GradMethod::FdObjective => "fd_objective",
            GradMethod::Rbp => "rbp",
            GradMethod::Chl => "chl",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EqPropMode {
    /// `(dF/dtheta(s^b) - dF/dtheta(s^0)) / b`
    OneSided,
    /// `(dF/dtheta(s^b) - dF/dtheta(s^-b)) / 2b`
    Central,
}

/// An estimate of `dJ/dtheta`, laid out like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GradEstimate {
    pub grad: LayeredParams<f64>,
    pub method: GradMethod,
    pub beta_used: Option<f64>,
}

impl GradEstimate {
    /// `||self - reference|| / ||reference||`, or the absolute error when the
    /// reference vanishes.
    pub fn relative_error(&self, reference: &GradEstimate) -> f64 {
        let diff = self.grad.sub(&reference.grad).norm();
        let scale = reference.grad.norm();
        if scale > 0.0 {
            diff / scale
        } else {
            diff
        }
    }

    pub fn cosine(&self, other: &GradEstimate) -> f64 {
        let (a, b) = (self.grad.to_flat(), other.grad.to_flat());
        let dot: f64 = a.iter().zip(&b).map(|(p, q)| p * q).sum();
        dot / (self.grad.norm() * other.grad.norm())
    }
}

/// A problem with its free fixed point.
#[derive(Clone, Debug)]
pub struct Instance {
    pub params: LayeredParams<f64>,
    pub x: Array1<f64>,
    pub y_target: Array1<f64>,
    pub free: NetState<f64>,
}

/// Relaxes to the oracle tolerance and fails if the budget runs out first.
pub fn relax_tight(
    state: NetState<f64>,
    params: &LayeredParams<f64>,
    x: &Array1<f64>,
    y_target: &Array1<f64>,
    beta: f64,
) -> Result<FixedPointResult<f64>> {
    let phase = PhaseConfig::oracle(beta);
    let r = relax(state, params, x, y_target, &phase)?;
    converged(r, &phase)
}

fn converged(r: FixedPointResult<f64>, phase: &PhaseConfig<f64>) -> Result<FixedPointResult<f64>> {
    if r.converged(phase.residual_tol) {
        Ok(r)
    } else {
        Err(EqPropError::NonConvergence {
            residual: r.residual,
            iterations: r.iterations,
            tolerance: phase.residual_tol,
        })
    }
}

/// Free fixed point from the zero state.
pub fn free_fixed_point(params: &LayeredParams<f64>, x: &Array1<f64>, y_target: &Array1<f64>) -> Result<NetState<f64>> {
    let top = check_problem(params, x, &NetState::zeros(&params.topology()?), Some(y_target))?;
    Ok(relax_tight(NetState::zeros(&top), params, x, y_target, 0.0)?.state)
}

/// Smallest distance of any unit to the box faces.
pub fn interior_margin(state: &NetState<f64>) -> f64 {
    state
        .layers
        .iter()
        .flat_map(|l| l.iter())
        .map(|&v| v.min(1.0 - v))
        .fold(f64::INFINITY, f64::min)
}

/// Acceptance rule for sampled instances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InstanceFilter {
    /// Minimum distance of every unit of the free fixed point to 0 and 1.
    pub margin: f64,
    /// Minimum eigenvalue of the state Hessian at the free fixed point.
    pub min_curvature: f64,
}

impl Default for InstanceFilter {
    fn default() -> Self {
        InstanceFilter {
            margin: 1e-2,
            min_curvature: 1e-2,
        }
    }
}

/// Draws Glorot weights and `x`, `y_target` uniform on `[0, 1]`, then
/// plants biases that make a random state in `[0.2, 0.8]` stationary. Redraws
/// until the free fixed point reached from zeros passes `filter`.
/// Deterministic in `seed`.
///
/// With zero biases almost every fixed point of a Glorot net has saturated
/// units, so rejection alone would practically never succeed. Near-singular
/// Hessians sit close to a bifurcation, where the fixed point moves faster
/// than any fixed finite difference can resolve.
pub fn sample_instance(topology: &Topology, seed: u64, filter: InstanceFilter) -> Result<Instance> {
    const MAX_DRAWS: u64 = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_DRAWS {
        let mut params = init_params::<f64>(topology, rng.random());
        let x = Array1::from_shape_fn(topology.input_dim(), |_| rng.random_range(0.0..=1.0));
        let y_target = Array1::from_shape_fn(topology.output_dim(), |_| rng.random_range(0.0..=1.0));
        let planted: Vec<Array1<f64>> = topology.sizes()[1..]
            .iter()
            .map(|&d| Array1::from_shape_fn(d, |_| rng.random_range(0.2..=0.8)))
            .collect();
        let n = planted.len();
        for k in 0..n {
            let below = if k == 0 { x.mapv(rho) } else { planted[k - 1].clone() };
            let mut drive = params.weights[k].t().dot(&below);
            if k + 1 < n {
                drive += &params.weights[k + 1].dot(&planted[k + 1]);
            }
            params.biases[k] = &planted[k] - &drive;
        }
        let free = match free_fixed_point(&params, &x, &y_target) {
            Ok(s) => s,
            Err(e) if e.is_numeric() => continue,
            Err(e) => return Err(e),
        };
        if interior_margin(&free) >= filter.margin && min_curvature(&params, &free) >= filter.min_curvature {
            return Ok(Instance {
                params,
                x,
                y_target,
                free,
            });
        }
    }
    Err(EqPropError::Precondition(format!(
        "no instance of {topology} passing {filter:?} in {MAX_DRAWS} draws"
    )))
}

/// [`sample_instance`] with the default filter.
pub fn sample_interior_instance(topology: &Topology, seed: u64) -> Result<Instance> {
    sample_instance(topology, seed, InstanceFilter::default())
}

/// Smallest eigenvalue of [`state_hessian`].
pub fn min_curvature(params: &LayeredParams<f64>, state: &NetState<f64>) -> f64 {
    state_hessian(params, state).symmetric_eigenvalues().min()
}

/// `dJ/dtheta` estimated from the parameter gradients of `F` at the free and
/// nudged fixed points. The nudged phases start from the free fixed point.
pub fn eqprop_grad(
    params: &LayeredParams<f64>,
    x: &Array1<f64>,
    y_target: &Array1<f64>,
    beta: f64,
    mode: EqPropMode,
) -> Result<GradEstimate> {
    if beta == 0.0 || !beta.is_finite() {
        return Err(EqPropError::Config(format!("beta must be finite and non-zero, got {beta}")));
    }
    let free = free_fixed_point(params, x, y_target)?;
    let plus = relax_tight(free.clone(), params, x, y_target, beta)?.state;
    let grad = match mode {
        EqPropMode::OneSided => {
            let d = grad_theta_unchecked(params, x, &plus).sub(&grad_theta_unchecked(params, x, &free));
            d.map(|v| v / beta)
        }
        EqPropMode::Central => {
            let minus = relax_tight(free, params, x, y_target, -beta)?.state;
            let d = grad_theta_unchecked(params, x, &plus).sub(&grad_theta_unchecked(params, x, &minus));
            d.map(|v| v / (2.0 * beta))
        }
    };
    Ok(GradEstimate {
        grad,
        method: GradMethod::EqProp,
        beta_used: Some(beta),
    })
}

/// `J = C(s0)` for the given parameters, relaxing from `start`.
pub fn objective(
    params: &LayeredParams<f64>,
    x: &Array1<f64>,
    y_target: &Array1<f64>,
    start: NetState<f64>,
) -> Result<f64> {
    Ok(relax_tight(start, params, x, y_target, 0.0)?.cost)
}

/// Central differences of `J` in every parameter entry, each side relaxed
/// afresh from the unperturbed free fixed point.
pub fn fd_objective_grad(
    params: &LayeredParams<f64>,
    x: &Array1<f64>,
    y_target: &Array1<f64>,
    delta: f64,
) -> Result<GradEstimate> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(EqPropError::Config(format!("delta must be positive, got {delta}")));
    }
    let top = params.topology()?;
    let free = free_fixed_point(params, x, y_target)?;
    let base = params.to_flat();
    let mut grad = vec![0.0; base.len()];
    let mut probe = base.clone();
    for (i, g) in grad.iter_mut().enumerate() {
        probe[i] = base[i] + delta;
        let up = objective(&LayeredParams::from_flat(&top, &probe)?, x, y_target, free.clone())?;
        probe[i] = base[i] - delta;
        let down = objective(&LayeredParams::from_flat(&top, &probe)?, x, y_target, free.clone())?;
        probe[i] = base[i];
        *g = (up - down) / (2.0 * delta);
    }
    Ok(GradEstimate {
        grad: LayeredParams::from_flat(&top, &grad)?,
        method: GradMethod::FdObjective,
        beta_used: None,
    })
}

/// `d^2 F / ds^2` at an interior state with `beta = 0`: the identity minus the
/// symmetric inter-layer couplings, in the flat state order.
pub fn state_hessian(params: &LayeredParams<f64>, state: &NetState<f64>) -> DMatrix<f64> {
    let n = state.dim();
    let mut h = DMatrix::identity(n, n);
    let mut offset = 0;
    // W_{k+1} couples layer k (rows) to layer k+1 (columns)
    for k in 0..state.layers.len() - 1 {
        let w = &params.weights[k + 1];
        let next = offset + state.layers[k].len();
        for ((i, j), &v) in w.indexed_iter() {
            let c = -v * rho_prime(state.layers[k][i]) * rho_prime(state.layers[k + 1][j]);
            h[(offset + i, next + j)] = c;
            h[(next + j, offset + i)] = c;
        }
        offset = next;
    }
    h
}

/// The costate `lambda = ds^beta/dbeta` at `beta = 0`, from `H lambda = -dC/ds`.
pub fn costate(params: &LayeredParams<f64>, free: &NetState<f64>, y_target: &Array1<f64>) -> Result<NetState<f64>> {
    let top = params.topology()?;
    if interior_margin(free) <= 0.0 {
        return Err(EqPropError::Precondition(
            "free fixed point touches the box boundary; F is not twice differentiable there".into(),
        ));
    }
    let h = state_hessian(params, free);
    let n = h.nrows();
    let mut rhs = DVector::zeros(n);
    let out = free.output();
    for (i, (&s, &y)) in out.iter().zip(y_target).enumerate() {
        rhs[n - out.len() + i] = -(s - y);
    }
    let chol = h.cholesky().ok_or(EqPropError::IndefiniteHessian)?;
    let lambda = chol.solve(&rhs);
    NetState::from_flat(&top, lambda.as_slice())
}

/// Recurrent backpropagation: `dJ/dtheta = lambda . d^2F/(ds dtheta)` at the
/// free fixed point, with the costate from a direct linear solve.
pub fn rbp_grad(params: &LayeredParams<f64>, x: &Array1<f64>, y_target: &Array1<f64>) -> Result<GradEstimate> {
    let top = params.topology()?;
    let free = free_fixed_point(params, x, y_target)?;
    let lambda = costate(params, &free, y_target)?;
    let mut grad = LayeredParams::zeros(&top);
    for k in 0..top.num_layers() {
        let upper = &free.layers[k];
        let lam_u = &lambda.layers[k] * &upper.mapv(rho_prime);
        let rho_u = upper.mapv(rho);
        let (rho_l, lam_l) = if k == 0 {
            (x.mapv(rho), Array1::zeros(x.len()))
        } else {
            let lower = &free.layers[k - 1];
            (lower.mapv(rho), &lambda.layers[k - 1] * &lower.mapv(rho_prime))
        };
        grad.weights[k] = -(outer(&lam_l, &rho_u) + outer(&rho_l, &lam_u));
        grad.biases[k] = -lam_u;
    }
    Ok(GradEstimate {
        grad,
        method: GradMethod::Rbp,
        beta_used: None,
    })
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

#[derive(Clone, Debug)]
pub struct ChlResult {
    /// `dF/dtheta(s^inf) - dF/dtheta(s^0)`; the CHL step is its negative.
    pub estimate: GradEstimate,
    /// `E(s^inf) - E(s^0)`. Can be negative when the two phases settle in
    /// different energy basins.
    pub j_chl: f64,
}

/// Contrastive Hebbian learning: free phase, then a phase with the outputs
/// pinned to the target while the hidden layers relax.
pub fn chl_update(params: &LayeredParams<f64>, x: &Array1<f64>, y_target: &Array1<f64>) -> Result<ChlResult> {
    let top = params.topology()?;
    let free = relax_tight(NetState::zeros(&top), params, x, y_target, 0.0)?;
    let phase = PhaseConfig::oracle(0.0);
    let clamped = converged(relax_output_clamped(free.state.clone(), params, x, y_target, &phase)?, &phase)?;
    let grad = grad_theta_unchecked(params, x, &clamped.state).sub(&grad_theta_unchecked(params, x, &free.state));
    Ok(ChlResult {
        estimate: GradEstimate {
            grad,
            method: GradMethod::Chl,
            beta_used: None,
        },
        j_chl: energy_unchecked(params, x, &clamped.state) - energy_unchecked(params, x, &free.state),
    })
}

/// Costs at the free and at the nudged fixed point. For small positive
/// `beta` nudging should not increase the cost.
pub fn prop1_check(params: &LayeredParams<f64>, x: &Array1<f64>, y_target: &Array1<f64>, beta: f64) -> Result<(f64, f64)> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(EqPropError::Config(format!("beta must be positive, got {beta}")));
    }
    let free = free_fixed_point(params, x, y_target)?;
    let nudged = relax_tight(free.clone(), params, x, y_target, beta)?;
    Ok((cost_unchecked(&free, y_target), nudged.cost))
}
