//! Noisy dynamics `ds = -dF/ds dt + sigma dB` and its stationary Boltzmann
//! distribution `p(s) ~ exp(-F(s))` (temperature 1 for `sigma = sqrt(2)`).
//!
//! The state is not confined to the unit box here: the leak term keeps
//! `exp(-F)` integrable over all of state space. Expectations under the
//! Boltzmann distribution of tiny nets (state dimension at most 3) are
//! computed by tensor-product composite Simpson quadrature.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{EqPropError, Result};
use crate::model::{
    check_problem, cost_unchecked, energy_unchecked, force_unchecked, grad_theta_unchecked, input_drive,
    LayeredParams, NetState, Topology,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LangevinConfig {
    pub dt: f64,
    pub sigma: f64,
    pub n_steps: usize,
    pub rng_seed: u64,
}

impl LangevinConfig {
    /// `sigma = sqrt(2)`, i.e. unit temperature.
    pub fn new(dt: f64, n_steps: usize, rng_seed: u64) -> Result<Self> {
        let cfg = LangevinConfig {
            dt,
            sigma: std::f64::consts::SQRT_2,
            n_steps,
            rng_seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(EqPropError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(EqPropError::Config(format!("sigma must be non-negative, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// One Euler-Maruyama step: `s + dt force + sigma sqrt(dt) xi`, unclipped.
pub fn langevin_step(
    state: &NetState<f64>,
    params: &LayeredParams<f64>,
    x: &Array1<f64>,
    beta: f64,
    y_target: &Array1<f64>,
    cfg: &LangevinConfig,
    rng: &mut impl Rng,
) -> Result<NetState<f64>> {
    cfg.validate()?;
    check_problem(params, x, state, Some(y_target))?;
    let drive = input_drive(params, x);
    let mut next = state.clone();
    step_in_place(&mut next, params, &drive, beta, y_target, cfg, rng)?;
    Ok(next)
}

fn step_in_place(
    state: &mut NetState<f64>,
    params: &LayeredParams<f64>,
    drive: &Array1<f64>,
    beta: f64,
    y_target: &Array1<f64>,
    cfg: &LangevinConfig,
    rng: &mut impl Rng,
) -> Result<()> {
    let f = force_unchecked(params, drive, state, beta, y_target);
    let noise = cfg.sigma * cfg.dt.sqrt();
    for (s, f) in state.layers.iter_mut().zip(&f.layers) {
        for (s, &f) in s.iter_mut().zip(f) {
            let xi: f64 = rng.sample(StandardNormal);
            *s += cfg.dt * f + noise * xi;
        }
    }
    if state.is_finite() {
        Ok(())
    } else {
        Err(EqPropError::NonFinite("Langevin state".into()))
    }
}

/// Monte Carlo mean with a batch-means standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Runs `cfg.n_steps` steps from `state`, discards the first `burn_in`, and
/// averages `f` over the rest. The standard error comes from `batches`
/// contiguous batch means, which absorbs the autocorrelation of the chain
/// when each batch is much longer than the relaxation time `1/dt` steps.
#[allow(clippy::too_many_arguments)]
pub fn langevin_mean(
    f: impl Fn(&NetState<f64>) -> f64,
    state: NetState<f64>,
    params: &LayeredParams<f64>,
    x: &Array1<f64>,
    beta: f64,
    y_target: &Array1<f64>,
    cfg: &LangevinConfig,
    burn_in: usize,
    batches: usize,
) -> Result<MonteCarloEstimate> {
    cfg.validate()?;
    check_problem(params, x, &state, Some(y_target))?;
    if batches < 2 || cfg.n_steps < burn_in + batches {
        return Err(EqPropError::Config("need at least two batches of at least one sample each".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let drive = input_drive(params, x);
    let mut s = state;
    for _ in 0..burn_in {
        step_in_place(&mut s, params, &drive, beta, y_target, cfg, &mut rng)?;
    }
    let per_batch = (cfg.n_steps - burn_in) / batches;
    let mut means = Vec::with_capacity(batches);
    for _ in 0..batches {
        let mut acc = 0.0;
        for _ in 0..per_batch {
            step_in_place(&mut s, params, &drive, beta, y_target, cfg, &mut rng)?;
            acc += f(&s);
        }
        means.push(acc / per_batch as f64);
    }
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (batches - 1) as f64;
    Ok(MonteCarloEstimate {
        mean: m,
        std_error: (var / batches as f64).sqrt(),
        samples: per_batch * batches,
    })
}

/// One grid axis: `points` equally spaced nodes on `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

/// Tensor-product grid, one axis per state unit in flat order.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureGrid {
    pub axes: Vec<GridAxis>,
}

impl QuadratureGrid {
    pub const MAX_DIM: usize = 3;

    /// The same axis repeated `dim` times.
    pub fn uniform(dim: usize, lo: f64, hi: f64, points: usize) -> Result<Self> {
        let grid = QuadratureGrid {
            axes: vec![GridAxis { lo, hi, points }; dim],
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.len() > Self::MAX_DIM {
            return Err(EqPropError::Unsupported(format!(
                "quadrature over {} dimensions (at most {})",
                self.axes.len(),
                Self::MAX_DIM
            )));
        }
        for a in &self.axes {
            if !(a.hi > a.lo && a.lo.is_finite() && a.hi.is_finite()) {
                return Err(EqPropError::Config(format!("grid bounds [{}, {}] are empty", a.lo, a.hi)));
            }
            if a.points < 3 || a.points % 2 == 0 {
                return Err(EqPropError::Config(format!(
                    "Simpson's rule needs an odd number of at least 3 points, got {}",
                    a.points
                )));
            }
        }
        Ok(())
    }

    fn axis_nodes(a: &GridAxis) -> (Vec<f64>, Vec<f64>) {
        let n = a.points - 1;
        let h = (a.hi - a.lo) / n as f64;
        let nodes = (0..=n).map(|i| a.lo + h * i as f64).collect();
        let weights = (0..=n)
            .map(|i| {
                let c = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                c * h / 3.0
            })
            .collect();
        (nodes, weights)
    }
}

/// The Boltzmann distribution of `F = E + beta C` discretized on a grid:
/// node states with normalized quadrature weights.
#[derive(Clone, Debug)]
pub struct BoltzmannQuadrature {
    nodes: Vec<NetState<f64>>,
    weights: Vec<f64>,
    /// Largest density on the faces of the grid relative to the largest
    /// density anywhere on it.
    pub boundary_ratio: f64,
}

impl BoltzmannQuadrature {
    /// Face densities above this fraction of the peak mean the grid cuts off
    /// noticeable mass.
    pub const BOUNDARY_TOLERANCE: f64 = 1e-12;

    pub fn new(
        params: &LayeredParams<f64>,
        x: &Array1<f64>,
        beta: f64,
        y_target: &Array1<f64>,
        grid: &QuadratureGrid,
    ) -> Result<Self> {
        let top = params.topology()?;
        check_problem(params, x, &NetState::zeros(&top), Some(y_target))?;
        grid.validate()?;
        if grid.axes.len() != top.state_dim() {
            return Err(EqPropError::dim("quadrature grid dimension", top.state_dim(), grid.axes.len()));
        }
        let axes: Vec<_> = grid.axes.iter().map(QuadratureGrid::axis_nodes).collect();
        let total: usize = axes.iter().map(|(n, _)| n.len()).product();
        let entries: Vec<(NetState<f64>, f64, f64, bool)> = (0..total)
            .into_par_iter()
            .map(|mut idx| {
                let mut flat = Vec::with_capacity(axes.len());
                let mut w = 1.0;
                let mut face = false;
                for (nodes, weights) in axes.iter().rev() {
                    let i = idx % nodes.len();
                    idx /= nodes.len();
                    flat.push(nodes[i]);
                    w *= weights[i];
                    face |= i == 0 || i == nodes.len() - 1;
                }
                flat.reverse();
                let s = NetState::from_flat(&top, &flat).expect("grid matches topology");
                let f = energy_unchecked(params, x, &s) + beta * cost_unchecked(&s, y_target);
                (s, w, f, face)
            })
            .collect();
        let f_min = entries.iter().map(|e| e.2).fold(f64::INFINITY, f64::min);
        if !f_min.is_finite() {
            return Err(EqPropError::NonFinite("energy on the quadrature grid".into()));
        }
        let boundary_ratio = entries
            .iter()
            .filter(|e| e.3)
            .map(|e| (f_min - e.2).exp())
            .fold(0.0, f64::max);
        let raw: Vec<f64> = entries.iter().map(|e| e.1 * (f_min - e.2).exp()).collect();
        let z: f64 = raw.iter().sum();
        Ok(BoltzmannQuadrature {
            weights: raw.iter().map(|w| w / z).collect(),
            nodes: entries.into_iter().map(|e| e.0).collect(),
            boundary_ratio,
        })
    }

    pub fn warning(&self) -> Option<String> {
        (self.boundary_ratio > Self::BOUNDARY_TOLERANCE).then(|| {
            format!(
                "density on the grid boundary reaches {:.1e} of its peak; the bounds may cut off mass",
                self.boundary_ratio
            )
        })
    }

    pub fn expect(&self, f: impl Fn(&NetState<f64>) -> f64 + Sync) -> f64 {
        let values: Vec<f64> = self.nodes.par_iter().map(&f).collect();
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }

    pub fn expect_vec(&self, f: impl Fn(&NetState<f64>) -> Vec<f64> + Sync) -> Vec<f64> {
        let values: Vec<Vec<f64>> = self.nodes.par_iter().map(&f).collect();
        let mut acc = vec![0.0; values.first().map_or(0, Vec::len)];
        for (v, w) in values.iter().zip(&self.weights) {
            for (a, x) in acc.iter_mut().zip(v) {
                *a += w * x;
            }
        }
        acc
    }

    /// `E[C]` and `Var[C]`.
    pub fn cost_moments(&self, y_target: &Array1<f64>) -> (f64, f64) {
        let mean = self.expect(|s| cost_unchecked(s, y_target));
        let var = self.expect(|s| (cost_unchecked(s, y_target) - mean).powi(2));
        (mean, var)
    }
}

/// An expectation together with the grid's boundary warning, if any.
#[derive(Clone, Debug, PartialEq)]
pub struct Expectation {
    pub value: f64,
    pub warning: Option<String>,
}

pub fn boltzmann_expectation(
    f: impl Fn(&NetState<f64>) -> f64 + Sync,
    params: &LayeredParams<f64>,
    x: &Array1<f64>,
    beta: f64,
    y_target: &Array1<f64>,
    grid: &QuadratureGrid,
) -> Result<Expectation> {
    let q = BoltzmannQuadrature::new(params, x, beta, y_target, grid)?;
    Ok(Expectation {
        value: q.expect(f),
        warning: q.warning(),
    })
}

/// Both sides of the stochastic gradient identity, per flat parameter entry:
/// `lhs` differentiates `E0[C]` by central differences in each parameter,
/// `rhs = (E^beta[dF/dtheta] - E^0[dF/dtheta]) / beta`.
#[derive(Clone, Debug, PartialEq)]
pub struct Theorem2Sides {
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub warning: Option<String>,
}

impl Theorem2Sides {
    pub fn max_relative_error(&self) -> f64 {
        self.lhs
            .iter()
            .zip(&self.rhs)
            .map(|(l, r)| (l - r).abs() / l.abs())
            .fold(0.0, f64::max)
    }
}

pub fn theorem2_check(
    params: &LayeredParams<f64>,
    x: &Array1<f64>,
    y_target: &Array1<f64>,
    beta: f64,
    grid: &QuadratureGrid,
    theta_delta: f64,
) -> Result<Theorem2Sides> {
    if beta == 0.0 || !beta.is_finite() {
        return Err(EqPropError::Config(format!("beta must be finite and non-zero, got {beta}")));
    }
    if !(theta_delta > 0.0) {
        return Err(EqPropError::Config(format!("theta_delta must be positive, got {theta_delta}")));
    }
    let top: Topology = params.topology()?;
    let grad = |q: &BoltzmannQuadrature| q.expect_vec(|s| grad_theta_unchecked(params, x, s).to_flat());
    let free = BoltzmannQuadrature::new(params, x, 0.0, y_target, grid)?;
    let nudged = BoltzmannQuadrature::new(params, x, beta, y_target, grid)?;
    let rhs: Vec<f64> = grad(&nudged)
        .iter()
        .zip(grad(&free))
        .map(|(b, z)| (b - z) / beta)
        .collect();

    let base = params.to_flat();
    let mut probe = base.clone();
    let mut lhs = Vec::with_capacity(base.len());
    let expected_cost = |flat: &[f64]| -> Result<f64> {
        let p = LayeredParams::from_flat(&top, flat)?;
        Ok(BoltzmannQuadrature::new(&p, x, 0.0, y_target, grid)?.cost_moments(y_target).0)
    };
    for i in 0..base.len() {
        probe[i] = base[i] + theta_delta;
        let up = expected_cost(&probe)?;
        probe[i] = base[i] - theta_delta;
        let down = expected_cost(&probe)?;
        probe[i] = base[i];
        lhs.push((up - down) / (2.0 * theta_delta));
    }
    Ok(Theorem2Sides {
        lhs,
        rhs,
        warning: free.warning(),
    })
}

/// `d/dbeta E^beta[C]` at 0 by central differences with step `beta_step`,
/// and `-Var^0[C]`.
pub fn prop2_check(
    params: &LayeredParams<f64>,
    x: &Array1<f64>,
    y_target: &Array1<f64>,
    grid: &QuadratureGrid,
    beta_step: f64,
) -> Result<(f64, f64)> {
    if !(beta_step > 0.0) {
        return Err(EqPropError::Config(format!("beta_step must be positive, got {beta_step}")));
    }
    let mean_at = |b: f64| -> Result<f64> {
        Ok(BoltzmannQuadrature::new(params, x, b, y_target, grid)?.cost_moments(y_target).0)
    };
    let slope = (mean_at(beta_step)? - mean_at(-beta_step)?) / (2.0 * beta_step);
    let (_, var) = BoltzmannQuadrature::new(params, x, 0.0, y_target, grid)?.cost_moments(y_target);
    Ok((slope, -var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relax::step;
    use ndarray::array;
    use proptest::prelude::*;

    fn toy() -> (LayeredParams<f64>, Array1<f64>, Array1<f64>) {
        let top: Topology = "1-1-1".parse().unwrap();
        let mut p = LayeredParams::zeros(&top);
        p.weights[0] = array![[0.8]];
        p.weights[1] = array![[1.2]];
        p.biases[0] = array![0.3];
        p.biases[1] = array![-0.2];
        (p, array![0.7], array![0.9])
    }

    fn grid2(points: usize) -> QuadratureGrid {
        QuadratureGrid::uniform(2, -4.0, 5.0, points).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(matches!(
            QuadratureGrid::uniform(4, -1.0, 1.0, 5),
            Err(EqPropError::Unsupported(_))
        ));
        assert!(QuadratureGrid::uniform(1, -1.0, 1.0, 4).is_err());
        assert!(QuadratureGrid::uniform(1, -1.0, 1.0, 1).is_err());
        assert!(QuadratureGrid::uniform(1, 1.0, 1.0, 5).is_err());
        let (p, x, y) = toy();
        let three = QuadratureGrid::uniform(3, -4.0, 5.0, 11).unwrap();
        assert!(matches!(
            BoltzmannQuadrature::new(&p, &x, 0.0, &y, &three),
            Err(EqPropError::Dimension { .. })
        ));
    }

    #[test]
    fn simpson_weights_integrate_cubics_exactly() {
        let (nodes, weights) = QuadratureGrid::axis_nodes(&GridAxis { lo: -1.0, hi: 2.0, points: 7 });
        let integral: f64 = nodes.iter().zip(&weights).map(|(s, w)| w * (s * s * s - s)).sum();
        // int_{-1}^{2} (s^3 - s) ds = 15/4 - 3/2
        assert!((integral - 2.25).abs() < 1e-13);
    }

    #[test]
    fn normalization_is_exact() {
        let (p, x, y) = toy();
        for beta in [0.0, 1e-3, 2.0] {
            let e = boltzmann_expectation(|_| 1.0, &p, &x, beta, &y, &grid2(101)).unwrap();
            assert!((e.value - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn default_bounds_raise_the_boundary_warning() {
        // exp(-F) at s = -4 is about exp(-8) of the peak
        let (p, x, y) = toy();
        let e = boltzmann_expectation(|_| 1.0, &p, &x, 0.0, &y, &grid2(101)).unwrap();
        assert!(e.warning.is_some());
        let wide = QuadratureGrid::uniform(2, -9.0, 10.0, 201).unwrap();
        let e = boltzmann_expectation(|_| 1.0, &p, &x, 0.0, &y, &wide).unwrap();
        assert!(e.warning.is_none());
    }

    #[test]
    fn odd_function_of_symmetric_density_averages_to_zero() {
        let top: Topology = "1-1".parse().unwrap();
        let p = LayeredParams::zeros(&top);
        let g = QuadratureGrid::uniform(1, -6.0, 6.0, 201).unwrap();
        let e = boltzmann_expectation(|s| s.layers[0][0].powi(3), &p, &array![0.5], 0.0, &array![0.5], &g).unwrap();
        assert!(e.value.abs() < 1e-14);
        // and the leak alone gives a standard normal
        let var = boltzmann_expectation(|s| s.layers[0][0].powi(2), &p, &array![0.5], 0.0, &array![0.5], &g).unwrap();
        assert!((var.value - 1.0).abs() < 1e-6);
    }

    #[test]
    fn nudging_pulls_the_mean_output_toward_the_target() {
        let top: Topology = "1-1".parse().unwrap();
        let p = LayeredParams::zeros(&top);
        let g = QuadratureGrid::uniform(1, -6.0, 7.0, 401).unwrap();
        let y = array![0.8];
        let gaps: Vec<f64> = [0.0, 1.0, 10.0]
            .iter()
            .map(|&b| {
                let e = boltzmann_expectation(|s| s.layers[0][0], &p, &array![0.5], b, &y, &g).unwrap();
                (e.value - y[0]).abs()
            })
            .collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    }

    #[test]
    fn gradient_identity_holds_on_the_two_unit_toy() {
        let (p, x, y) = toy();
        let sides = theorem2_check(&p, &x, &y, 1e-3, &grid2(401), 1e-4).unwrap();
        assert!(sides.max_relative_error() < 1e-2, "{sides:?}");
        // the one-sided estimate is biased at first order in beta
        let coarse = theorem2_check(&p, &x, &y, 2e-3, &grid2(401), 1e-4).unwrap();
        let gap = |s: &Theorem2Sides| s.lhs.iter().zip(&s.rhs).map(|(l, r)| (l - r).abs()).fold(0.0, f64::max);
        let ratio = gap(&coarse) / gap(&sides);
        assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn cost_derivative_is_minus_the_variance() {
        let (p, x, y) = toy();
        let (slope, neg_var) = prop2_check(&p, &x, &y, &grid2(401), 1e-4).unwrap();
        assert!(slope <= 0.0 && neg_var <= 0.0);
        assert!((slope - neg_var).abs() <= 1e-3 * neg_var.abs(), "{slope} {neg_var}");
    }

    #[test]
    fn refinement_converges_toward_the_fine_grid() {
        let (p, x, y) = toy();
        let reference = prop2_check(&p, &x, &y, &grid2(801), 1e-4).unwrap();
        let err = |n| {
            let (a, b) = prop2_check(&p, &x, &y, &grid2(n), 1e-4).unwrap();
            (a - reference.0).abs().max((b - reference.1).abs())
        };
        assert!(err(401) < err(101));
    }

    #[test]
    fn noiseless_step_is_the_deterministic_step() {
        let (p, x, y) = toy();
        let s = NetState { layers: vec![array![0.4], array![0.6]] };
        let cfg = LangevinConfig { dt: 0.1, sigma: 0.0, n_steps: 1, rng_seed: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let noisy = langevin_step(&s, &p, &x, 0.5, &y, &cfg, &mut rng).unwrap();
        let det = step(&s, &p, &x, 0.5, &y, 0.1).unwrap();
        assert_eq!(noisy, det);
    }

    #[test]
    fn langevin_leaves_the_box() {
        let (p, x, y) = toy();
        let cfg = LangevinConfig::new(0.5, 1, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = NetState { layers: vec![array![0.0], array![0.0]] };
        let mut left = false;
        for _ in 0..50 {
            s = langevin_step(&s, &p, &x, 0.0, &y, &cfg, &mut rng).unwrap();
            left |= !s.is_boxed();
        }
        assert!(left);
    }

    #[test]
    fn invalid_langevin_settings() {
        assert!(LangevinConfig::new(0.0, 10, 0).is_err());
        let (p, x, y) = toy();
        let s = NetState { layers: vec![array![0.0], array![0.0]] };
        let cfg = LangevinConfig::new(0.1, 10, 0).unwrap();
        assert!(langevin_mean(|_| 0.0, s, &p, &x, 0.0, &y, &cfg, 0, 1).is_err());
    }

    #[test]
    fn monte_carlo_matches_quadrature() {
        let top: Topology = "1-1".parse().unwrap();
        let mut p = LayeredParams::zeros(&top);
        p.weights[0] = array![[0.6]];
        p.biases[0] = array![0.4];
        let (x, y) = (array![0.5], array![0.5]);
        let g = QuadratureGrid::uniform(1, -7.0, 8.0, 801).unwrap();
        let exact = boltzmann_expectation(|s| s.layers[0][0], &p, &x, 0.0, &y, &g).unwrap().value;
        let cfg = LangevinConfig::new(0.01, 1_000_000, 7).unwrap();
        let mc = langevin_mean(|s| s.layers[0][0], NetState::zeros(&top), &p, &x, 0.0, &y, &cfg, 5_000, 50).unwrap();
        assert!((mc.mean - exact).abs() < 3.0 * mc.std_error, "{mc:?} vs {exact}");
        assert!(mc.std_error < 0.05);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn seeded_chains_are_reproducible(seed in any::<u64>()) {
            let (p, x, y) = toy();
            let cfg = LangevinConfig::new(0.05, 200, seed).unwrap();
            let run = || langevin_mean(|s| s.layers[1][0], NetState::zeros(&p.topology().unwrap()), &p, &x, 0.2, &y, &cfg, 20, 4).unwrap();
            prop_assert_eq!(run(), run());
        }

        #[test]
        fn expectations_of_bounded_functions_stay_in_range(b in -2.0f64..2.0, w in -2.0f64..2.0) {
            let top: Topology = "1-1-1".parse().unwrap();
            let mut p = LayeredParams::zeros(&top);
            p.weights[1] = array![[w]];
            p.biases[0] = array![b];
            let q = BoltzmannQuadrature::new(&p, &array![0.3], 0.0, &array![0.5], &grid2(41)).unwrap();
            let m = q.expect(|s| crate::model::rho(s.layers[0][0]));
            prop_assert!((0.0..=1.0).contains(&m));
        }
    }
}
