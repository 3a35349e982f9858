//! Cross-derivative symmetry at a fixed point:
//! `d/dtheta [dF/dbeta](s^beta)` equals `d/dbeta [dF/dtheta](s^beta)` at `beta = 0`.

use nalgebra::{DMatrix, DVector};
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::relax_tight;
use crate::error::{EqPropError, Result};
use crate::model::{grad_theta_unchecked, LayeredParams, NetState, Topology};

/// Any family `F(theta, beta, s)` whose minimizer in `s` can be computed.
pub trait EquilibriumModel {
    fn theta(&self) -> Vec<f64>;

    /// `(dF/dbeta, dF/dtheta)` evaluated at the minimizer `s^beta_theta`.
    fn partials(&self, theta: &[f64], beta: f64) -> Result<(f64, Vec<f64>)>;
}

/// The layered Hopfield net; every evaluation relaxes from the stored free
/// fixed point to the oracle tolerance.
pub struct HopfieldModel<'a> {
    pub topology: Topology,
    pub params: &'a LayeredParams<f64>,
    pub x: &'a Array1<f64>,
    pub y_target: &'a Array1<f64>,
    pub start: NetState<f64>,
}

impl<'a> HopfieldModel<'a> {
    pub fn new(params: &'a LayeredParams<f64>, x: &'a Array1<f64>, y_target: &'a Array1<f64>) -> Result<Self> {
        let start = super::free_fixed_point(params, x, y_target)?;
        Ok(HopfieldModel {
            topology: params.topology()?,
            params,
            x,
            y_target,
            start,
        })
    }
}

impl EquilibriumModel for HopfieldModel<'_> {
    fn theta(&self) -> Vec<f64> {
        self.params.to_flat()
    }

    fn partials(&self, theta: &[f64], beta: f64) -> Result<(f64, Vec<f64>)> {
        let params = LayeredParams::from_flat(&self.topology, theta)?;
        let r = relax_tight(self.start.clone(), &params, self.x, self.y_target, beta)?;
        Ok((r.cost, grad_theta_unchecked(&params, self.x, &r.state).to_flat()))
    }
}

/// `F = 1/2 s^T M s - (P theta)^T s + beta/2 |s - y|^2` with `M` symmetric
/// positive definite, so `s^beta = (M + beta I)^-1 (P theta + beta y)`.
#[derive(Clone, Debug)]
pub struct QuadraticModel {
    pub m: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub y: DVector<f64>,
    pub theta: Vec<f64>,
}

impl QuadraticModel {
    pub fn random(seed: u64, state_dim: usize, num_params: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
        let a = draw(state_dim, state_dim);
        let m = &a * a.transpose() + DMatrix::identity(state_dim, state_dim);
        let p = draw(state_dim, num_params);
        let y = draw(state_dim, 1).column(0).into_owned();
        let theta = draw(num_params, 1).as_slice().to_vec();
        QuadraticModel { m, p, y, theta }
    }

    pub fn fixed_point(&self, theta: &[f64], beta: f64) -> Result<DVector<f64>> {
        let n = self.m.nrows();
        let a = &self.m + DMatrix::identity(n, n) * beta;
        let rhs = &self.p * DVector::from_column_slice(theta) + &self.y * beta;
        a.cholesky().map(|c| c.solve(&rhs)).ok_or(EqPropError::IndefiniteHessian)
    }
}

impl EquilibriumModel for QuadraticModel {
    fn theta(&self) -> Vec<f64> {
        self.theta.clone()
    }

    fn partials(&self, theta: &[f64], beta: f64) -> Result<(f64, Vec<f64>)> {
        let s = self.fixed_point(theta, beta)?;
        let d_beta = 0.5 * (&s - &self.y).norm_squared();
        let d_theta = -(self.p.transpose() * s);
        Ok((d_beta, d_theta.as_slice().to_vec()))
    }
}

/// Both sides of the identity, one entry per parameter: `A` by central
/// differences in theta at `beta = 0`, `B` by central differences in beta.
pub fn lemma1_check(model: &dyn EquilibriumModel, theta_step: f64, beta_step: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(theta_step > 0.0 && beta_step > 0.0) {
        return Err(EqPropError::Config("finite-difference steps must be positive".into()));
    }
    let theta = model.theta();
    let mut probe = theta.clone();
    let mut a = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        probe[i] = theta[i] + theta_step;
        let up = model.partials(&probe, 0.0)?.0;
        probe[i] = theta[i] - theta_step;
        let down = model.partials(&probe, 0.0)?.0;
        probe[i] = theta[i];
        a.push((up - down) / (2.0 * theta_step));
    }
    let (_, up) = model.partials(&theta, beta_step)?;
    let (_, down) = model.partials(&theta, -beta_step)?;
    let b = up.iter().zip(&down).map(|(u, d)| (u - d) / (2.0 * beta_step)).collect();
    Ok((a, b))
}

/// Largest elementwise gap between the two sides.
pub fn lemma1_asymmetry(model: &dyn EquilibriumModel, theta_step: f64, beta_step: f64) -> Result<f64> {
    let (a, b) = lemma1_check(model, theta_step, beta_step)?;
    Ok(a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::sample_interior_instance;

    #[test]
    fn quadratic_toy_is_symmetric() {
        for seed in 0..5 {
            let q = QuadraticModel::random(seed, 4, 6);
            let asym = lemma1_asymmetry(&q, 1e-4, 1e-4).unwrap();
            assert!(asym < 1e-8, "seed {seed}: {asym}");
        }
    }

    #[test]
    fn quadratic_sides_match_closed_form() {
        // A = dJ/dtheta = P^T M^-1 (s0 - y)
        let q = QuadraticModel::random(1, 3, 2);
        let s0 = q.fixed_point(&q.theta, 0.0).unwrap();
        let closed = q.p.transpose() * q.m.clone().cholesky().unwrap().solve(&(&s0 - &q.y));
        let (a, b) = lemma1_check(&q, 1e-5, 1e-5).unwrap();
        for i in 0..2 {
            assert!((a[i] - closed[i]).abs() < 1e-8);
            assert!((b[i] - closed[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn hopfield_net_is_symmetric_including_the_bias_block() {
        let top: Topology = "5-4-3".parse().unwrap();
        for seed in 0..3 {
            let inst = sample_interior_instance(&top, seed).unwrap();
            let model = HopfieldModel::new(&inst.params, &inst.x, &inst.y_target).unwrap();
            let (a, b) = lemma1_check(&model, 1e-4, 1e-4).unwrap();
            let asym = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(asym < 1e-4, "seed {seed}: {asym}");
            // biases follow each weight block in the flat layout
            let b1 = 5 * 4..5 * 4 + 4;
            let b2 = 5 * 4 + 4 + 4 * 3..a.len();
            for i in b1.chain(b2) {
                assert!((a[i] - b[i]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn nonpositive_steps_are_rejected() {
        let q = QuadraticModel::random(0, 2, 2);
        assert!(lemma1_check(&q, 0.0, 1e-4).is_err());
    }
}
