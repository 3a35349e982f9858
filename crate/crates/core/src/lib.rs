//! Equilibrium Propagation for layered continuous Hopfield networks.

pub mod error;
pub mod model;
pub mod mnist;
pub mod oracles;
pub mod relax;
pub mod stochastic;
pub mod train;

pub use error::{EqPropError, Result};
pub use model::{
    cost, energy, force, grad_theta, rho, rho_prime, total_energy, Activation, LayeredParams,
    NetState, PhaseConfig, Scalar, ThetaGrad, Topology,
};
pub use relax::{
    projected_residual, relax, relax_output_clamped, relax_recorded, step, FixedPointResult,
};
