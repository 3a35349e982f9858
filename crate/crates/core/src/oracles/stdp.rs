//! The weight update as a path integral over the second-phase trajectory:
//! `sum_t [rho(u_i) d rho(u_j) + rho(u_j) d rho(u_i)]` telescopes to the
//! difference of the products at the two ends.

use ndarray::{Array1, Array2};

use crate::error::{EqPropError, Result};
use crate::model::{rho, NetState};

/// Three discretizations of `int d(a b)` for a pair of sampled signals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StdpSums {
    /// `sum_t (a_{t+1} b_{t+1} - a_t b_t)`
    pub telescoping: f64,
    /// `a_T b_T - a_0 b_0`
    pub endpoint: f64,
    /// `sum_t (a_t db_t + b_t da_t)`, which misses `sum_t da_t db_t`.
    pub left_point: f64,
}

pub fn stdp_pair_sums(a: &[f64], b: &[f64]) -> Result<StdpSums> {
    if a.is_empty() {
        return Err(EqPropError::Precondition("empty trajectory".into()));
    }
    if a.len() != b.len() {
        return Err(EqPropError::dim("paired trajectory", a.len(), b.len()));
    }
    let (mut telescoping, mut left_point) = (0.0, 0.0);
    for t in 0..a.len() - 1 {
        telescoping += a[t + 1] * b[t + 1] - a[t] * b[t];
        left_point += a[t] * (b[t + 1] - b[t]) + b[t] * (a[t + 1] - a[t]);
    }
    Ok(StdpSums {
        telescoping,
        endpoint: a[a.len() - 1] * b[b.len() - 1] - a[0] * b[0],
        left_point,
    })
}

/// Per-weight sums over a recorded relaxation, one matrix per `W_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct StdpWeights {
    pub telescoping: Vec<Array2<f64>>,
    pub endpoint: Vec<Array2<f64>>,
    pub left_point: Vec<Array2<f64>>,
}

impl StdpWeights {
    /// Largest gap between the telescoping sum and the endpoint difference.
    pub fn max_telescoping_gap(&self) -> f64 {
        self.telescoping
            .iter()
            .zip(&self.endpoint)
            .flat_map(|(t, e)| t.iter().zip(e.iter()).map(|(p, q)| (p - q).abs()))
            .fold(0.0, f64::max)
    }
}

/// Evaluates the three sums for every weight of the net on `trajectory`
/// (states in time order; the input `x` is constant).
pub fn stdp_integral_check(trajectory: &[NetState<f64>], x: &Array1<f64>) -> Result<StdpWeights> {
    let first = trajectory
        .first()
        .ok_or_else(|| EqPropError::Precondition("empty trajectory".into()))?;
    let sizes: Vec<usize> = std::iter::once(x.len()).chain(first.layers.iter().map(|l| l.len())).collect();
    let rho_x = x.mapv(rho);
    let units = |s: &NetState<f64>| -> Vec<Array1<f64>> {
        std::iter::once(rho_x.clone()).chain(s.layers.iter().map(|l| l.mapv(rho))).collect()
    };
    let mats = || -> Vec<Array2<f64>> { sizes.windows(2).map(|w| Array2::zeros((w[0], w[1]))).collect() };
    let (mut telescoping, mut endpoint, mut left_point) = (mats(), mats(), mats());
    for s in trajectory {
        if s.layers.len() != first.layers.len() || s.layers.iter().zip(&first.layers).any(|(a, b)| a.len() != b.len()) {
            return Err(EqPropError::Precondition("trajectory states differ in shape".into()));
        }
    }
    let rhos: Vec<Vec<Array1<f64>>> = trajectory.iter().map(units).collect();
    for t in 0..rhos.len().saturating_sub(1) {
        let (now, next) = (&rhos[t], &rhos[t + 1]);
        for k in 0..sizes.len() - 1 {
            let (tk, lk) = (&mut telescoping[k], &mut left_point[k]);
            for i in 0..sizes[k] {
                for j in 0..sizes[k + 1] {
                    let (a0, a1, b0, b1) = (now[k][i], next[k][i], now[k + 1][j], next[k + 1][j]);
                    tk[[i, j]] += a1 * b1 - a0 * b0;
                    lk[[i, j]] += a0 * (b1 - b0) + b0 * (a1 - a0);
                }
            }
        }
    }
    let (head, tail) = (&rhos[0], &rhos[rhos.len() - 1]);
    for (k, e) in endpoint.iter_mut().enumerate() {
        for ((i, j), v) in e.indexed_iter_mut() {
            *v = tail[k][i] * tail[k + 1][j] - head[k][i] * head[k + 1][j];
        }
    }
    Ok(StdpWeights {
        telescoping,
        endpoint,
        left_point,
    })
}
