#![allow(dead_code)]

use eqprop::{LayeredParams, NetState, Topology};
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Problem {
    pub params: LayeredParams<f64>,
    pub x: Array1<f64>,
    pub state: NetState<f64>,
    pub y: Array1<f64>,
    pub beta: f64,
}

/// Random weights, biases, input, target and beta, with a state in
/// `[-0.5, 1.5]` kept at least `1e-3` away from the kinks at 0 and 1.
pub fn random_problem(seed: u64, sizes: &[usize]) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top = Topology::new(sizes.to_vec()).unwrap();
    let mut params = LayeredParams::<f64>::zeros(&top);
    params.weights.iter_mut().for_each(|w| w.mapv_inplace(|_| rng.random_range(-1.0..1.0)));
    params.biases.iter_mut().for_each(|b| b.mapv_inplace(|_| rng.random_range(-0.5..0.5)));
    let x = Array1::from_shape_fn(sizes[0], |_| rng.random_range(0.0..1.0));
    let mut state = NetState::<f64>::zeros(&top);
    for l in &mut state.layers {
        l.mapv_inplace(|_| loop {
            let v: f64 = rng.random_range(-0.5..1.5);
            if v.abs() > 1e-3 && (v - 1.0).abs() > 1e-3 {
                break v;
            }
        });
    }
    let y = Array1::from_shape_fn(top.output_dim(), |_| rng.random_range(0.0..1.0));
    let beta = rng.random_range(-1.0..1.0);
    Problem { params, x, state, y, beta }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}
