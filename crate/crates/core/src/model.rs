//! Layered continuous Hopfield network: topology, parameters, state, and the
//! closed-form energy, cost, force and parameter-gradient evaluations.
//!
//! The network is a chain `x -> h_1 -> ... -> h_{N-1} -> y` with symmetric
//! connections between adjacent layers only. The undirected weight between
//! unit `i` of layer `k-1` and unit `j` of layer `k` is stored once, as
//! `W_k[i, j]`; the feedback direction uses the transpose. The input `x` is
//! always clamped and is not part of the state.
//!
//! With `u_0 = x` and `u_k = s_k`, the internal energy is
//!
//! ```text
//! E = 1/2 sum_i s_i^2 - sum_k rho(u_{k-1})^T W_k rho(u_k) - sum_k b_k^T rho(s_k)
//! ```
//!
//! the cost is `C = 1/2 |y - target|^2` and the total energy is `F = E + beta C`.
//! Terms that only involve the clamped input are dropped; they shift `E` by
//! a constant and change neither the dynamics nor any gradient.

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::str::FromStr;

use ndarray::{Array1, Array2, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive};

use crate::error::{EqPropError, Result};

/// Floating-point element type used by the network (`f32` or `f64`).
pub trait Scalar:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + Default
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + 'static
{
    /// Width in bytes of the little-endian encoding.
    const BYTES: usize;

    fn of(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    /// Decodes from exactly `Self::BYTES` little-endian bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const BYTES: usize = 4;

    fn of(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const BYTES: usize = 8;

    fn of(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Layer sizes `[d_0, d_1, ..., d_N]`; `d_0` is the clamped input.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Topology {
    sizes: Vec<usize>,
}

impl Topology {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(EqPropError::Config(format!(
                "a topology needs an input and at least one state layer, got {} sizes",
                sizes.len()
            )));
        }
        if let Some(k) = sizes.iter().position(|&d| d == 0) {
            return Err(EqPropError::Config(format!("layer {k} has size 0")));
        }
        Ok(Topology { sizes })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Number of state layers `N` (hidden layers plus the output layer).
    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Size of state layer `k`, 1-based (`k = N` is the output).
    pub fn layer_size(&self, k: usize) -> usize {
        self.sizes[k]
    }

    pub fn state_dim(&self) -> usize {
        self.sizes[1..].iter().sum()
    }

    pub fn num_params(&self) -> usize {
        self.sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.sizes.iter().map(|d| d.to_string()).collect();
        f.write_str(&parts.join("-"))
    }
}

impl FromStr for Topology {
    type Err = EqPropError;

    /// Parses `784-500-10` (commas and `x` are accepted as separators too).
    fn from_str(s: &str) -> Result<Self> {
        let sizes = s
            .split(['-', ',', 'x'])
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| EqPropError::Config(format!("bad layer size {p:?} in topology {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Topology::new(sizes)
    }
}

/// Firing-rate nonlinearity. Only the hard sigmoid is supported.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Activation {
    #[default]
    HardSigmoid,
}

impl Activation {
    pub fn rho<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::HardSigmoid => v.max(T::zero()).min(T::one()),
        }
    }

    /// Derivative of `rho`, taken as 1 on the closed interval `[0, 1]`.
    ///
    /// A unit resting at 0 must still feel its input, otherwise a state
    /// initialized at zero could never leave it.
    pub fn rho_prime<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::HardSigmoid => {
                if v >= T::zero() && v <= T::one() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

#[inline]
pub fn rho<T: Scalar>(v: T) -> T {
    Activation::HardSigmoid.rho(v)
}

#[inline]
pub fn rho_prime<T: Scalar>(v: T) -> T {
    Activation::HardSigmoid.rho_prime(v)
}

pub(crate) fn rho_vec<T: Scalar>(v: &Array1<T>) -> Array1<T> {
    v.mapv(rho)
}

/// Weights `W_k` (shape `d_{k-1} x d_k`) and biases `b_k` (length `d_k`) for
/// `k = 1..N`, stored at index `k - 1`.
///
/// The same container doubles as a parameter-shaped gradient or update.
#[derive(Clone, Debug, PartialEq)]
pub struct LayeredParams<T> {
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
}

impl<T: Scalar> LayeredParams<T> {
    pub fn zeros(topology: &Topology) -> Self {
        let s = topology.sizes();
        LayeredParams {
            weights: s.windows(2).map(|w| Array2::zeros((w[0], w[1]))).collect(),
            biases: s[1..].iter().map(|&d| Array1::zeros(d)).collect(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    /// Recovers the topology from the array shapes, checking that adjacent
    /// layers chain correctly.
    pub fn topology(&self) -> Result<Topology> {
        if self.weights.is_empty() {
            return Err(EqPropError::Config("parameters have no layers".into()));
        }
        if self.biases.len() != self.weights.len() {
            return Err(EqPropError::dim(
                "bias vector count",
                self.weights.len(),
                self.biases.len(),
            ));
        }
        let mut sizes = vec![self.weights[0].nrows()];
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let prev = *sizes.last().unwrap();
            if w.nrows() != prev {
                return Err(EqPropError::dim(format!("rows of W_{}", k + 1), prev, w.nrows()));
            }
            if b.len() != w.ncols() {
                return Err(EqPropError::dim(format!("length of b_{}", k + 1), w.ncols(), b.len()));
            }
            sizes.push(w.ncols());
        }
        Topology::new(sizes)
    }

    /// Shape and finiteness check against an expected topology.
    pub fn validate(&self, topology: &Topology) -> Result<()> {
        let own = self.topology()?;
        if &own != topology {
            return Err(EqPropError::Config(format!(
                "parameters have topology {own}, expected {topology}"
            )));
        }
        if !self.is_finite() {
            return Err(EqPropError::NonFinite("parameters".into()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Flattens as `W_1` (row-major), `b_1`, `W_2`, `b_2`, ...
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn from_flat(topology: &Topology, values: &[T]) -> Result<Self> {
        if values.len() != topology.num_params() {
            return Err(EqPropError::dim("flat parameter vector", topology.num_params(), values.len()));
        }
        let mut p = Self::zeros(topology);
        let mut it = values.iter().copied();
        for (w, b) in p.weights.iter_mut().zip(p.biases.iter_mut()) {
            w.iter_mut().for_each(|v| *v = it.next().unwrap());
            b.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        Ok(p)
    }

    /// `self += alpha * other`
    pub fn scaled_add(&mut self, alpha: T, other: &Self) {
        for (w, o) in self.weights.iter_mut().zip(&other.weights) {
            w.scaled_add(alpha, o);
        }
        for (b, o) in self.biases.iter_mut().zip(&other.biases) {
            b.scaled_add(alpha, o);
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        LayeredParams {
            weights: self.weights.iter().map(|w| w.mapv(&f)).collect(),
            biases: self.biases.iter().map(|b| b.mapv(&f)).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.scaled_add(-T::one(), other);
        out
    }

    /// Euclidean norm over every entry.
    pub fn norm(&self) -> T {
        self.to_flat().iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    /// Frobenius norm of each weight matrix.
    pub fn weight_norms(&self) -> Vec<T> {
        self.weights
            .iter()
            .map(|w| w.iter().map(|&v| v * v).sum::<T>().sqrt())
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> LayeredParams<U> {
        LayeredParams {
            weights: self.weights.iter().map(|w| w.mapv(|v| U::of(v.to_f64()))).collect(),
            biases: self.biases.iter().map(|b| b.mapv(|v| U::of(v.to_f64()))).collect(),
        }
    }
}

/// Free state `s = (h_1, ..., h_{N-1}, y)`; the last layer is the output.
#[derive(Clone, Debug, PartialEq)]
pub struct NetState<T> {
    pub layers: Vec<Array1<T>>,
}

impl<T: Scalar> NetState<T> {
    pub fn zeros(topology: &Topology) -> Self {
        NetState {
            layers: topology.sizes()[1..].iter().map(|&d| Array1::zeros(d)).collect(),
        }
    }

    pub fn output(&self) -> &Array1<T> {
        self.layers.last().unwrap()
    }

    pub fn dim(&self) -> usize {
        self.layers.iter().map(|l| l.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.layers.iter().flat_map(|l| l.iter().copied()).collect()
    }

    pub fn from_flat(topology: &Topology, values: &[T]) -> Result<Self> {
        if values.len() != topology.state_dim() {
            return Err(EqPropError::dim("flat state vector", topology.state_dim(), values.len()));
        }
        let mut s = Self::zeros(topology);
        let mut it = values.iter().copied();
        for l in &mut s.layers {
            l.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        Ok(s)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.iter().all(|v| v.is_finite()))
    }

    /// Every entry in `[0, 1]`.
    pub fn is_boxed(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.iter().all(|&v| v >= T::zero() && v <= T::one()))
    }

    pub fn norm(&self) -> T {
        self.layers
            .iter()
            .flat_map(|l| l.iter())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }

    pub fn cast<U: Scalar>(&self) -> NetState<U> {
        NetState {
            layers: self.layers.iter().map(|l| l.mapv(|v| U::of(v.to_f64()))).collect(),
        }
    }

    pub(crate) fn check(&self, topology: &Topology) -> Result<()> {
        if self.layers.len() != topology.num_layers() {
            return Err(EqPropError::dim("state layer count", topology.num_layers(), self.layers.len()));
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.len() != topology.layer_size(k + 1) {
                return Err(EqPropError::dim(format!("state layer {}", k + 1), topology.layer_size(k + 1), l.len()));
            }
        }
        if !self.is_finite() {
            return Err(EqPropError::NonFinite("state".into()));
        }
        Ok(())
    }
}

/// Influence parameter, step size and stopping rule for one relaxation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseConfig<T> {
    pub beta: T,
    pub epsilon: T,
    pub max_iters: usize,
    /// Stop once the projected residual falls to this value; 0 runs the full budget.
    pub residual_tol: T,
}

impl<T: Scalar> PhaseConfig<T> {
    pub fn new(beta: T, epsilon: T, max_iters: usize, residual_tol: T) -> Result<Self> {
        let cfg = PhaseConfig {
            beta,
            epsilon,
            max_iters,
            residual_tol,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fixed iteration budget, no early stop.
    pub fn fixed(beta: T, epsilon: T, iters: usize) -> Result<Self> {
        Self::new(beta, epsilon, iters, T::zero())
    }

    /// Tight settings for gradient checks: tolerance 1e-12, 10^6 iterations, step 0.5.
    pub fn oracle(beta: T) -> Self {
        PhaseConfig {
            beta,
            epsilon: T::of(0.5),
            max_iters: 1_000_000,
            residual_tol: T::of(1e-12),
        }
    }

    pub fn with_beta(mut self, beta: T) -> Self {
        self.beta = beta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > T::zero() && self.epsilon <= T::one()) {
            return Err(EqPropError::Config(format!("epsilon must lie in (0, 1], got {}", self.epsilon)));
        }
        if self.max_iters == 0 {
            return Err(EqPropError::Config("max_iters must be at least 1".into()));
        }
        if !(self.residual_tol >= T::zero()) {
            return Err(EqPropError::Config("residual_tol must be non-negative".into()));
        }
        if !self.beta.is_finite() {
            return Err(EqPropError::Config("beta must be finite".into()));
        }
        Ok(())
    }
}

/// Parameter gradient of `F` together with `dF/dbeta`, which equals the cost.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaGrad<T> {
    pub params: LayeredParams<T>,
    pub beta: T,
}

fn check_vec<T: Scalar>(v: &Array1<T>, what: &str, expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(EqPropError::dim(what, expected, v.len()));
    }
    if !v.iter().all(|x| x.is_finite()) {
        return Err(EqPropError::NonFinite(what.to_string()));
    }
    Ok(())
}

pub(crate) fn check_problem<T: Scalar>(
    params: &LayeredParams<T>,
    x: &Array1<T>,
    s: &NetState<T>,
    y_target: Option<&Array1<T>>,
) -> Result<Topology> {
    let topology = params.topology()?;
    if !params.is_finite() {
        return Err(EqPropError::NonFinite("parameters".into()));
    }
    check_vec(x, "input", topology.input_dim())?;
    s.check(&topology)?;
    if let Some(y) = y_target {
        check_vec(y, "target", topology.output_dim())?;
    }
    Ok(topology)
}

/// `W_1^T rho(x)`, constant over a relaxation.
pub(crate) fn input_drive<T: Scalar>(params: &LayeredParams<T>, x: &Array1<T>) -> Array1<T> {
    params.weights[0].t().dot(&rho_vec(x))
}

pub(crate) fn energy_unchecked<T: Scalar>(params: &LayeredParams<T>, x: &Array1<T>, s: &NetState<T>) -> T {
    let mut e = T::zero();
    for l in &s.layers {
        e += T::of(0.5) * l.dot(l);
    }
    let mut prev = rho_vec(x);
    for (k, l) in s.layers.iter().enumerate() {
        let r = rho_vec(l);
        e -= prev.dot(&params.weights[k].dot(&r));
        e -= params.biases[k].dot(&r);
        prev = r;
    }
    e
}

pub(crate) fn cost_unchecked<T: Scalar>(s: &NetState<T>, y_target: &Array1<T>) -> T {
    let d = s.output() - y_target;
    T::of(0.5) * d.dot(&d)
}

/// `-dF/ds` given the precomputed input drive.
pub(crate) fn force_unchecked<T: Scalar>(
    params: &LayeredParams<T>,
    drive: &Array1<T>,
    s: &NetState<T>,
    beta: T,
    y_target: &Array1<T>,
) -> NetState<T> {
    let n = s.layers.len();
    let rates: Vec<Array1<T>> = s.layers.iter().map(rho_vec).collect();
    let mut layers = Vec::with_capacity(n);
    for k in 0..n {
        let mut pre = if k == 0 {
            drive.clone()
        } else {
            params.weights[k].t().dot(&rates[k - 1])
        };
        pre += &params.biases[k];
        if k + 1 < n {
            pre += &params.weights[k + 1].dot(&rates[k + 1]);
        }
        let mut f = pre;
        Zip::from(&mut f).and(&s.layers[k]).for_each(|f, &v| {
            *f = rho_prime(v) * *f - v;
        });
        if k + 1 == n && beta != T::zero() {
            Zip::from(&mut f)
                .and(&s.layers[k])
                .and(y_target)
                .for_each(|f, &y, &t| *f += beta * (t - y));
        }
        layers.push(f);
    }
    NetState { layers }
}

pub(crate) fn grad_theta_unchecked<T: Scalar>(
    params: &LayeredParams<T>,
    x: &Array1<T>,
    s: &NetState<T>,
) -> LayeredParams<T> {
    let mut prev = rho_vec(x);
    let mut weights = Vec::with_capacity(s.layers.len());
    let mut biases = Vec::with_capacity(s.layers.len());
    for (k, l) in s.layers.iter().enumerate() {
        let r = rho_vec(l);
        debug_assert_eq!(params.weights[k].dim(), (prev.len(), r.len()));
        weights.push(Array2::from_shape_fn((prev.len(), r.len()), |(i, j)| -(prev[i] * r[j])));
        biases.push(r.mapv(|v| -v));
        prev = r;
    }
    LayeredParams { weights, biases }
}

/// Internal Hopfield energy `E(x, s)`.
pub fn energy<T: Scalar>(params: &LayeredParams<T>, x: &Array1<T>, s: &NetState<T>) -> Result<T> {
    check_problem(params, x, s, None)?;
    Ok(energy_unchecked(params, x, s))
}

/// Quadratic cost `1/2 |y - target|^2` on the output layer.
pub fn cost<T: Scalar>(s: &NetState<T>, y_target: &Array1<T>) -> Result<T> {
    let out = s.layers.last().ok_or_else(|| EqPropError::Config("empty state".into()))?;
    check_vec(y_target, "target", out.len())?;
    if !out.iter().all(|v| v.is_finite()) {
        return Err(EqPropError::NonFinite("output layer".into()));
    }
    Ok(cost_unchecked(s, y_target))
}

/// Total energy `F = E + beta C`.
pub fn total_energy<T: Scalar>(
    params: &LayeredParams<T>,
    x: &Array1<T>,
    s: &NetState<T>,
    beta: T,
    y_target: &Array1<T>,
) -> Result<T> {
    check_problem(params, x, s, Some(y_target))?;
    Ok(energy_unchecked(params, x, s) + beta * cost_unchecked(s, y_target))
}

/// `-dF/ds`: the leaky-integrator internal force plus, on the output layer,
/// the external force `beta (target - y)`.
pub fn force<T: Scalar>(
    params: &LayeredParams<T>,
    x: &Array1<T>,
    s: &NetState<T>,
    beta: T,
    y_target: &Array1<T>,
) -> Result<NetState<T>> {
    check_problem(params, x, s, Some(y_target))?;
    Ok(force_unchecked(params, &input_drive(params, x), s, beta, y_target))
}

/// `dF/dtheta` at state `s`: `dF/dW_k = -rho(u_{k-1}) rho(u_k)^T`,
/// `dF/db_k = -rho(s_k)`, plus `dF/dbeta = C`.
pub fn grad_theta<T: Scalar>(
    params: &LayeredParams<T>,
    x: &Array1<T>,
    s: &NetState<T>,
    beta: T,
    y_target: &Array1<T>,
) -> Result<ThetaGrad<T>> {
    let _ = beta; // C carries no parameters, so dF/dtheta does not depend on beta
    check_problem(params, x, s, Some(y_target))?;
    Ok(ThetaGrad {
        params: grad_theta_unchecked(params, x, s),
        beta: cost_unchecked(s, y_target),
    })
}
