//! Seeded check suites behind `gradcheck` and `stochastic-check`.
//!
//! Each measurement function returns raw numbers so callers can apply their
//! own tolerances; the `*_suite` functions apply the defaults below.

use eqprop::oracles::{
    eqprop_grad, fd_objective_grad, lemma1_asymmetry, prop1_check, rbp_grad, sample_interior_instance,
    stdp_integral_check, stdp_pair_sums, EqPropMode, HopfieldModel, Instance,
};
use eqprop::stochastic::{
    boltzmann_expectation, langevin_mean, prop2_check, theorem2_check, LangevinConfig, QuadratureGrid,
};
use eqprop::{relax_recorded, LayeredParams, NetState, PhaseConfig, Topology};
use ndarray::{array, Array1};

use crate::error::{CliResult, Context};

pub const EQPROP_BETA: f64 = 1e-4;
pub const FD_DELTA: f64 = 1e-6;
pub const EP_FD_TOL: f64 = 1e-3;
pub const EP_FD_PASS_FRACTION: f64 = 0.95;
pub const RBP_FD_TOL: f64 = 1e-5;
pub const RBP_EP_TOL: f64 = 1e-4;
pub const PROP1_BETA: f64 = 1e-3;
pub const PROP1_TOL: f64 = 1e-9;
pub const PROP1_INSTANCES: usize = 100;
pub const LEMMA1_STEP: f64 = 1e-4;
pub const LEMMA1_TOL: f64 = 1e-4;
pub const LEMMA1_INSTANCES: usize = 20;
pub const STDP_TOL: f64 = 1e-12;
pub const STDP_STEPS: [usize; 3] = [4, 16, 64];
pub const THEOREM2_BETA: f64 = 1e-3;
pub const THEOREM2_THETA_STEP: f64 = 1e-4;
pub const THEOREM2_TOL: f64 = 1e-2;
pub const PROP2_BETA_STEP: f64 = 1e-4;
pub const PROP2_TOL: f64 = 1e-3;
pub const GRID_LO: f64 = -4.0;
pub const GRID_HI: f64 = 5.0;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckLine {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        CheckLine {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

pub fn format_table(lines: &[CheckLine]) -> String {
    let width = lines.iter().map(|l| l.name.len()).max().unwrap_or(0);
    lines
        .iter()
        .map(|l| {
            let verdict = if l.passed { "PASS" } else { "FAIL" };
            format!("{verdict}  {:<width$}  {}\n", l.name, l.detail)
        })
        .collect()
}

pub fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn instances(topology: &Topology, count: usize, seed: u64) -> CliResult<Vec<Instance>> {
    (0..count as u64)
        .map(|i| {
            let s = seed.wrapping_add(i);
            sample_interior_instance(topology, s).context(|| format!("sampling instance with seed {s}"))
        })
        .collect()
}

/// Pairwise relative errors between the three gradient routes, one entry
/// per instance.
#[derive(Clone, Debug, Default)]
pub struct Triangle {
    pub ep_fd: Vec<f64>,
    pub rbp_fd: Vec<f64>,
    pub rbp_ep: Vec<f64>,
}

pub fn gradient_triangle(topology: &Topology, count: usize, seed: u64) -> CliResult<Triangle> {
    let mut t = Triangle::default();
    for (i, inst) in instances(topology, count, seed)?.iter().enumerate() {
        let at = || format!("instance {i}");
        let (p, x, y) = (&inst.params, &inst.x, &inst.y_target);
        let ep = eqprop_grad(p, x, y, EQPROP_BETA, EqPropMode::Central).context(at)?;
        let fd = fd_objective_grad(p, x, y, FD_DELTA).context(at)?;
        let rbp = rbp_grad(p, x, y).context(at)?;
        t.ep_fd.push(ep.relative_error(&fd));
        t.rbp_fd.push(rbp.relative_error(&fd));
        t.rbp_ep.push(rbp.relative_error(&ep));
    }
    Ok(t)
}

/// `C(s^beta) - C(s^0)` per instance.
pub fn prop1_margins(topology: &Topology, count: usize, seed: u64, beta: f64) -> CliResult<Vec<f64>> {
    instances(topology, count, seed)?
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let (c0, cb) =
                prop1_check(&inst.params, &inst.x, &inst.y_target, beta).context(|| format!("instance {i}"))?;
            Ok(cb - c0)
        })
        .collect()
}

pub fn lemma1_asymmetries(topology: &Topology, count: usize, seed: u64, step: f64) -> CliResult<Vec<f64>> {
    instances(topology, count, seed)?
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let at = || format!("instance {i}");
            let model = HopfieldModel::new(&inst.params, &inst.x, &inst.y_target).context(at)?;
            lemma1_asymmetry(&model, step, step).context(at)
        })
        .collect()
}

/// Largest telescoping gap over each instance's recorded clamped phase.
pub fn stdp_telescoping_gaps(topology: &Topology, count: usize, seed: u64) -> CliResult<Vec<f64>> {
    let phase = PhaseConfig::fixed(0.5, 0.2, 40).context(|| "clamped phase".into())?;
    instances(topology, count, seed)?
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let at = || format!("instance {i}");
            let (_, traj) =
                relax_recorded(inst.free.clone(), &inst.params, &inst.x, &inst.y_target, &phase).context(at)?;
            Ok(stdp_integral_check(&traj, &inst.x).context(at)?.max_telescoping_gap())
        })
        .collect()
}

/// Left-point error against the exact endpoint difference on a smooth pair
/// of signals sampled with `steps` steps.
pub fn left_point_errors(steps: &[usize]) -> CliResult<Vec<f64>> {
    steps
        .iter()
        .map(|&n| {
            let t = (0..=n).map(|i| i as f64 / n as f64);
            let a: Vec<f64> = t.clone().map(|t| 0.2 + 0.5 * (1.0 - (-3.0 * t).exp())).collect();
            let b: Vec<f64> = t.map(|t| 0.6 - 0.3 * (2.0 * t).sin()).collect();
            let s = stdp_pair_sums(&a, &b).context(|| format!("{n} steps"))?;
            Ok((s.left_point - s.endpoint).abs())
        })
        .collect()
}

pub fn gradcheck_suite(topology: &Topology, count: usize, seed: u64) -> CliResult<Vec<CheckLine>> {
    let mut lines = Vec::new();
    let t = gradient_triangle(topology, count, seed)?;
    let within = t.ep_fd.iter().filter(|&&e| e < EP_FD_TOL).count();
    let needed = (EP_FD_PASS_FRACTION * count as f64).ceil() as usize;
    lines.push(CheckLine::new(
        "eqprop vs finite differences",
        within >= needed,
        format!("{within}/{count} within {EP_FD_TOL:e} (need {needed}), worst {:.2e}", max(&t.ep_fd)),
    ));
    let worst = max(&t.rbp_fd);
    lines.push(CheckLine::new(
        "recurrent backprop vs finite differences",
        t.rbp_fd.iter().all(|&e| e < RBP_FD_TOL),
        format!("worst {worst:.2e} (tolerance {RBP_FD_TOL:e})"),
    ));
    let worst = max(&t.rbp_ep);
    lines.push(CheckLine::new(
        "recurrent backprop vs eqprop",
        t.rbp_ep.iter().all(|&e| e < RBP_EP_TOL),
        format!("worst {worst:.2e} (tolerance {RBP_EP_TOL:e})"),
    ));

    let margins = prop1_margins(topology, PROP1_INSTANCES, seed, PROP1_BETA)?;
    lines.push(CheckLine::new(
        "nudging does not raise the cost",
        margins.iter().all(|&m| m <= PROP1_TOL),
        format!(
            "{} instances at beta {PROP1_BETA:e}, largest increase {:.2e}",
            margins.len(),
            max(&margins)
        ),
    ));

    let asym = lemma1_asymmetries(topology, LEMMA1_INSTANCES, seed, LEMMA1_STEP)?;
    lines.push(CheckLine::new(
        "cross-derivative symmetry",
        asym.iter().all(|&a| a < LEMMA1_TOL),
        format!("{} instances, worst {:.2e} (tolerance {LEMMA1_TOL:e})", asym.len(), max(&asym)),
    ));

    let gaps = stdp_telescoping_gaps(topology, count.min(10), seed)?;
    lines.push(CheckLine::new(
        "spike-timing sums telescope",
        gaps.iter().all(|&g| g <= STDP_TOL),
        format!("worst gap {:.2e} (tolerance {STDP_TOL:e})", max(&gaps)),
    ));
    let errs = left_point_errors(&STDP_STEPS)?;
    lines.push(CheckLine::new(
        "left-point sums converge",
        errs.windows(2).all(|w| w[1] < w[0]),
        format!(
            "errors {} at {STDP_STEPS:?} steps",
            errs.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(", ")
        ),
    ));
    Ok(lines)
}

/// The two-unit net used by the stochastic checks: one hidden unit, one
/// output unit, state dimension 2.
pub fn stochastic_toy() -> (LayeredParams<f64>, Array1<f64>, Array1<f64>) {
    let top: Topology = "1-1-1".parse().expect("toy topology");
    let mut p = LayeredParams::zeros(&top);
    p.weights[0] = array![[0.8]];
    p.weights[1] = array![[1.2]];
    p.biases[0] = array![0.3];
    p.biases[1] = array![-0.2];
    (p, array![0.7], array![0.9])
}

pub fn toy_grid(points: usize) -> CliResult<QuadratureGrid> {
    QuadratureGrid::uniform(2, GRID_LO, GRID_HI, points).context(|| "quadrature grid".into())
}

/// Largest elementwise relative error of the stochastic gradient identity,
/// with the quadrature's boundary warning if any.
pub fn theorem2_error(points: usize, beta: f64) -> CliResult<(f64, Option<String>)> {
    let (p, x, y) = stochastic_toy();
    let sides = theorem2_check(&p, &x, &y, beta, &toy_grid(points)?, THEOREM2_THETA_STEP)
        .context(|| "stochastic gradient identity".into())?;
    Ok((sides.max_relative_error(), sides.warning))
}

/// `(d/dbeta E[C], -Var[C])` at `beta = 0`.
pub fn prop2_sides(points: usize) -> CliResult<(f64, f64)> {
    let (p, x, y) = stochastic_toy();
    prop2_check(&p, &x, &y, &toy_grid(points)?, PROP2_BETA_STEP).context(|| "cost derivative".into())
}

/// Langevin estimate of the mean output against quadrature, in standard
/// errors.
pub fn langevin_z_score(seed: u64) -> CliResult<(f64, f64, f64)> {
    let (p, x, y) = stochastic_toy();
    let grid = QuadratureGrid::uniform(2, -7.0, 8.0, 401).context(|| "quadrature grid".into())?;
    let exact = boltzmann_expectation(|s| s.layers[1][0], &p, &x, 0.0, &y, &grid)
        .context(|| "quadrature".into())?
        .value;
    let cfg = LangevinConfig::new(0.01, 1_000_000, seed).context(|| "langevin".into())?;
    let top = p.topology().context(|| "toy".into())?;
    let mc = langevin_mean(|s| s.layers[1][0], NetState::zeros(&top), &p, &x, 0.0, &y, &cfg, 5_000, 50)
        .context(|| "langevin".into())?;
    Ok((mc.mean, exact, (mc.mean - exact).abs() / mc.std_error))
}

pub fn stochastic_suite(points: usize, seed: u64) -> CliResult<Vec<CheckLine>> {
    let mut lines = Vec::new();
    let (err, warning) = theorem2_error(points, THEOREM2_BETA)?;
    let mut detail = format!("worst relative error {err:.2e} (tolerance {THEOREM2_TOL:e}) on {points}^2 points");
    if let Some(w) = warning {
        detail.push_str(&format!("; {w}"));
    }
    lines.push(CheckLine::new("stochastic gradient identity", err < THEOREM2_TOL, detail));

    let (slope, neg_var) = prop2_sides(points)?;
    let rel = (slope - neg_var).abs() / neg_var.abs();
    lines.push(CheckLine::new(
        "cost slope equals minus variance",
        rel <= PROP2_TOL,
        format!("slope {slope:.6e}, -variance {neg_var:.6e}, relative gap {rel:.2e}"),
    ));
    lines.push(CheckLine::new(
        "cost slope is non-positive",
        slope <= 0.0 && neg_var <= 0.0,
        format!("slope {slope:.6e}"),
    ));

    let (mc, exact, z) = langevin_z_score(seed)?;
    lines.push(CheckLine::new(
        "langevin mean matches quadrature",
        z < 4.0,
        format!("{mc:.5} vs {exact:.5}, {z:.2} standard errors"),
    ));
    Ok(lines)
}
