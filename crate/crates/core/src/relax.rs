//! Relaxation of the state to a minimum of the total energy by clipped
//! gradient descent: `s <- clip(s - eps dF/ds, 0, 1)`, all units updated
//! synchronously.

use ndarray::{Array1, Zip};

use crate::error::{EqPropError, Result};
use crate::model::{
    check_problem, cost_unchecked, energy_unchecked, force_unchecked, input_drive, LayeredParams,
    NetState, PhaseConfig, Scalar,
};

/// Final state of a relaxation with its diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointResult<T> {
    pub state: NetState<T>,
    /// Projected residual at `state`.
    pub residual: T,
    /// Number of update steps applied.
    pub iterations: usize,
    /// Internal energy `E` at `state`.
    pub energy: T,
    pub cost: T,
}

impl<T: Scalar> FixedPointResult<T> {
    pub fn converged(&self, tol: T) -> bool {
        self.residual <= tol
    }
}

/// Norm of the force with outward components at the box boundary removed.
pub(crate) fn projected_residual_of<T: Scalar>(state: &NetState<T>, force: &NetState<T>) -> T {
    let mut acc = T::zero();
    for (s, f) in state.layers.iter().zip(&force.layers) {
        Zip::from(s).and(f).for_each(|&s, &f| {
            let r = if s <= T::zero() {
                f.max(T::zero())
            } else if s >= T::one() {
                f.min(T::zero())
            } else {
                f
            };
            acc += r * r;
        });
    }
    acc.sqrt()
}

/// Box-constrained stationarity measure: the Euclidean norm of the force,
/// where a unit at 0 only counts an upward force and a unit at 1 only a
/// downward one.
pub fn projected_residual<T: Scalar>(
    state: &NetState<T>,
    params: &LayeredParams<T>,
    x: &Array1<T>,
    beta: T,
    y_target: &Array1<T>,
) -> Result<T> {
    check_problem(params, x, state, Some(y_target))?;
    let f = force_unchecked(params, &input_drive(params, x), state, beta, y_target);
    Ok(projected_residual_of(state, &f))
}

fn check_force<T: Scalar>(force: &NetState<T>) -> Result<()> {
    for (k, l) in force.layers.iter().enumerate() {
        if !l.iter().all(|v| v.is_finite()) {
            return Err(EqPropError::NonFinite(format!("force on state layer {}", k + 1)));
        }
    }
    Ok(())
}

fn apply_clipped<T: Scalar>(state: &mut NetState<T>, force: &NetState<T>, epsilon: T) {
    for (s, f) in state.layers.iter_mut().zip(&force.layers) {
        Zip::from(s).and(f).for_each(|s, &f| {
            *s = (*s + epsilon * f).max(T::zero()).min(T::one());
        });
    }
}

/// One synchronous clipped update of every unit.
pub fn step<T: Scalar>(
    state: &NetState<T>,
    params: &LayeredParams<T>,
    x: &Array1<T>,
    beta: T,
    y_target: &Array1<T>,
    epsilon: T,
) -> Result<NetState<T>> {
    if !(epsilon > T::zero() && epsilon <= T::one()) {
        return Err(EqPropError::Config(format!("epsilon must lie in (0, 1], got {epsilon}")));
    }
    check_problem(params, x, state, Some(y_target))?;
    let f = force_unchecked(params, &input_drive(params, x), state, beta, y_target);
    check_force(&f)?;
    let mut next = state.clone();
    apply_clipped(&mut next, &f, epsilon);
    Ok(next)
}

struct Relaxation<'a, T> {
    params: &'a LayeredParams<T>,
    x: &'a Array1<T>,
    y_target: &'a Array1<T>,
    phase: &'a PhaseConfig<T>,
    clamp_output: bool,
}

impl<T: Scalar> Relaxation<'_, T> {
    fn force(&self, drive: &Array1<T>, s: &NetState<T>) -> NetState<T> {
        let mut f = force_unchecked(self.params, drive, s, self.phase.beta, self.y_target);
        if self.clamp_output {
            f.layers.last_mut().unwrap().fill(T::zero());
        }
        f
    }

    fn run(
        &self,
        mut state: NetState<T>,
        mut record: Option<&mut Vec<NetState<T>>>,
    ) -> Result<FixedPointResult<T>> {
        self.phase.validate()?;
        check_problem(self.params, self.x, &state, Some(self.y_target))?;
        if self.clamp_output {
            state.layers.last_mut().unwrap().assign(self.y_target);
        }
        if let Some(r) = record.as_deref_mut() {
            r.push(state.clone());
        }
        let drive = input_drive(self.params, self.x);
        let tol = self.phase.residual_tol;
        let mut iterations = 0;
        let mut residual = None;
        while iterations < self.phase.max_iters {
            let f = self.force(&drive, &state);
            check_force(&f)?;
            if tol > T::zero() {
                let r = projected_residual_of(&state, &f);
                if r <= tol {
                    residual = Some(r);
                    break;
                }
            }
            apply_clipped(&mut state, &f, self.phase.epsilon);
            iterations += 1;
            if let Some(r) = record.as_deref_mut() {
                r.push(state.clone());
            }
        }
        let residual = match residual {
            Some(r) => r,
            None => {
                let f = self.force(&drive, &state);
                check_force(&f)?;
                projected_residual_of(&state, &f)
            }
        };
        Ok(FixedPointResult {
            energy: energy_unchecked(self.params, self.x, &state),
            cost: cost_unchecked(&state, self.y_target),
            state,
            residual,
            iterations,
        })
    }
}

/// Iterates [`step`] from `state` until the projected residual drops to
/// `phase.residual_tol` (when positive) or `phase.max_iters` steps are spent.
/// Deterministic in its inputs.
pub fn relax<T: Scalar>(
    state: NetState<T>,
    params: &LayeredParams<T>,
    x: &Array1<T>,
    y_target: &Array1<T>,
    phase: &PhaseConfig<T>,
) -> Result<FixedPointResult<T>> {
    Relaxation {
        params,
        x,
        y_target,
        phase,
        clamp_output: false,
    }
    .run(state, None)
}

/// Like [`relax`], also returning every visited state (initial state first).
pub fn relax_recorded<T: Scalar>(
    state: NetState<T>,
    params: &LayeredParams<T>,
    x: &Array1<T>,
    y_target: &Array1<T>,
    phase: &PhaseConfig<T>,
) -> Result<(FixedPointResult<T>, Vec<NetState<T>>)> {
    let mut trajectory = Vec::new();
    let result = Relaxation {
        params,
        x,
        y_target,
        phase,
        clamp_output: false,
    }
    .run(state, Some(&mut trajectory))?;
    Ok((result, trajectory))
}

/// Fully clamped phase: the output layer is pinned to `y_target` and only the
/// hidden layers relax. `phase.beta` is irrelevant here.
pub fn relax_output_clamped<T: Scalar>(
    state: NetState<T>,
    params: &LayeredParams<T>,
    x: &Array1<T>,
    y_target: &Array1<T>,
    phase: &PhaseConfig<T>,
) -> Result<FixedPointResult<T>> {
    Relaxation {
        params,
        x,
        y_target,
        phase,
        clamp_output: true,
    }
    .run(state, None)
}
