mod common;

use common::{max_abs_diff, random_problem};
use eqprop::oracles::sample_interior_instance;
use eqprop::{
    force, grad_theta, projected_residual, relax, relax_recorded, step, total_energy, LayeredParams, NetState,
    PhaseConfig, Topology,
};
use proptest::prelude::*;

const SIZES: &[usize] = &[3, 4, 2];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn force_is_minus_the_energy_gradient(seed in any::<u64>()) {
        let p = random_problem(seed, SIZES);
        let f = force(&p.params, &p.x, &p.state, p.beta, &p.y).unwrap().to_flat();
        let top: Topology = p.params.topology().unwrap();
        let base = p.state.to_flat();
        let h = 1e-6;
        for i in 0..base.len() {
            let mut probe = base.clone();
            probe[i] = base[i] + h;
            let up = total_energy(&p.params, &p.x, &NetState::from_flat(&top, &probe).unwrap(), p.beta, &p.y).unwrap();
            probe[i] = base[i] - h;
            let down = total_energy(&p.params, &p.x, &NetState::from_flat(&top, &probe).unwrap(), p.beta, &p.y).unwrap();
            let fd = (up - down) / (2.0 * h);
            prop_assert!((fd + f[i]).abs() < 1e-6, "component {i}: fd {fd}, force {}", f[i]);
        }
    }

    #[test]
    fn grad_theta_matches_finite_differences(seed in any::<u64>()) {
        let p = random_problem(seed, SIZES);
        let top: Topology = p.params.topology().unwrap();
        let g = grad_theta(&p.params, &p.x, &p.state, p.beta, &p.y).unwrap();
        let analytic = g.params.to_flat();
        let base = p.params.to_flat();
        let h = 1e-6;
        for i in 0..base.len() {
            let mut probe = base.clone();
            probe[i] = base[i] + h;
            let up = total_energy(&LayeredParams::from_flat(&top, &probe).unwrap(), &p.x, &p.state, p.beta, &p.y).unwrap();
            probe[i] = base[i] - h;
            let down = total_energy(&LayeredParams::from_flat(&top, &probe).unwrap(), &p.x, &p.state, p.beta, &p.y).unwrap();
            prop_assert!(((up - down) / (2.0 * h) - analytic[i]).abs() < 1e-6);
        }
        // dF/dbeta is the cost
        let up = total_energy(&p.params, &p.x, &p.state, p.beta + h, &p.y).unwrap();
        let down = total_energy(&p.params, &p.x, &p.state, p.beta - h, &p.y).unwrap();
        prop_assert!(((up - down) / (2.0 * h) - g.beta).abs() < 1e-6);
    }

    #[test]
    fn small_steps_along_the_force_lower_the_energy(seed in any::<u64>()) {
        let p = random_problem(seed, SIZES);
        let f = force(&p.params, &p.x, &p.state, p.beta, &p.y).unwrap();
        prop_assume!(f.norm() > 1e-8);
        let top: Topology = p.params.topology().unwrap();
        let moved: Vec<f64> = p.state.to_flat().iter().zip(f.to_flat()).map(|(s, d)| s + 1e-5 * d).collect();
        let moved = NetState::from_flat(&top, &moved).unwrap();
        let before = total_energy(&p.params, &p.x, &p.state, p.beta, &p.y).unwrap();
        let after = total_energy(&p.params, &p.x, &moved, p.beta, &p.y).unwrap();
        prop_assert!(after < before);
    }

    #[test]
    fn total_energy_is_affine_in_beta_and_in_each_weight(seed in any::<u64>(), k in 0usize..2) {
        let p = random_problem(seed, SIZES);
        let f = |b: f64| total_energy(&p.params, &p.x, &p.state, b, &p.y).unwrap();
        let (a, b, c) = (f(-1.0), f(0.5), f(2.0));
        // collinear points: slope from the outer pair predicts the middle value
        prop_assert!((a + (c - a) * 1.5 / 3.0 - b).abs() < 1e-12 * (1.0 + a.abs() + c.abs()));

        let g = |scale: f64| {
            let mut q = p.params.clone();
            q.weights[k][[0, 0]] *= scale;
            total_energy(&q, &p.x, &p.state, p.beta, &p.y).unwrap()
        };
        let (a, b, c) = (g(-1.0), g(0.5), g(2.0));
        prop_assert!((a + (c - a) * 1.5 / 3.0 - b).abs() < 1e-12 * (1.0 + a.abs() + c.abs()));
    }

    #[test]
    fn steps_keep_the_state_in_the_box(seed in any::<u64>(), eps in 0.05f64..1.0, n in 1usize..40) {
        let p = random_problem(seed, SIZES);
        let mut s = p.state.clone();
        for _ in 0..n {
            s = step(&s, &p.params, &p.x, p.beta, &p.y, eps).unwrap();
            prop_assert!(s.is_boxed());
        }
    }

    #[test]
    fn zero_residual_states_do_not_move(seed in any::<u64>()) {
        // every unit at 0 with a negative net drive only feels an outward force
        let mut p = random_problem(seed, SIZES);
        for (k, b) in p.params.biases.iter_mut().enumerate() {
            let w = &p.params.weights[k];
            let above = p.params.weights.get(k + 1);
            for i in 0..b.len() {
                let incoming: f64 = w.column(i).iter().map(|v| v.abs()).sum();
                let outgoing: f64 = above.map(|a| a.row(i).iter().map(|v| v.abs()).sum()).unwrap_or(0.0);
                b[i] = -(incoming + outgoing + 1.0);
            }
        }
        let top: Topology = p.params.topology().unwrap();
        let s = NetState::zeros(&top);
        prop_assert_eq!(projected_residual(&s, &p.params, &p.x, 0.0, &p.y).unwrap(), 0.0);
        prop_assert_eq!(step(&s, &p.params, &p.x, 0.0, &p.y, 0.5).unwrap(), s);
    }

    #[test]
    fn relaxation_is_deterministic(seed in any::<u64>()) {
        let p = random_problem(seed, SIZES);
        let phase = PhaseConfig::new(p.beta, 0.5, 200, 1e-10).unwrap();
        let top: Topology = p.params.topology().unwrap();
        let a = relax(NetState::zeros(&top), &p.params, &p.x, &p.y, &phase).unwrap();
        let b = relax(NetState::zeros(&top), &p.params, &p.x, &p.y, &phase).unwrap();
        prop_assert_eq!(a.state, b.state);
        prop_assert_eq!(a.residual.to_bits(), b.residual.to_bits());
        prop_assert_eq!(a.iterations, b.iterations);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn energy_never_rises_along_interior_trajectories(seed in 0u64..1000, jitter in 0.0f64..0.15) {
        let top: Topology = "5-4-3".parse().unwrap();
        let inst = sample_interior_instance(&top, seed).unwrap();
        // start off the fixed point but inside the box
        let start: Vec<f64> = inst.free.to_flat().iter().enumerate()
            .map(|(i, v)| (v + if i % 2 == 0 { jitter } else { -jitter }).clamp(0.01, 0.99))
            .collect();
        let start = NetState::from_flat(&top, &start).unwrap();
        let phase = PhaseConfig::fixed(0.0, 0.5, 60).unwrap();
        let (_, traj) = relax_recorded(start, &inst.params, &inst.x, &inst.y_target, &phase).unwrap();
        let interior = |s: &NetState<f64>| s.to_flat().iter().all(|&v| v > 0.0 && v < 1.0);
        for w in traj.windows(2) {
            if interior(&w[0]) && interior(&w[1]) {
                let e0 = total_energy(&inst.params, &inst.x, &w[0], 0.0, &inst.y_target).unwrap();
                let e1 = total_energy(&inst.params, &inst.x, &w[1], 0.0, &inst.y_target).unwrap();
                prop_assert!(e1 <= e0 + 1e-12, "{e0} -> {e1}");
            }
        }
    }
}

#[test]
fn force_vanishes_at_a_relaxed_interior_state() {
    let top: Topology = "4-3-2".parse().unwrap();
    let inst = sample_interior_instance(&top, 2).unwrap();
    let f = force(&inst.params, &inst.x, &inst.free, 0.0, &inst.y_target).unwrap();
    assert!(max_abs_diff(&f.to_flat(), &vec![0.0; f.dim()]) < 1e-11);
}
