mod common;

use common::max_abs_diff;
use eqprop::mnist::{Dataset, IdxImages};
use eqprop::oracles::{relax_tight, sample_interior_instance};
use eqprop::train::{
    eqprop_update, init_params, train, MetricsRecord, MetricsSink, NullSink, Precision, TrainConfig, TrainRng,
};
use eqprop::{rho, LayeredParams, NetState, Result, Topology};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(layers: usize) -> TrainConfig {
    TrainConfig {
        beta_magnitude: 0.5,
        random_beta_sign: true,
        epsilon: 0.5,
        free_iters: 30,
        clamped_iters: 6,
        learning_rates: vec![0.1; layers],
        minibatch_size: 5,
        epochs: 3,
        rng_seed: 8,
        precision: Precision::F64,
    }
}

/// 16-pixel images whose two bright pixels encode the class.
fn toy_dataset(count: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<u8> = (0..count).map(|_| rng.random_range(0..10)).collect();
    let pixels = labels
        .iter()
        .flat_map(|&l| (0..16).map(move |p| (p, l)))
        .map(|(p, l)| if p == l as usize || p == 15 - l as usize { 255 } else { rng.random_range(0..40) })
        .collect();
    let images = IdxImages {
        count,
        rows: 4,
        cols: 4,
        pixels,
    };
    Dataset::new(images, labels).unwrap().with_validation_tail(count / 5).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn update_is_the_difference_of_rate_products(seed in any::<u64>()) {
        let top: Topology = "5-4-3".parse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_params::<f64>(&top, seed);
        let x = ndarray::Array1::from_shape_fn(5, |_| rng.random_range(0.0..1.0));
        let y = ndarray::Array1::from_shape_fn(3, |_| rng.random_range(0.0..1.0));
        let cfg = config(2);
        let u = eqprop_update(&params, &x, &y, NetState::zeros(&top), &cfg, &mut rng).unwrap();
        let units = |s: &NetState<f64>| -> Vec<ndarray::Array1<f64>> {
            std::iter::once(x.mapv(rho)).chain(s.layers.iter().map(|l| l.mapv(rho))).collect()
        };
        let (r0, rb) = (units(&u.free.state), units(&u.clamped.state));
        for k in 0..2 {
            let (alpha, beta) = (cfg.learning_rates[k], u.beta);
            for ((i, j), &d) in u.delta.weights[k].indexed_iter() {
                let direct = alpha / beta * (rb[k][i] * rb[k + 1][j] - r0[k][i] * r0[k + 1][j]);
                prop_assert!((d - direct).abs() < 1e-14, "W{k}[{i},{j}]: {d} vs {direct}");
            }
            for (j, &d) in u.delta.biases[k].iter().enumerate() {
                let direct = alpha / beta * (rb[k + 1][j] - r0[k + 1][j]);
                prop_assert!((d - direct).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn warm_and_cold_starts_reach_the_same_fixed_point(seed in 0u64..500, jitter in 0.0f64..0.2) {
        let top: Topology = "5-4-3".parse().unwrap();
        let inst = sample_interior_instance(&top, seed).unwrap();
        let warm: Vec<f64> = inst.free.to_flat().iter().map(|v| (v + jitter).min(1.0)).collect();
        let warm = NetState::from_flat(&top, &warm).unwrap();
        let from_warm = relax_tight(warm, &inst.params, &inst.x, &inst.y_target, 0.0).unwrap();
        let from_cold = relax_tight(NetState::zeros(&top), &inst.params, &inst.x, &inst.y_target, 0.0).unwrap();
        prop_assert!(max_abs_diff(&from_warm.state.to_flat(), &from_cold.state.to_flat()) < 1e-8);
    }
}

struct Recorder(Vec<(MetricsRecord, Vec<f64>, usize, [u8; 32])>);

impl MetricsSink<f64> for Recorder {
    fn on_epoch(&mut self, r: &MetricsRecord, p: &LayeredParams<f64>, done: usize, rng: &TrainRng) -> Result<()> {
        self.0.push((r.clone(), p.to_flat(), done, rng.key()));
        Ok(())
    }
}

#[test]
fn training_is_bitwise_reproducible() {
    let top: Topology = "16-12-10".parse().unwrap();
    let data = toy_dataset(80, 1);
    let cfg = config(2);
    let run = || {
        let mut sink = Recorder(Vec::new());
        let out = train(init_params::<f64>(&top, 8), &data, &cfg, &mut sink).unwrap();
        (out, sink.0)
    };
    let (a, sa) = run();
    let (b, sb) = run();
    assert_eq!(a.params, b.params);
    assert_eq!(sa.len(), 3);
    for ((ra, pa, da, ka), (rb, pb, db, kb)) in sa.iter().zip(&sb) {
        assert_eq!(pa, pb);
        assert_eq!((da, ka), (db, kb));
        let strip = |r: &MetricsRecord| MetricsRecord { wall_seconds: 0.0, ..r.clone() };
        assert_eq!(strip(ra), strip(rb));
    }
    assert_eq!(sa.iter().map(|s| s.2).collect::<Vec<_>>(), vec![1, 2, 3]);
}

#[test]
fn training_lowers_the_error_on_a_separable_toy() {
    let top: Topology = "16-12-10".parse().unwrap();
    let data = toy_dataset(120, 2);
    let mut cfg = config(2);
    cfg.epochs = 15;
    let out = train(init_params::<f64>(&top, 1), &data, &cfg, &mut NullSink).unwrap();
    let first = out.history.first().unwrap().train_error_rate;
    let last = out.history.last().unwrap();
    assert!(last.train_error_rate < 0.5 * first, "{:?}", out.history);
    assert!(last.mean_cost < out.history[0].mean_cost, "{:?}", out.history);
    assert!(last.val_error_rate.is_some());
}

#[test]
fn mismatched_images_are_rejected() {
    let top: Topology = "9-5-10".parse().unwrap();
    let data = toy_dataset(20, 3);
    assert!(train(init_params::<f64>(&top, 0), &data, &config(2), &mut NullSink).is_err());
}
