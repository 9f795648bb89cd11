use std::sync::Arc;

use sgd_dmft::finite_sim::{
    generate_dataset, initial_weights, nesterov_mapping, run_generic_dynamics, run_langevin,
    run_nesterov, run_polyak, run_sgd, InitMode, NesterovSchedule,
};
use sgd_dmft::{LossSpec, ModelParams, ScalarLoss};

#[derive(Debug)]
struct Flat;

impl ScalarLoss for Flat {
    fn value(&self, _r: f64, _y: f64) -> f64 {
        0.0
    }
    fn first(&self, _r: f64, _y: f64) -> f64 {
        0.0
    }
    fn second(&self, _r: f64, _y: f64) -> f64 {
        0.0
    }
}

#[test]
fn nesterov_map_tracks_direct_run() {
    let data = generate_dataset(50, 30, 4, None).unwrap();
    let p = ModelParams::new(50.0 / 30.0, 0.1, 0.2, 1.0, 15);
    let w0 = initial_weights(&data, &p, InitMode::Random, 5);
    let sched = NesterovSchedule::constant(0.3, 0.1, 0.2, 0.15, 15);
    let direct = run_nesterov(&data, &p, &sched, w0.clone()).unwrap();
    let m = nesterov_mapping(&data, &p, &sched, &w0);
    let gen = run_generic_dynamics(m.h, m.g, &data, m.v0, 15).unwrap();
    for (t, (a, b)) in direct.iterates.iter().zip(gen.column(0)).enumerate() {
        assert!((a - b).amax() < 1e-12, "w at t={t}");
    }
    for (t, (a, b)) in direct.auxiliary.iter().zip(gen.column(1)).enumerate() {
        assert!((a - b).amax() < 1e-12, "z at t={t}");
    }
}

#[test]
fn nesterov_without_coupling_is_gradient_descent() {
    let data = generate_dataset(50, 30, 4, None).unwrap();
    let p = ModelParams::new(50.0 / 30.0, 0.1, 0.2, 1.0, 15);
    let w0 = initial_weights(&data, &p, InitMode::Random, 5);
    let sched = NesterovSchedule::constant(0.0, 0.1, 0.5, 0.3, 15);
    let nest = run_nesterov(&data, &p, &sched, w0.clone()).unwrap();
    let gd = run_sgd(&data, &p, w0, 0).unwrap();
    for (a, b) in nest.iterates.iter().zip(&gd.iterates) {
        assert!((a - b).amax() < 1e-12);
    }
}

#[test]
fn heavy_ball_on_ridge_follows_scalar_recursion() {
    let (gamma, lambda, beta) = (0.2, 0.5, 0.6);
    let p = ModelParams::new(1.0, gamma, lambda, 1.0, 30).with_loss(LossSpec::Custom(Arc::new(Flat)));
    let data = generate_dataset(20, 20, 1, None).unwrap();
    let w0 = initial_weights(&data, &p, InitMode::Random, 3);
    let run = run_polyak(&data, &p, beta, w0.clone(), None).unwrap();
    let (mut prev, mut cur) = (1.0, 1.0);
    for t in 0..=30 {
        let expected = &w0 * cur;
        assert!((&run.iterates[t] - expected).amax() < 1e-12 * w0.amax(), "t={t}");
        let next = (1.0 - gamma * lambda) * cur + beta * (cur - prev);
        prev = cur;
        cur = next;
    }
    // Complex roots of modulus sqrt(β) give geometric decay.
    assert!(cur.abs() < 2.0 * 31.0 * beta.powf(15.5));
}

#[test]
fn langevin_at_zero_temperature_is_full_batch_sgd() {
    let data = generate_dataset(40, 25, 8, None).unwrap();
    let p = ModelParams::new(1.6, 0.1, 0.3, 1.0, 12);
    let w0 = initial_weights(&data, &p, InitMode::Random, 2);
    let a = run_langevin(&data, &p, w0.clone(), 9).unwrap();
    let b = run_sgd(&data, &p, w0, 9).unwrap();
    assert_eq!(a.iterates, b.iterates);
}

#[test]
fn fluctuations_shrink_with_dimension() {
    let spread = |d: usize| {
        let n = 2 * d;
        let p = ModelParams::new(2.0, 0.2, 0.1, 0.5, 10);
        let finals: Vec<f64> = (0..20)
            .map(|seed| {
                let data = generate_dataset(n, d, seed, None).unwrap();
                let w0 = initial_weights(&data, &p, InitMode::Random, seed);
                let run = run_sgd(&data, &p, w0, seed).unwrap();
                run.observables.cosine[10]
            })
            .collect();
        let mean = finals.iter().sum::<f64>() / 20.0;
        (finals.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / 19.0).sqrt()
    };
    let small = spread(50);
    let large = spread(400);
    assert!(large < small, "{large} >= {small}");
}
