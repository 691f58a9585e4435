//! Fixtures shared by the criterion benches.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sls_core::scenario::bundled;
use sls_core::{add_correlation, build_stacked, CorrelationSpec, CostSpec, Problem, Scenario, StackedSystem, TimeVaryingLinearSystem, Viapoint};

/// Random stable-ish time-varying system with viapoints every few steps and one correlation.
pub fn random_problem(seed: u64, horizon: usize, m: usize, n: usize) -> (TimeVaryingLinearSystem, StackedSystem, CostSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<_> = (0..=horizon)
        .map(|_| DMatrix::from_fn(m, m, |i, j| f64::from(u8::from(i == j)) + rng.random_range(-0.2..0.2)))
        .collect();
    let b: Vec<_> = (0..=horizon).map(|_| DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))).collect();
    let sys = TimeVaryingLinearSystem::new(a, b).expect("consistent shapes");
    let vps: Vec<_> = (0..=horizon)
        .filter(|t| t % 5 == 0 || *t == horizon)
        .map(|t| Viapoint::new(t, DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0)), DMatrix::identity(m, m) * 10.0))
        .collect();
    let cost = sls_core::cost::build_viapoint_cost_with_dim(horizon, m, &vps, vec![DMatrix::identity(n, n) * 0.1; horizon + 1]).expect("valid cost");
    let corr = CorrelationSpec::new(horizon / 3, horizon, DMatrix::identity(m, m), DVector::zeros(m), DMatrix::identity(m, m) * 100.0);
    let cost = add_correlation(&cost, &corr).expect("valid correlation");
    let stacked = build_stacked(&sys);
    (sys, stacked, cost)
}

pub fn bundled_problem(name: &str, seed: u64) -> (Scenario, Problem) {
    let scenario = Scenario::from_json(bundled::by_name(name).expect("bundled scenario")).expect("valid scenario");
    let problem = scenario.build(seed).expect("buildable scenario");
    (scenario, problem)
}
