//! Random problem generators and dense oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use sls_core::cost::build_viapoint_cost_with_dim;
use sls_core::{add_correlation, CorrelationSpec, CostSpec, TimeVaryingLinearSystem, Viapoint};

pub fn uniform_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

pub fn uniform_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// Random symmetric positive semidefinite matrix of the given rank.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> DMatrix<f64> {
    let l = uniform_matrix(rng, n, rank, 1.0);
    &l * l.transpose()
}

pub fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    random_psd(rng, n, n) + DMatrix::identity(n, n) * 0.1
}

/// Time-varying system with `A_t` near the identity.
pub fn random_system(rng: &mut ChaCha8Rng, horizon: usize, m: usize, n: usize) -> TimeVaryingLinearSystem {
    let a = (0..=horizon).map(|_| DMatrix::identity(m, m) + uniform_matrix(rng, m, m, 0.3)).collect();
    let b = (0..=horizon).map(|_| uniform_matrix(rng, m, n, 1.0)).collect();
    TimeVaryingLinearSystem::new(a, b).unwrap()
}

/// Random viapoints (always one at the horizon) and positive definite control weights.
pub fn random_cost(rng: &mut ChaCha8Rng, horizon: usize, m: usize, n: usize) -> CostSpec {
    let mut vps = Vec::new();
    for t in 0..=horizon {
        if t == horizon || rng.random_bool(0.4) {
            let rank = rng.random_range(1..=m);
            vps.push(Viapoint::new(t, uniform_vector(rng, m, 1.0), random_psd(rng, m, rank)));
        }
    }
    let r = (0..=horizon).map(|_| random_pd(rng, n)).collect();
    build_viapoint_cost_with_dim(horizon, m, &vps, r).unwrap()
}

/// Adds `count` random correlations between distinct steps.
pub fn with_correlations(rng: &mut ChaCha8Rng, cost: &CostSpec, count: usize) -> CostSpec {
    let horizon = cost.horizon();
    let m = cost.state_dim();
    let mut out = cost.clone();
    for _ in 0..count {
        let t1 = rng.random_range(0..horizon);
        let t2 = rng.random_range(t1 + 1..=horizon);
        let corr = CorrelationSpec::new(t1, t2, uniform_matrix(rng, m, m, 1.0), uniform_vector(rng, m, 0.5), random_psd(rng, m, m));
        out = add_correlation(&out, &corr).unwrap();
    }
    out
}

/// `S_x` and `S_u` built from explicit transition products.
pub fn dense_stacked(sys: &TimeVaryingLinearSystem) -> (DMatrix<f64>, DMatrix<f64>) {
    let nb = sys.horizon() + 1;
    let m = sys.state_dim();
    let n = sys.input_dim();
    let mut sx = DMatrix::zeros(nb * m, nb * m);
    let mut su = DMatrix::zeros(nb * m, nb * n);
    for j in 0..nb {
        let mut phi = DMatrix::<f64>::identity(m, m);
        for i in j..nb {
            if i > j {
                phi = sys.a(i - 1) * phi;
            }
            sx.view_mut((i * m, j * m), (m, m)).copy_from(&phi);
        }
    }
    for j in 0..nb - 1 {
        for i in j + 1..nb {
            let block = sx.view((i * m, (j + 1) * m), (m, m)) * sys.b(j);
            su.view_mut((i * m, j * n), (m, n)).copy_from(&block);
        }
    }
    (sx, su)
}

/// Symmetric square root of a positive semidefinite matrix.
pub fn psd_sqrt(q: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = q.clone().symmetric_eigen();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
