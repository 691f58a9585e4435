//! Closed-loop simulation with sampled disturbances and impulse perturbations.

use std::fmt::Write as _;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{evaluate_task_cost, CostSpec};
use crate::error::{Error, Result};
use crate::linalg::stack;
use crate::plant::Plant;
use crate::sls::Controller;
use crate::stacked::NoiseModel;

/// Additive state impulse applied together with `w_t`, so it first shows in `x_{t+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub t: usize,
    pub impulse: Vec<f64>,
}

impl Perturbation {
    pub fn new(t: usize, impulse: Vec<f64>) -> Self {
        Self { t, impulse }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub noise_seed: u64,
    pub perturbations: Vec<Perturbation>,
    pub realized_cost: Option<f64>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }

    pub fn stacked_states(&self) -> DVector<f64> {
        stack(&self.states)
    }

    pub fn stacked_controls(&self) -> DVector<f64> {
        stack(&self.controls)
    }

    /// Sets `realized_cost` to the task cost under `cost`.
    pub fn evaluate(&mut self, cost: &CostSpec) -> Result<f64> {
        let c = evaluate_task_cost(cost, &self.stacked_states(), &self.stacked_controls())?;
        self.realized_cost = Some(c);
        Ok(c)
    }

    /// Running cost: all terms whose latest time index is at most `t`, plus the task constant.
    pub fn cost_so_far(&self, cost: &CostSpec) -> Result<Vec<f64>> {
        let horizon = self.horizon();
        if cost.horizon() != horizon {
            return Err(Error::Dimension("cost horizon does not match the trajectory".into()));
        }
        let n = cost.input_dim();
        let e: Vec<DVector<f64>> = (0..=horizon).map(|t| &self.states[t] - cost.x_d_block(t)).collect();
        let mut inc = vec![0.0; horizon + 1];
        for (&(i, j), b) in cost.q().stored_blocks() {
            let v = e[i].dot(&(b * &e[j]));
            inc[i] += if i == j { v } else { 2.0 * v };
        }
        for (t, r) in cost.r().iter().enumerate() {
            let eu = &self.controls[t] - cost.u_d().rows(t * n, n);
            inc[t] += eu.dot(&(r * &eu));
        }
        let mut acc = cost.constant_offset();
        Ok(inc
            .into_iter()
            .map(|v| {
                acc += v;
                acc
            })
            .collect())
    }

    /// CSV with columns `t, x_0.., u_0.., cost_so_far`; floats carry 17 significant digits.
    pub fn to_csv(&self, cost: Option<&CostSpec>) -> Result<String> {
        let m = self.states[0].len();
        let n = self.controls[0].len();
        let running = match cost {
            Some(c) => Some(self.cost_so_far(c)?),
            None => None,
        };
        let mut out = String::from("t");
        for i in 0..m {
            write!(out, ",x_{i}").unwrap();
        }
        for i in 0..n {
            write!(out, ",u_{i}").unwrap();
        }
        out.push_str(",cost_so_far\n");
        for t in 0..=self.horizon() {
            write!(out, "{t}").unwrap();
            for v in self.states[t].iter().chain(self.controls[t].iter()) {
                write!(out, ",{v:.16e}").unwrap();
            }
            match &running {
                Some(r) => write!(out, ",{:.16e}", r[t]).unwrap(),
                None => out.push_str(",nan"),
            }
            out.push('\n');
        }
        Ok(out)
    }
}

/// Disturbance blocks `[x_0, w_0, ..., w_{T-1}]` drawn from `seed`.
pub fn sample_disturbances(noise: &NoiseModel, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    noise.sample(&mut rng)
}

fn impulses(perturbations: &[Perturbation], horizon: usize, m: usize) -> Result<Vec<DVector<f64>>> {
    let mut out = vec![DVector::zeros(m); horizon];
    for p in perturbations {
        if p.t >= horizon {
            return Err(Error::validation("perturbations.t", format!("t={} must be < {horizon}", p.t)));
        }
        if p.impulse.len() != m {
            return Err(Error::validation("perturbations.impulse", format!("expected {m} entries")));
        }
        out[p.t] += DVector::from_column_slice(&p.impulse);
    }
    Ok(out)
}

/// Runs `policy(t, x_0..=x_t)` against the plant with given disturbance blocks.
///
/// `policy` is also queried at `t = T` so the control record has `T + 1` entries.
pub fn simulate<P, F>(
    plant: &P,
    mut policy: F,
    disturbances: &[DVector<f64>],
    perturbations: &[Perturbation],
) -> Result<Trajectory>
where
    P: Plant + ?Sized,
    F: FnMut(usize, &[DVector<f64>]) -> DVector<f64>,
{
    let horizon = disturbances.len() - 1;
    let m = plant.state_dim();
    let kicks = impulses(perturbations, horizon, m)?;
    let mut states = Vec::with_capacity(horizon + 1);
    let mut controls = Vec::with_capacity(horizon + 1);
    states.push(disturbances[0].clone());
    for t in 0..=horizon {
        let u = policy(t, &states);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(t));
        }
        if t < horizon {
            let next = plant.step(t, &states[t], &u) + &disturbances[t + 1] + &kicks[t];
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence(t + 1));
            }
            states.push(next);
        }
        controls.push(u);
    }
    Ok(Trajectory {
        states,
        controls,
        noise_seed: 0,
        perturbations: perturbations.to_vec(),
        realized_cost: None,
    })
}

/// Closed-loop rollout of a controller with memory under sampled noise.
pub fn rollout<P: Plant + ?Sized>(
    plant: &P,
    controller: &Controller,
    noise: &NoiseModel,
    perturbations: &[Perturbation],
    seed: u64,
) -> Result<Trajectory> {
    if noise.horizon() != controller.horizon() || noise.state_dim() != controller.state_dim() {
        return Err(Error::Dimension("noise model does not match the controller".into()));
    }
    if plant.state_dim() != controller.state_dim() || plant.input_dim() != controller.input_dim() {
        return Err(Error::Dimension("plant does not match the controller".into()));
    }
    let w = sample_disturbances(noise, seed);
    let mut traj = simulate(plant, |t, xs| controller.control(t, xs), &w, perturbations)?;
    traj.noise_seed = seed;
    Ok(traj)
}
