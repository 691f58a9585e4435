//! Iterative SLS for nonlinear plants and nonquadratic state costs.
//!
//! Each iteration linearizes the plant and quadratizes the cost along the
//! current nominal, solves the tracking problem on deltas, and line-searches
//! the feedforward on the true plant.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{evaluate_trajectory_cost, quadratize_state_cost, CostSpec, QuadraticCost, StateCostFunction, DEFAULT_REGULARIZATION};
use crate::error::{Error, Result};
use crate::linalg::{stack, unstack};
use crate::plant::Plant;
use crate::sim::simulate;
use crate::sls::{extract_controller_with_nominal, solve_esls_quadratic, Controller, Nominal};
use crate::stacked::{build_stacked, StackedSystem, TimeVaryingLinearSystem};

pub const DEFAULT_ALPHAS: [f64; 6] = [1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125];

#[derive(Debug, Clone, PartialEq)]
pub struct IslsConfig {
    /// Stop when `|Δc| ≤ tau · |J|` after an accepted step.
    pub tau: f64,
    pub max_iter: usize,
    pub alphas: Vec<f64>,
    pub regularization: f64,
    /// A nominal whose Newton feedforward satisfies `‖k‖∞ ≤ feedforward_tol` is stationary.
    pub feedforward_tol: f64,
}

impl Default for IslsConfig {
    fn default() -> Self {
        Self {
            tau: 1e-6,
            max_iter: 100,
            alphas: DEFAULT_ALPHAS.to_vec(),
            regularization: DEFAULT_REGULARIZATION,
            feedforward_tol: 1e-9,
        }
    }
}

impl IslsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::validation("solver.tau", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::validation("solver.max_iter", "must be positive"));
        }
        validate_alphas(&self.alphas)?;
        if !(self.regularization >= 0.0 && self.regularization.is_finite()) {
            return Err(Error::validation("solver.regularization", "must be finite and nonnegative"));
        }
        if !(self.feedforward_tol >= 0.0) {
            return Err(Error::validation("solver.feedforward_tol", "must be nonnegative"));
        }
        Ok(())
    }
}

fn validate_alphas(alphas: &[f64]) -> Result<()> {
    if alphas.is_empty() {
        return Err(Error::validation("solver.alphas", "must be nonempty"));
    }
    if alphas.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
        return Err(Error::validation("solver.alphas", "entries must lie in (0, 1]"));
    }
    if alphas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::validation("solver.alphas", "must be strictly descending"));
    }
    Ok(())
}

/// Quadratic tracking cost plus an optional per-step nonquadratic state cost.
#[derive(Clone)]
pub struct IslsCost {
    pub quadratic: CostSpec,
    pub state_cost: Option<Arc<dyn StateCostFunction>>,
}

impl fmt::Debug for IslsCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IslsCost")
            .field("quadratic", &self.quadratic)
            .field("state_cost", &self.state_cost.as_ref().map(|_| "<fn>"))
            .finish()
    }
}

impl IslsCost {
    pub fn quadratic(cost: CostSpec) -> Self {
        Self {
            quadratic: cost,
            state_cost: None,
        }
    }

    pub fn with_state_cost(cost: CostSpec, f: Arc<dyn StateCostFunction>) -> Self {
        Self {
            quadratic: cost,
            state_cost: Some(f),
        }
    }

    pub fn horizon(&self) -> usize {
        self.quadratic.horizon()
    }

    pub fn evaluate(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
        let mut total = evaluate_trajectory_cost(&self.quadratic, x, u)?;
        if let Some(f) = &self.state_cost {
            let m = self.quadratic.state_dim();
            for t in 0..=self.horizon() {
                total += f.evaluate(t, &x.rows(t * m, m).into_owned());
            }
        }
        Ok(total)
    }

    /// `J(x, u) - J(x_ref, u_ref)` without forming either cost.
    ///
    /// Large shifted terms cancel in `J` itself; the difference keeps full relative accuracy.
    pub fn difference(&self, x: &DVector<f64>, u: &DVector<f64>, x_ref: &DVector<f64>, u_ref: &DVector<f64>) -> Result<f64> {
        let q = &self.quadratic;
        let dims = [x.len(), x_ref.len(), u.len(), u_ref.len()];
        if dims != [q.x_d().len(), q.x_d().len(), q.u_d().len(), q.u_d().len()] {
            return Err(Error::Dimension("trajectory does not match the cost".into()));
        }
        let dx = x - x_ref;
        let du = u - u_ref;
        let mut total = q.q().mul_vec(&dx).dot(&(&dx + 2.0 * (x_ref - q.x_d())));
        let n = q.input_dim();
        let eu = u_ref - q.u_d();
        for (t, r) in q.r().iter().enumerate() {
            let d = du.rows(t * n, n);
            total += (r * d).dot(&(d + 2.0 * eu.rows(t * n, n)));
        }
        if let Some(f) = &self.state_cost {
            let m = q.state_dim();
            for t in 0..=self.horizon() {
                total += f.evaluate(t, &x.rows(t * m, m).into_owned()) - f.evaluate(t, &x_ref.rows(t * m, m).into_owned());
            }
        }
        Ok(total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationState {
    pub x_hat: DVector<f64>,
    pub u_hat: DVector<f64>,
    pub cost_value: f64,
    pub delta_cost: f64,
    pub iteration: usize,
    pub alpha_used: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub cost: f64,
    pub alpha: f64,
    pub k_inf: f64,
}

pub fn trace_to_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("iteration,cost,alpha,k_inf\n");
    for r in rows {
        out.push_str(&format!("{},{:.16e},{:.16e},{:.16e}\n", r.iteration, r.cost, r.alpha, r.k_inf));
    }
    out
}

/// Linearization along a nominal; `x_hat` is the (possibly reprojected) nominal state.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub system: TimeVaryingLinearSystem,
    pub x_hat: DVector<f64>,
    pub reprojected: bool,
}

/// Per-step Jacobians along `(x̂, û)`.
///
/// `noise_mean` is the stacked disturbance mean `μ_w`. If `x̂` is not the
/// noiseless forward simulation of `û` from `μ_{x_0}`, it is reprojected first.
pub fn linearize_plant<P: Plant + ?Sized>(
    plant: &P,
    x_hat: &DVector<f64>,
    u_hat: &DVector<f64>,
    noise_mean: &DVector<f64>,
) -> Result<Linearization> {
    let m = plant.state_dim();
    let n = plant.input_dim();
    if !x_hat.len().is_multiple_of(m) || x_hat.len() < 2 * m {
        return Err(Error::Dimension("nominal state length is not a multiple of the state dimension".into()));
    }
    let nb = x_hat.len() / m;
    if u_hat.len() != nb * n || noise_mean.len() != nb * m {
        return Err(Error::Dimension("nominal control or noise mean has the wrong length".into()));
    }
    let mu = unstack(noise_mean, m);
    let us = unstack(u_hat, n);
    let mut xs = unstack(x_hat, m);
    let feasible = (&xs[0] - &mu[0]).amax() <= 1e-12 * mu[0].amax().max(1.0)
        && (0..nb - 1).all(|t| {
            let pred = plant.step(t, &xs[t], &us[t]) + &mu[t + 1];
            (&xs[t + 1] - &pred).amax() <= 1e-9 * pred.amax().max(1.0)
        });
    if !feasible {
        xs[0] = mu[0].clone();
        for t in 0..nb - 1 {
            let next = plant.step(t, &xs[t], &us[t]) + &mu[t + 1];
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence(t + 1));
            }
            xs[t + 1] = next;
        }
    }
    let jac: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..nb).into_par_iter().map(|t| plant.jacobians(t, &xs[t], &us[t])).collect();
    for (t, (a, b)) in jac.iter().enumerate() {
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("Jacobian at t={t}")));
        }
    }
    let (a, b): (Vec<_>, Vec<_>) = jac.into_iter().unzip();
    Ok(Linearization {
        system: TimeVaryingLinearSystem::new(a, b)?,
        x_hat: stack(&xs),
        reprojected: !feasible,
    })
}

/// Quadratic model of `cost` on deltas around `(x̂, û)`.
pub fn delta_cost(cost: &IslsCost, x_hat: &DVector<f64>, u_hat: &DVector<f64>, regularization: f64) -> Result<QuadraticCost> {
    let spec = &cost.quadratic;
    let m = spec.state_dim();
    let mut qc = spec.quadratic();
    qc.q_lin -= spec.q().mul_vec(x_hat);
    qc.r_lin -= qc.r_mul_vec(u_hat);
    if let Some(f) = &cost.state_cost {
        let terms: Vec<Result<(DMatrix<f64>, DVector<f64>)>> = (0..=spec.horizon())
            .into_par_iter()
            .map(|t| quadratize_state_cost(f.as_ref(), t, &x_hat.rows(t * m, m).into_owned(), regularization))
            .collect();
        for (t, term) in terms.into_iter().enumerate() {
            let (c, x_local) = term?;
            // c(x̂ + δ) ≈ ½ (δ - x_local)ᵀ C (δ - x_local) + const.
            let half = c * 0.5;
            qc.q_lin.rows_mut(t * m, m).gemv(1.0, &half, &x_local, 1.0);
            qc.q_mat.add_block(t, t, &half)?;
        }
    }
    Ok(qc)
}

fn closed_loop<P: Plant + ?Sized>(plant: &P, ctrl: &Controller, k: &DVector<f64>, x0: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let m = plant.state_dim();
    let mut w = vec![DVector::zeros(m); ctrl.horizon() + 1];
    w[0] = x0.clone();
    let traj = simulate(plant, |t, xs| ctrl.control_with(t, xs, k), &w, &[])?;
    Ok((traj.stacked_states(), traj.stacked_controls()))
}

fn improves(delta: f64, current: f64) -> bool {
    delta < -f64::EPSILON * current.abs()
}

/// Tries `k ← α k` for each `α` and keeps the first closed-loop rollout that lowers the cost.
///
/// Returns the state unchanged with `α = 0` when no step size helps.
pub fn line_search<P: Plant + ?Sized>(
    plant: &P,
    cost: &IslsCost,
    candidate: &Controller,
    iter: &IterationState,
    alphas: &[f64],
) -> Result<(IterationState, f64)> {
    validate_alphas(alphas)?;
    let m = plant.state_dim();
    let x0 = iter.x_hat.rows(0, m).into_owned();
    for &alpha in alphas {
        let k = candidate.feedforward() * alpha;
        let (x, u) = match closed_loop(plant, candidate, &k, &x0) {
            Ok(v) => v,
            Err(Error::Divergence(_)) => continue,
            Err(e) => return Err(e),
        };
        let dj = cost.difference(&x, &u, &iter.x_hat, &iter.u_hat)?;
        if dj.is_finite() && improves(dj, iter.cost_value) {
            return Ok((
                IterationState {
                    x_hat: x,
                    u_hat: u,
                    cost_value: iter.cost_value + dj,
                    delta_cost: dj,
                    iteration: iter.iteration + 1,
                    alpha_used: alpha,
                },
                alpha,
            ));
        }
    }
    let mut same = iter.clone();
    same.alpha_used = 0.0;
    Ok((same, 0.0))
}

/// Delta problem and controller at a nominal.
#[derive(Debug, Clone)]
pub struct LocalSolution {
    pub stacked: StackedSystem,
    pub cost: QuadraticCost,
    pub controller: Controller,
    pub predicted_decrease: f64,
}

fn solve_at_nominal<P: Plant + ?Sized>(
    plant: &P,
    cost: &IslsCost,
    x_hat: &DVector<f64>,
    u_hat: &DVector<f64>,
    noise_mean: &DVector<f64>,
    regularization: f64,
) -> Result<LocalSolution> {
    let lin = linearize_plant(plant, x_hat, u_hat, noise_mean)?;
    let stacked = build_stacked(&lin.system);
    let qc = delta_cost(cost, &lin.x_hat, u_hat, regularization)?;
    let sol = solve_esls_quadratic(&stacked, &qc)?;
    let nominal = Nominal {
        x: lin.x_hat.clone(),
        u: u_hat.clone(),
    };
    let controller = extract_controller_with_nominal(&stacked, &sol.response, Some(nominal))?;
    Ok(LocalSolution {
        stacked,
        cost: qc,
        controller,
        predicted_decrease: sol.predicted_decrease,
    })
}

#[derive(Debug, Clone)]
pub struct IslsOutcome {
    /// Controller re-solved at the final nominal.
    pub controller: Controller,
    pub state: IterationState,
    pub converged: bool,
    pub accepted_iterations: usize,
    pub trace: Vec<TraceRow>,
    /// Delta problem at the final nominal, used for feedforward adaptation.
    pub local: LocalSolution,
}

/// Runs iterative SLS from the open-loop rollout of `init_u` starting at `x0`.
pub fn isls_optimize<P: Plant + ?Sized>(
    plant: &P,
    cost: &IslsCost,
    x0: &DVector<f64>,
    init_u: &DVector<f64>,
    config: &IslsConfig,
) -> Result<IslsOutcome> {
    config.validate()?;
    let m = plant.state_dim();
    let n = plant.input_dim();
    let horizon = cost.horizon();
    let nb = horizon + 1;
    if cost.quadratic.state_dim() != m || cost.quadratic.input_dim() != n {
        return Err(Error::Dimension("cost does not match the plant".into()));
    }
    if x0.len() != m || init_u.len() != nb * n {
        return Err(Error::Dimension("initial state or controls have the wrong length".into()));
    }
    if init_u.iter().chain(x0.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial controls".into()));
    }
    let mut noise_mean = DVector::zeros(nb * m);
    noise_mean.rows_mut(0, m).copy_from(x0);

    let mut w = vec![DVector::zeros(m); nb];
    w[0] = x0.clone();
    let us = unstack(init_u, n);
    let open = simulate(plant, |t, _| us[t].clone(), &w, &[])?;
    let x_hat = open.stacked_states();
    let j0 = cost.evaluate(&x_hat, init_u)?;
    let mut state = IterationState {
        x_hat,
        u_hat: init_u.clone(),
        cost_value: j0,
        delta_cost: f64::INFINITY,
        iteration: 0,
        alpha_used: 0.0,
    };
    let mut trace = Vec::new();
    let mut accepted = 0;
    let mut converged = false;
    let mut local = solve_at_nominal(plant, cost, &state.x_hat, &state.u_hat, &noise_mean, config.regularization)?;
    trace.push(TraceRow {
        iteration: 0,
        cost: j0,
        alpha: 0.0,
        k_inf: local.controller.feedforward().amax(),
    });

    for _ in 0..config.max_iter {
        if local.controller.feedforward().amax() <= config.feedforward_tol {
            converged = true;
            break;
        }
        let (next, alpha) = line_search(plant, cost, &local.controller, &state, &config.alphas)?;
        if alpha == 0.0 {
            // No step size lowers the cost: stationary unless the model still predicts progress.
            converged = local.predicted_decrease <= config.tau * state.cost_value.abs().max(f64::MIN_POSITIVE);
            state.alpha_used = 0.0;
            break;
        }
        accepted += 1;
        let scale = state.cost_value.abs().max(f64::MIN_POSITIVE);
        state = next;
        local = solve_at_nominal(plant, cost, &state.x_hat, &state.u_hat, &noise_mean, config.regularization)?;
        trace.push(TraceRow {
            iteration: state.iteration,
            cost: state.cost_value,
            alpha,
            k_inf: local.controller.feedforward().amax(),
        });
        if state.delta_cost.abs() <= config.tau * scale {
            converged = true;
            break;
        }
    }
    Ok(IslsOutcome {
        controller: local.controller.clone(),
        state,
        converged,
        accepted_iterations: accepted,
        trace,
        local,
    })
}
