//! Scenario runs, artifact writing and the benchmark drivers.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptation::{adapt_feedforward, precompute_gain_maps, precompute_gain_maps_local, AdaptationMaps, SharedController};
use crate::artifact::{save_controller, save_maps};
use crate::baselines::{batch_lqt, dp_lqt, mpc_lqt_rollout};
use crate::blt::BlockLowerTriangular;
use crate::cost::{CorrelationSpec, CostSpec};
use crate::error::{Error, Result};
use crate::isls::{isls_optimize, trace_to_csv, IslsCost, IslsOutcome, TraceRow};
use crate::plant::Plant;
use crate::scenario::{Problem, Scenario, SolverKind};
use crate::sim::{rollout, sample_disturbances, simulate, Trajectory};
use crate::sls::{extract_controller, solve_esls, Controller};
use crate::stacked::{achievability_residual, build_stacked, NoiseModel, StackedSystem};

/// Largest weighted entry of `C x_{t1} + c - x_{t2}` in absolute value.
pub fn correlation_residual(corr: &CorrelationSpec, states: &[DVector<f64>]) -> f64 {
    let e = &corr.coeff * &states[corr.t1] + &corr.offset - &states[corr.t2];
    (0..e.len())
        .filter(|&i| corr.weight.row(i).amax() > 0.0)
        .map(|i| e[i].abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResidual {
    pub t1: usize,
    pub t2: usize,
    pub residual: f64,
}

fn correlation_residuals(specs: &[CorrelationSpec], traj: &Trajectory) -> Vec<CorrelationResidual> {
    specs
        .iter()
        .map(|c| CorrelationResidual {
            t1: c.t1,
            t2: c.t2,
            residual: correlation_residual(c, &traj.states),
        })
        .collect()
}

/// Result of solving a scenario once.
#[derive(Debug, Clone)]
pub struct Solved {
    pub controller: Option<Controller>,
    pub maps: Option<AdaptationMaps>,
    pub stacked: Option<StackedSystem>,
    pub isls: Option<IslsOutcome>,
    pub achievability_residual: Option<f64>,
    pub feedforward_residual: Option<f64>,
    pub solve_seconds: f64,
}

fn linear_stacked(problem: &Problem) -> Result<StackedSystem> {
    let sys = problem
        .plant
        .linear_system(problem.horizon())?
        .ok_or_else(|| Error::validation("solver.kind", "this solver needs a linear plant"))?;
    Ok(build_stacked(&sys))
}

/// Zero-gain controller that replays open-loop controls.
fn open_loop_controller(u: DVector<f64>, horizon: usize, m: usize, n: usize) -> Result<Controller> {
    Controller::new(BlockLowerTriangular::zeros(horizon + 1, n, m), u, None)
}

/// Solves the scenario's problem with its configured solver.
///
/// MPC-LQT has no single controller; its trajectory comes from [`run_trial`].
pub fn solve(scenario: &Scenario, problem: &Problem) -> Result<Solved> {
    let start = Instant::now();
    let horizon = problem.horizon();
    let m = problem.plant.state_dim();
    let n = problem.plant.input_dim();
    let mut out = Solved {
        controller: None,
        maps: None,
        stacked: None,
        isls: None,
        achievability_residual: None,
        feedforward_residual: None,
        solve_seconds: 0.0,
    };
    match scenario.solver.kind {
        SolverKind::Esls => {
            let st = linear_stacked(problem)?;
            let resp = solve_esls(&st, &problem.cost)?;
            let ctrl = extract_controller(&st, &resp)?;
            out.achievability_residual = Some(achievability_residual(&st, &resp.phi_x, &resp.phi_u)?);
            out.feedforward_residual = Some(resp.feedforward_residual(&st));
            let mut maps = precompute_gain_maps(&st, &problem.cost, &ctrl)?;
            if let Some(v) = scenario.solver.vicinity_threshold {
                maps = maps.with_vicinity_threshold(v)?;
            }
            out.maps = Some(maps);
            out.controller = Some(ctrl);
            out.stacked = Some(st);
        }
        SolverKind::Isls => {
            let cfg = scenario.solver.isls_config()?;
            let cost = IslsCost::quadratic(problem.cost.clone());
            let x0 = problem.noise.mean_x0().clone();
            let res = isls_optimize(&problem.plant, &cost, &x0, &DVector::zeros((horizon + 1) * n), &cfg)?;
            let mut maps = precompute_gain_maps_local(&res.local.stacked, &res.local.cost, &problem.cost, &res.controller)?;
            if let Some(v) = scenario.solver.vicinity_threshold {
                maps = maps.with_vicinity_threshold(v)?;
            }
            out.maps = Some(maps);
            out.controller = Some(res.controller.clone());
            out.stacked = Some(res.local.stacked.clone());
            out.isls = Some(res);
        }
        SolverKind::DpLqt => {
            let sys = problem.plant.linear_system(horizon)?.expect("validated linear");
            out.controller = Some(dp_lqt(&sys, &problem.cost)?.to_controller()?);
        }
        SolverKind::BatchLqt => {
            let st = linear_stacked(problem)?;
            let u = batch_lqt(&st, &problem.cost, problem.noise.mean_x0())?;
            out.controller = Some(open_loop_controller(u, horizon, m, n)?);
        }
        SolverKind::MpcLqt => {}
    }
    out.solve_seconds = start.elapsed().as_secs_f64();
    Ok(out)
}

/// Closed-loop trajectory of one trial, with its realized task cost set.
pub fn run_trial(scenario: &Scenario, problem: &Problem, solved: &Solved, seed: u64) -> Result<Trajectory> {
    let mut traj = match (scenario.solver.kind, &solved.controller) {
        (SolverKind::MpcLqt, _) => {
            let sys = problem.plant.linear_system(problem.horizon())?.expect("validated linear");
            let tr = scenario.solver.recompute_time.expect("validated recompute time");
            mpc_lqt_rollout(&sys, &problem.cost, tr, &problem.noise, &problem.perturbations, seed)?
        }
        (_, Some(ctrl)) => rollout(&problem.plant, ctrl, &problem.noise, &problem.perturbations, seed)?,
        (_, None) => return Err(Error::Precondition("no controller to roll out".into())),
    };
    traj.evaluate(&problem.cost)?;
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub solver: String,
    pub seed: u64,
    pub config_hash: String,
    pub realized_cost: f64,
    pub correlation_residuals: Vec<CorrelationResidual>,
    pub achievability_residual: Option<f64>,
    pub feedforward_residual: Option<f64>,
    pub converged: Option<bool>,
    pub iterations: Option<usize>,
    pub final_feedforward_inf_norm: Option<f64>,
    pub solve_seconds: f64,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: u64,
    /// Root output directory; artifacts go to `<out>/<scenario>/<label>/`.
    pub out: PathBuf,
    /// Defaults to `seed-<seed>`.
    pub label: Option<String>,
    pub trace: bool,
}

impl RunOptions {
    pub fn run_dir(&self, scenario: &Scenario) -> PathBuf {
        let label = self.label.clone().unwrap_or_else(|| format!("seed-{}", self.seed));
        self.out.join(&scenario.name).join(label)
    }
}

/// Solves, rolls out and writes all artifacts for one scenario.
pub fn run_scenario(scenario: &Scenario, opts: &RunOptions) -> Result<RunReport> {
    let problem = scenario.build(opts.seed)?;
    let solved = solve(scenario, &problem)?;
    let traj = run_trial(scenario, &problem, &solved, opts.seed)?;
    let dir = opts.run_dir(scenario);
    fs::create_dir_all(&dir)?;
    let mut artifacts = Vec::new();
    if let Some(ctrl) = &solved.controller {
        save_controller(&dir.join("controller.bin"), ctrl)?;
        artifacts.push("controller.bin".to_string());
    }
    if let Some(maps) = &solved.maps {
        save_maps(&dir.join("maps.bin"), maps)?;
        artifacts.push("maps.bin".to_string());
    }
    fs::write(dir.join("trajectory.csv"), traj.to_csv(Some(&problem.cost))?)?;
    artifacts.push("trajectory.csv".to_string());
    if let (true, Some(res)) = (opts.trace, &solved.isls) {
        fs::write(dir.join("trace.csv"), trace_to_csv(&res.trace))?;
        artifacts.push("trace.csv".to_string());
    }
    artifacts.push("report.json".to_string());
    let report = RunReport {
        scenario: scenario.name.clone(),
        solver: scenario.solver.kind.label().to_string(),
        seed: opts.seed,
        config_hash: scenario.config_hash(),
        realized_cost: traj.realized_cost.unwrap_or(f64::NAN),
        correlation_residuals: correlation_residuals(&scenario.correlation_specs()?, &traj),
        achievability_residual: solved.achievability_residual,
        feedforward_residual: solved.feedforward_residual,
        converged: solved.isls.as_ref().map(|r| r.converged),
        iterations: solved.isls.as_ref().map(|r| r.accepted_iterations),
        final_feedforward_inf_norm: solved.controller.as_ref().filter(|_| solved.isls.is_some()).map(|c| c.feedforward().amax()),
        solve_seconds: solved.solve_seconds,
        artifacts,
    };
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}

/// Rolls out a stored controller against a scenario and writes the trajectory.
pub fn rollout_controller(scenario: &Scenario, ctrl: &Controller, seed: u64, csv: &Path) -> Result<Trajectory> {
    let problem = scenario.build(seed)?;
    let mut traj = rollout(&problem.plant, ctrl, &problem.noise, &problem.perturbations, seed)?;
    traj.evaluate(&problem.cost)?;
    if let Some(dir) = csv.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(csv, traj.to_csv(Some(&problem.cost))?)?;
    Ok(traj)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(fs::write(path, text)?)
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub solver: String,
    pub costs: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Per-trial memory-property residual (largest correlation residual).
    pub residuals: Vec<f64>,
    pub solve_seconds: Vec<f64>,
}

impl SolverSummary {
    fn new(solver: &str, costs: Vec<f64>, residuals: Vec<f64>, solve_seconds: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&costs);
        Self {
            solver: solver.to_string(),
            costs,
            mean,
            std,
            residuals,
            solve_seconds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub scenario: String,
    pub config_hash: String,
    pub base_seed: u64,
    pub seeds: Vec<u64>,
    pub solvers: Vec<SolverSummary>,
    /// Benchmark-specific details.
    pub details: serde_json::Value,
}

impl BenchmarkReport {
    pub fn solver(&self, name: &str) -> Option<&SolverSummary> {
        self.solvers.iter().find(|s| s.solver == name)
    }
}

fn trial_seeds(seed: u64, trials: usize) -> Vec<u64> {
    (0..trials as u64).map(|i| seed.wrapping_add(i)).collect()
}

fn max_residual(specs: &[CorrelationSpec], traj: &Trajectory) -> f64 {
    specs.iter().map(|c| correlation_residual(c, &traj.states)).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MugSugarDetails {
    pub recompute_time: usize,
    pub cost_ratio: f64,
    pub esls_wins_every_trial: bool,
    /// Realized mug position (state at the first correlation's `t1`) per trial.
    pub mug_positions: Vec<Vec<f64>>,
}

/// Paired eSLS and MPC-LQT trials with shared seeds and initial draws.
///
/// MPC-LQT re-solves at the latest correlation start, so every correlation can be frozen.
pub fn bench_mug_sugar(scenario: &Scenario, trials: usize, seed: u64) -> Result<BenchmarkReport> {
    if trials < 2 {
        return Err(Error::validation("trials", "need at least 2"));
    }
    let specs = scenario.correlation_specs()?;
    let recompute_time = specs
        .iter()
        .map(|c| c.t1)
        .max()
        .ok_or_else(|| Error::validation("cost.correlations", "the benchmark needs a correlation"))?;
    let mut esls_sc = scenario.clone();
    esls_sc.solver.kind = SolverKind::Esls;
    esls_sc.solver.recompute_time = None;
    let mut mpc_sc = scenario.clone();
    mpc_sc.solver.kind = SolverKind::MpcLqt;
    mpc_sc.solver.recompute_time = Some(recompute_time);
    mpc_sc.validate()?;

    // The eSLS controller does not depend on the initial state, so one solve serves every trial.
    let base = esls_sc.build(seed)?;
    let solved = solve(&esls_sc, &base)?;
    let seeds = trial_seeds(seed, trials);
    let results: Vec<Result<(Trajectory, Trajectory, f64)>> = seeds
        .par_iter()
        .map(|&s| {
            let problem = esls_sc.build(s)?;
            let e = run_trial(&esls_sc, &problem, &solved, s)?;
            let start = Instant::now();
            let mp = run_trial(&mpc_sc, &problem, &Solved { controller: None, ..solved.clone() }, s)?;
            Ok((e, mp, start.elapsed().as_secs_f64()))
        })
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let esls_costs: Vec<f64> = results.iter().map(|r| r.0.realized_cost.unwrap()).collect();
    let mpc_costs: Vec<f64> = results.iter().map(|r| r.1.realized_cost.unwrap()).collect();
    let esls = SolverSummary::new(
        "esls",
        esls_costs.clone(),
        results.iter().map(|r| max_residual(&specs, &r.0)).collect(),
        vec![solved.solve_seconds; trials],
    );
    let mpc = SolverSummary::new(
        "mpc-lqt",
        mpc_costs.clone(),
        results.iter().map(|r| max_residual(&specs, &r.1)).collect(),
        results.iter().map(|r| r.2).collect(),
    );
    let t1 = specs[0].t1;
    let details = MugSugarDetails {
        recompute_time,
        cost_ratio: esls.mean / mpc.mean,
        esls_wins_every_trial: esls_costs.iter().zip(&mpc_costs).all(|(e, m)| e < m),
        mug_positions: results.iter().map(|r| r.0.states[t1].iter().copied().collect()).collect(),
    };
    Ok(BenchmarkReport {
        scenario: scenario.name.clone(),
        config_hash: scenario.config_hash(),
        base_seed: seed,
        seeds,
        solvers: vec![esls, mpc],
        details: serde_json::to_value(details)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PickPlaceTrial {
    pub seed: u64,
    pub perturbed: bool,
    pub grasp_height: f64,
    pub lift_apex: f64,
    pub place_height: f64,
    pub place_residual: f64,
    pub converged: bool,
    pub iterations: usize,
    pub monotone: bool,
    pub final_feedforward_inf_norm: f64,
    pub trace: Vec<TraceRow>,
}

/// Phase times of a pick-and-place scenario: grasp `t1`, lift (the correlation
/// with an offset) and place (the one without).
pub fn pickplace_phases(specs: &[CorrelationSpec]) -> Result<(usize, usize, usize)> {
    let lift = specs.iter().find(|c| c.offset.amax() > 0.0);
    let place = specs.iter().find(|c| c.offset.amax() == 0.0);
    match (lift, place) {
        (Some(l), Some(p)) if l.t1 == p.t1 => Ok((l.t1, l.t2, p.t2)),
        _ => Err(Error::validation("cost.correlations", "expected a lift correlation with an offset and a place correlation from the same grasp step")),
    }
}

/// iSLS on the arm: trial 0 uses the nominal configuration, later trials draw perturbed ones.
pub fn bench_pickplace(scenario: &Scenario, trials: usize, seed: u64) -> Result<BenchmarkReport> {
    if trials < 1 {
        return Err(Error::validation("trials", "need at least 1"));
    }
    let arm = scenario.build_plant()?;
    let layout = arm
        .as_arm()
        .ok_or_else(|| Error::validation("plant.kind", "pick-and-place needs the planar arm"))?
        .layout();
    let specs = scenario.correlation_specs()?;
    let (tg, tl, tp) = pickplace_phases(&specs)?;
    let height = layout.ee_pos() + 1;
    let seeds = trial_seeds(seed, trials);
    let nominal = scenario.clone();
    let mut spread_free = scenario.clone();
    spread_free.initial_state.spread = None;
    let results: Vec<Result<(PickPlaceTrial, f64, Trajectory)>> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &s)| {
            let sc = if i == 0 { &spread_free } else { &nominal };
            let problem = sc.build(s)?;
            let solved = solve(sc, &problem)?;
            let traj = run_trial(sc, &problem, &solved, s)?;
            let res = solved.isls.as_ref().expect("isls run");
            let y: Vec<f64> = traj.states.iter().map(|x| x[height]).collect();
            let grasp = y[tg];
            let trial = PickPlaceTrial {
                seed: s,
                perturbed: i > 0,
                grasp_height: grasp,
                lift_apex: y[tg..=tl].iter().copied().fold(f64::NEG_INFINITY, f64::max),
                place_height: y[tp],
                place_residual: (y[tp] - grasp).abs(),
                converged: res.converged,
                iterations: res.accepted_iterations,
                monotone: res.trace.windows(2).all(|w| w[1].cost <= w[0].cost),
                final_feedforward_inf_norm: res.controller.feedforward().amax(),
                trace: res.trace.clone(),
            };
            Ok((trial, solved.solve_seconds, traj))
        })
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let summary = SolverSummary::new(
        "isls",
        results.iter().map(|r| r.2.realized_cost.unwrap()).collect(),
        results.iter().map(|r| r.0.place_residual).collect(),
        results.iter().map(|r| r.1).collect(),
    );
    let trials: Vec<PickPlaceTrial> = results.into_iter().map(|r| r.0).collect();
    Ok(BenchmarkReport {
        scenario: scenario.name.clone(),
        config_hash: scenario.config_hash(),
        base_seed: seed,
        seeds,
        solvers: vec![summary],
        details: serde_json::json!({ "grasp_step": tg, "lift_step": tl, "place_step": tp, "trials": trials }),
    })
}

/// Replaces the target block at `t` by `x_d[t] + delta`, applied from rollout step `apply_at`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetEdit {
    pub apply_at: usize,
    pub t: usize,
    pub delta: Vec<f64>,
}

impl TargetEdit {
    pub fn apply(&self, cost: &CostSpec) -> Result<DVector<f64>> {
        let m = cost.state_dim();
        if self.t > cost.horizon() {
            return Err(Error::validation("edit.t", format!("t={} outside [0, {}]", self.t, cost.horizon())));
        }
        if self.apply_at > cost.horizon() {
            return Err(Error::validation("edit.apply_at", format!("step {} outside [0, {}]", self.apply_at, cost.horizon())));
        }
        if self.delta.len() != m {
            return Err(Error::validation("edit.delta", format!("has {} entries, expected {m}", self.delta.len())));
        }
        let mut x = cost.x_d().clone();
        let mut block = x.rows_mut(self.t * m, m);
        block += DVector::from_column_slice(&self.delta);
        Ok(x)
    }
}

/// Edits used by `bench adapt` when none are given: a goal shift at the start, a
/// mid-rollout shift and a no-op.
pub fn default_edits(scenario: &Scenario) -> Vec<TargetEdit> {
    let m = scenario.state_dim();
    let horizon = scenario.horizon;
    let goal = scenario.cost.viapoints.iter().map(|v| v.t).max().unwrap_or(horizon);
    let shift = |a: f64, b: f64| {
        let mut d = vec![0.0; m];
        d[0] = a;
        if m > 1 {
            d[1] = b;
        }
        d
    };
    vec![
        TargetEdit { apply_at: 0, t: goal, delta: shift(0.1, -0.05) },
        TargetEdit { apply_at: horizon / 2, t: goal, delta: shift(-0.1, 0.1) },
        TargetEdit { apply_at: 0, t: goal, delta: vec![0.0; m] },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationTrial {
    pub edit: TargetEdit,
    pub flagged: bool,
    pub adapt_seconds: f64,
    pub resolve_seconds: f64,
    /// `max |k_adapt - k_resolve|`; only meaningful for linear problems.
    pub feedforward_gap: f64,
    /// Largest weighted deviation from the edited target at the edited step.
    pub tracking_error: f64,
    /// The same quantity for the unedited plan on its own target.
    pub original_error: f64,
    /// `max |x_adapt - x_resolve|` over the trajectory after the edit.
    pub trajectory_gap: f64,
}

fn weighted_error(cost: &CostSpec, x_d: &DVector<f64>, t: usize, states: &[DVector<f64>]) -> f64 {
    let m = cost.state_dim();
    let w = cost.q().diagonal_block(t);
    let target = x_d.rows(t * m, m);
    (0..m)
        .filter(|&i| w[(i, i)] > 0.0)
        .map(|i| (states[t][i] - target[i]).abs())
        .fold(0.0, f64::max)
}

fn rollout_with_switch(
    plant: &dyn Plant,
    before: &Controller,
    after: &Controller,
    switch_at: usize,
    noise: &NoiseModel,
    seed: u64,
) -> Result<Trajectory> {
    let w = sample_disturbances(noise, seed);
    simulate(plant, |t, xs| if t < switch_at { before.control(t, xs) } else { after.control(t, xs) }, &w, &[])
}

/// Applies target edits through the adaptation maps and compares against a full re-solve.
///
/// Rollouts are noise-free so the comparison isolates the feedforward update.
pub fn bench_adaptation(scenario: &Scenario, edits: &[TargetEdit], seed: u64) -> Result<BenchmarkReport> {
    let problem = scenario.build(seed)?;
    let solved = solve(scenario, &problem)?;
    let (ctrl, maps) = match (&solved.controller, &solved.maps) {
        (Some(c), Some(m)) => (c.clone(), m.clone()),
        _ => return Err(Error::validation("solver.kind", "adaptation needs an esls or isls controller")),
    };
    let noise = NoiseModel::deterministic(problem.horizon(), problem.noise.mean_x0().clone());
    let mut base_traj = rollout(&problem.plant, &ctrl, &noise, &[], seed)?;
    let base_cost = base_traj.evaluate(&problem.cost)?;
    let mut trials = Vec::new();
    for edit in edits {
        let x_new = edit.apply(&problem.cost)?;
        let u_new = problem.cost.u_d().clone();
        let flagged = maps.exceeds_vicinity(&x_new, &u_new)?;

        let start = Instant::now();
        let k_new = adapt_feedforward(&maps, &x_new, &u_new)?;
        let adapt_seconds = start.elapsed().as_secs_f64();

        let edited_cost = problem.cost.with_targets(x_new.clone(), u_new.clone())?;
        let edited_problem = Problem {
            cost: edited_cost.clone(),
            ..problem.clone()
        };
        let resolved = solve(scenario, &edited_problem)?;
        let resolved_ctrl = resolved.controller.clone().expect("controller");

        let shared = SharedController::new(ctrl.clone());
        let w = sample_disturbances(&noise, seed);
        let mut pending = Some(k_new.clone());
        let adapted = simulate(
            &problem.plant,
            |t, xs| {
                if t == edit.apply_at {
                    if let Some(k) = pending.take() {
                        shared.cell().store(k).expect("same length");
                    }
                }
                shared.control(t, xs)
            },
            &w,
            &[],
        )?;
        let oracle = rollout_with_switch(&problem.plant, &ctrl, &resolved_ctrl, edit.apply_at, &noise, seed)?;
        let trajectory_gap = adapted
            .states
            .iter()
            .zip(&oracle.states)
            .skip(edit.apply_at)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max);
        trials.push(AdaptationTrial {
            edit: edit.clone(),
            flagged,
            adapt_seconds,
            resolve_seconds: resolved.solve_seconds,
            feedforward_gap: (&k_new - resolved_ctrl.feedforward()).amax(),
            tracking_error: weighted_error(&problem.cost, &x_new, edit.t, &adapted.states),
            original_error: weighted_error(&problem.cost, problem.cost.x_d(), edit.t, &base_traj.states),
            trajectory_gap,
        });
    }
    let summary = SolverSummary::new(
        scenario.solver.kind.label(),
        vec![base_cost],
        trials.iter().map(|t| t.tracking_error).collect(),
        trials.iter().map(|t| t.adapt_seconds).collect(),
    );
    Ok(BenchmarkReport {
        scenario: scenario.name.clone(),
        config_hash: scenario.config_hash(),
        base_seed: seed,
        seeds: vec![seed],
        solvers: vec![summary],
        details: serde_json::json!({ "vicinity_threshold": maps.vicinity_threshold, "local": maps.local, "edits": trials }),
    })
}
