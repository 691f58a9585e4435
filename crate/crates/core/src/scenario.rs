//! Scenario files: JSON problem definitions with strict schema checks.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cost::{add_correlation, build_viapoint_cost_with_dim, CorrelationSpec, CostSpec, Viapoint};
use crate::error::{Error, Result};
use crate::isls::IslsConfig;
use crate::plant::{DoubleIntegrator, LinearPlant, Plant, PlanarArm};
use crate::sim::Perturbation;
use crate::stacked::{NoiseModel, TimeVaryingLinearSystem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub horizon: usize,
    pub plant: PlantSpec,
    pub cost: CostConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub initial_state: InitialStateConfig,
    #[serde(default)]
    pub perturbations: Vec<PerturbationConfig>,
    pub solver: SolverConfig,
    /// Free-form notes carried into reports; never read by the solvers.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantSpec {
    DoubleIntegrator {
        dim: usize,
        dt: f64,
        #[serde(default)]
        exact_zoh: bool,
    },
    PlanarArm {
        link_lengths: Vec<f64>,
        dt: f64,
        theta_lower: Vec<f64>,
        theta_upper: Vec<f64>,
        #[serde(default)]
        velocity_after_update: bool,
    },
    /// Time-invariant `x⁺ = A x + B u`; rows of `a` and `b`.
    Linear { a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
}

/// A scalar (times identity), a diagonal, or a full row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixConfig {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl MatrixConfig {
    fn build(&self, dim: usize, field: &str) -> Result<DMatrix<f64>> {
        let m = match self {
            MatrixConfig::Scalar(s) => DMatrix::identity(dim, dim) * *s,
            MatrixConfig::Diagonal(d) => {
                if d.len() != dim {
                    return Err(Error::validation(field, format!("diagonal has {} entries, expected {dim}", d.len())));
                }
                DMatrix::from_diagonal(&DVector::from_column_slice(d))
            }
            MatrixConfig::Full(rows) => matrix_from_rows(rows, dim, dim, field)?,
        };
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(field, "entries must be finite"));
        }
        Ok(m)
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, field: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::validation(field, format!("expected a {nrows}x{ncols} matrix")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    #[serde(default)]
    pub viapoints: Vec<ViapointConfig>,
    #[serde(default)]
    pub correlations: Vec<CorrelationConfig>,
    /// Same target and weight at every step in `[from, to]`.
    #[serde(default)]
    pub running: Vec<RunningConfig>,
    pub control_weight: MatrixConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViapointConfig {
    pub t: usize,
    pub target: Vec<f64>,
    pub weight: MatrixConfig,
}

/// Penalizes `x_{t2} - (C x_{t1} + c)`; `C` defaults to identity and `c` to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationConfig {
    pub t1: usize,
    pub t2: usize,
    #[serde(default)]
    pub coeff: Option<MatrixConfig>,
    #[serde(default)]
    pub offset: Option<Vec<f64>>,
    pub weight: MatrixConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunningConfig {
    #[serde(default)]
    pub from: usize,
    #[serde(default)]
    pub to: Option<usize>,
    pub target: Vec<f64>,
    pub weight: MatrixConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Diagonal of `Σ_{x0}`; zero when absent.
    #[serde(default)]
    pub x0_var: Option<Vec<f64>>,
    /// Per-step diagonal of `Σ_noise`; zero when absent.
    #[serde(default)]
    pub process_var: Option<Vec<f64>>,
}

/// Either a full state or joint angles for the arm. `spread` is the half-width of
/// the uniform box that per-trial draws add to the same coordinates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStateConfig {
    #[serde(default)]
    pub state: Option<Vec<f64>>,
    #[serde(default)]
    pub theta: Option<Vec<f64>>,
    #[serde(default)]
    pub theta_dot: Option<Vec<f64>>,
    #[serde(default)]
    pub spread: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    pub t: usize,
    pub impulse: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Esls,
    Isls,
    DpLqt,
    MpcLqt,
    BatchLqt,
}

impl SolverKind {
    pub fn label(&self) -> &'static str {
        match self {
            SolverKind::Esls => "esls",
            SolverKind::Isls => "isls",
            SolverKind::DpLqt => "dp-lqt",
            SolverKind::MpcLqt => "mpc-lqt",
            SolverKind::BatchLqt => "batch-lqt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub kind: SolverKind,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub alphas: Option<Vec<f64>>,
    #[serde(default)]
    pub regularization: Option<f64>,
    #[serde(default)]
    pub feedforward_tol: Option<f64>,
    /// Re-solve step for MPC-LQT.
    #[serde(default)]
    pub recompute_time: Option<usize>,
    #[serde(default)]
    pub vicinity_threshold: Option<f64>,
}

impl SolverConfig {
    pub fn isls_config(&self) -> Result<IslsConfig> {
        let d = IslsConfig::default();
        let cfg = IslsConfig {
            tau: self.tau.unwrap_or(d.tau),
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            alphas: self.alphas.clone().unwrap_or(d.alphas),
            regularization: self.regularization.unwrap_or(d.regularization),
            feedforward_tol: self.feedforward_tol.unwrap_or(d.feedforward_tol),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Plant built from a scenario.
#[derive(Debug, Clone)]
pub enum ScenarioPlant {
    DoubleIntegrator(DoubleIntegrator),
    PlanarArm(PlanarArm),
    Linear(LinearPlant),
}

impl ScenarioPlant {
    /// Linear dynamics over `horizon`, or `None` for the arm.
    pub fn linear_system(&self, horizon: usize) -> Result<Option<TimeVaryingLinearSystem>> {
        match self {
            ScenarioPlant::DoubleIntegrator(d) => d.system(horizon).map(Some),
            ScenarioPlant::Linear(p) => {
                let s = p.system();
                TimeVaryingLinearSystem::time_invariant(horizon, s.a(0).clone(), s.b(0).clone()).map(Some)
            }
            ScenarioPlant::PlanarArm(_) => Ok(None),
        }
    }

    pub fn as_arm(&self) -> Option<&PlanarArm> {
        match self {
            ScenarioPlant::PlanarArm(a) => Some(a),
            _ => None,
        }
    }
}

impl Plant for ScenarioPlant {
    fn state_dim(&self) -> usize {
        match self {
            ScenarioPlant::DoubleIntegrator(p) => p.state_dim(),
            ScenarioPlant::PlanarArm(p) => p.state_dim(),
            ScenarioPlant::Linear(p) => p.state_dim(),
        }
    }

    fn input_dim(&self) -> usize {
        match self {
            ScenarioPlant::DoubleIntegrator(p) => p.input_dim(),
            ScenarioPlant::PlanarArm(p) => p.input_dim(),
            ScenarioPlant::Linear(p) => p.input_dim(),
        }
    }

    fn step(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        match self {
            ScenarioPlant::DoubleIntegrator(p) => p.step(t, x, u),
            ScenarioPlant::PlanarArm(p) => p.step(t, x, u),
            ScenarioPlant::Linear(p) => p.step(t, x, u),
        }
    }

    fn jacobians(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        match self {
            ScenarioPlant::DoubleIntegrator(p) => p.jacobians(t, x, u),
            ScenarioPlant::PlanarArm(p) => p.jacobians(t, x, u),
            ScenarioPlant::Linear(p) => p.jacobians(t, x, u),
        }
    }
}

/// Everything a run needs, built and validated from a [`Scenario`].
#[derive(Debug, Clone)]
pub struct Problem {
    pub plant: ScenarioPlant,
    pub cost: CostSpec,
    /// Noise around the nominal initial state.
    pub noise: NoiseModel,
    pub perturbations: Vec<Perturbation>,
}

impl Problem {
    pub fn horizon(&self) -> usize {
        self.cost.horizon()
    }
}

fn check_finite(vals: &[f64], field: &str) -> Result<()> {
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation(field, "entries must be finite"));
    }
    Ok(())
}

fn check_len(vals: &[f64], len: usize, field: &str) -> Result<()> {
    if vals.len() != len {
        return Err(Error::validation(field, format!("has {} entries, expected {len}", vals.len())));
    }
    check_finite(vals, field)
}

impl Scenario {
    /// Parses and validates a scenario.
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Hex SHA-256 of the compact canonical serialization.
    pub fn config_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn state_dim(&self) -> usize {
        match &self.plant {
            PlantSpec::DoubleIntegrator { dim, .. } => 2 * dim,
            PlantSpec::PlanarArm { link_lengths, .. } => 3 * link_lengths.len() + 5,
            PlantSpec::Linear { a, .. } => a.len(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.plant {
            PlantSpec::DoubleIntegrator { dim, .. } => *dim,
            PlantSpec::PlanarArm { link_lengths, .. } => link_lengths.len(),
            PlantSpec::Linear { b, .. } => b.first().map_or(0, |r| r.len()),
        }
    }

    fn initial_coords(&self) -> usize {
        match &self.plant {
            PlantSpec::PlanarArm { link_lengths, .. } => link_lengths.len(),
            _ => self.state_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::validation("name", "must be nonempty"));
        }
        if self.horizon == 0 {
            return Err(Error::validation("horizon", "must be positive"));
        }
        let horizon = self.horizon;
        let m = self.state_dim();
        let n = self.input_dim();
        match &self.plant {
            PlantSpec::DoubleIntegrator { dim, dt, .. } => {
                if *dim == 0 {
                    return Err(Error::validation("plant.dim", "must be positive"));
                }
                if !(*dt > 0.0 && dt.is_finite()) {
                    return Err(Error::validation("plant.dt", "must be positive"));
                }
            }
            PlantSpec::PlanarArm {
                link_lengths,
                dt,
                theta_lower,
                theta_upper,
                ..
            } => {
                if link_lengths.len() < 2 {
                    return Err(Error::validation("plant.link_lengths", "need at least 2 links"));
                }
                if link_lengths.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
                    return Err(Error::validation("plant.link_lengths", "lengths must be positive"));
                }
                if !(*dt > 0.0 && dt.is_finite()) {
                    return Err(Error::validation("plant.dt", "must be positive"));
                }
                check_len(theta_lower, link_lengths.len(), "plant.theta_lower")?;
                check_len(theta_upper, link_lengths.len(), "plant.theta_upper")?;
            }
            PlantSpec::Linear { a, b } => {
                if a.is_empty() || n == 0 {
                    return Err(Error::validation("plant.a", "system must have at least one state and one input"));
                }
                matrix_from_rows(a, m, m, "plant.a")?;
                matrix_from_rows(b, m, n, "plant.b")?;
                if a.iter().chain(b.iter()).flatten().any(|v| !v.is_finite()) {
                    return Err(Error::validation("plant.a", "entries must be finite"));
                }
            }
        }
        for (i, v) in self.cost.viapoints.iter().enumerate() {
            let f = format!("cost.viapoints[{i}]");
            if v.t > horizon {
                return Err(Error::validation(format!("{f}.t"), format!("t={} outside [0, {horizon}]", v.t)));
            }
            check_len(&v.target, m, &format!("{f}.target"))?;
            v.weight.build(m, &format!("{f}.weight"))?;
        }
        for (i, r) in self.cost.running.iter().enumerate() {
            let f = format!("cost.running[{i}]");
            let to = r.to.unwrap_or(horizon);
            if to > horizon || r.from > to {
                return Err(Error::validation(format!("{f}.to"), format!("range [{}, {to}] outside [0, {horizon}]", r.from)));
            }
            check_len(&r.target, m, &format!("{f}.target"))?;
            r.weight.build(m, &format!("{f}.weight"))?;
        }
        for (i, c) in self.cost.correlations.iter().enumerate() {
            let f = format!("cost.correlations[{i}]");
            if c.t2 > horizon {
                return Err(Error::validation(format!("{f}.t2"), format!("t2={} outside [0, {horizon}]", c.t2)));
            }
            if c.t1 >= c.t2 {
                return Err(Error::validation(format!("{f}.t1"), format!("t1={} must be < t2={}", c.t1, c.t2)));
            }
            if let Some(o) = &c.offset {
                check_len(o, m, &format!("{f}.offset"))?;
            }
            if let Some(cf) = &c.coeff {
                cf.build(m, &format!("{f}.coeff"))?;
            }
            c.weight.build(m, &format!("{f}.weight"))?;
        }
        self.cost.control_weight.build(n, "cost.control_weight")?;
        if let Some(v) = &self.noise.x0_var {
            check_len(v, m, "noise.x0_var")?;
        }
        if let Some(v) = &self.noise.process_var {
            check_len(v, m, "noise.process_var")?;
        }
        for (field, v) in [("noise.x0_var", &self.noise.x0_var), ("noise.process_var", &self.noise.process_var)] {
            if v.as_ref().is_some_and(|v| v.iter().any(|x| *x < 0.0)) {
                return Err(Error::validation(field, "variances must be nonnegative"));
            }
        }
        let init = &self.initial_state;
        match (&self.plant, &init.state, &init.theta) {
            (PlantSpec::PlanarArm { link_lengths, .. }, None, Some(theta)) => {
                check_len(theta, link_lengths.len(), "initial_state.theta")?;
                if let Some(td) = &init.theta_dot {
                    check_len(td, link_lengths.len(), "initial_state.theta_dot")?;
                }
            }
            (PlantSpec::PlanarArm { .. }, _, _) => {
                return Err(Error::validation("initial_state.theta", "the arm is initialized from joint angles only"));
            }
            (_, Some(state), None) => {
                check_len(state, m, "initial_state.state")?;
                if init.theta_dot.is_some() {
                    return Err(Error::validation("initial_state.theta_dot", "only valid for the arm"));
                }
            }
            _ => return Err(Error::validation("initial_state.state", "give exactly the full state")),
        }
        if let Some(s) = &init.spread {
            check_len(s, self.initial_coords(), "initial_state.spread")?;
            if s.iter().any(|v| *v < 0.0) {
                return Err(Error::validation("initial_state.spread", "half-widths must be nonnegative"));
            }
        }
        for (i, p) in self.perturbations.iter().enumerate() {
            if p.t >= horizon {
                return Err(Error::validation(format!("perturbations[{i}].t"), format!("t={} must be < {horizon}", p.t)));
            }
            check_len(&p.impulse, m, &format!("perturbations[{i}].impulse"))?;
        }
        let solver = &self.solver;
        if solver.kind == SolverKind::Isls || solver.tau.is_some() || solver.alphas.is_some() {
            solver.isls_config()?;
        }
        if matches!(self.plant, PlantSpec::PlanarArm { .. }) && solver.kind != SolverKind::Isls {
            return Err(Error::validation("solver.kind", "the arm plant is nonlinear and needs isls"));
        }
        if solver.kind == SolverKind::MpcLqt {
            let tr = solver
                .recompute_time
                .ok_or_else(|| Error::validation("solver.recompute_time", "required for mpc-lqt"))?;
            if tr == 0 || tr >= horizon {
                return Err(Error::validation("solver.recompute_time", format!("must lie in (0, {horizon})")));
            }
        } else if solver.recompute_time.is_some() {
            return Err(Error::validation("solver.recompute_time", "only valid for mpc-lqt"));
        }
        if solver.kind == SolverKind::DpLqt && !self.cost.correlations.is_empty() {
            return Err(Error::validation("solver.kind", "dp-lqt cannot encode cross-time correlations"));
        }
        if let Some(v) = solver.vicinity_threshold {
            if !(v > 0.0) {
                return Err(Error::validation("solver.vicinity_threshold", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn build_plant(&self) -> Result<ScenarioPlant> {
        Ok(match &self.plant {
            PlantSpec::DoubleIntegrator { dim, dt, exact_zoh } => ScenarioPlant::DoubleIntegrator(DoubleIntegrator::new(*dim, *dt)?.exact_zoh(*exact_zoh)),
            PlantSpec::PlanarArm {
                link_lengths,
                dt,
                theta_lower,
                theta_upper,
                velocity_after_update,
            } => ScenarioPlant::PlanarArm(
                PlanarArm::new(link_lengths.clone(), *dt, DVector::from_column_slice(theta_lower), DVector::from_column_slice(theta_upper))?
                    .velocity_after_update(*velocity_after_update),
            ),
            PlantSpec::Linear { a, b } => {
                let m = self.state_dim();
                let n = self.input_dim();
                let sys = TimeVaryingLinearSystem::time_invariant(self.horizon, matrix_from_rows(a, m, m, "plant.a")?, matrix_from_rows(b, m, n, "plant.b")?)?;
                ScenarioPlant::Linear(LinearPlant::new(sys))
            }
        })
    }

    pub fn build_cost(&self) -> Result<CostSpec> {
        let m = self.state_dim();
        let n = self.input_dim();
        let mut vps = Vec::new();
        for (i, v) in self.cost.viapoints.iter().enumerate() {
            vps.push(Viapoint::new(v.t, DVector::from_column_slice(&v.target), v.weight.build(m, &format!("cost.viapoints[{i}].weight"))?));
        }
        for (i, r) in self.cost.running.iter().enumerate() {
            let w = r.weight.build(m, &format!("cost.running[{i}].weight"))?;
            let g = DVector::from_column_slice(&r.target);
            for t in r.from..=r.to.unwrap_or(self.horizon) {
                vps.push(Viapoint::new(t, g.clone(), w.clone()));
            }
        }
        let rw = self.cost.control_weight.build(n, "cost.control_weight")?;
        let mut cost = build_viapoint_cost_with_dim(self.horizon, m, &vps, vec![rw; self.horizon + 1])?;
        for spec in self.correlation_specs()? {
            cost = add_correlation(&cost, &spec)?;
        }
        Ok(cost)
    }

    pub fn correlation_specs(&self) -> Result<Vec<CorrelationSpec>> {
        let m = self.state_dim();
        self.cost
            .correlations
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let f = format!("cost.correlations[{i}]");
                let coeff = match &c.coeff {
                    Some(cf) => cf.build(m, &format!("{f}.coeff"))?,
                    None => DMatrix::identity(m, m),
                };
                let offset = c.offset.as_ref().map_or_else(|| DVector::zeros(m), |o| DVector::from_column_slice(o));
                Ok(CorrelationSpec::new(c.t1, c.t2, coeff, offset, c.weight.build(m, &format!("{f}.weight"))?))
            })
            .collect()
    }

    /// Nominal initial state (before any per-trial draw).
    pub fn nominal_initial_state(&self, plant: &ScenarioPlant) -> DVector<f64> {
        self.initial_state_with_offset(plant, None)
    }

    fn initial_state_with_offset(&self, plant: &ScenarioPlant, offset: Option<&DVector<f64>>) -> DVector<f64> {
        let init = &self.initial_state;
        match (plant.as_arm(), &init.theta) {
            (Some(arm), Some(theta)) => {
                let mut th = DVector::from_column_slice(theta);
                if let Some(o) = offset {
                    th += o;
                }
                let td = init.theta_dot.as_ref().map_or_else(|| DVector::zeros(theta.len()), |v| DVector::from_column_slice(v));
                arm.state_from_joints(&th, &td)
            }
            _ => {
                let mut x = DVector::from_column_slice(init.state.as_deref().unwrap_or(&[]));
                if let Some(o) = offset {
                    x += o;
                }
                x
            }
        }
    }

    /// Initial state for a trial: the nominal plus a uniform draw in the `spread` box.
    ///
    /// Draws use stream 1 of the trial seed so they never overlap the noise samples.
    pub fn trial_initial_state(&self, plant: &ScenarioPlant, seed: u64) -> DVector<f64> {
        match &self.initial_state.spread {
            Some(spread) if spread.iter().any(|s| *s > 0.0) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(1);
                let off = DVector::from_iterator(spread.len(), spread.iter().map(|s| if *s > 0.0 { rng.random_range(-*s..=*s) } else { 0.0 }));
                self.initial_state_with_offset(plant, Some(&off))
            }
            _ => self.nominal_initial_state(plant),
        }
    }

    pub fn noise_model(&self, x0: DVector<f64>) -> Result<NoiseModel> {
        let m = self.state_dim();
        let v0 = self.noise.x0_var.as_ref().map_or_else(|| DVector::zeros(m), |v| DVector::from_column_slice(v));
        let vp = self.noise.process_var.as_ref().map_or_else(|| DVector::zeros(m), |v| DVector::from_column_slice(v));
        NoiseModel::uniform(self.horizon, x0, v0, vp)
    }

    /// Builds the problem for one trial seed.
    pub fn build(&self, seed: u64) -> Result<Problem> {
        self.validate()?;
        let plant = self.build_plant()?;
        let cost = self.build_cost()?;
        let x0 = self.trial_initial_state(&plant, seed);
        Ok(Problem {
            noise: self.noise_model(x0)?,
            plant,
            cost,
            perturbations: self.perturbations.iter().map(|p| Perturbation::new(p.t, p.impulse.clone())).collect(),
        })
    }
}

/// Scenario files shipped with the library.
pub mod bundled {
    pub const MUG_SUGAR: &str = include_str!("../scenarios/mug_sugar.scenario");
    pub const REGULATOR_SMOKE: &str = include_str!("../scenarios/regulator_smoke.scenario");
    pub const PICKPLACE: &str = include_str!("../scenarios/pickplace.scenario");
    pub const ADAPT_REACH: &str = include_str!("../scenarios/adapt_reach.scenario");

    pub fn by_name(name: &str) -> Option<&'static str> {
        match name {
            "mug_sugar" => Some(MUG_SUGAR),
            "regulator_smoke" => Some(REGULATOR_SMOKE),
            "pickplace" => Some(PICKPLACE),
            "adapt_reach" => Some(ADAPT_REACH),
            _ => None,
        }
    }
}
