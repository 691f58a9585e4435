//! Forward-dynamics models: a generic linear plant, the double integrator and a
//! planar arm with an augmented task-space state.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::cost::{joint_limit_violation, joint_limit_violation_derivative};
use crate::error::{Error, Result};
use crate::stacked::TimeVaryingLinearSystem;

/// Deterministic discrete-time dynamics `x_{t+1} = f_t(x_t, u_t)`.
pub trait Plant: Send + Sync {
    fn state_dim(&self) -> usize;

    fn input_dim(&self) -> usize;

    fn step(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;

    /// `(∂f/∂x, ∂f/∂u)`; central differences unless overridden.
    fn jacobians(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        finite_difference_jacobians(self, t, x, u)
    }
}

pub fn finite_difference_jacobians<P: Plant + ?Sized>(
    plant: &P,
    t: usize,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = plant.state_dim();
    let n = plant.input_dim();
    let mut a = DMatrix::zeros(m, m);
    let mut b = DMatrix::zeros(m, n);
    for j in 0..m {
        let h = 1e-6 * x[j].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        a.set_column(j, &((plant.step(t, &xp, u) - plant.step(t, &xm, u)) / (2.0 * h)));
    }
    for j in 0..n {
        let h = 1e-6 * u[j].abs().max(1.0);
        let mut up = u.clone();
        let mut um = u.clone();
        up[j] += h;
        um[j] -= h;
        b.set_column(j, &((plant.step(t, x, &up) - plant.step(t, x, &um)) / (2.0 * h)));
    }
    (a, b)
}

/// Plant defined by a time-varying linear system; steps past the horizon reuse the last matrices.
#[derive(Debug, Clone)]
pub struct LinearPlant {
    sys: TimeVaryingLinearSystem,
}

impl LinearPlant {
    pub fn new(sys: TimeVaryingLinearSystem) -> Self {
        Self { sys }
    }

    pub fn system(&self) -> &TimeVaryingLinearSystem {
        &self.sys
    }

    fn index(&self, t: usize) -> usize {
        t.min(self.sys.horizon())
    }
}

impl Plant for LinearPlant {
    fn state_dim(&self) -> usize {
        self.sys.state_dim()
    }

    fn input_dim(&self) -> usize {
        self.sys.input_dim()
    }

    fn step(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let i = self.index(t);
        self.sys.a(i) * x + self.sys.b(i) * u
    }

    fn jacobians(&self, t: usize, _x: &DVector<f64>, _u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let i = self.index(t);
        (self.sys.a(i).clone(), self.sys.b(i).clone())
    }
}

/// Point mass in `dim` spatial dimensions with state `[position; velocity]` and
/// acceleration input.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubleIntegrator {
    dim: usize,
    dt: f64,
    exact_zoh: bool,
}

impl DoubleIntegrator {
    /// Euler form: `A = [[I, dt I], [0, I]]`, `B = [[0], [dt I]]`.
    pub fn new(dim: usize, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::validation("plant.dt", "must be positive"));
        }
        if dim == 0 {
            return Err(Error::validation("plant.dim", "must be positive"));
        }
        Ok(Self {
            dim,
            dt,
            exact_zoh: false,
        })
    }

    /// Exact zero-order-hold discretization, adding `dt²/2` to the position row of `B`.
    pub fn exact_zoh(mut self, enabled: bool) -> Self {
        self.exact_zoh = enabled;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn a(&self) -> DMatrix<f64> {
        let d = self.dim;
        let mut a = DMatrix::identity(2 * d, 2 * d);
        for i in 0..d {
            a[(i, d + i)] = self.dt;
        }
        a
    }

    pub fn b(&self) -> DMatrix<f64> {
        let d = self.dim;
        let mut b = DMatrix::zeros(2 * d, d);
        for i in 0..d {
            b[(d + i, i)] = self.dt;
            if self.exact_zoh {
                b[(i, i)] = 0.5 * self.dt * self.dt;
            }
        }
        b
    }

    pub fn system(&self, horizon: usize) -> Result<TimeVaryingLinearSystem> {
        TimeVaryingLinearSystem::time_invariant(horizon, self.a(), self.b())
    }
}

impl Plant for DoubleIntegrator {
    fn state_dim(&self) -> usize {
        2 * self.dim
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn step(&self, _t: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.a() * x + self.b() * u
    }

    fn jacobians(&self, _t: usize, _x: &DVector<f64>, _u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.a(), self.b())
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    PI - (PI - a).rem_euclid(2.0 * PI)
}

/// Decoded planar-arm state.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarArmState {
    pub theta: DVector<f64>,
    pub theta_dot: DVector<f64>,
    pub ee_pos: DVector<f64>,
    pub ee_vel: DVector<f64>,
    pub ee_angle: f64,
    pub f_lim: DVector<f64>,
}

/// Offsets of each component in the flat planar-arm state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArmLayout {
    pub joints: usize,
}

impl ArmLayout {
    pub fn theta(&self) -> usize {
        0
    }
    pub fn theta_dot(&self) -> usize {
        self.joints
    }
    pub fn ee_pos(&self) -> usize {
        2 * self.joints
    }
    pub fn ee_vel(&self) -> usize {
        2 * self.joints + 2
    }
    pub fn ee_angle(&self) -> usize {
        2 * self.joints + 4
    }
    pub fn f_lim(&self) -> usize {
        2 * self.joints + 5
    }
    pub fn dim(&self) -> usize {
        3 * self.joints + 5
    }
}

/// Planar serial arm driven by joint accelerations.
///
/// State layout is `[θ, θ̇, ee_pos, ee_vel, ee_angle, f_lim]`; see [`ArmLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarArm {
    lengths: Vec<f64>,
    dt: f64,
    lower: DVector<f64>,
    upper: DVector<f64>,
    velocity_after_update: bool,
}

impl PlanarArm {
    pub fn new(lengths: Vec<f64>, dt: f64, lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        let p = lengths.len();
        if p < 2 {
            return Err(Error::validation("plant.link_lengths", "need at least two links"));
        }
        if let Some(i) = lengths.iter().position(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::validation("plant.link_lengths", format!("link {i} length must be positive")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::validation("plant.dt", "must be positive"));
        }
        if lower.len() != p || upper.len() != p {
            return Err(Error::validation("plant.theta_bounds", format!("bounds must have {p} entries")));
        }
        if let Some(i) = (0..p).find(|&i| lower[i] > upper[i]) {
            return Err(Error::validation("plant.theta_bounds", format!("lower > upper at joint {i}")));
        }
        Ok(Self {
            lengths,
            dt,
            lower,
            upper,
            velocity_after_update: false,
        })
    }

    /// Uses `J(θ_{t+1}) θ̇_{t+1}` for the end-effector velocity instead of `J(θ_{t+1}) θ̇_t`.
    pub fn velocity_after_update(mut self, enabled: bool) -> Self {
        self.velocity_after_update = enabled;
        self
    }

    pub fn joints(&self) -> usize {
        self.lengths.len()
    }

    pub fn layout(&self) -> ArmLayout {
        ArmLayout { joints: self.joints() }
    }

    pub fn link_lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn bounds(&self) -> (&DVector<f64>, &DVector<f64>) {
        (&self.lower, &self.upper)
    }

    fn cumulative(theta: &DVector<f64>) -> Vec<f64> {
        theta
            .iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect()
    }

    pub fn forward_kinematics(&self, theta: &DVector<f64>) -> DVector<f64> {
        let phi = Self::cumulative(theta);
        let mut p = DVector::zeros(2);
        for (l, a) in self.lengths.iter().zip(&phi) {
            p[0] += l * a.cos();
            p[1] += l * a.sin();
        }
        p
    }

    /// 2×p positional Jacobian.
    pub fn jacobian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let p = self.joints();
        let phi = Self::cumulative(theta);
        let mut j = DMatrix::zeros(2, p);
        for col in 0..p {
            for (l, a) in self.lengths.iter().zip(phi.iter()).skip(col) {
                j[(0, col)] -= l * a.sin();
                j[(1, col)] += l * a.cos();
            }
        }
        j
    }

    /// `∂(J(θ) v)/∂θ`.
    fn jacobian_velocity_derivative(&self, theta: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        let p = self.joints();
        let phi = Self::cumulative(theta);
        let omega = Self::cumulative(v);
        let mut d = DMatrix::zeros(2, p);
        for col in 0..p {
            for i in col..p {
                d[(0, col)] -= self.lengths[i] * omega[i] * phi[i].cos();
                d[(1, col)] -= self.lengths[i] * omega[i] * phi[i].sin();
            }
        }
        d
    }

    fn limits(&self, theta: &DVector<f64>) -> DVector<f64> {
        joint_limit_violation(theta, &self.lower, &self.upper).expect("bounds validated at construction")
    }

    /// Consistent full state for joint angles and rates.
    pub fn state_from_joints(&self, theta: &DVector<f64>, theta_dot: &DVector<f64>) -> DVector<f64> {
        let lay = self.layout();
        let mut x = DVector::zeros(lay.dim());
        x.rows_mut(lay.theta(), lay.joints).copy_from(theta);
        x.rows_mut(lay.theta_dot(), lay.joints).copy_from(theta_dot);
        x.rows_mut(lay.ee_pos(), 2).copy_from(&self.forward_kinematics(theta));
        x.rows_mut(lay.ee_vel(), 2).copy_from(&(self.jacobian(theta) * theta_dot));
        x[lay.ee_angle()] = wrap_angle(theta.sum());
        x.rows_mut(lay.f_lim(), lay.joints).copy_from(&self.limits(theta));
        x
    }

    pub fn decode(&self, x: &DVector<f64>) -> PlanarArmState {
        let lay = self.layout();
        let p = lay.joints;
        PlanarArmState {
            theta: x.rows(lay.theta(), p).into_owned(),
            theta_dot: x.rows(lay.theta_dot(), p).into_owned(),
            ee_pos: x.rows(lay.ee_pos(), 2).into_owned(),
            ee_vel: x.rows(lay.ee_vel(), 2).into_owned(),
            ee_angle: x[lay.ee_angle()],
            f_lim: x.rows(lay.f_lim(), p).into_owned(),
        }
    }
}

impl Plant for PlanarArm {
    fn state_dim(&self) -> usize {
        self.layout().dim()
    }

    fn input_dim(&self) -> usize {
        self.joints()
    }

    fn step(&self, _t: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let lay = self.layout();
        let p = lay.joints;
        let theta = x.rows(lay.theta(), p);
        let theta_dot = x.rows(lay.theta_dot(), p).into_owned();
        let theta_next = theta + &theta_dot * self.dt;
        let theta_dot_next = &theta_dot + u * self.dt;
        let v = if self.velocity_after_update { &theta_dot_next } else { &theta_dot };
        let mut out = DVector::zeros(lay.dim());
        out.rows_mut(lay.ee_pos(), 2).copy_from(&self.forward_kinematics(&theta_next));
        out.rows_mut(lay.ee_vel(), 2).copy_from(&(self.jacobian(&theta_next) * v));
        out[lay.ee_angle()] = wrap_angle(theta_next.sum());
        out.rows_mut(lay.f_lim(), p).copy_from(&self.limits(&theta_next));
        out.rows_mut(lay.theta(), p).copy_from(&theta_next);
        out.rows_mut(lay.theta_dot(), p).copy_from(&theta_dot_next);
        out
    }

    fn jacobians(&self, _t: usize, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let lay = self.layout();
        let p = lay.joints;
        let m = lay.dim();
        let dt = self.dt;
        let theta_dot = x.rows(lay.theta_dot(), p).into_owned();
        let theta_next = x.rows(lay.theta(), p) + &theta_dot * dt;
        let v = if self.velocity_after_update {
            &theta_dot + u * dt
        } else {
            theta_dot.clone()
        };
        let jac = self.jacobian(&theta_next);
        let djv = self.jacobian_velocity_derivative(&theta_next, &v);
        let dlim = joint_limit_violation_derivative(&theta_next, &self.lower, &self.upper).expect("bounds validated at construction");

        let mut a = DMatrix::zeros(m, m);
        let mut b = DMatrix::zeros(m, p);
        let eye = DMatrix::<f64>::identity(p, p);
        // Rows by output block; columns only in θ and θ̇.
        a.view_mut((lay.theta(), lay.theta()), (p, p)).copy_from(&eye);
        a.view_mut((lay.theta(), lay.theta_dot()), (p, p)).copy_from(&(&eye * dt));
        a.view_mut((lay.theta_dot(), lay.theta_dot()), (p, p)).copy_from(&eye);
        a.view_mut((lay.ee_pos(), lay.theta()), (2, p)).copy_from(&jac);
        a.view_mut((lay.ee_pos(), lay.theta_dot()), (2, p)).copy_from(&(&jac * dt));
        a.view_mut((lay.ee_vel(), lay.theta()), (2, p)).copy_from(&djv);
        a.view_mut((lay.ee_vel(), lay.theta_dot()), (2, p)).copy_from(&(&djv * dt + &jac));
        for j in 0..p {
            a[(lay.ee_angle(), lay.theta() + j)] = 1.0;
            a[(lay.ee_angle(), lay.theta_dot() + j)] = dt;
            a[(lay.f_lim() + j, lay.theta() + j)] = dlim[j];
            a[(lay.f_lim() + j, lay.theta_dot() + j)] = dlim[j] * dt;
        }
        b.view_mut((lay.theta_dot(), 0), (p, p)).copy_from(&(&eye * dt));
        if self.velocity_after_update {
            b.view_mut((lay.ee_vel(), 0), (2, p)).copy_from(&(&jac * dt));
        }
        (a, b)
    }
}
