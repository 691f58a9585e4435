//! Reference controllers: open-loop batch LQT, memoryless dynamic-programming LQT,
//! and MPC-LQT with a single re-solve.

use nalgebra::{DMatrix, DVector};

use crate::blt::BlockLowerTriangular;
use crate::cost::{BlockSparseSym, CostSpec, QuadraticCost};
use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::plant::LinearPlant;
use crate::sim::{sample_disturbances, simulate, Perturbation, Trajectory};
use crate::sls::{check_horizon, normal_factor, Controller};
use crate::stacked::{NoiseModel, StackedSystem, TimeVaryingLinearSystem};

/// Open-loop minimizer of the deterministic tracking problem from initial state `x0`.
pub fn batch_lqt(stacked: &StackedSystem, cost: &CostSpec, x0: &DVector<f64>) -> Result<DVector<f64>> {
    check_horizon(stacked, cost)?;
    let m = stacked.state_dim();
    if x0.len() != m {
        return Err(Error::Dimension(format!("x0 has length {}, expected {m}", x0.len())));
    }
    let factor = normal_factor(stacked, cost.q(), cost.r())?;
    let mut w = DVector::zeros(stacked.nblocks() * m);
    w.rows_mut(0, m).copy_from(x0);
    let free = stacked.apply_sx(&w);
    let qc = cost.quadratic();
    let rhs = stacked.apply_su_transpose(&(&qc.q_lin - cost.q().mul_vec(&free))) + qc.r_lin;
    Ok(factor.solve_vec(&rhs))
}

/// Memoryless time-varying affine policy `u_t = K_t x_t + k_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DpPolicy {
    pub gains: Vec<DMatrix<f64>>,
    pub offsets: Vec<DVector<f64>>,
}

impl DpPolicy {
    pub fn horizon(&self) -> usize {
        self.gains.len() - 1
    }

    pub fn control(&self, t: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.gains[t] * x + &self.offsets[t]
    }

    /// Block-diagonal controller executing the same law.
    pub fn to_controller(&self) -> Result<Controller> {
        let nb = self.gains.len();
        let (n, m) = self.gains[0].shape();
        let mut gain = BlockLowerTriangular::zeros(nb, n, m);
        let mut k = DVector::zeros(nb * n);
        for t in 0..nb {
            *gain.block_mut(t, t) = self.gains[t].clone();
            k.rows_mut(t * n, n).copy_from(&self.offsets[t]);
        }
        Controller::new(gain, k, None)
    }
}

fn dp_on_terms(sys: &TimeVaryingLinearSystem, qc: &QuadraticCost) -> Result<DpPolicy> {
    if !qc.q_mat.is_block_diagonal() {
        return Err(Error::InvalidCost("DP-LQT cannot encode cross-time correlations".into()));
    }
    let horizon = sys.horizon();
    let m = sys.state_dim();
    let n = sys.input_dim();
    if qc.horizon() != horizon || qc.state_dim() != m || qc.input_dim() != n {
        return Err(Error::Dimension("cost does not match the system".into()));
    }
    let q_lin = |t: usize| qc.q_lin.rows(t * m, m).into_owned();
    let r_lin = |t: usize| qc.r_lin.rows(t * n, n).into_owned();
    let mut gains = vec![DMatrix::zeros(n, m); horizon + 1];
    let mut offsets = vec![DVector::zeros(n); horizon + 1];

    let r_last = qc.r_blocks[horizon]
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(format!("R[{horizon}]")))?;
    offsets[horizon] = r_last.solve(&r_lin(horizon));
    let mut p = qc.q_mat.diagonal_block(horizon);
    let mut p_lin = q_lin(horizon);
    for t in (0..horizon).rev() {
        let a = sys.a(t);
        let b = sys.b(t);
        let pb = &p * b;
        let h = symmetrize(&(&qc.r_blocks[t] + b.transpose() * &pb));
        let chol = h
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite(format!("R + BᵀPB at t={t}")))?;
        let gain = -chol.solve(&(pb.transpose() * a));
        let offset = chol.solve(&(r_lin(t) + b.transpose() * &p_lin));
        let closed = a + b * &gain;
        p_lin = q_lin(t) + a.transpose() * (&p_lin - &pb * &offset);
        p = symmetrize(&(qc.q_mat.diagonal_block(t) + a.transpose() * &p * closed));
        gains[t] = gain;
        offsets[t] = offset;
    }
    Ok(DpPolicy { gains, offsets })
}

/// Backward Riccati recursion for a cost with block-diagonal `Q`.
pub fn dp_lqt(sys: &TimeVaryingLinearSystem, cost: &CostSpec) -> Result<DpPolicy> {
    dp_on_terms(sys, &cost.quadratic())
}

/// Runs DP-LQT on the diagonal projection of `Q`, then re-solves once at `t_r`
/// with the realized states up to `t_r` substituted into the correlation terms.
pub fn mpc_lqt_rollout(
    sys: &TimeVaryingLinearSystem,
    cost: &CostSpec,
    recompute_time: usize,
    noise: &NoiseModel,
    perturbations: &[Perturbation],
    seed: u64,
) -> Result<Trajectory> {
    let horizon = sys.horizon();
    if recompute_time == 0 || recompute_time >= horizon {
        return Err(Error::validation("recompute_time", format!("must lie in (0, {horizon})")));
    }
    if let Some((i, j)) = cost.q().off_diagonal_keys().into_iter().find(|&(_, j)| j > recompute_time) {
        return Err(Error::validation(
            "recompute_time",
            format!("correlation between t={j} and t={i} starts after the re-solve at t={recompute_time}"),
        ));
    }
    let phase1 = dp_lqt(sys, &cost.diagonal_projection())?;
    let base = cost.quadratic();
    let plant = LinearPlant::new(sys.clone());
    let w = sample_disturbances(noise, seed);
    let mut phase2: Option<DpPolicy> = None;
    let mut failure: Option<Error> = None;
    let result = simulate(
        &plant,
        |t, xs| {
            if t < recompute_time {
                return phase1.control(t, &xs[t]);
            }
            if phase2.is_none() {
                match resolve_with_history(sys, &base, recompute_time, xs) {
                    Ok(p) => phase2 = Some(p),
                    Err(e) => {
                        failure = Some(e);
                        return DVector::from_element(sys.input_dim(), f64::NAN);
                    }
                }
            }
            phase2.as_ref().unwrap().control(t, &xs[t])
        },
        &w,
        perturbations,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let mut traj = result?;
    traj.noise_seed = seed;
    Ok(traj)
}

/// DP-LQT on `[t_r, T]` with realized states `x_0..=x_{t_r}` frozen as constants.
fn resolve_with_history(
    sys: &TimeVaryingLinearSystem,
    base: &QuadraticCost,
    recompute_time: usize,
    history: &[DVector<f64>],
) -> Result<DpPolicy> {
    let m = sys.state_dim();
    let nb = sys.horizon() + 1;
    let mut q_mat = BlockSparseSym::zeros(nb, m);
    let mut q_lin = base.q_lin.clone();
    for (&(i, j), blk) in base.q_mat.stored_blocks() {
        if i == j {
            if i > recompute_time {
                q_mat.add_block(i, i, blk)?;
            }
        } else if i > recompute_time {
            // Term 2 x_iᵀ Q(i,j) x_j with x_j fixed becomes linear in x_i.
            let mut rows = q_lin.rows_mut(i * m, m);
            rows.gemv(-1.0, blk, &history[j], 1.0);
        }
    }
    for t in 0..=recompute_time {
        q_lin.rows_mut(t * m, m).fill(0.0);
    }
    let reduced = QuadraticCost {
        q_mat,
        r_blocks: base.r_blocks.clone(),
        q_lin,
        r_lin: base.r_lin.clone(),
    };
    dp_on_terms(sys, &reduced)
}
