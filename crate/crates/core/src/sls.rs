//! SLS regulator and feedforward tracking solves, and controller extraction.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use crate::blt::BlockLowerTriangular;
use crate::cost::{BlockSparseSym, CostSpec, QuadraticCost};
use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, relative_difference_vec, symmetrize, TrailingCholesky};
use crate::stacked::StackedSystem;

/// Largest stacked state size for which `Q` is checked for PSD-ness densely.
pub const PSD_CHECK_MAX_DIM: usize = 400;

/// Closed-loop maps and feedforward plans.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemResponse {
    pub phi_x: BlockLowerTriangular,
    pub phi_u: BlockLowerTriangular,
    pub d_x: DVector<f64>,
    pub d_u: DVector<f64>,
}

impl SystemResponse {
    /// `‖d_x - S_u d_u‖ / max(1, ‖d_x‖)`.
    pub fn feedforward_residual(&self, stacked: &StackedSystem) -> f64 {
        relative_difference_vec(&self.d_x, &stacked.apply_su(&self.d_u))
    }
}

/// Nominal trajectory around which an iterative controller acts.
#[derive(Debug, Clone, PartialEq)]
pub struct Nominal {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
}

/// Causal controller with memory: `u_t = û_t + Σ_{s≤t} K(t,s)(x_s - x̂_s) + k_t`.
///
/// Without a nominal, `x̂` and `û` are zero and the law is `u = K x + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    gain: BlockLowerTriangular,
    feedforward: DVector<f64>,
    nominal: Option<Nominal>,
}

impl Controller {
    pub fn new(gain: BlockLowerTriangular, feedforward: DVector<f64>, nominal: Option<Nominal>) -> Result<Self> {
        if feedforward.len() != gain.nrows() {
            return Err(Error::Dimension(format!(
                "feedforward has length {}, expected {}",
                feedforward.len(),
                gain.nrows()
            )));
        }
        if let Some(nom) = &nominal {
            if nom.x.len() != gain.ncols() || nom.u.len() != gain.nrows() {
                return Err(Error::Dimension("nominal trajectory does not match the gain".into()));
            }
        }
        if !gain.is_finite() || feedforward.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("controller".into()));
        }
        Ok(Self {
            gain,
            feedforward,
            nominal,
        })
    }

    pub fn horizon(&self) -> usize {
        self.gain.nblocks() - 1
    }

    pub fn state_dim(&self) -> usize {
        self.gain.col_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.gain.row_dim()
    }

    /// Feedback `K`.
    pub fn gain(&self) -> &BlockLowerTriangular {
        &self.gain
    }

    /// Feedforward `k`.
    pub fn feedforward(&self) -> &DVector<f64> {
        &self.feedforward
    }

    pub fn nominal(&self) -> Option<&Nominal> {
        self.nominal.as_ref()
    }

    /// Feedforward of the equivalent law `u = K x + k'`, i.e. `k' = û - K x̂ + k`.
    pub fn absolute_feedforward(&self) -> DVector<f64> {
        match &self.nominal {
            Some(nom) => &nom.u - self.gain.mul_vec(&nom.x) + &self.feedforward,
            None => self.feedforward.clone(),
        }
    }

    pub fn set_feedforward(&mut self, k: DVector<f64>) -> Result<()> {
        if k.len() != self.feedforward.len() {
            return Err(Error::Dimension("feedforward length changed".into()));
        }
        self.feedforward = k;
        Ok(())
    }

    pub fn with_feedforward(&self, k: DVector<f64>) -> Result<Self> {
        let mut out = self.clone();
        out.set_feedforward(k)?;
        Ok(out)
    }

    /// Control at step `t` given the realized states `x_0..=x_t`.
    pub fn control(&self, t: usize, states: &[DVector<f64>]) -> DVector<f64> {
        self.control_with(t, states, &self.feedforward)
    }

    /// As [`Controller::control`] but with an externally supplied feedforward.
    pub fn control_with(&self, t: usize, states: &[DVector<f64>], k: &DVector<f64>) -> DVector<f64> {
        let m = self.state_dim();
        let n = self.input_dim();
        let mut u = k.rows(t * n, n).into_owned();
        if let Some(nom) = &self.nominal {
            u += nom.u.rows(t * n, n);
        }
        for (s, xs) in states.iter().enumerate().take(t + 1) {
            let dev = match &self.nominal {
                Some(nom) => xs - nom.x.rows(s * m, m),
                None => xs.clone(),
            };
            u.gemv(1.0, self.gain.block(t, s), &dev, 1.0);
        }
        u
    }

    /// True when any feedback block below the diagonal is nonzero.
    pub fn has_memory(&self) -> bool {
        let nb = self.gain.nblocks();
        (0..nb).any(|i| (0..i).any(|j| self.gain.block(i, j).amax() > 0.0))
    }
}

fn check_cost_dims(stacked: &StackedSystem, qc: &QuadraticCost) -> Result<()> {
    let nb = stacked.nblocks();
    if qc.q_mat.nblocks() != nb || qc.q_mat.block_dim() != stacked.state_dim() {
        return Err(Error::Dimension("state cost does not match the stacked system".into()));
    }
    if qc.r_blocks.len() != nb || qc.r_blocks.iter().any(|r| r.shape() != (stacked.input_dim(), stacked.input_dim())) {
        return Err(Error::Dimension("control weight does not match the stacked system".into()));
    }
    if qc.q_lin.len() != nb * stacked.state_dim() || qc.r_lin.len() != nb * stacked.input_dim() {
        return Err(Error::Dimension("linear cost terms do not match the stacked system".into()));
    }
    Ok(())
}

fn check_psd_if_small(q: &BlockSparseSym) -> Result<()> {
    if q.size() <= PSD_CHECK_MAX_DIM {
        let dense = q.to_dense();
        let scale = dense.amax().max(1.0);
        let lmin = min_eigenvalue(&dense);
        if lmin < -1e-9 * scale {
            return Err(Error::InvalidCost(format!("Q is not positive semidefinite (min eigenvalue {lmin:e})")));
        }
    }
    Ok(())
}

pub(crate) fn block_diag_dense(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks[0].nrows();
    let mut out = DMatrix::zeros(blocks.len() * n, blocks.len() * n);
    for (t, b) in blocks.iter().enumerate() {
        out.view_mut((t * n, t * n), (n, n)).copy_from(b);
    }
    out
}

/// Factor of the normal matrix `S_uᵀ Q S_u + R`.
pub fn normal_factor(stacked: &StackedSystem, q: &BlockSparseSym, r: &[DMatrix<f64>]) -> Result<TrailingCholesky> {
    let su = stacked.s_u().to_dense();
    let qsu = q.mul_mat(&su);
    let mut n = stacked.apply_su_transpose_mat(&qsu);
    n += block_diag_dense(r);
    TrailingCholesky::new(&symmetrize(&n))
}

/// Solves for block column `i` of `(Φ_x, Φ_u)` directly from the trailing subproblem.
///
/// Returns the trailing parts (block rows `i..`) of the two columns.
pub fn solve_sls_column(
    stacked: &StackedSystem,
    q: &BlockSparseSym,
    r: &[DMatrix<f64>],
    i: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let nb = stacked.nblocks();
    let m = stacked.state_dim();
    let n = stacked.input_dim();
    if i >= nb {
        return Err(Error::Dimension(format!("column {i} outside 0..={}", nb - 1)));
    }
    if q.nblocks() != nb || q.block_dim() != m || r.len() != nb {
        return Err(Error::Dimension("cost does not match the stacked system".into()));
    }
    let k = nb - i;
    let su_full = stacked.s_u().to_dense();
    let su = su_full.view((i * m, i * n), (k * m, k * n)).into_owned();
    let sx = stacked.s_x().column_strip(i);
    let q_full = q.to_dense();
    let q_tr = q_full.view((i * m, i * m), (k * m, k * m)).into_owned();
    let r_tr = block_diag_dense(&r[i..]);
    let normal = symmetrize(&(su.transpose() * &q_tr * &su + r_tr));
    let rhs = su.transpose() * &q_tr * &sx;
    let chol = Cholesky::new(normal)
        .ok_or_else(|| Error::NotPositiveDefinite(format!("trailing normal matrix of column {i}")))?;
    let phi_u = -chol.solve(&rhs);
    let phi_x = sx + su * &phi_u;
    Ok((phi_x, phi_u))
}

/// Solution of an eSLS problem together with the model decrease of its feedforward.
#[derive(Debug, Clone)]
pub struct EslsSolution {
    pub response: SystemResponse,
    /// `d_uᵀ (S_uᵀ q + r)`: decrease of the quadratic model from `u = 0` to `u = d_u`.
    pub predicted_decrease: f64,
}

/// eSLS solve on the linear-term form of the cost.
pub fn solve_esls_quadratic(stacked: &StackedSystem, qc: &QuadraticCost) -> Result<EslsSolution> {
    check_cost_dims(stacked, qc)?;
    check_psd_if_small(&qc.q_mat)?;
    let nb = stacked.nblocks();
    let m = stacked.state_dim();
    let n = stacked.input_dim();
    let factor = normal_factor(stacked, &qc.q_mat, &qc.r_blocks)?;

    let b = stacked.apply_su_transpose(&qc.q_lin) + &qc.r_lin;
    let d_u = factor.solve_vec(&b);
    let d_x = stacked.apply_su(&d_u);
    let predicted_decrease = d_u.dot(&b);

    // Block column i of S_uᵀ Q S_x holds every per-column right-hand side.
    let qsx = qc.q_mat.mul_mat(&stacked.s_x().to_dense());
    let rhs_all = stacked.apply_su_transpose_mat(&qsx);
    let sys = stacked.base();
    let columns: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..nb)
        .into_par_iter()
        .map(|i| {
            let k = nb - i;
            let rhs = rhs_all.view((i * n, i * m), (k * n, m)).into_owned();
            let phi_u = -factor.solve_trailing(i * n, &rhs);
            let mut phi_x = DMatrix::zeros(k * m, m);
            phi_x.view_mut((0, 0), (m, m)).fill_with_identity();
            for j in i..nb - 1 {
                let r = j - i;
                let prev = phi_x.view((r * m, 0), (m, m)).into_owned();
                let mut next = phi_x.view_mut(((r + 1) * m, 0), (m, m));
                next.gemm(1.0, sys.a(j), &prev, 0.0);
                next.gemm(1.0, sys.b(j), &phi_u.view((r * n, 0), (n, m)), 1.0);
            }
            (phi_x, phi_u)
        })
        .collect();

    let mut phi_x = BlockLowerTriangular::zeros(nb, m, m);
    let mut phi_u = BlockLowerTriangular::zeros(nb, n, m);
    for (i, (px, pu)) in columns.iter().enumerate() {
        phi_x.set_column_strip(i, px)?;
        phi_u.set_column_strip(i, pu)?;
    }
    if !phi_x.is_finite() || !phi_u.is_finite() {
        return Err(Error::NonFinite("system response".into()));
    }
    Ok(EslsSolution {
        response: SystemResponse { phi_x, phi_u, d_x, d_u },
        predicted_decrease,
    })
}

/// Solves the feedforward tracking problem and all feedback columns.
pub fn solve_esls(stacked: &StackedSystem, cost: &CostSpec) -> Result<SystemResponse> {
    check_horizon(stacked, cost)?;
    Ok(solve_esls_quadratic(stacked, &cost.quadratic())?.response)
}

pub(crate) fn check_horizon(stacked: &StackedSystem, cost: &CostSpec) -> Result<()> {
    if cost.horizon() != stacked.horizon() || cost.state_dim() != stacked.state_dim() || cost.input_dim() != stacked.input_dim() {
        return Err(Error::Dimension(format!(
            "cost (T={}, m={}, n={}) does not match system (T={}, m={}, n={})",
            cost.horizon(),
            cost.state_dim(),
            cost.input_dim(),
            stacked.horizon(),
            stacked.state_dim(),
            stacked.input_dim()
        )));
    }
    Ok(())
}

/// `K = Φ_u Φ_x⁻¹` and `k = (I - K S_u) d_u`.
pub fn extract_controller(stacked: &StackedSystem, resp: &SystemResponse) -> Result<Controller> {
    extract_controller_with_nominal(stacked, resp, None)
}

pub fn extract_controller_with_nominal(
    stacked: &StackedSystem,
    resp: &SystemResponse,
    nominal: Option<Nominal>,
) -> Result<Controller> {
    let gain = resp.phi_x.solve_right_unit(&resp.phi_u)?;
    let k = &resp.d_u - gain.mul_vec(&stacked.apply_su(&resp.d_u));
    Controller::new(gain, k, nominal)
}
