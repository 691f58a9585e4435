//! Time-stacked representation of linear time-varying systems.
//!
//! States and inputs are indexed `0..=T`. The stacked dynamics are
//! `x = Z A_d x + Z B_d u + w` where `Z` shifts block rows down by one; `Z` is
//! never formed, every product with it is a block-index shift.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::blt::BlockLowerTriangular;
use crate::error::{Error, Result};

/// Relative tolerance for structural residuals.
pub const STRUCTURAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeVaryingLinearSystem {
    horizon: usize,
    state_dim: usize,
    input_dim: usize,
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
}

impl TimeVaryingLinearSystem {
    /// `a` and `b` must each hold `T + 1` matrices.
    pub fn new(a: Vec<DMatrix<f64>>, b: Vec<DMatrix<f64>>) -> Result<Self> {
        if a.is_empty() || a.len() < 2 {
            return Err(Error::Dimension("need at least two A matrices (horizon >= 1)".into()));
        }
        if a.len() != b.len() {
            return Err(Error::Dimension(format!(
                "A list has {} entries but B list has {}",
                a.len(),
                b.len()
            )));
        }
        let m = a[0].nrows();
        let n = b[0].ncols();
        if m == 0 || n == 0 {
            return Err(Error::Dimension("state and input dimensions must be positive".into()));
        }
        for (t, (at, bt)) in a.iter().zip(&b).enumerate() {
            if at.shape() != (m, m) {
                return Err(Error::Dimension(format!("A[{t}] is {:?}, expected {m}x{m}", at.shape())));
            }
            if bt.shape() != (m, n) {
                return Err(Error::Dimension(format!("B[{t}] is {:?}, expected {m}x{n}", bt.shape())));
            }
            if at.iter().chain(bt.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("system matrices at t={t}")));
            }
        }
        Ok(Self {
            horizon: a.len() - 1,
            state_dim: m,
            input_dim: n,
            a,
            b,
        })
    }

    pub fn time_invariant(horizon: usize, a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        Self::new(vec![a; horizon + 1], vec![b; horizon + 1])
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn a(&self, t: usize) -> &DMatrix<f64> {
        &self.a[t]
    }

    pub fn b(&self, t: usize) -> &DMatrix<f64> {
        &self.b[t]
    }

    pub fn a_list(&self) -> &[DMatrix<f64>] {
        &self.a
    }

    pub fn b_list(&self) -> &[DMatrix<f64>] {
        &self.b
    }
}

#[derive(Debug, Clone)]
pub struct StackedSystem {
    base: TimeVaryingLinearSystem,
    s_x: BlockLowerTriangular,
    s_u: BlockLowerTriangular,
}

/// Builds `S_x = (I - Z A_d)⁻¹` and `S_u = S_x Z B_d` by block forward substitution.
pub fn build_stacked(sys: &TimeVaryingLinearSystem) -> StackedSystem {
    let nb = sys.horizon + 1;
    let m = sys.state_dim;
    let n = sys.input_dim;
    let mut s_x = BlockLowerTriangular::identity(nb, m);
    for j in 0..nb {
        for i in (j + 1)..nb {
            let next = &sys.a[i - 1] * s_x.block(i - 1, j);
            *s_x.block_mut(i, j) = next;
        }
    }
    let mut s_u = BlockLowerTriangular::zeros(nb, m, n);
    for j in 0..nb.saturating_sub(1) {
        for i in (j + 1)..nb {
            *s_u.block_mut(i, j) = s_x.block(i, j + 1) * &sys.b[j];
        }
    }
    StackedSystem {
        base: sys.clone(),
        s_x,
        s_u,
    }
}

impl StackedSystem {
    pub fn base(&self) -> &TimeVaryingLinearSystem {
        &self.base
    }

    pub fn horizon(&self) -> usize {
        self.base.horizon
    }

    pub fn nblocks(&self) -> usize {
        self.base.horizon + 1
    }

    pub fn state_dim(&self) -> usize {
        self.base.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.base.input_dim
    }

    pub fn s_x(&self) -> &BlockLowerTriangular {
        &self.s_x
    }

    pub fn s_u(&self) -> &BlockLowerTriangular {
        &self.s_u
    }

    /// `S_x w`: free response to a stacked disturbance (first block is `x_0`).
    pub fn apply_sx(&self, w: &DVector<f64>) -> DVector<f64> {
        let m = self.state_dim();
        let nb = self.nblocks();
        assert_eq!(w.len(), nb * m);
        let mut x = w.clone();
        for t in 0..nb - 1 {
            let prev = x.rows(t * m, m).into_owned();
            let mut next = x.rows_mut((t + 1) * m, m);
            next.gemv(1.0, &self.base.a[t], &prev, 1.0);
        }
        x
    }

    /// `S_u u`: forced response from zero initial state.
    pub fn apply_su(&self, u: &DVector<f64>) -> DVector<f64> {
        let m = self.state_dim();
        let n = self.input_dim();
        let nb = self.nblocks();
        assert_eq!(u.len(), nb * n);
        let mut x = DVector::zeros(nb * m);
        for t in 0..nb - 1 {
            let prev = x.rows(t * m, m).into_owned();
            let mut next = x.rows_mut((t + 1) * m, m);
            next.gemv(1.0, &self.base.a[t], &prev, 0.0);
            next.gemv(1.0, &self.base.b[t], &u.rows(t * n, n), 1.0);
        }
        x
    }

    /// `S_u Y` for a dense matrix with `(T+1) n` rows.
    pub fn apply_su_mat(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.state_dim();
        let n = self.input_dim();
        let nb = self.nblocks();
        assert_eq!(y.nrows(), nb * n);
        let mut x = DMatrix::zeros(nb * m, y.ncols());
        for t in 0..nb - 1 {
            let prev = x.rows(t * m, m).into_owned();
            let mut next = x.rows_mut((t + 1) * m, m);
            next.gemm(1.0, &self.base.a[t], &prev, 0.0);
            next.gemm(1.0, &self.base.b[t], &y.rows(t * n, n), 1.0);
        }
        x
    }

    /// `S_xᵀ Y` by backward substitution: `V_T = Y_T`, `V_t = Y_t + A_tᵀ V_{t+1}`.
    pub fn apply_sx_transpose_mat(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.state_dim();
        let nb = self.nblocks();
        assert_eq!(y.nrows(), nb * m);
        let mut v = y.clone();
        for t in (0..nb - 1).rev() {
            let next = v.rows((t + 1) * m, m).into_owned();
            let mut cur = v.rows_mut(t * m, m);
            cur.gemm(1.0, &self.base.a[t].transpose(), &next, 1.0);
        }
        v
    }

    /// `S_uᵀ Y = B_dᵀ Zᵀ S_xᵀ Y`.
    pub fn apply_su_transpose_mat(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.state_dim();
        let n = self.input_dim();
        let nb = self.nblocks();
        let v = self.apply_sx_transpose_mat(y);
        let mut out = DMatrix::zeros(nb * n, y.ncols());
        for t in 0..nb - 1 {
            out.rows_mut(t * n, n)
                .gemm(1.0, &self.base.b[t].transpose(), &v.rows((t + 1) * m, m), 0.0);
        }
        out
    }

    pub fn apply_su_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        let mat = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
        let out = self.apply_su_transpose_mat(&mat);
        DVector::from_column_slice(out.as_slice())
    }

    /// Applies `Z A_d` to a stacked state vector.
    pub fn shift_a(&self, x: &DVector<f64>) -> DVector<f64> {
        let m = self.state_dim();
        let nb = self.nblocks();
        let mut out = DVector::zeros(nb * m);
        for t in 0..nb - 1 {
            out.rows_mut((t + 1) * m, m)
                .gemv(1.0, &self.base.a[t], &x.rows(t * m, m), 0.0);
        }
        out
    }
}

/// Relative residual of the achievability constraint `Φ_x = S_x + S_u Φ_u`.
pub fn achievability_residual(
    stacked: &StackedSystem,
    phi_x: &BlockLowerTriangular,
    phi_u: &BlockLowerTriangular,
) -> Result<f64> {
    let nb = stacked.nblocks();
    let m = stacked.state_dim();
    let n = stacked.input_dim();
    if (phi_x.nblocks(), phi_x.row_dim(), phi_x.col_dim()) != (nb, m, m) {
        return Err(Error::Dimension("Φ_x does not match the stacked system".into()));
    }
    if (phi_u.nblocks(), phi_u.row_dim(), phi_u.col_dim()) != (nb, n, m) {
        return Err(Error::Dimension("Φ_u does not match the stacked system".into()));
    }
    let predicted = stacked.s_x().add(&stacked.s_u().mul(phi_u)?)?;
    let diff = phi_x.sub(&predicted)?;
    Ok(diff.frobenius_norm() / phi_x.frobenius_norm().max(1.0))
}

/// Gaussian disturbance model with diagonal covariances.
///
/// `variances[0]` is the initial-state variance and `variances[t + 1]` the
/// process-noise variance of `w_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    mean_x0: DVector<f64>,
    variances: Vec<DVector<f64>>,
}

impl NoiseModel {
    pub fn new(mean_x0: DVector<f64>, var_x0: DVector<f64>, process_var: Vec<DVector<f64>>) -> Result<Self> {
        let m = mean_x0.len();
        let mut variances = Vec::with_capacity(process_var.len() + 1);
        variances.push(var_x0);
        variances.extend(process_var);
        for (t, v) in variances.iter().enumerate() {
            if v.len() != m {
                return Err(Error::Dimension(format!("variance block {t} has length {}", v.len())));
            }
            if v.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                return Err(Error::validation("noise", format!("variance block {t} must be finite and nonnegative")));
            }
        }
        if mean_x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial-state mean".into()));
        }
        Ok(Self { mean_x0, variances })
    }

    /// Same process variance at every step.
    pub fn uniform(horizon: usize, mean_x0: DVector<f64>, var_x0: DVector<f64>, process_var: DVector<f64>) -> Result<Self> {
        Self::new(mean_x0, var_x0, vec![process_var; horizon])
    }

    /// Deterministic initial state, no process noise.
    pub fn deterministic(horizon: usize, x0: DVector<f64>) -> Self {
        let m = x0.len();
        Self {
            mean_x0: x0,
            variances: vec![DVector::zeros(m); horizon + 1],
        }
    }

    pub fn horizon(&self) -> usize {
        self.variances.len() - 1
    }

    pub fn state_dim(&self) -> usize {
        self.mean_x0.len()
    }

    pub fn mean_x0(&self) -> &DVector<f64> {
        &self.mean_x0
    }

    pub fn variances(&self) -> &[DVector<f64>] {
        &self.variances
    }

    /// Stacked mean `μ_w = [μ_x0; 0; ...; 0]`.
    pub fn mu_w(&self) -> DVector<f64> {
        let m = self.state_dim();
        let mut mu = DVector::zeros(self.variances.len() * m);
        mu.rows_mut(0, m).copy_from(&self.mean_x0);
        mu
    }

    pub fn with_mean_x0(&self, mean_x0: DVector<f64>) -> Self {
        Self {
            mean_x0,
            variances: self.variances.clone(),
        }
    }

    /// Draws the stacked disturbance blocks `[x_0, w_0, ..., w_{T-1}]`.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<DVector<f64>> {
        self.variances
            .iter()
            .enumerate()
            .map(|(t, var)| {
                let mut block = DVector::from_fn(var.len(), |i, _| {
                    let z: f64 = rng.sample(StandardNormal);
                    z * var[i].sqrt()
                });
                if t == 0 {
                    block += &self.mean_x0;
                }
                block
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::relative_difference;

    fn dense_oracle(sys: &TimeVaryingLinearSystem) -> (DMatrix<f64>, DMatrix<f64>) {
        let nb = sys.horizon() + 1;
        let m = sys.state_dim();
        let n = sys.input_dim();
        let mut za = DMatrix::zeros(nb * m, nb * m);
        let mut zb = DMatrix::zeros(nb * m, nb * n);
        for t in 0..nb - 1 {
            za.view_mut(((t + 1) * m, t * m), (m, m)).copy_from(sys.a(t));
            zb.view_mut(((t + 1) * m, t * n), (m, n)).copy_from(sys.b(t));
        }
        let sx = (DMatrix::identity(nb * m, nb * m) - za).try_inverse().unwrap();
        let su = &sx * zb;
        (sx, su)
    }

    #[test]
    fn scalar_unit_system() {
        let sys = TimeVaryingLinearSystem::time_invariant(1, DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        let st = build_stacked(&sys);
        assert_eq!(st.s_x().block(1, 0)[(0, 0)], 1.0);
        assert_eq!(st.s_x().block(0, 0)[(0, 0)], 1.0);
        assert_eq!(st.s_x().block(1, 1)[(0, 0)], 1.0);
        assert_eq!(st.s_u().block(1, 0)[(0, 0)], 1.0);
        assert_eq!(st.s_u().block(0, 0)[(0, 0)], 0.0);
        assert_eq!(st.s_u().block(1, 1)[(0, 0)], 0.0);
    }

    #[test]
    fn double_integrator_blocks_match_dense_oracle() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 0.1]);
        let sys = TimeVaryingLinearSystem::time_invariant(2, a, b).unwrap();
        let st = build_stacked(&sys);
        let (_, su) = dense_oracle(&sys);
        assert!(relative_difference(&su, &st.s_u().to_dense()) < 1e-14);
        let b10 = st.s_u().block(1, 0);
        assert!((b10[(0, 0)] - 0.0).abs() < 1e-15 && (b10[(1, 0)] - 0.1).abs() < 1e-15);
        let b20 = st.s_u().block(2, 0);
        assert!((b20[(0, 0)] - 0.01).abs() < 1e-15 && (b20[(1, 0)] - 0.1).abs() < 1e-15);
        let b21 = st.s_u().block(2, 1);
        assert!((b21[(0, 0)] - 0.0).abs() < 1e-15 && (b21[(1, 0)] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_dynamics_gives_identity_sx() {
        let b = DMatrix::from_row_slice(2, 1, &[1.0, -2.0]);
        let sys = TimeVaryingLinearSystem::time_invariant(4, DMatrix::zeros(2, 2), b.clone()).unwrap();
        let st = build_stacked(&sys);
        assert_eq!(st.s_x(), &BlockLowerTriangular::identity(5, 2));
        for i in 0..5 {
            for j in 0..=i {
                let expect = if i == j + 1 { b.clone() } else { DMatrix::zeros(2, 1) };
                assert_eq!(st.s_u().block(i, j), &expect);
            }
        }
    }

    #[test]
    fn mismatched_lists_are_rejected() {
        let a = vec![DMatrix::identity(2, 2); 3];
        let b = vec![DMatrix::zeros(2, 1); 2];
        assert!(matches!(TimeVaryingLinearSystem::new(a, b), Err(Error::Dimension(_))));
        let a = vec![DMatrix::identity(2, 2), DMatrix::identity(3, 3)];
        let b = vec![DMatrix::zeros(2, 1); 2];
        assert!(TimeVaryingLinearSystem::new(a, b).is_err());
    }

    #[test]
    fn transposed_products_match_dense() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 1.1]);
        let b = DMatrix::from_row_slice(2, 1, &[0.3, 0.5]);
        let sys = TimeVaryingLinearSystem::time_invariant(5, a, b).unwrap();
        let st = build_stacked(&sys);
        let (sx, su) = dense_oracle(&sys);
        let y = DMatrix::from_fn(12, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        assert!(relative_difference(&(sx.transpose() * &y), &st.apply_sx_transpose_mat(&y)) < 1e-13);
        assert!(relative_difference(&(su.transpose() * &y), &st.apply_su_transpose_mat(&y)) < 1e-13);
        let u = DMatrix::from_fn(6, 2, |i, j| (i as f64 - j as f64) * 0.3);
        assert!(relative_difference(&(&su * &u), &st.apply_su_mat(&u)) < 1e-13);
        let w = DVector::from_fn(12, |i, _| (i as f64).cos());
        assert!((st.apply_sx(&w) - &sx * &w).amax() < 1e-12);
    }

    #[test]
    fn open_loop_response_is_achievable() {
        let sys = TimeVaryingLinearSystem::time_invariant(3, DMatrix::identity(2, 2) * 1.1, DMatrix::identity(2, 1)).unwrap();
        let st = build_stacked(&sys);
        let zero = BlockLowerTriangular::zeros(4, 1, 2);
        assert_eq!(achievability_residual(&st, st.s_x(), &zero).unwrap(), 0.0);
        let mut perturbed = st.s_x().clone();
        perturbed.block_mut(2, 0)[(0, 1)] += 1e-3;
        let r = achievability_residual(&st, &perturbed, &zero).unwrap();
        assert!((r - 1e-3 / perturbed.frobenius_norm().max(1.0)).abs() < 1e-15);
    }

    #[test]
    fn noise_model_mean_blocks() {
        let nm = NoiseModel::uniform(3, DVector::from_vec(vec![1.0, 2.0]), DVector::zeros(2), DVector::from_vec(vec![0.0, 1e-4])).unwrap();
        let mu = nm.mu_w();
        assert_eq!(mu.len(), 8);
        assert_eq!(mu.rows(0, 2).into_owned(), DVector::from_vec(vec![1.0, 2.0]));
        assert!(mu.rows(2, 6).iter().all(|v| *v == 0.0));
        assert!(NoiseModel::uniform(3, DVector::zeros(2), DVector::zeros(2), DVector::from_vec(vec![-1.0, 0.0])).is_err());
    }
}
