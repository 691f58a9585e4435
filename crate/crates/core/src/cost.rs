//! Quadratic tracking costs over stacked trajectories.
//!
//! Costs use the form `J = (x - x_d)ᵀ Q (x - x_d) + (u - u_d)ᵀ R (u - u_d)` with no
//! factor of one half. `Q` is block-sparse and symmetric; correlation terms add
//! off-diagonal blocks.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{is_symmetric_psd, min_eigenvalue, psd_pinv, symmetrize};

/// Block-sparse symmetric matrix over `nblocks` blocks of size `dim`.
///
/// Only blocks with `i >= j` are stored; `(j, i)` is the transpose of `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSparseSym {
    nblocks: usize,
    dim: usize,
    blocks: BTreeMap<(usize, usize), DMatrix<f64>>,
}

impl BlockSparseSym {
    pub fn zeros(nblocks: usize, dim: usize) -> Self {
        Self {
            nblocks,
            dim,
            blocks: BTreeMap::new(),
        }
    }

    pub fn nblocks(&self) -> usize {
        self.nblocks
    }

    pub fn block_dim(&self) -> usize {
        self.dim
    }

    pub fn size(&self) -> usize {
        self.nblocks * self.dim
    }

    /// Stored lower blocks, keyed `(i, j)` with `i >= j`.
    pub fn stored_blocks(&self) -> impl Iterator<Item = (&(usize, usize), &DMatrix<f64>)> {
        self.blocks.iter()
    }

    /// Adds `value` to block `(i, j)` and its transpose to `(j, i)`.
    pub fn add_block(&mut self, i: usize, j: usize, value: &DMatrix<f64>) -> Result<()> {
        if i >= self.nblocks || j >= self.nblocks {
            return Err(Error::Dimension(format!("block ({i}, {j}) outside {} blocks", self.nblocks)));
        }
        if value.shape() != (self.dim, self.dim) {
            return Err(Error::Dimension(format!(
                "block is {:?}, expected {}x{}",
                value.shape(),
                self.dim,
                self.dim
            )));
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("cost block ({i}, {j})")));
        }
        let (key, add) = if i == j {
            ((i, i), symmetrize(value))
        } else if i > j {
            ((i, j), value.clone())
        } else {
            ((j, i), value.transpose())
        };
        let dim = self.dim;
        *self.blocks.entry(key).or_insert_with(|| DMatrix::zeros(dim, dim)) += add;
        Ok(())
    }

    /// Block `(i, j)`, or `None` if structurally zero.
    pub fn block(&self, i: usize, j: usize) -> Option<DMatrix<f64>> {
        if i >= j {
            self.blocks.get(&(i, j)).cloned()
        } else {
            self.blocks.get(&(j, i)).map(|b| b.transpose())
        }
    }

    pub fn diagonal_block(&self, t: usize) -> DMatrix<f64> {
        self.blocks
            .get(&(t, t))
            .cloned()
            .unwrap_or_else(|| DMatrix::zeros(self.dim, self.dim))
    }

    pub fn is_block_diagonal(&self) -> bool {
        self.blocks.keys().all(|(i, j)| i == j)
    }

    /// Off-diagonal keys `(i, j)` with `i > j`.
    pub fn off_diagonal_keys(&self) -> Vec<(usize, usize)> {
        self.blocks.keys().filter(|(i, j)| i != j).cloned().collect()
    }

    /// Block indices `t` touched by any stored block.
    pub fn active_blocks(&self) -> Vec<usize> {
        let mut set = std::collections::BTreeSet::new();
        for &(i, j) in self.blocks.keys() {
            set.insert(i);
            set.insert(j);
        }
        set.into_iter().collect()
    }

    pub fn diagonal_projection(&self) -> Self {
        Self {
            nblocks: self.nblocks,
            dim: self.dim,
            blocks: self
                .blocks
                .iter()
                .filter(|((i, j), _)| i == j)
                .map(|(k, v)| (*k, v.clone()))
                .collect(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = self.dim;
        let mut out = DMatrix::zeros(self.size(), self.size());
        for (&(i, j), b) in &self.blocks {
            out.view_mut((i * d, j * d), (d, d)).copy_from(b);
            if i != j {
                out.view_mut((j * d, i * d), (d, d)).copy_from(&b.transpose());
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = self.dim;
        assert_eq!(x.len(), self.size());
        let mut out = DVector::zeros(self.size());
        for (&(i, j), b) in &self.blocks {
            out.rows_mut(i * d, d).gemv(1.0, b, &x.rows(j * d, d), 1.0);
            if i != j {
                out.rows_mut(j * d, d).gemv_tr(1.0, b, &x.rows(i * d, d), 1.0);
            }
        }
        out
    }

    /// `Q X` for a dense `X` with `size()` rows.
    pub fn mul_mat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.dim;
        assert_eq!(x.nrows(), self.size());
        let mut out = DMatrix::zeros(self.size(), x.ncols());
        for (&(i, j), b) in &self.blocks {
            out.rows_mut(i * d, d).gemm(1.0, b, &x.rows(j * d, d), 1.0);
            if i != j {
                out.rows_mut(j * d, d).gemm_tr(1.0, b, &x.rows(i * d, d), 1.0);
            }
        }
        out
    }

    /// `xᵀ Q x` computed blockwise.
    pub fn quadratic_form(&self, x: &DVector<f64>) -> f64 {
        let d = self.dim;
        let mut total = 0.0;
        for (&(i, j), b) in &self.blocks {
            let xi = x.rows(i * d, d);
            let xj = x.rows(j * d, d);
            let v = xi.dot(&(b * xj));
            total += if i == j { v } else { 2.0 * v };
        }
        total
    }
}

/// A tracking cost with its stacked targets.
///
/// `term_constant` accumulates the constants dropped when target terms are
/// folded into `(x - x_d)ᵀ Q (x - x_d)`, so the cost of the task as written can be
/// recovered with [`evaluate_task_cost`].
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    horizon: usize,
    state_dim: usize,
    input_dim: usize,
    q: BlockSparseSym,
    r: Vec<DMatrix<f64>>,
    x_d: DVector<f64>,
    u_d: DVector<f64>,
    q_lin: DVector<f64>,
    term_constant: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Viapoint {
    pub t: usize,
    pub target: DVector<f64>,
    pub weight: DMatrix<f64>,
}

impl Viapoint {
    pub fn new(t: usize, target: DVector<f64>, weight: DMatrix<f64>) -> Self {
        Self { t, target, weight }
    }
}

/// Penalizes `(C x_{t1} + c - x_{t2})ᵀ Q_c (C x_{t1} + c - x_{t2})`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSpec {
    pub t1: usize,
    pub t2: usize,
    pub coeff: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub weight: DMatrix<f64>,
}

impl CorrelationSpec {
    pub fn new(t1: usize, t2: usize, coeff: DMatrix<f64>, offset: DVector<f64>, weight: DMatrix<f64>) -> Self {
        Self {
            t1,
            t2,
            coeff,
            offset,
            weight,
        }
    }

    /// Direct evaluation of the correlation penalty.
    pub fn evaluate(&self, x_t1: &DVector<f64>, x_t2: &DVector<f64>) -> f64 {
        let e = &self.coeff * x_t1 + &self.offset - x_t2;
        e.dot(&(&self.weight * &e))
    }

    fn validate(&self, horizon: usize, m: usize) -> Result<()> {
        if self.t1 >= self.t2 {
            return Err(Error::validation("correlation.t1", format!("t1={} must be < t2={}", self.t1, self.t2)));
        }
        if self.t2 > horizon {
            return Err(Error::validation("correlation.t2", format!("t2={} exceeds horizon {horizon}", self.t2)));
        }
        if self.coeff.shape() != (m, m) || self.weight.shape() != (m, m) || self.offset.len() != m {
            return Err(Error::Dimension(format!("correlation terms must be {m}-dimensional")));
        }
        if !is_symmetric_psd(&self.weight) {
            return Err(Error::validation("correlation.weight", "must be symmetric positive semidefinite"));
        }
        Ok(())
    }
}

/// Linear-term form of a cost: `xᵀ Q x - 2 qᵀ x + uᵀ R u - 2 rᵀ u`.
#[derive(Debug, Clone)]
pub struct QuadraticCost {
    pub q_mat: BlockSparseSym,
    pub r_blocks: Vec<DMatrix<f64>>,
    pub q_lin: DVector<f64>,
    pub r_lin: DVector<f64>,
}

impl QuadraticCost {
    pub fn horizon(&self) -> usize {
        self.r_blocks.len() - 1
    }

    pub fn state_dim(&self) -> usize {
        self.q_mat.block_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.r_blocks[0].nrows()
    }

    pub fn r_mul_vec(&self, u: &DVector<f64>) -> DVector<f64> {
        block_diag_mul(&self.r_blocks, u)
    }
}

pub(crate) fn block_diag_mul(blocks: &[DMatrix<f64>], v: &DVector<f64>) -> DVector<f64> {
    let n = blocks[0].nrows();
    let mut out = DVector::zeros(v.len());
    for (t, b) in blocks.iter().enumerate() {
        out.rows_mut(t * n, n).gemv(1.0, b, &v.rows(t * n, n), 0.0);
    }
    out
}

fn check_control_weights(r: &[DMatrix<f64>], n: usize) -> Result<()> {
    for (t, rt) in r.iter().enumerate() {
        if rt.shape() != (n, n) {
            return Err(Error::Dimension(format!("R[{t}] is {:?}, expected {n}x{n}", rt.shape())));
        }
        if rt.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("R[{t}]")));
        }
        let scale = rt.amax().max(1e-300);
        if (rt - rt.transpose()).amax() > 1e-12 * scale {
            return Err(Error::validation("control_weight", format!("R[{t}] is not symmetric")));
        }
        if min_eigenvalue(rt) <= 0.0 {
            return Err(Error::validation("control_weight", format!("R[{t}] is not positive definite")));
        }
    }
    Ok(())
}

impl CostSpec {
    /// Zero state cost with per-step control weights `r` (length `T + 1`).
    pub fn new(horizon: usize, state_dim: usize, r: Vec<DMatrix<f64>>) -> Result<Self> {
        if r.len() != horizon + 1 {
            return Err(Error::Dimension(format!("{} control weights for horizon {horizon}", r.len())));
        }
        let n = r.first().map(|b| b.nrows()).unwrap_or(0);
        if n == 0 || state_dim == 0 {
            return Err(Error::Dimension("dimensions must be positive".into()));
        }
        check_control_weights(&r, n)?;
        Ok(Self {
            horizon,
            state_dim,
            input_dim: n,
            q: BlockSparseSym::zeros(horizon + 1, state_dim),
            r,
            x_d: DVector::zeros((horizon + 1) * state_dim),
            u_d: DVector::zeros((horizon + 1) * n),
            q_lin: DVector::zeros((horizon + 1) * state_dim),
            term_constant: 0.0,
        })
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

    pub fn q(&self) -> &BlockSparseSym {
        &self.q
    }

    pub fn r(&self) -> &[DMatrix<f64>] {
        &self.r
    }

    pub fn x_d(&self) -> &DVector<f64> {
        &self.x_d
    }

    pub fn u_d(&self) -> &DVector<f64> {
        &self.u_d
    }

    /// Difference between the task cost and the shifted quadratic.
    pub fn constant_offset(&self) -> f64 {
        self.term_constant - self.q.quadratic_form(&self.x_d)
    }

    /// Replaces the targets; `Q` and `R` are unchanged.
    pub fn with_targets(&self, x_d: DVector<f64>, u_d: DVector<f64>) -> Result<Self> {
        if x_d.len() != self.x_d.len() || u_d.len() != self.u_d.len() {
            return Err(Error::Dimension("target lengths do not match the cost".into()));
        }
        let mut out = self.clone();
        // Keep the task-cost offset attached to the new targets.
        out.term_constant = self.constant_offset() + self.q.quadratic_form(&x_d);
        out.q_lin = self.q.mul_vec(&x_d);
        out.x_d = x_d;
        out.u_d = u_d;
        Ok(out)
    }

    pub fn x_d_block(&self, t: usize) -> DVector<f64> {
        self.x_d.rows(t * self.state_dim, self.state_dim).into_owned()
    }

    /// `q` in `xᵀ Q x - 2 qᵀ x`; equals `Q x_d`.
    pub fn linear_term(&self) -> DVector<f64> {
        self.q_lin.clone()
    }

    pub fn quadratic(&self) -> QuadraticCost {
        QuadraticCost {
            q_mat: self.q.clone(),
            r_blocks: self.r.clone(),
            q_lin: self.linear_term(),
            r_lin: block_diag_mul(&self.r, &self.u_d),
        }
    }

    /// Adds `(x_t - g)ᵀ W (x_t - g)` to the cost.
    pub fn add_state_target(&mut self, t: usize, target: &DVector<f64>, weight: &DMatrix<f64>) -> Result<()> {
        let m = self.state_dim;
        if t > self.horizon {
            return Err(Error::validation("viapoints.t", format!("t={t} outside [0, {}]", self.horizon)));
        }
        if target.len() != m || weight.shape() != (m, m) {
            return Err(Error::Dimension(format!("state target at t={t} must be {m}-dimensional")));
        }
        if !is_symmetric_psd(weight) {
            return Err(Error::validation("viapoints.weight", format!("weight at t={t} is not symmetric PSD")));
        }
        let fresh = !self.q.active_blocks().contains(&t);
        let mut q_new = self.q_lin.clone();
        q_new.rows_mut(t * m, m).gemv(1.0, weight, target, 1.0);
        self.q.add_block(t, t, weight)?;
        self.term_constant += target.dot(&(weight * target));
        if fresh {
            self.x_d.rows_mut(t * m, m).copy_from(target);
            self.q_lin = q_new;
            return Ok(());
        }
        self.refit_targets(t, &q_new)
    }

    /// Chooses `x_d` so that `Q x_d` equals the linear term `q_new`.
    ///
    /// Only block `t` is adjusted when that suffices; otherwise the minimum-norm
    /// solution over the active blocks is used.
    fn refit_targets(&mut self, t: usize, q_new: &DVector<f64>) -> Result<()> {
        let m = self.state_dim;
        let rho = q_new - self.q.mul_vec(&self.x_d);
        let scale = q_new.amax().max(self.q.mul_vec(&self.x_d).amax()).max(1.0);
        if rho.amax() <= 1e-12 * scale {
            self.q_lin = q_new.clone();
            return Ok(());
        }
        let rows: Vec<usize> = (0..=self.horizon).filter(|&s| self.q.block(s, t).is_some()).collect();
        if !rows.is_empty() {
            let g = DMatrix::from_fn(rows.len() * m, m, |r, c| {
                self.q.block(rows[r / m], t).map(|b| b[(r % m, c)]).unwrap_or(0.0)
            });
            let rhs = DVector::from_fn(rows.len() * m, |r, _| rho[rows[r / m] * m + r % m]);
            let gtg = g.transpose() * &g;
            let delta = psd_pinv(&gtg) * (g.transpose() * &rhs);
            let mut trial = self.x_d.clone();
            let mut blk = trial.rows_mut(t * m, m);
            blk += &delta;
            let resid = (q_new - self.q.mul_vec(&trial)).amax();
            if resid <= 1e-9 * scale {
                self.x_d = trial;
                self.q_lin = q_new.clone();
                return Ok(());
            }
        }
        let active = self.q.active_blocks();
        let idx: Vec<usize> = active.iter().flat_map(|&s| (s * m)..(s * m + m)).collect();
        let dense = self.q.to_dense();
        let q_sub = DMatrix::from_fn(idx.len(), idx.len(), |a, b| dense[(idx[a], idx[b])]);
        let rhs = DVector::from_fn(idx.len(), |a, _| q_new[idx[a]]);
        let sol = psd_pinv(&q_sub) * rhs;
        let mut trial = self.x_d.clone();
        for (a, &r) in idx.iter().enumerate() {
            trial[r] = sol[a];
        }
        let resid = (q_new - self.q.mul_vec(&trial)).amax();
        if resid > 1e-6 * scale {
            return Err(Error::InvalidCost(format!(
                "linear term is not in the range of Q after update at t={t} (residual {resid:e})"
            )));
        }
        self.x_d = trial;
        self.q_lin = q_new.clone();
        Ok(())
    }

    pub fn set_control_target(&mut self, t: usize, target: &DVector<f64>) -> Result<()> {
        let n = self.input_dim;
        if t > self.horizon || target.len() != n {
            return Err(Error::Dimension(format!("control target at t={t}")));
        }
        self.u_d.rows_mut(t * n, n).copy_from(target);
        Ok(())
    }

    /// Dense `Q` for small instances.
    pub fn q_dense(&self) -> DMatrix<f64> {
        self.q.to_dense()
    }

    /// Same targets with correlation blocks dropped.
    pub fn diagonal_projection(&self) -> Self {
        let mut out = self.clone();
        out.q = self.q.diagonal_projection();
        out.q_lin = out.q.mul_vec(&self.x_d);
        out.term_constant = self.constant_offset() + out.q.quadratic_form(&self.x_d);
        out
    }

    /// Stacked per-step targets as a list.
    pub fn x_d_blocks(&self) -> Vec<DVector<f64>> {
        (0..=self.horizon).map(|t| self.x_d_block(t)).collect()
    }
}

/// Builds a cost from viapoints and per-step control weights.
///
/// Two viapoints at the same step merge into one weighted target; they must not
/// disagree on any direction both of them weight.
pub fn build_viapoint_cost(horizon: usize, viapoints: &[Viapoint], control_weight: Vec<DMatrix<f64>>) -> Result<CostSpec> {
    let m = match viapoints.first() {
        Some(v) => v.target.len(),
        None => {
            return Err(Error::validation("viapoints", "state dimension cannot be inferred from an empty list; use CostSpec::new"));
        }
    };
    build_viapoint_cost_with_dim(horizon, m, viapoints, control_weight)
}

pub fn build_viapoint_cost_with_dim(
    horizon: usize,
    state_dim: usize,
    viapoints: &[Viapoint],
    control_weight: Vec<DMatrix<f64>>,
) -> Result<CostSpec> {
    let mut by_t: BTreeMap<usize, Vec<&Viapoint>> = BTreeMap::new();
    for v in viapoints {
        if v.t > horizon {
            return Err(Error::validation("viapoints.t", format!("t={} outside [0, {horizon}]", v.t)));
        }
        if v.target.len() != state_dim || v.weight.shape() != (state_dim, state_dim) {
            return Err(Error::Dimension(format!("viapoint at t={} must be {state_dim}-dimensional", v.t)));
        }
        if !is_symmetric_psd(&v.weight) {
            return Err(Error::validation("viapoints.weight", format!("weight at t={} is not symmetric PSD", v.t)));
        }
        by_t.entry(v.t).or_default().push(v);
    }
    let mut cost = CostSpec::new(horizon, state_dim, control_weight)?;
    for (t, group) in by_t {
        let mut w = DMatrix::zeros(state_dim, state_dim);
        let mut wg = DVector::zeros(state_dim);
        for v in &group {
            w += &v.weight;
            wg += &v.weight * &v.target;
        }
        if group.len() == 1 {
            cost.add_state_target(t, &group[0].target, &group[0].weight)?;
            continue;
        }
        let g = psd_pinv(&w) * &wg;
        for v in &group {
            let disagreement = &v.weight * (&g - &v.target);
            let scale = (&v.weight * &v.target).amax().max(v.weight.amax()).max(1.0);
            if disagreement.amax() > 1e-9 * scale {
                return Err(Error::InvalidCost(format!("conflicting viapoint targets at t={t}")));
            }
        }
        // Constant is exact for consistent duplicates: Σ gᵢᵀWᵢgᵢ = gᵀWg.
        cost.add_state_target(t, &g, &w)?;
    }
    Ok(cost)
}

/// Adds a cross-time correlation term to the cost.
pub fn add_correlation(cost: &CostSpec, corr: &CorrelationSpec) -> Result<CostSpec> {
    let m = cost.state_dim;
    corr.validate(cost.horizon, m)?;
    let mut out = cost.clone();
    let c = &corr.coeff;
    let qc = symmetrize(&corr.weight);
    let ctqc = c.transpose() * &qc;
    let q_old = cost.q_lin.clone();
    out.q.add_block(corr.t1, corr.t1, &(&ctqc * c))?;
    out.q.add_block(corr.t2, corr.t2, &qc)?;
    out.q.add_block(corr.t1, corr.t2, &(-&ctqc))?;
    // Expanding with the shifted variable x_{t2} - c gives the linear terms below.
    let mut q_new = q_old;
    q_new.rows_mut(corr.t1 * m, m).gemv(-1.0, &ctqc, &corr.offset, 1.0);
    q_new.rows_mut(corr.t2 * m, m).gemv(1.0, &qc, &corr.offset, 1.0);
    out.term_constant += corr.offset.dot(&(&qc * &corr.offset));
    out.refit_targets(corr.t2, &q_new)?;
    Ok(out)
}

fn check_trajectory_dims(cost: &CostSpec, x: &DVector<f64>, u: &DVector<f64>) -> Result<()> {
    if x.len() != cost.x_d.len() || u.len() != cost.u_d.len() {
        return Err(Error::Dimension(format!(
            "trajectory lengths ({}, {}) do not match cost ({}, {})",
            x.len(),
            u.len(),
            cost.x_d.len(),
            cost.u_d.len()
        )));
    }
    Ok(())
}

/// `(x - x_d)ᵀ Q (x - x_d) + (u - u_d)ᵀ R (u - u_d)`.
pub fn evaluate_trajectory_cost(cost: &CostSpec, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
    check_trajectory_dims(cost, x, u)?;
    let ex = x - &cost.x_d;
    let eu = u - &cost.u_d;
    let n = cost.input_dim;
    let mut ju = 0.0;
    for (t, r) in cost.r.iter().enumerate() {
        let e = eu.rows(t * n, n);
        ju += e.dot(&(r * e));
    }
    Ok(cost.q.quadratic_form(&ex) + ju)
}

/// Cost of the task as specified, including constants dropped from the shifted form.
pub fn evaluate_task_cost(cost: &CostSpec, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
    check_trajectory_dims(cost, x, u)?;
    let eu = u - &cost.u_d;
    let n = cost.input_dim;
    let ju: f64 = cost
        .r
        .iter()
        .enumerate()
        .map(|(t, r)| {
            let e = eu.rows(t * n, n);
            e.dot(&(r * e))
        })
        .sum();
    Ok(cost.q.quadratic_form(x) - 2.0 * cost.q_lin.dot(x) + cost.term_constant + ju)
}

/// Scalar state cost `c_t(x_t)` with derivatives.
///
/// Derivatives default to central finite differences.
pub trait StateCostFunction: Send + Sync {
    fn state_dim(&self) -> usize;

    fn evaluate(&self, t: usize, x: &DVector<f64>) -> f64;

    fn gradient(&self, t: usize, x: &DVector<f64>) -> DVector<f64> {
        let m = x.len();
        DVector::from_fn(m, |i, _| {
            let h = 1e-6 * x[i].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            (self.evaluate(t, &xp) - self.evaluate(t, &xm)) / (2.0 * h)
        })
    }

    fn hessian(&self, t: usize, x: &DVector<f64>) -> DMatrix<f64> {
        let m = x.len();
        let mut h = DMatrix::zeros(m, m);
        for j in 0..m {
            let step = 1e-4 * x[j].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += step;
            xm[j] -= step;
            let col = (self.gradient(t, &xp) - self.gradient(t, &xm)) / (2.0 * step);
            h.set_column(j, &col);
        }
        symmetrize(&h)
    }
}

pub const DEFAULT_REGULARIZATION: f64 = 1e-6;

/// Second-order model of `f` at `x_hat`: returns `(C_xx, x_d_local)`.
///
/// `f(x_hat + δ) ≈ f(x_hat) + gᵀδ + ½ δᵀ C_xx δ` and `x_d_local = -C_xx⁻¹ g`.
pub fn quadratize_state_cost(
    f: &dyn StateCostFunction,
    t: usize,
    x_hat: &DVector<f64>,
    regularization: f64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if !(regularization >= 0.0 && regularization.is_finite()) {
        return Err(Error::validation("regularization", "must be finite and nonnegative"));
    }
    let m = x_hat.len();
    let g = f.gradient(t, x_hat);
    let h = f.hessian(t, x_hat);
    if g.iter().chain(h.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("state-cost derivatives at t={t}")));
    }
    let c = symmetrize(&h) + DMatrix::identity(m, m) * regularization;
    let chol = Cholesky::new(c.clone()).ok_or(Error::SingularCurvature { t, regularization })?;
    let x_local = -chol.solve(&g);
    Ok((c, x_local))
}

/// Squared hinge `(max(lo - θ, 0) + max(θ - hi, 0))²` per joint.
pub fn joint_limit_violation(theta: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> Result<DVector<f64>> {
    check_limits(theta, lower, upper)?;
    Ok(DVector::from_fn(theta.len(), |i, _| {
        let h = hinge(theta[i], lower[i], upper[i]);
        h * h
    }))
}

/// Elementwise derivative of [`joint_limit_violation`]; zero at the boundaries.
pub fn joint_limit_violation_derivative(
    theta: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_limits(theta, lower, upper)?;
    Ok(DVector::from_fn(theta.len(), |i, _| {
        if theta[i] > upper[i] {
            2.0 * (theta[i] - upper[i])
        } else if theta[i] < lower[i] {
            -2.0 * (lower[i] - theta[i])
        } else {
            0.0
        }
    }))
}

fn hinge(theta: f64, lo: f64, hi: f64) -> f64 {
    (lo - theta).max(0.0) + (theta - hi).max(0.0)
}

fn check_limits(theta: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> Result<()> {
    if theta.len() != lower.len() || theta.len() != upper.len() {
        return Err(Error::Dimension("joint limit vectors must match θ".into()));
    }
    if let Some(i) = (0..theta.len()).find(|&i| lower[i] > upper[i]) {
        return Err(Error::validation(
            "theta_bounds",
            format!("lower bound {} exceeds upper bound {} at joint {i}", lower[i], upper[i]),
        ));
    }
    Ok(())
}

/// `E‖A x + a‖²_Q` for `x ~ N(μ, Σ)`.
pub fn expected_weighted_norm(
    a_mat: &DMatrix<f64>,
    a: &DVector<f64>,
    q: &DMatrix<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> f64 {
    let mean = a_mat * mu + a;
    (a_mat * sigma * a_mat.transpose() * q).trace() + mean.dot(&(q * &mean))
}

/// `E[(A x + a)ᵀ (B x + b)]` for `x ~ N(μ, Σ)`.
pub fn expected_inner_product(
    a_mat: &DMatrix<f64>,
    a: &DVector<f64>,
    b_mat: &DMatrix<f64>,
    b: &DVector<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> f64 {
    (a_mat * sigma * b_mat.transpose()).trace() + (a_mat * mu + a).dot(&(b_mat * mu + b))
}
