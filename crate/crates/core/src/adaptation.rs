//! Offline maps from desired states and controls to the feedforward term.

use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::blt::BlockLowerTriangular;
use crate::cost::{BlockSparseSym, CostSpec, QuadraticCost};
use crate::error::{Error, Result};
use crate::sls::{block_diag_dense, normal_factor, Controller};
use crate::stacked::StackedSystem;

/// Target shift (max-abs, in target units) beyond which an edit to a nonlinear plan is flagged.
pub const DEFAULT_VICINITY_THRESHOLD: f64 = 1e-2;

/// `k = k_ref + F_x (x_d - x_ref) + F_u (u_d - u_ref)`.
///
/// For linear-quadratic problems `k_ref = F_x x_ref + F_u u_ref` and the map is exact.
/// For iSLS controllers the maps act on delta-space targets around the frozen nominal.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationMaps {
    pub f_x: DMatrix<f64>,
    pub f_u: DMatrix<f64>,
    pub x_ref: DVector<f64>,
    pub u_ref: DVector<f64>,
    pub k_ref: DVector<f64>,
    /// SHA-256 of the feedback gain the maps were built for.
    pub gain_fingerprint: String,
    /// True when built around an iterative nominal, where the update is only locally valid.
    pub local: bool,
    pub vicinity_threshold: f64,
}

/// Hex SHA-256 over the little-endian bytes of every stored gain block.
pub fn gain_fingerprint(gain: &BlockLowerTriangular) -> String {
    let mut h = Sha256::new();
    let nb = gain.nblocks();
    h.update((nb as u64).to_le_bytes());
    h.update((gain.row_dim() as u64).to_le_bytes());
    h.update((gain.col_dim() as u64).to_le_bytes());
    for i in 0..nb {
        for j in 0..=i {
            for v in gain.block(i, j).iter() {
                h.update(v.to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

fn maps_from_parts(
    stacked: &StackedSystem,
    normal_q: &BlockSparseSym,
    r: &[DMatrix<f64>],
    task_q: &BlockSparseSym,
    ctrl: &Controller,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let nb = stacked.nblocks();
    let m = stacked.state_dim();
    let n = stacked.input_dim();
    if ctrl.horizon() != stacked.horizon() || ctrl.state_dim() != m || ctrl.input_dim() != n {
        return Err(Error::Dimension("controller does not match the stacked system".into()));
    }
    if normal_q.nblocks() != nb || normal_q.block_dim() != m || task_q.nblocks() != nb || task_q.block_dim() != m {
        return Err(Error::Dimension("state cost does not match the stacked system".into()));
    }
    if r.len() != nb || r.iter().any(|b| b.shape() != (n, n)) {
        return Err(Error::Dimension("control weight does not match the stacked system".into()));
    }
    let factor = normal_factor(stacked, normal_q, r)?;
    let q_dense = task_q.to_dense();
    let su_t_q = stacked.apply_su_transpose_mat(&q_dense);
    let r_dense = block_diag_dense(r);
    let mut rhs = DMatrix::zeros(nb * n, nb * m + nb * n);
    rhs.columns_mut(0, nb * m).copy_from(&su_t_q);
    rhs.columns_mut(nb * m, nb * n).copy_from(&r_dense);
    let solved = factor.solve(&rhs);
    // (I - K S_u) X
    let f = &solved - ctrl.gain().mul_dense(&stacked.apply_su_mat(&solved));
    Ok((f.columns(0, nb * m).into_owned(), f.columns(nb * m, nb * n).into_owned()))
}

/// Maps for a controller solved by eSLS from `(stacked, cost)`.
pub fn precompute_gain_maps(stacked: &StackedSystem, cost: &CostSpec, ctrl: &Controller) -> Result<AdaptationMaps> {
    crate::sls::check_horizon(stacked, cost)?;
    let (f_x, f_u) = maps_from_parts(stacked, cost.q(), cost.r(), cost.q(), ctrl)?;
    Ok(AdaptationMaps {
        f_x,
        f_u,
        x_ref: cost.x_d().clone(),
        u_ref: cost.u_d().clone(),
        k_ref: ctrl.feedforward().clone(),
        gain_fingerprint: gain_fingerprint(ctrl.gain()),
        local: ctrl.nominal().is_some(),
        vicinity_threshold: DEFAULT_VICINITY_THRESHOLD,
    })
}

/// Maps for an iSLS controller.
///
/// `local` is the delta problem at the final nominal, and `task` is the tracking cost whose
/// targets will be edited. The curvature of `local` enters the normal matrix while target
/// edits act through the task precision.
pub fn precompute_gain_maps_local(
    stacked: &StackedSystem,
    local: &QuadraticCost,
    task: &CostSpec,
    ctrl: &Controller,
) -> Result<AdaptationMaps> {
    crate::sls::check_horizon(stacked, task)?;
    let (f_x, f_u) = maps_from_parts(stacked, &local.q_mat, &local.r_blocks, task.q(), ctrl)?;
    Ok(AdaptationMaps {
        f_x,
        f_u,
        x_ref: task.x_d().clone(),
        u_ref: task.u_d().clone(),
        k_ref: ctrl.feedforward().clone(),
        gain_fingerprint: gain_fingerprint(ctrl.gain()),
        local: true,
        vicinity_threshold: DEFAULT_VICINITY_THRESHOLD,
    })
}

impl AdaptationMaps {
    pub fn with_vicinity_threshold(mut self, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0) {
            return Err(Error::validation("adaptation.vicinity_threshold", "must be positive"));
        }
        self.vicinity_threshold = threshold;
        Ok(self)
    }

    pub fn is_bound_to(&self, ctrl: &Controller) -> bool {
        gain_fingerprint(ctrl.gain()) == self.gain_fingerprint
    }

    fn check(&self, x_d: &DVector<f64>, u_d: &DVector<f64>) -> Result<()> {
        if x_d.len() != self.x_ref.len() || u_d.len() != self.u_ref.len() {
            return Err(Error::Dimension(format!(
                "targets have lengths ({}, {}), expected ({}, {})",
                x_d.len(),
                u_d.len(),
                self.x_ref.len(),
                self.u_ref.len()
            )));
        }
        Ok(())
    }

    /// Largest absolute change of any target entry relative to the reference.
    pub fn target_shift(&self, x_d: &DVector<f64>, u_d: &DVector<f64>) -> Result<f64> {
        self.check(x_d, u_d)?;
        Ok((x_d - &self.x_ref).amax().max((u_d - &self.u_ref).amax()))
    }

    /// Whether an edit counts as a significant change for replanning purposes.
    pub fn exceeds_vicinity(&self, x_d: &DVector<f64>, u_d: &DVector<f64>) -> Result<bool> {
        Ok(self.target_shift(x_d, u_d)? > self.vicinity_threshold)
    }
}

/// New feedforward for edited targets; only columns whose target entry changed are touched.
pub fn adapt_feedforward(maps: &AdaptationMaps, x_d_new: &DVector<f64>, u_d_new: &DVector<f64>) -> Result<DVector<f64>> {
    maps.check(x_d_new, u_d_new)?;
    let mut k = maps.k_ref.clone();
    for (j, (new, old)) in x_d_new.iter().zip(maps.x_ref.iter()).enumerate() {
        let d = new - old;
        if d != 0.0 {
            k.axpy(d, &maps.f_x.column(j), 1.0);
        }
    }
    for (j, (new, old)) in u_d_new.iter().zip(maps.u_ref.iter()).enumerate() {
        let d = new - old;
        if d != 0.0 {
            k.axpy(d, &maps.f_u.column(j), 1.0);
        }
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("adapted feedforward".into()));
    }
    Ok(k)
}

/// Feedforward slot that a control loop reads while another thread swaps it.
///
/// Readers take a snapshot of the whole vector, so they never observe a partial update.
#[derive(Debug, Clone)]
pub struct FeedforwardCell {
    inner: Arc<RwLock<Arc<DVector<f64>>>>,
}

impl FeedforwardCell {
    pub fn new(k: DVector<f64>) -> Self {
        Self {
            inner: Arc::new(RwLock::new(Arc::new(k))),
        }
    }

    pub fn load(&self) -> Arc<DVector<f64>> {
        self.inner.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn store(&self, k: DVector<f64>) -> Result<()> {
        let mut slot = self.inner.write().unwrap_or_else(|e| e.into_inner());
        if slot.len() != k.len() {
            return Err(Error::Dimension("feedforward length changed".into()));
        }
        *slot = Arc::new(k);
        Ok(())
    }
}

/// Controller whose feedforward can be replaced while it is in use.
#[derive(Debug, Clone)]
pub struct SharedController {
    controller: Arc<Controller>,
    feedforward: FeedforwardCell,
}

impl SharedController {
    pub fn new(controller: Controller) -> Self {
        let feedforward = FeedforwardCell::new(controller.feedforward().clone());
        Self {
            controller: Arc::new(controller),
            feedforward,
        }
    }

    pub fn cell(&self) -> &FeedforwardCell {
        &self.feedforward
    }

    pub fn control(&self, t: usize, states: &[DVector<f64>]) -> DVector<f64> {
        let k = self.feedforward.load();
        self.controller.control_with(t, states, &k)
    }

    /// Applies an edit through `maps` and publishes the new feedforward.
    pub fn adapt(&self, maps: &AdaptationMaps, x_d_new: &DVector<f64>, u_d_new: &DVector<f64>) -> Result<()> {
        if !maps.is_bound_to(&self.controller) {
            return Err(Error::Precondition("adaptation maps were built for a different gain".into()));
        }
        self.feedforward.store(adapt_feedforward(maps, x_d_new, u_d_new)?)
    }

    /// Snapshot as a plain controller.
    pub fn snapshot(&self) -> Result<Controller> {
        self.controller.with_feedforward((*self.feedforward.load()).clone())
    }
}
