//! Small dense helpers shared by the solvers.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// `‖a - b‖_F / max(1, ‖a‖_F)`.
pub fn relative_difference(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / a.norm().max(1.0)
}

pub fn relative_difference_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / a.norm().max(1.0)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Checks symmetry and positive semidefiniteness up to a scale-relative tolerance.
pub fn is_symmetric_psd(m: &DMatrix<f64>) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-9 * scale {
        return false;
    }
    min_eigenvalue(m) >= -1e-9 * scale
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix.
pub fn psd_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let lmax = eig.eigenvalues.amax();
    let cutoff = lmax * 1e-12 * n as f64;
    let mut inv_diag = DVector::zeros(n);
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l > cutoff {
            inv_diag[i] = 1.0 / l;
        }
    }
    &eig.eigenvectors * DMatrix::from_diagonal(&inv_diag) * eig.eigenvectors.transpose()
}

/// Reverses the row order of `m`.
fn reverse_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let r = m.nrows();
    DMatrix::from_fn(r, m.ncols(), |i, j| m[(r - 1 - i, j)])
}

/// Cholesky factor `N = U Uᵀ` with `U` upper triangular.
///
/// Every trailing principal submatrix `N[s.., s..]` factors as `U[s.., s..] U[s.., s..]ᵀ`,
/// so one factorization serves all trailing subproblems. Internally the factor is
/// stored as the ordinary lower Cholesky factor of the index-reversed matrix.
#[derive(Debug, Clone)]
pub struct TrailingCholesky {
    reversed_l: DMatrix<f64>,
}

impl TrailingCholesky {
    pub fn new(n: &DMatrix<f64>) -> Result<Self> {
        let d = n.nrows();
        if n.ncols() != d {
            return Err(Error::Dimension(format!("normal matrix is {}x{}", d, n.ncols())));
        }
        if !all_finite(n) {
            return Err(Error::NonFinite("normal matrix".into()));
        }
        let reversed = DMatrix::from_fn(d, d, |i, j| {
            let a = n[(d - 1 - i, d - 1 - j)];
            let b = n[(d - 1 - j, d - 1 - i)];
            0.5 * (a + b)
        });
        let chol = Cholesky::new(reversed).ok_or_else(|| {
            Error::NotPositiveDefinite("normal matrix SuᵀQSu + R (is R positive definite?)".into())
        })?;
        Ok(Self {
            reversed_l: chol.unpack(),
        })
    }

    pub fn dim(&self) -> usize {
        self.reversed_l.nrows()
    }

    /// Solves `N[start.., start..] y = rhs`.
    pub fn solve_trailing(&self, start: usize, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self.dim() - start;
        assert_eq!(rhs.nrows(), k, "rhs rows must match trailing block size");
        if k == 0 {
            return DMatrix::zeros(0, rhs.ncols());
        }
        let l = self.reversed_l.view((0, 0), (k, k));
        let mut y = reverse_rows(rhs);
        l.solve_lower_triangular_mut(&mut y);
        l.tr_solve_lower_triangular_mut(&mut y);
        reverse_rows(&y)
    }

    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.solve_trailing(0, rhs)
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let m = DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
        DVector::from_column_slice(self.solve(&m).as_slice())
    }
}

/// Concatenates per-step vectors into one stacked vector.
pub fn stack(parts: &[DVector<f64>]) -> DVector<f64> {
    let len = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(len);
    let mut off = 0;
    for p in parts {
        out.rows_mut(off, p.len()).copy_from(p);
        off += p.len();
    }
    out
}

/// Splits a stacked vector into equally sized blocks.
pub fn unstack(v: &DVector<f64>, block: usize) -> Vec<DVector<f64>> {
    assert!(block > 0 && v.len().is_multiple_of(block));
    (0..v.len() / block)
        .map(|i| v.rows(i * block, block).into_owned())
        .collect()
}
