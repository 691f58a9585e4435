//! Block lower-triangular matrices over a time horizon.
//!
//! Blocks `(i, j)` with `i >= j` are stored densely; everything above the block
//! diagonal is a structural zero and cannot be written.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance used when checking that diagonal blocks are identities.
pub const UNIT_DIAGONAL_TOL: f64 = 1e-10;

#[inline]
fn tri(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockLowerTriangular {
    nblocks: usize,
    row_dim: usize,
    col_dim: usize,
    blocks: Vec<DMatrix<f64>>,
}

impl BlockLowerTriangular {
    pub fn zeros(nblocks: usize, row_dim: usize, col_dim: usize) -> Self {
        let count = nblocks * (nblocks + 1) / 2;
        Self {
            nblocks,
            row_dim,
            col_dim,
            blocks: vec![DMatrix::zeros(row_dim, col_dim); count],
        }
    }

    pub fn identity(nblocks: usize, dim: usize) -> Self {
        let mut m = Self::zeros(nblocks, dim, dim);
        for i in 0..nblocks {
            m.blocks[tri(i, i)] = DMatrix::identity(dim, dim);
        }
        m
    }

    /// Number of block rows (and block columns).
    pub fn nblocks(&self) -> usize {
        self.nblocks
    }

    pub fn row_dim(&self) -> usize {
        self.row_dim
    }

    pub fn col_dim(&self) -> usize {
        self.col_dim
    }

    pub fn nrows(&self) -> usize {
        self.nblocks * self.row_dim
    }

    pub fn ncols(&self) -> usize {
        self.nblocks * self.col_dim
    }

    /// Block `(i, j)`; panics if `i < j` or out of range.
    pub fn block(&self, i: usize, j: usize) -> &DMatrix<f64> {
        assert!(j <= i && i < self.nblocks, "block ({i}, {j}) is not in the lower triangle");
        &self.blocks[tri(i, j)]
    }

    pub fn block_mut(&mut self, i: usize, j: usize) -> &mut DMatrix<f64> {
        assert!(j <= i && i < self.nblocks, "block ({i}, {j}) is not in the lower triangle");
        &mut self.blocks[tri(i, j)]
    }

    /// Block `(i, j)`, or `None` for the structural zeros above the diagonal.
    pub fn get(&self, i: usize, j: usize) -> Option<&DMatrix<f64>> {
        (j <= i && i < self.nblocks).then(|| &self.blocks[tri(i, j)])
    }

    pub fn set_block(&mut self, i: usize, j: usize, value: DMatrix<f64>) -> Result<()> {
        if j > i || i >= self.nblocks {
            return Err(Error::Precondition(format!(
                "block ({i}, {j}) lies above the block diagonal or outside the horizon"
            )));
        }
        if value.shape() != (self.row_dim, self.col_dim) {
            return Err(Error::Dimension(format!(
                "block ({i}, {j}) must be {}x{}, got {:?}",
                self.row_dim,
                self.col_dim,
                value.shape()
            )));
        }
        self.blocks[tri(i, j)] = value;
        Ok(())
    }

    /// Builds from a dense matrix, rejecting entries above the block diagonal larger than `tol`.
    pub fn from_dense(
        m: &DMatrix<f64>,
        nblocks: usize,
        row_dim: usize,
        col_dim: usize,
        tol: f64,
    ) -> Result<Self> {
        if m.shape() != (nblocks * row_dim, nblocks * col_dim) {
            return Err(Error::Dimension(format!(
                "dense matrix {:?} does not match {nblocks} blocks of {row_dim}x{col_dim}",
                m.shape()
            )));
        }
        let mut out = Self::zeros(nblocks, row_dim, col_dim);
        for i in 0..nblocks {
            for j in 0..nblocks {
                let b = m.view((i * row_dim, j * col_dim), (row_dim, col_dim));
                if j > i {
                    if b.amax() > tol {
                        return Err(Error::Precondition(format!(
                            "nonzero block ({i}, {j}) above the block diagonal"
                        )));
                    }
                } else {
                    out.blocks[tri(i, j)] = b.into_owned();
                }
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows(), self.ncols());
        for i in 0..self.nblocks {
            for j in 0..=i {
                m.view_mut((i * self.row_dim, j * self.col_dim), (self.row_dim, self.col_dim))
                    .copy_from(&self.blocks[tri(i, j)]);
            }
        }
        m
    }

    /// Stacked nonzero part of block column `j` (block rows `j..`).
    pub fn column_strip(&self, j: usize) -> DMatrix<f64> {
        let rows = (self.nblocks - j) * self.row_dim;
        let mut out = DMatrix::zeros(rows, self.col_dim);
        for i in j..self.nblocks {
            out.view_mut(((i - j) * self.row_dim, 0), (self.row_dim, self.col_dim))
                .copy_from(&self.blocks[tri(i, j)]);
        }
        out
    }

    /// Writes a stacked strip (block rows `j..`) into block column `j`.
    pub fn set_column_strip(&mut self, j: usize, strip: &DMatrix<f64>) -> Result<()> {
        let rows = (self.nblocks - j) * self.row_dim;
        if strip.shape() != (rows, self.col_dim) {
            return Err(Error::Dimension(format!(
                "column strip {j} must be {rows}x{}, got {:?}",
                self.col_dim,
                strip.shape()
            )));
        }
        for i in j..self.nblocks {
            self.blocks[tri(i, j)] = strip
                .view(((i - j) * self.row_dim, 0), (self.row_dim, self.col_dim))
                .into_owned();
        }
        Ok(())
    }

    fn check_conformable(&self, other: &Self) -> Result<()> {
        if self.nblocks != other.nblocks || self.col_dim != other.row_dim {
            return Err(Error::Dimension(format!(
                "cannot multiply {} blocks of {}x{} by {} blocks of {}x{}",
                self.nblocks, self.row_dim, self.col_dim, other.nblocks, other.row_dim, other.col_dim
            )));
        }
        Ok(())
    }

    /// Product of two block lower-triangular matrices.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_conformable(other)?;
        let mut out = Self::zeros(self.nblocks, self.row_dim, other.col_dim);
        for i in 0..self.nblocks {
            for j in 0..=i {
                let acc = &mut out.blocks[tri(i, j)];
                for l in j..=i {
                    acc.gemm(1.0, &self.blocks[tri(i, l)], &other.blocks[tri(l, j)], 1.0);
                }
            }
        }
        Ok(out)
    }

    /// Product with an arbitrary dense matrix of conforming row count.
    pub fn mul_dense(&self, other: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(other.nrows(), self.ncols());
        let mut out = DMatrix::zeros(self.nrows(), other.ncols());
        for i in 0..self.nblocks {
            let mut rows = out.rows_mut(i * self.row_dim, self.row_dim);
            for l in 0..=i {
                rows.gemm(
                    1.0,
                    &self.blocks[tri(i, l)],
                    &other.rows(l * self.col_dim, self.col_dim),
                    1.0,
                );
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        assert_eq!(v.len(), self.ncols());
        let mut out = DVector::zeros(self.nrows());
        for i in 0..self.nblocks {
            let mut rows = out.rows_mut(i * self.row_dim, self.row_dim);
            for l in 0..=i {
                rows.gemv(1.0, &self.blocks[tri(i, l)], &v.rows(l * self.col_dim, self.col_dim), 1.0);
            }
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(&DMatrix<f64>, &DMatrix<f64>) -> DMatrix<f64>) -> Result<Self> {
        if (self.nblocks, self.row_dim, self.col_dim) != (other.nblocks, other.row_dim, other.col_dim) {
            return Err(Error::Dimension("block lower-triangular shapes differ".into()));
        }
        Ok(Self {
            nblocks: self.nblocks,
            row_dim: self.row_dim,
            col_dim: self.col_dim,
            blocks: self.blocks.iter().zip(&other.blocks).map(|(a, b)| f(a, b)).collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Largest deviation of a diagonal block from the identity.
    pub fn unit_diagonal_error(&self) -> f64 {
        if self.row_dim != self.col_dim {
            return f64::INFINITY;
        }
        let eye = DMatrix::<f64>::identity(self.row_dim, self.row_dim);
        (0..self.nblocks)
            .map(|i| (&self.blocks[tri(i, i)] - &eye).amax())
            .fold(0.0, f64::max)
    }

    fn require_unit_diagonal(&self) -> Result<()> {
        let err = self.unit_diagonal_error();
        if err > UNIT_DIAGONAL_TOL {
            return Err(Error::Precondition(format!(
                "diagonal blocks must be identities (max deviation {err:e})"
            )));
        }
        Ok(())
    }

    /// Inverse of a matrix with identity diagonal blocks, by block forward substitution.
    pub fn invert_unit_diagonal(&self) -> Result<Self> {
        self.require_unit_diagonal()?;
        let n = self.nblocks;
        let d = self.row_dim;
        let mut inv = Self::identity(n, d);
        for j in 0..n {
            for i in (j + 1)..n {
                let mut acc = DMatrix::zeros(d, d);
                for l in j..i {
                    acc.gemm(-1.0, &self.blocks[tri(i, l)], &inv.blocks[tri(l, j)], 1.0);
                }
                inv.blocks[tri(i, j)] = acc;
            }
        }
        Ok(inv)
    }

    /// Computes `rhs · self⁻¹` for unit block diagonal `self`, without forming the inverse.
    pub fn solve_right_unit(&self, rhs: &Self) -> Result<Self> {
        self.require_unit_diagonal()?;
        if rhs.nblocks != self.nblocks || rhs.col_dim != self.row_dim {
            return Err(Error::Dimension("right-hand side does not conform".into()));
        }
        let n = self.nblocks;
        let mut x = rhs.clone();
        // X·M = R, processed from the last block column backwards.
        for j in (0..n).rev() {
            for i in j..n {
                let mut acc = rhs.blocks[tri(i, j)].clone();
                for l in (j + 1)..=i {
                    acc.gemm(-1.0, &x.blocks[tri(i, l)], &self.blocks[tri(l, j)], 1.0);
                }
                x.blocks[tri(i, j)] = acc;
            }
        }
        Ok(x)
    }
}

/// Inverse of a block lower-triangular matrix whose diagonal blocks are identities.
pub fn blt_invert_unit_diagonal(m: &BlockLowerTriangular) -> Result<BlockLowerTriangular> {
    m.invert_unit_diagonal()
}
