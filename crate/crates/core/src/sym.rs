//! Symmetric matrices stored in packed, isometric coordinates.
//!
//! The packed vector lists the upper triangle row by row. Off-diagonal
//! entries are stored multiplied by `√2`, so the Euclidean dot product of two
//! packed vectors equals the trace inner product `tr(AᵀB)` of the matrices.
//! Every least-squares problem over `Sym(ℝ^d)` then becomes an ordinary
//! vector problem.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_1_SQRT_2, SQRT_2};
use core::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// Number of free parameters of a symmetric `d × d` matrix.
pub const fn packed_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Position of entry `(i, j)`, `i <= j`, in the packed vector.
#[inline]
pub(crate) fn packed_index(dim: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j < dim);
    // rows above `i` hold d, d-1, ..., d-i+1 entries
    i * dim - i * i.saturating_sub(1) / 2 + (j - i)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    packed: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        SymMatrix {
            dim,
            packed: vec![0.0; packed_len(dim)],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut out = Self::zeros(dim);
        for i in 0..dim {
            out.packed[packed_index(dim, i, i)] = 1.0;
        }
        out
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let dim = diag.len();
        let mut out = Self::zeros(dim);
        for (i, &v) in diag.iter().enumerate() {
            out.packed[packed_index(dim, i, i)] = v;
        }
        out
    }

    /// Builds from a square matrix, averaging it with its transpose.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        check_dim(m.nrows(), m.ncols())?;
        let dim = m.nrows();
        let mut packed = Vec::with_capacity(packed_len(dim));
        for i in 0..dim {
            packed.push(m[(i, i)]);
            for j in (i + 1)..dim {
                packed.push(0.5 * (m[(i, j)] + m[(j, i)]) * SQRT_2);
            }
        }
        Ok(SymMatrix { dim, packed })
    }

    /// Row-major `d × d` entries.
    pub fn from_row_major(dim: usize, entries: &[f64]) -> Result<Self> {
        check_dim(dim * dim, entries.len())?;
        Self::from_matrix(&DMatrix::from_row_slice(dim, dim, entries))
    }

    /// Inverse of [`SymMatrix::packed`]; bit-exact round trip.
    pub fn from_packed(dim: usize, packed: Vec<f64>) -> Result<Self> {
        check_dim(packed_len(dim), packed.len())?;
        Ok(SymMatrix { dim, packed })
    }

    /// `xxᵀ - yyᵀ` without materializing either outer product.
    pub fn outer_difference(x: &DVector<f64>, y: &DVector<f64>) -> Result<Self> {
        check_dim(x.len(), y.len())?;
        let dim = x.len();
        let mut packed = Vec::with_capacity(packed_len(dim));
        for i in 0..dim {
            packed.push(x[i] * x[i] - y[i] * y[i]);
            for j in (i + 1)..dim {
                packed.push((x[i] * x[j] - y[i] * y[j]) * SQRT_2);
            }
        }
        Ok(SymMatrix { dim, packed })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Isometric packed coordinates.
    pub fn packed(&self) -> &[f64] {
        &self.packed
    }

    pub fn into_packed(self) -> Vec<f64> {
        self.packed
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let v = self.packed[packed_index(self.dim, i, j)];
        if i == j {
            v
        } else {
            v * FRAC_1_SQRT_2
        }
    }

    /// Dense form; exactly symmetric.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let d = self.dim;
        let mut m = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let v = self.get(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    /// Trace inner product `tr(AB)`.
    pub fn inner(&self, other: &SymMatrix) -> Result<f64> {
        check_dim(self.dim, other.dim)?;
        Ok(dot(&self.packed, &other.packed))
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(dot(&self.packed, &self.packed))
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim)
            .map(|i| self.packed[packed_index(self.dim, i, i)])
            .sum()
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim, x.len())?;
        Ok(self.to_matrix() * x)
    }

    /// `xᵀ A x`.
    pub fn quadratic_form(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        let d = self.dim;
        let mut acc = 0.0;
        for i in 0..d {
            acc += self.packed[packed_index(d, i, i)] * x[i] * x[i];
            for j in (i + 1)..d {
                acc += 2.0 * self.get(i, j) * x[i] * x[j];
            }
        }
        Ok(acc)
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> DVector<f64> {
        if self.dim == 0 {
            return DVector::zeros(0);
        }
        let mut ev = self.to_matrix().symmetric_eigenvalues();
        ev.as_mut_slice()
            .sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.packed.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, s: f64) -> Self {
        SymMatrix {
            dim: self.dim,
            packed: self.packed.iter().map(|v| v * s).collect(),
        }
    }

    /// Frobenius distance `‖A - B‖_F`.
    pub fn distance(&self, other: &SymMatrix) -> Result<f64> {
        check_dim(self.dim, other.dim)?;
        Ok(libm::sqrt(
            self.packed
                .iter()
                .zip(&other.packed)
                .map(|(a, b)| (a - b) * (a - b))
                .sum(),
        ))
    }

    fn zip_with(&self, other: &SymMatrix, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.dim, other.dim, "symmetric matrix dimensions differ");
        SymMatrix {
            dim: self.dim,
            packed: self
                .packed
                .iter()
                .zip(&other.packed)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        }
    }
}

/// Packs `A` into its isometric coordinate vector.
pub fn sym_to_vec(a: &SymMatrix) -> DVector<f64> {
    DVector::from_column_slice(&a.packed)
}

/// Unpacks an isometric coordinate vector of length `d(d+1)/2`.
pub fn vec_to_sym(dim: usize, v: &DVector<f64>) -> Result<SymMatrix> {
    SymMatrix::from_packed(dim, v.as_slice().to_vec())
}

/// Recovers `d` from a packed length, if it is triangular.
pub fn dim_from_packed_len(len: usize) -> Result<usize> {
    let mut d = 0;
    while packed_len(d) < len {
        d += 1;
    }
    if packed_len(d) == len {
        Ok(d)
    } else {
        Err(Error::InvalidParameter("packed length is not triangular"))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl Mul<f64> for &SymMatrix {
    type Output = SymMatrix;
    fn mul(self, rhs: f64) -> SymMatrix {
        self.scaled(rhs)
    }
}

impl Neg for &SymMatrix {
    type Output = SymMatrix;
    fn neg(self) -> SymMatrix {
        self.scaled(-1.0)
    }
}
