//! Dense helpers shared by the solvers: SVD-based minimum-norm least squares,
//! numerical rank and orthonormality checks.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// Relative singular-value cutoff used by every linear solve.
pub const SOLVE_RCOND: f64 = 1e-10;
/// Relative singular-value threshold for rank decisions in identifiability checks.
pub const RANK_RTOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub solution: DVector<f64>,
    pub rank: usize,
    /// Descending; length `min(rows, cols)`.
    pub singular_values: Vec<f64>,
}

/// Minimum-norm least-squares solution of `a x = b`.
///
/// Singular values below `rcond · σ_max` are treated as zero.
pub fn lstsq_min_norm(a: &DMatrix<f64>, b: &DVector<f64>, rcond: f64) -> Result<LeastSquares> {
    check_dim(a.nrows(), b.len())?;
    let cols = a.ncols();
    if a.nrows() == 0 || cols == 0 {
        return Ok(LeastSquares {
            solution: DVector::zeros(cols),
            rank: 0,
            singular_values: Vec::new(),
        });
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().ok_or(Error::Singular)?;
    let v_t = svd.v_t.as_ref().ok_or(Error::Singular)?;
    let sigma = &svd.singular_values;
    let sigma_max = sigma.iter().copied().fold(0.0, f64::max);
    let cutoff = rcond * sigma_max;

    let ut_b = u.transpose() * b;
    let mut scaled = DVector::zeros(sigma.len());
    let mut rank = 0;
    for i in 0..sigma.len() {
        if sigma[i] > cutoff && sigma[i] > 0.0 {
            scaled[i] = ut_b[i] / sigma[i];
            rank += 1;
        }
    }
    let solution = v_t.transpose() * scaled;
    Ok(LeastSquares {
        solution,
        rank,
        singular_values: sorted_desc(sigma),
    })
}

/// Singular values in descending order.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    sorted_desc(&a.clone().svd(false, false).singular_values)
}

/// Number of singular values above `rtol · σ_max`.
pub fn numerical_rank(a: &DMatrix<f64>, rtol: f64) -> usize {
    rank_from_singular_values(&singular_values(a), rtol)
}

pub fn rank_from_singular_values(sv: &[f64], rtol: f64) -> usize {
    let max = sv.first().copied().unwrap_or(0.0);
    if max <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rtol * max).count()
}

/// Smallest singular value of `a` viewed as a map on its `ncols`-dimensional
/// domain; zero when `a` has fewer rows than columns.
pub fn min_singular_on_domain(a: &DMatrix<f64>) -> f64 {
    let sv = singular_values(a);
    if sv.len() < a.ncols() {
        0.0
    } else {
        sv.last().copied().unwrap_or(0.0)
    }
}

/// Largest entrywise deviation of `BᵀB` from the identity.
pub fn orthonormality_defect(b: &DMatrix<f64>) -> f64 {
    let gram = b.transpose() * b;
    let mut worst: f64 = 0.0;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

fn sorted_desc(sigma: &DVector<f64>) -> Vec<f64> {
    let mut out: Vec<f64> = sigma.iter().copied().collect();
    out.sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
    out
}
