//! Exact recovery from real-valued comparisons: single- and multi-user
//! linear solves, subspace reduction, restriction stitching, the
//! shared-pairs design that makes a subspace identifiable, and a witness
//! construction showing that `m ≤ d` generic comparisons per user cannot
//! pin down the metric.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{lstsq_min_norm, SOLVE_RCOND};
use crate::model::{design_apply, ComparisonGraph, FeatureElement, UnquantizedMeasurement};
use crate::subspace::{
    build_pi, canonical_feature, check_generic_pairwise, Subspace, SubspaceMetric,
};
use crate::sym::{packed_len, vec_to_sym, SymMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystemSolution {
    pub metric: SymMatrix,
    pub pseudo_points: Vec<DVector<f64>>,
    /// `‖ψ - D(Â, ŵ)‖₂` over all users.
    pub residual_norm: f64,
    pub rank: usize,
    /// Whether the stacked system has full column rank over `(A, w_1, …, w_K)`.
    pub unique: bool,
}

pub fn solve_single_user(measurements: &[UnquantizedMeasurement]) -> Result<LinearSystemSolution> {
    if measurements.is_empty() {
        return Err(Error::Empty("measurements"));
    }
    solve_multi_user(core::slice::from_ref(&measurements.to_vec()))
}

/// Minimum-norm least squares over the block system with shared `A` and
/// per-user `w_k`; columns are `[vec(A) | w_1 | … | w_K]`.
pub fn solve_multi_user(per_user: &[Vec<UnquantizedMeasurement>]) -> Result<LinearSystemSolution> {
    if per_user.is_empty() {
        return Err(Error::Empty("user list"));
    }
    let d = per_user
        .iter()
        .flat_map(|u| u.first())
        .map(|m| m.dim())
        .next()
        .ok_or(Error::Empty("measurements"))?;
    let k = per_user.len();
    let p = packed_len(d);
    let cols = p + k * d;
    let n: usize = per_user.iter().map(Vec::len).sum();

    let mut x = DMatrix::zeros(n, cols);
    let mut psi = DVector::zeros(n);
    let mut row = 0;
    for (user, ms) in per_user.iter().enumerate() {
        for m in ms {
            check_dim(d, m.dim())?;
            let f = m.feature()?;
            x.view_mut((row, 0), (1, p))
                .copy_from_slice(f.delta_mat.packed());
            x.view_mut((row, p + user * d), (1, d))
                .copy_from(&f.delta_vec.transpose());
            psi[row] = m.response;
            row += 1;
        }
    }

    let ls = lstsq_min_norm(&x, &psi, SOLVE_RCOND)?;
    let residual_norm = (&x * &ls.solution - &psi).norm();
    let metric = vec_to_sym(d, &ls.solution.rows(0, p).into_owned())?;
    let pseudo_points = (0..k)
        .map(|user| ls.solution.rows(p + user * d, d).into_owned())
        .collect();
    Ok(LinearSystemSolution {
        metric,
        pseudo_points,
        residual_norm,
        rank: ls.rank,
        unique: ls.rank == cols,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceSolution {
    pub metric: SubspaceMetric,
    /// Solution in canonical coordinates; `pseudo_points` live in `ℝ^r`.
    pub solution: LinearSystemSolution,
}

/// Solves in the canonical coordinates of `v`. Ideal points may lie outside `v`.
pub fn solve_subspace_unquantized(
    v: &Subspace,
    per_user: &[Vec<UnquantizedMeasurement>],
) -> Result<SubspaceSolution> {
    let reduced = v.canonicalize_measurements(per_user)?;
    let solution = solve_multi_user(&reduced)?;
    Ok(SubspaceSolution {
        metric: SubspaceMetric::new(v.clone(), solution.metric.clone())?,
        solution,
    })
}

/// Index-pair designs for `K = r(r+1)/2` users of `r + 1` comparisons each.
///
/// Picks `r` pairs with independent differences, extends them to
/// `r(r+1)/2 + r` pairs with independent features, then gives every user the
/// first `r` pairs plus one of the remaining ones.
pub fn shared_pair_designs(
    items: &[DVector<f64>],
    v: &Subspace,
) -> Result<Vec<Vec<(usize, usize)>>> {
    let r = v.dim();
    let p = packed_len(r);
    let required = p + r;
    let coords = v.canonicalize_all(items)?;

    let mut candidates = Vec::new();
    for i in 0..coords.len() {
        for j in i + 1..coords.len() {
            candidates.push((i, j));
        }
    }

    let mut diff_basis = IndependentSet::new(r);
    let mut chosen = Vec::new();
    for &(i, j) in &candidates {
        if chosen.len() == r {
            break;
        }
        if diff_basis.try_insert(&coords[i] - &coords[j]) {
            chosen.push((i, j));
        }
    }
    let mut feature_basis = IndependentSet::new(required);
    for &(i, j) in &chosen {
        feature_basis.try_insert(canonical_feature(&coords[i], &coords[j]));
    }
    for &(i, j) in &candidates {
        if chosen.len() == required {
            break;
        }
        if chosen.contains(&(i, j)) {
            continue;
        }
        if feature_basis.try_insert(canonical_feature(&coords[i], &coords[j])) {
            chosen.push((i, j));
        }
    }
    if chosen.len() < required || feature_basis.len() < required {
        return Err(Error::NotSpanning {
            rank: feature_basis.len(),
            required,
        });
    }
    Ok((0..p)
        .map(|k| {
            let mut design = chosen[..r].to_vec();
            design.push(chosen[r + k]);
            design
        })
        .collect())
}

/// Incremental linear-independence test by twice-applied Gram-Schmidt.
struct IndependentSet {
    basis: Vec<DVector<f64>>,
    capacity: usize,
}

impl IndependentSet {
    fn new(capacity: usize) -> Self {
        IndependentSet {
            basis: Vec::new(),
            capacity,
        }
    }

    fn len(&self) -> usize {
        self.basis.len()
    }

    fn try_insert(&mut self, v: DVector<f64>) -> bool {
        let norm = v.norm();
        if norm == 0.0 || self.basis.len() == self.capacity {
            return false;
        }
        let mut residual = v;
        for _ in 0..2 {
            for q in &self.basis {
                let c = q.dot(&residual);
                residual.axpy(-c, q, 1.0);
            }
        }
        let rn = residual.norm();
        if rn <= 1e-9 * norm {
            return false;
        }
        self.basis.push(residual / rn);
        true
    }
}

/// The unique `A` with `B_λᵀAB_λ = Q_λ` for all `λ`, in the least-squares sense.
pub fn stitch_exact(estimates: &[SubspaceMetric]) -> Result<SymMatrix> {
    let subspaces: Vec<Subspace> = estimates.iter().map(|e| e.subspace.clone()).collect();
    let pi = build_pi(&subspaces)?;
    if !pi.is_injective() {
        return Err(Error::Underdetermined {
            rank: pi.rank(),
            required: pi.domain_dim(),
        });
    }
    let (a, _) = pi.solve(&pi.stack(estimates)?)?;
    Ok(a)
}

/// For each user, alternative pseudo-points `v'_k` with `D_k(M, v_k) = D_k(M', v'_k)`.
///
/// `v'_k = v_k + c_k` where `c_k` is the minimum-norm solution of
/// `⟨δ_i, c⟩ = ⟨Δ_i, M - M'⟩`, so `M' = M` returns `v_k` unchanged.
pub fn impossibility_witness(
    m: &SymMatrix,
    m_alt: &SymMatrix,
    graphs: &[ComparisonGraph],
    pseudo_points: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    let d = m.dim();
    check_dim(d, m_alt.dim())?;
    check_dim(graphs.len(), pseudo_points.len())?;
    let diff = m - m_alt;
    graphs
        .iter()
        .zip(pseudo_points)
        .enumerate()
        .map(|(k, (graph, v))| {
            check_dim(d, v.len())?;
            if let Some(gd) = graph.dim() {
                check_dim(d, gd)?;
            }
            let rows = graph.edges.len();
            if rows > d {
                return Err(Error::TooManyComparisons {
                    design: k,
                    rows,
                    dim: d,
                });
            }
            if !check_generic_pairwise(&graph.items, &graph.edges)? {
                return Err(Error::NotGeneric { design: k });
            }
            let design = graph.design()?;
            let rows_f: &[FeatureElement] = design.rows();
            let mut lhs = DMatrix::zeros(rows, d);
            let mut rhs = DVector::zeros(rows);
            for (i, f) in rows_f.iter().enumerate() {
                lhs.row_mut(i).copy_from(&f.delta_vec.transpose());
                rhs[i] = f.delta_mat.inner(&diff)?;
            }
            let correction = lstsq_min_norm(&lhs, &rhs, SOLVE_RCOND)?.solution;
            let v_alt = v + correction;
            let original = design_apply(&design, m, v)?;
            let alternative = design_apply(&design, m_alt, &v_alt)?;
            let residual = (&original - &alternative).norm();
            if residual > 1e-8 * original.norm().max(1.0) {
                return Err(Error::Inconsistent { residual });
            }
            Ok(v_alt)
        })
        .collect()
}
