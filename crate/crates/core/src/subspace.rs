//! Subspaces with canonical coordinates, metric restriction `Π_V(A) = BᵀAB`,
//! phantom ideal points, and the identifiability checks (quadratic spanning,
//! generic pairwise relations, injectivity of the stacked restriction map).

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{
    lstsq_min_norm, min_singular_on_domain, orthonormality_defect, rank_from_singular_values,
    singular_values, LeastSquares, RANK_RTOL, SOLVE_RCOND,
};
use crate::model::Measurement;
use crate::sym::{packed_len, sym_to_vec, vec_to_sym, SymMatrix};

/// Tolerance on `BᵀB = I`.
pub const ORTHONORMAL_TOL: f64 = 1e-10;
/// Relative distance `‖(I - BBᵀ)x‖ / ‖x‖` below which an item counts as lying in `V`.
pub const MEMBERSHIP_RTOL: f64 = 1e-8;

/// An `r`-dimensional subspace of `ℝ^d` with a fixed orthonormal basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    basis: DMatrix<f64>,
}

impl Subspace {
    pub fn new(basis: DMatrix<f64>) -> Result<Self> {
        let (d, r) = basis.shape();
        if r == 0 || r > d {
            return Err(Error::InvalidParameter(
                "subspace dimension must satisfy 1 <= r <= d",
            ));
        }
        let deviation = orthonormality_defect(&basis);
        if !(deviation <= ORTHONORMAL_TOL) {
            return Err(Error::NotOrthonormal { deviation });
        }
        Ok(Subspace { basis })
    }

    /// `V = ℝ^d` with the standard basis.
    pub fn full(dim: usize) -> Self {
        Subspace {
            basis: DMatrix::identity(dim, dim),
        }
    }

    /// Orthonormalizes the columns of `spanning` with a QR decomposition.
    pub fn from_spanning(spanning: DMatrix<f64>) -> Result<Self> {
        let (d, r) = spanning.shape();
        if r == 0 || r > d {
            return Err(Error::InvalidParameter(
                "subspace dimension must satisfy 1 <= r <= d",
            ));
        }
        let qr = spanning.qr();
        let rdiag = qr.r().diagonal();
        let scale = rdiag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if rdiag.iter().any(|v| v.abs() <= 1e-12 * scale) || scale == 0.0 {
            return Err(Error::Singular);
        }
        Subspace::new(qr.q().columns(0, r).into_owned())
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// `B`, `d × r`.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Canonical coordinates `Bᵀx`.
    pub fn canonical(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.ambient_dim(), x.len())?;
        Ok(self.basis.transpose() * x)
    }

    /// `Bc`.
    pub fn embed(&self, coords: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), coords.len())?;
        Ok(&self.basis * coords)
    }

    /// `‖(I - BBᵀ)x‖ / ‖x‖`, zero for `x = 0`.
    pub fn relative_distance(&self, x: &DVector<f64>) -> Result<f64> {
        let c = self.canonical(x)?;
        let norm = x.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        Ok((x - &self.basis * c).norm() / norm)
    }

    /// Canonical coordinates of each item, failing on the first item outside `V`.
    pub fn canonicalize_all<'a>(
        &self,
        items: impl IntoIterator<Item = &'a DVector<f64>>,
    ) -> Result<Vec<DVector<f64>>> {
        items
            .into_iter()
            .enumerate()
            .map(|(index, x)| {
                let distance = self.relative_distance(x)?;
                if distance > MEMBERSHIP_RTOL {
                    return Err(Error::OutsideSubspace { index, distance });
                }
                self.canonical(x)
            })
            .collect()
    }
    /// Maps the items of every measurement to `Bᵀx`. Errors carry the flat
    /// index of the offending item, counting two items per measurement.
    pub fn canonicalize_measurements<R: Clone>(
        &self,
        per_user: &[Vec<Measurement<R>>],
    ) -> Result<Vec<Vec<Measurement<R>>>> {
        let mut flat = 0;
        per_user
            .iter()
            .map(|ms| {
                ms.iter()
                    .map(|m| {
                        let mut coords =
                            self.canonicalize_all([&m.item_a, &m.item_b])
                                .map_err(|e| match e {
                                    Error::OutsideSubspace { index, distance } => {
                                        Error::OutsideSubspace {
                                            index: flat + index,
                                            distance,
                                        }
                                    }
                                    other => other,
                                })?;
                        flat += 2;
                        let b = coords.pop().unwrap();
                        let a = coords.pop().unwrap();
                        Ok(Measurement::new(a, b, m.response.clone()))
                    })
                    .collect()
            })
            .collect()
    }
}

/// A symmetric matrix on `ℝ^r` tagged with the basis it is expressed in.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceMetric {
    pub subspace: Subspace,
    pub q: SymMatrix,
}

impl SubspaceMetric {
    pub fn new(subspace: Subspace, q: SymMatrix) -> Result<Self> {
        check_dim(subspace.dim(), q.dim())?;
        Ok(SubspaceMetric { subspace, q })
    }
}

/// `Π_V(A) = BᵀAB`.
pub fn project_metric(v: &Subspace, a: &SymMatrix) -> Result<SubspaceMetric> {
    check_dim(v.ambient_dim(), a.dim())?;
    let b = v.basis();
    let q = SymMatrix::from_matrix(&(b.transpose() * a.to_matrix() * b))?;
    SubspaceMetric::new(v.clone(), q)
}

/// Canonical coordinates of the phantom ideal point `u_V`, the solution of
/// `(BᵀMB) u_V = BᵀMu`. For items in `V`, `u_V` produces the same
/// comparisons under `Π_V(M)` as `u` does under `M`.
pub fn phantom_point(m: &SymMatrix, v: &Subspace, u: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(v.ambient_dim(), m.dim())?;
    check_dim(m.dim(), u.len())?;
    let min_eigenvalue = m.min_eigenvalue();
    if !(min_eigenvalue > 1e-10) {
        return Err(Error::NotPositiveDefinite { min_eigenvalue });
    }
    let b = v.basis();
    let md = m.to_matrix();
    let q = b.transpose() * &md * b;
    let rhs = b.transpose() * (&md * u);
    let chol = q.cholesky().ok_or(Error::Singular)?;
    Ok(chol.solve(&rhs))
}

/// Outcome of a quadratic-spanning check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpanReport {
    pub spans: bool,
    pub rank: usize,
    /// `r(r+1)/2 + r`.
    pub required: usize,
}

/// Canonical features `(x_V x_Vᵀ - x'_V x'_Vᵀ) ⊕ (x_V - x'_V)` of a pair.
pub(crate) fn canonical_feature(x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
    let r = x.len();
    let delta = SymMatrix::outer_difference(x, y).expect("equal lengths");
    let mut out = DVector::zeros(packed_len(r) + r);
    out.rows_mut(0, packed_len(r))
        .copy_from_slice(delta.packed());
    out.rows_mut(packed_len(r), r).copy_from(&(x - y));
    out
}

/// Whether the pair features of `items` span `Sym(V) ⊕ V`.
///
/// Every pair feature is a difference of features of star pairs `(x_i, x_0)`,
/// so only those `N - 1` rows are stacked.
pub fn check_quadratic_span(items: &[DVector<f64>], v: &Subspace) -> Result<SpanReport> {
    let r = v.dim();
    let required = packed_len(r) + r;
    let coords = v.canonicalize_all(items)?;
    if coords.len() < 2 {
        return Ok(SpanReport {
            spans: false,
            rank: 0,
            required,
        });
    }
    let mut stacked = DMatrix::zeros(coords.len() - 1, required);
    for (i, c) in coords.iter().enumerate().skip(1) {
        stacked
            .row_mut(i - 1)
            .copy_from(&canonical_feature(c, &coords[0]).transpose());
    }
    let rank = rank_from_singular_values(&singular_values(&stacked), RANK_RTOL);
    Ok(SpanReport {
        spans: rank == required,
        rank,
        required,
    })
}

/// Checks the realized comparison graph for generic pairwise relations.
///
/// Edges closing a cycle are dropped in first-come order (union-find); the
/// differences along the remaining acyclic edges must be linearly independent.
/// The definition only covers graphs with at most `d` edges.
pub fn check_generic_pairwise(items: &[DVector<f64>], edges: &[(usize, usize)]) -> Result<bool> {
    let n = items.len();
    let Some(d) = items.first().map(|x| x.len()) else {
        if let Some(&(i, _)) = edges.first() {
            return Err(Error::IndexOutOfRange { index: i, len: 0 });
        }
        return Ok(true);
    };
    for x in items {
        check_dim(d, x.len())?;
    }
    let mut forest = UnionFind::new(n);
    let mut acyclic = Vec::new();
    for &(i, j) in edges {
        for idx in [i, j] {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, len: n });
            }
        }
        if forest.union(i, j) {
            acyclic.push((i, j));
        }
    }
    if acyclic.len() > d {
        return Err(Error::TooManyEdges {
            edges: acyclic.len(),
            dim: d,
        });
    }
    if acyclic.is_empty() {
        return Ok(true);
    }
    let mut diffs = DMatrix::zeros(acyclic.len(), d);
    for (row, &(i, j)) in acyclic.iter().enumerate() {
        diffs
            .row_mut(row)
            .copy_from(&(&items[i] - &items[j]).transpose());
    }
    let rank = rank_from_singular_values(&singular_values(&diffs), RANK_RTOL);
    Ok(rank == acyclic.len())
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Joins the components; false when already connected.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

/// The stacked restriction map `Π(A) = ⊕_λ B_λᵀ A B_λ` in packed coordinates.
#[derive(Debug, Clone)]
pub struct PiMap {
    subspaces: Vec<Subspace>,
    matrix: DMatrix<f64>,
    block_offsets: Vec<usize>,
    rank: usize,
    min_singular: f64,
}

impl PiMap {
    pub fn subspaces(&self) -> &[Subspace] {
        &self.subspaces
    }

    pub fn ambient_dim(&self) -> usize {
        self.subspaces[0].ambient_dim()
    }

    /// Rows grouped by subspace, columns indexed by packed `Sym(ℝ^d)` coordinates.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// `d(d+1)/2`.
    pub fn domain_dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// Smallest singular value over the domain; zero when fewer rows than columns.
    pub fn min_singular(&self) -> f64 {
        self.min_singular
    }

    pub fn is_injective(&self) -> bool {
        self.rank == self.domain_dim()
    }

    /// Row range of subspace `index`.
    pub fn block(&self, index: usize) -> core::ops::Range<usize> {
        self.block_offsets[index]..self.block_offsets[index + 1]
    }

    pub fn apply(&self, a: &SymMatrix) -> Result<Vec<SymMatrix>> {
        check_dim(self.ambient_dim(), a.dim())?;
        let image = &self.matrix * sym_to_vec(a);
        self.split(&image)
    }

    /// Splits a stacked image vector into per-subspace matrices.
    pub fn split(&self, image: &DVector<f64>) -> Result<Vec<SymMatrix>> {
        check_dim(self.matrix.nrows(), image.len())?;
        self.subspaces
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let range = self.block(i);
                vec_to_sym(v.dim(), &image.rows(range.start, range.len()).into_owned())
            })
            .collect()
    }

    /// Stacks per-subspace estimates into the right-hand side of `Π(A) = ⊕ Q_λ`.
    pub fn stack(&self, estimates: &[SubspaceMetric]) -> Result<DVector<f64>> {
        check_dim(self.subspaces.len(), estimates.len())?;
        let mut out = DVector::zeros(self.matrix.nrows());
        for (i, est) in estimates.iter().enumerate() {
            check_dim(self.subspaces[i].dim(), est.q.dim())?;
            let range = self.block(i);
            out.rows_mut(range.start, range.len())
                .copy_from_slice(est.q.packed());
        }
        Ok(out)
    }

    /// Minimum-norm least-squares preimage of a stacked right-hand side.
    pub fn solve(&self, rhs: &DVector<f64>) -> Result<(SymMatrix, LeastSquares)> {
        let ls = lstsq_min_norm(&self.matrix, rhs, SOLVE_RCOND)?;
        let a = vec_to_sym(self.ambient_dim(), &ls.solution)?;
        Ok((a, ls))
    }
}

pub fn build_pi(subspaces: &[Subspace]) -> Result<PiMap> {
    let first = subspaces.first().ok_or(Error::Empty("subspace list"))?;
    let d = first.ambient_dim();
    for v in subspaces {
        check_dim(d, v.ambient_dim())?;
    }
    let cols = packed_len(d);
    let mut block_offsets = vec![0];
    for v in subspaces {
        block_offsets.push(block_offsets.last().unwrap() + packed_len(v.dim()));
    }
    let rows = *block_offsets.last().unwrap();
    let mut matrix = DMatrix::zeros(rows, cols);
    let mut unit = DVector::zeros(cols);
    for col in 0..cols {
        unit.fill(0.0);
        unit[col] = 1.0;
        let e = vec_to_sym(d, &unit)?.to_matrix();
        for (i, v) in subspaces.iter().enumerate() {
            let b = v.basis();
            let block = SymMatrix::from_matrix(&(b.transpose() * &e * b))?;
            for (k, value) in block.packed().iter().enumerate() {
                matrix[(block_offsets[i] + k, col)] = *value;
            }
        }
    }
    let sv = singular_values(&matrix);
    let rank = rank_from_singular_values(&sv, RANK_RTOL);
    let min_singular = min_singular_on_domain(&matrix);
    Ok(PiMap {
        subspaces: subspaces.to_vec(),
        matrix,
        block_offsets,
        rank,
        min_singular,
    })
}

/// Subspace-clusterability report.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterReport {
    /// Quadratic spanning of each `V_λ` by its assigned items.
    pub spans: Vec<SpanReport>,
    /// Injectivity of `Π` (equivalently, `{xxᵀ : x ∈ V_λ}` spans `Sym(ℝ^d)`).
    pub injective: bool,
    pub pi_rank: usize,
    pub clusterable: bool,
}

/// `assignment[i]` is the subspace index of `items[i]`.
pub fn check_clusterable(
    items: &[DVector<f64>],
    assignment: &[usize],
    subspaces: &[Subspace],
) -> Result<ClusterReport> {
    check_dim(items.len(), assignment.len())?;
    let pi = build_pi(subspaces)?;
    let mut groups: Vec<Vec<DVector<f64>>> = vec![Vec::new(); subspaces.len()];
    for (x, &lambda) in items.iter().zip(assignment) {
        if lambda >= subspaces.len() {
            return Err(Error::IndexOutOfRange {
                index: lambda,
                len: subspaces.len(),
            });
        }
        groups[lambda].push(x.clone());
    }
    let spans = groups
        .iter()
        .zip(subspaces)
        .map(|(g, v)| check_quadratic_span(g, v))
        .collect::<Result<Vec<_>>>()?;
    let injective = pi.is_injective();
    let clusterable = injective && spans.iter().all(|s| s.spans);
    Ok(ClusterReport {
        spans,
        injective,
        pi_rank: pi.rank(),
        clusterable,
    })
}
