//! The ideal-point measurement model and its linear parametrization.
//!
//! A user with ideal point `u` compares items `x` and `x'` through
//! `ψ = ‖x - u‖²_M - ‖x' - u‖²_M`, which is linear in `(M, v)` with the
//! pseudo-ideal point `v = -2Mu`:
//! `ψ = ⟨xxᵀ - x'x'ᵀ, M⟩ + ⟨x - x', v⟩`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::sym::{packed_len, SymMatrix};

/// Binary response. `Neg` (`y = -1`) means the first item was preferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Neg,
    Pos,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Neg => -1.0,
            Label::Pos => 1.0,
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Neg => Label::Pos,
            Label::Pos => Label::Neg,
        }
    }
}

impl TryFrom<f64> for Label {
    type Error = Error;

    fn try_from(y: f64) -> Result<Label> {
        if y == 1.0 {
            Ok(Label::Pos)
        } else if y == -1.0 {
            Ok(Label::Neg)
        } else {
            Err(Error::InvalidLabel(y))
        }
    }
}

impl TryFrom<i64> for Label {
    type Error = Error;

    fn try_from(y: i64) -> Result<Label> {
        Label::try_from(y as f64)
    }
}

/// A compared item pair together with the user's response.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement<R> {
    pub item_a: DVector<f64>,
    pub item_b: DVector<f64>,
    pub response: R,
}

/// `(x, x', ψ)`.
pub type UnquantizedMeasurement = Measurement<f64>;
/// `(x, x', y)`.
pub type QuantizedMeasurement = Measurement<Label>;

impl<R> Measurement<R> {
    pub fn new(item_a: DVector<f64>, item_b: DVector<f64>, response: R) -> Self {
        Measurement {
            item_a,
            item_b,
            response,
        }
    }

    pub fn feature(&self) -> Result<FeatureElement> {
        feature(&self.item_a, &self.item_b)
    }

    pub fn dim(&self) -> usize {
        self.item_a.len()
    }

    pub fn map_items(&self, f: impl Fn(&DVector<f64>) -> DVector<f64>) -> Measurement<R>
    where
        R: Clone,
    {
        Measurement {
            item_a: f(&self.item_a),
            item_b: f(&self.item_b),
            response: self.response.clone(),
        }
    }
}

/// `Δ ⊕ δ` with `Δ = xxᵀ - x'x'ᵀ` and `δ = x - x'`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureElement {
    pub delta_mat: SymMatrix,
    pub delta_vec: DVector<f64>,
}

impl FeatureElement {
    pub fn dim(&self) -> usize {
        self.delta_vec.len()
    }

    /// `⟨Δ, A⟩ + ⟨δ, w⟩`.
    pub fn pair_with(&self, a: &SymMatrix, w: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), w.len())?;
        Ok(self.delta_mat.inner(a)? + self.delta_vec.dot(w))
    }

    /// Concatenated coordinates `[vec(Δ) | δ]`.
    pub fn to_coords(&self) -> DVector<f64> {
        let p = self.delta_mat.packed().len();
        let mut out = DVector::zeros(p + self.dim());
        out.rows_mut(0, p).copy_from_slice(self.delta_mat.packed());
        out.rows_mut(p, self.dim()).copy_from(&self.delta_vec);
        out
    }
}

pub fn feature(x: &DVector<f64>, x_alt: &DVector<f64>) -> Result<FeatureElement> {
    check_dim(x.len(), x_alt.len())?;
    Ok(FeatureElement {
        delta_mat: SymMatrix::outer_difference(x, x_alt)?,
        delta_vec: x - x_alt,
    })
}

/// `ψ_M(x, x'; u) = ‖x - u‖²_M - ‖x' - u‖²_M`, evaluated directly.
pub fn psi(m: &SymMatrix, x: &DVector<f64>, x_alt: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
    check_dim(m.dim(), x.len())?;
    check_dim(m.dim(), x_alt.len())?;
    check_dim(m.dim(), u.len())?;
    Ok(m.quadratic_form(&(x - u))? - m.quadratic_form(&(x_alt - u))?)
}

/// `v = -2Mu`.
pub fn pseudo_ideal(m: &SymMatrix, u: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(m.mul_vec(u)? * -2.0)
}

/// A user's ideal point with its pseudo-ideal reparametrization.
#[derive(Debug, Clone, PartialEq)]
pub struct UserModel {
    ideal_point: DVector<f64>,
    pseudo_ideal: DVector<f64>,
}

impl UserModel {
    pub fn new(m: &SymMatrix, ideal_point: DVector<f64>) -> Result<Self> {
        let pseudo_ideal = pseudo_ideal(m, &ideal_point)?;
        Ok(UserModel {
            ideal_point,
            pseudo_ideal,
        })
    }

    /// Recovers `u = -½ M⁻¹ v`; `M` must be positive definite.
    pub fn from_pseudo_ideal(m: &SymMatrix, pseudo_ideal: DVector<f64>) -> Result<Self> {
        check_dim(m.dim(), pseudo_ideal.len())?;
        let chol = m.to_matrix().cholesky().ok_or(Error::NotPositiveDefinite {
            min_eigenvalue: m.min_eigenvalue(),
        })?;
        let ideal_point = chol.solve(&pseudo_ideal) * -0.5;
        Ok(UserModel {
            ideal_point,
            pseudo_ideal,
        })
    }

    pub fn ideal_point(&self) -> &DVector<f64> {
        &self.ideal_point
    }

    pub fn pseudo_ideal(&self) -> &DVector<f64> {
        &self.pseudo_ideal
    }
}

/// Ordered feature rows; acts as the linear map `(A, w) ↦ (⟨Δ_i, A⟩ + ⟨δ_i, w⟩)_i`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Design {
    rows: Vec<FeatureElement>,
}

impl Design {
    pub fn new(rows: Vec<FeatureElement>) -> Result<Self> {
        if let Some(first) = rows.first() {
            let d = first.dim();
            for r in &rows {
                check_dim(d, r.dim())?;
            }
        }
        Ok(Design { rows })
    }

    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (&'a DVector<f64>, &'a DVector<f64>)>,
    ) -> Result<Self> {
        let rows = pairs
            .into_iter()
            .map(|(x, y)| feature(x, y))
            .collect::<Result<Vec<_>>>()?;
        Design::new(rows)
    }

    pub fn rows(&self) -> &[FeatureElement] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.rows.first().map(FeatureElement::dim)
    }

    /// `m × (d(d+1)/2 + d)` coordinate matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        let Some(d) = self.dim() else {
            return DMatrix::zeros(0, 0);
        };
        let cols = packed_len(d) + d;
        let mut out = DMatrix::zeros(self.rows.len(), cols);
        for (i, row) in self.rows.iter().enumerate() {
            out.row_mut(i).copy_from(&row.to_coords().transpose());
        }
        out
    }
}

/// `D(A, w)_i = ⟨Δ_i, A⟩ + ⟨δ_i, w⟩`.
pub fn design_apply(design: &Design, a: &SymMatrix, w: &DVector<f64>) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(design.len());
    for (i, row) in design.rows.iter().enumerate() {
        check_dim(a.dim(), row.dim())?;
        out[i] = row.pair_with(a, w)?;
    }
    Ok(out)
}

/// `D*D` as a symmetric matrix on the coordinates `[vec(A) | w]`.
pub fn design_gram(design: &Design) -> Result<DMatrix<f64>> {
    if design.is_empty() {
        return Err(Error::Empty("design"));
    }
    let x = design.matrix();
    Ok(x.transpose() * x)
}

/// Source of random item pairs for design-strength estimation.
pub trait PairSampler {
    fn dim(&self) -> usize;
    fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, DVector<f64>);
}

/// Uniform draws from a fixed list of item pairs.
#[derive(Debug, Clone)]
pub struct UniformPairs {
    pairs: Vec<(DVector<f64>, DVector<f64>)>,
}

impl UniformPairs {
    pub fn new(pairs: Vec<(DVector<f64>, DVector<f64>)>) -> Result<Self> {
        let first = pairs.first().ok_or(Error::Empty("pair list"))?;
        let d = first.0.len();
        for (x, y) in &pairs {
            check_dim(d, x.len())?;
            check_dim(d, y.len())?;
        }
        Ok(UniformPairs { pairs })
    }

    pub fn pairs(&self) -> &[(DVector<f64>, DVector<f64>)] {
        &self.pairs
    }
}

impl PairSampler for UniformPairs {
    fn dim(&self) -> usize {
        self.pairs[0].0.len()
    }

    fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, DVector<f64>) {
        let i = rng.random_range(0..self.pairs.len());
        self.pairs[i].clone()
    }
}

/// Monte Carlo estimate of `σ²_min(𝒫_m) = (1/m)·σ_min(E[D*D])` for designs of
/// `m` pairs drawn i.i.d. from `sampler`.
pub fn estimate_design_strength<S: PairSampler>(
    sampler: &S,
    m: usize,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidParameter("m must be at least 1"));
    }
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1"));
    }
    let d = sampler.dim();
    let cols = packed_len(d) + d;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gram = DMatrix::<f64>::zeros(cols, cols);
    for _ in 0..trials {
        for _ in 0..m {
            let (x, y) = sampler.sample_pair(&mut rng);
            let f = feature(&x, &y)?.to_coords();
            gram.ger(1.0, &f, &f, 1.0);
        }
    }
    gram /= trials as f64;
    let min_eig = gram
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Ok(min_eig.max(0.0) / m as f64)
}

/// A user's realized comparison graph: items plus compared index pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonGraph {
    pub items: Vec<DVector<f64>>,
    pub edges: Vec<(usize, usize)>,
}

impl ComparisonGraph {
    pub fn new(items: Vec<DVector<f64>>, edges: Vec<(usize, usize)>) -> Result<Self> {
        let n = items.len();
        for &(i, j) in &edges {
            for idx in [i, j] {
                if idx >= n {
                    return Err(Error::IndexOutOfRange { index: idx, len: n });
                }
            }
        }
        if let Some(first) = items.first() {
            for x in &items {
                check_dim(first.len(), x.len())?;
            }
        }
        Ok(ComparisonGraph { items, edges })
    }

    pub fn dim(&self) -> Option<usize> {
        self.items.first().map(|x| x.len())
    }

    pub fn design(&self) -> Result<Design> {
        Design::from_pairs(
            self.edges
                .iter()
                .map(|&(i, j)| (&self.items[i], &self.items[j])),
        )
    }

    /// Unquantized responses of a user with metric `m` and pseudo-ideal point `v`.
    pub fn respond(&self, m: &SymMatrix, v: &DVector<f64>) -> Result<Vec<UnquantizedMeasurement>> {
        self.edges
            .iter()
            .map(|&(i, j)| {
                let (x, y) = (&self.items[i], &self.items[j]);
                let f = feature(x, y)?;
                Ok(Measurement::new(x.clone(), y.clone(), f.pair_with(m, v)?))
            })
            .collect()
    }
}
