//! Margin losses and the empirical-risk objective over binary responses.

use alloc::vec::Vec;

use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};
use crate::model::{Label, QuantizedMeasurement};
use crate::sym::{packed_len, SymMatrix};

/// Loss on the signed margin `z = y·(⟨Δ, A⟩ + ⟨δ, w⟩)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    /// `log(1 + exp(-βz))`.
    Logistic { beta: f64 },
    /// `max(0, 1 - z)`.
    Hinge,
}

impl LossSpec {
    pub fn logistic(beta: f64) -> Result<Self> {
        let spec = LossSpec::Logistic { beta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::Logistic { beta } if !(beta > 0.0 && beta.is_finite()) => Err(
                Error::InvalidParameter("logistic beta must be positive and finite"),
            ),
            _ => Ok(()),
        }
    }

    pub fn value(&self, z: f64) -> f64 {
        match *self {
            LossSpec::Logistic { beta } => softplus(-beta * z),
            LossSpec::Hinge => (1.0 - z).max(0.0),
        }
    }

    /// Derivative in `z`; the hinge uses subgradient 0 at the kink.
    pub fn derivative(&self, z: f64) -> f64 {
        match *self {
            LossSpec::Logistic { beta } => -beta * sigmoid(-beta * z),
            LossSpec::Hinge => {
                if z < 1.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl LossSpec {
    /// Second derivative in `z`; the hinge has none and reports 0.
    pub fn curvature(&self, z: f64) -> f64 {
        match *self {
            LossSpec::Logistic { beta } => {
                let s = sigmoid(beta * z);
                beta * beta * s * (1.0 - s)
            }
            LossSpec::Hinge => 0.0,
        }
    }
}

/// The hinge with `(1 + mu - z)² / 4mu` on `|1 - z| < mu`; an upper bound
/// on the hinge that decreases pointwise as `mu` shrinks.
pub(crate) fn smoothed_hinge(z: f64, mu: f64) -> f64 {
    if z <= 1.0 - mu {
        1.0 - z
    } else if z >= 1.0 + mu {
        0.0
    } else {
        (1.0 + mu - z) * (1.0 + mu - z) / (4.0 * mu)
    }
}

/// Slope of the hinge smoothed by `(1 + mu - z)² / 4mu` on `|1 - z| < mu`.
pub(crate) fn smoothed_hinge_slope(z: f64, mu: f64) -> f64 {
    if z <= 1.0 - mu {
        -1.0
    } else if z >= 1.0 + mu {
        0.0
    } else {
        -(1.0 + mu - z) / (2.0 * mu)
    }
}

/// `log(1 + eᵗ)` without overflow.
pub(crate) fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + libm::log1p(libm::exp(-t))
    } else {
        libm::log1p(libm::exp(t))
    }
}

/// `1 / (1 + e⁻ˢ)` without overflow.
pub(crate) fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + libm::exp(-s))
    } else {
        let e = libm::exp(s);
        e / (1.0 + e)
    }
}

/// `(x, x', y)` with `y = ±1`.
pub type SignedComparison = (DVector<f64>, DVector<f64>, f64);

/// Precomputed feature rows of a multi-user binary-response problem in `ℝ^r`.
///
/// Parameters are flattened as `[vec(A) | w_1 | … | w_K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErmData {
    dim: usize,
    users: usize,
    delta_mat: Vec<f64>,
    delta_vec: Vec<f64>,
    user: Vec<usize>,
    sign: Vec<f64>,
}

impl ErmData {
    /// Items must already be in `ℝ^dim` (canonical coordinates for a subspace).
    pub fn new(dim: usize, per_user: &[Vec<QuantizedMeasurement>]) -> Result<Self> {
        let rows = per_user.iter().enumerate().flat_map(|(k, ms)| {
            ms.iter()
                .map(move |m| (k, &m.item_a, &m.item_b, m.response.sign()))
        });
        Self::assemble(dim, per_user.len(), rows)
    }

    /// As [`ErmData::new`] but with raw numeric labels, which must be `±1`.
    pub fn from_signed(dim: usize, per_user: &[Vec<SignedComparison>]) -> Result<Self> {
        for ms in per_user {
            for (_, _, y) in ms {
                Label::try_from(*y)?;
            }
        }
        let rows = per_user
            .iter()
            .enumerate()
            .flat_map(|(k, ms)| ms.iter().map(move |(x, y, s)| (k, x, y, *s)));
        Self::assemble(dim, per_user.len(), rows)
    }

    fn assemble<'a>(
        dim: usize,
        users: usize,
        rows: impl Iterator<Item = (usize, &'a DVector<f64>, &'a DVector<f64>, f64)>,
    ) -> Result<Self> {
        let mut data = ErmData {
            dim,
            users,
            delta_mat: Vec::new(),
            delta_vec: Vec::new(),
            user: Vec::new(),
            sign: Vec::new(),
        };
        for (k, x, y, s) in rows {
            check_dim(dim, x.len())?;
            check_dim(dim, y.len())?;
            data.delta_mat
                .extend_from_slice(SymMatrix::outer_difference(x, y)?.packed());
            data.delta_vec.extend((x - y).iter());
            data.user.push(k);
            data.sign.push(s);
        }
        Ok(data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn len(&self) -> usize {
        self.sign.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sign.is_empty()
    }

    /// Length of the flattened parameter vector.
    pub fn param_len(&self) -> usize {
        packed_len(self.dim) + self.users * self.dim
    }

    /// Objective at `theta`; accumulates the gradient into `grad` when given.
    pub(crate) fn objective(
        &self,
        spec: &LossSpec,
        theta: &[f64],
        grad: Option<&mut [f64]>,
    ) -> f64 {
        self.objective_smoothed(spec, theta, grad, 0.0)
    }

    /// As [`ErmData::objective`], but for the hinge with `mu > 0` both value and
    /// gradient are those of the hinge smoothed quadratically over `|1 - z| < mu`.
    pub(crate) fn objective_smoothed(
        &self,
        spec: &LossSpec,
        theta: &[f64],
        mut grad: Option<&mut [f64]>,
        mu: f64,
    ) -> f64 {
        let (r, p) = (self.dim, packed_len(self.dim));
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        let a = &theta[..p];
        let mut total = 0.0;
        for i in 0..self.len() {
            let fa = &self.delta_mat[i * p..(i + 1) * p];
            let fd = &self.delta_vec[i * r..(i + 1) * r];
            let w_off = p + self.user[i] * r;
            let w = &theta[w_off..w_off + r];
            let raw = crate::sym::dot(fa, a) + crate::sym::dot(fd, w);
            let z = self.sign[i] * raw;
            total += match spec {
                LossSpec::Hinge if mu > 0.0 => smoothed_hinge(z, mu),
                _ => spec.value(z),
            };
            if let Some(g) = grad.as_deref_mut() {
                let slope = match spec {
                    LossSpec::Hinge if mu > 0.0 => smoothed_hinge_slope(z, mu),
                    _ => spec.derivative(z),
                };
                let coef = slope * self.sign[i];
                if coef != 0.0 {
                    for (gj, fj) in g[..p].iter_mut().zip(fa) {
                        *gj += coef * fj;
                    }
                    for (gj, fj) in g[w_off..w_off + r].iter_mut().zip(fd) {
                        *gj += coef * fj;
                    }
                }
            }
        }
        total
    }

    /// Per-block curvature estimates `Σ_i c_i ‖f_i‖²` over the `A` block and
    /// each `w_k` block, where `c_i` is the loss curvature at the current
    /// margin (1 for the unsmoothed hinge). Blocks are floored at `1e-8` times their value
    /// with the largest possible curvature.
    pub(crate) fn block_curvature(&self, spec: &LossSpec, theta: &[f64], mu: f64, out: &mut [f64]) {
        let (r, p) = (self.dim, packed_len(self.dim));
        let smoothed = matches!(spec, LossSpec::Hinge) && mu > 0.0;
        let peak = match *spec {
            LossSpec::Logistic { beta } => 0.25 * beta * beta,
            LossSpec::Hinge if smoothed => 0.5 / mu,
            LossSpec::Hinge => 1.0,
        };
        let mut floor = alloc::vec![0.0; out.len()];
        out.fill(0.0);
        for i in 0..self.len() {
            let fa = &self.delta_mat[i * p..(i + 1) * p];
            let fd = &self.delta_vec[i * r..(i + 1) * r];
            let k = self.user[i];
            let w_off = p + k * r;
            let z = || {
                self.sign[i]
                    * (crate::sym::dot(fa, &theta[..p])
                        + crate::sym::dot(fd, &theta[w_off..w_off + r]))
            };
            let c = match spec {
                LossSpec::Hinge if smoothed => {
                    if (1.0 - z()).abs() < mu {
                        peak
                    } else {
                        0.0
                    }
                }
                LossSpec::Hinge => 1.0,
                _ => spec.curvature(z()),
            };
            let (na, nd) = (crate::sym::dot(fa, fa), crate::sym::dot(fd, fd));
            out[0] += c * na;
            out[1 + k] += c * nd;
            floor[0] += peak * na;
            floor[1 + k] += peak * nd;
        }
        for (h, f) in out.iter_mut().zip(&floor) {
            *h = h.max(1e-8 * f);
        }
    }

    /// Signed margins `y_i(⟨Δ_i, A⟩ + ⟨δ_i, w_{k_i}⟩)`.
    pub fn margins(&self, a: &SymMatrix, w: &[DVector<f64>]) -> Result<Vec<f64>> {
        let theta = self.flatten(a, w)?;
        let (r, p) = (self.dim, packed_len(self.dim));
        Ok((0..self.len())
            .map(|i| {
                let w_off = p + self.user[i] * r;
                self.sign[i]
                    * (crate::sym::dot(&self.delta_mat[i * p..(i + 1) * p], &theta[..p])
                        + crate::sym::dot(
                            &self.delta_vec[i * r..(i + 1) * r],
                            &theta[w_off..w_off + r],
                        ))
            })
            .collect())
    }

    pub(crate) fn flatten(&self, a: &SymMatrix, w: &[DVector<f64>]) -> Result<Vec<f64>> {
        check_dim(self.dim, a.dim())?;
        check_dim(self.users, w.len())?;
        let mut theta = Vec::with_capacity(self.param_len());
        theta.extend_from_slice(a.packed());
        for wk in w {
            check_dim(self.dim, wk.len())?;
            theta.extend(wk.iter());
        }
        Ok(theta)
    }

    pub(crate) fn unflatten(&self, theta: &[f64]) -> (SymMatrix, Vec<DVector<f64>>) {
        let (r, p) = (self.dim, packed_len(self.dim));
        let a = SymMatrix::from_packed(r, theta[..p].to_vec()).expect("packed length");
        let w = (0..self.users)
            .map(|k| DVector::from_column_slice(&theta[p + k * r..p + (k + 1) * r]))
            .collect();
        (a, w)
    }
}

/// Objective value and gradient with respect to `(A, w_1, …, w_K)`.
pub fn loss_value_grad(
    spec: &LossSpec,
    data: &ErmData,
    a: &SymMatrix,
    w: &[DVector<f64>],
) -> Result<(f64, SymMatrix, Vec<DVector<f64>>)> {
    spec.validate()?;
    let theta = data.flatten(a, w)?;
    let mut grad = alloc::vec![0.0; theta.len()];
    let value = data.objective(spec, &theta, Some(&mut grad));
    let (ga, gw) = data.unflatten(&grad);
    Ok((value, ga, gw))
}
