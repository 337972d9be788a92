//! Constrained empirical-risk minimization by projected gradient descent.
//!
//! The feasible set is `{A ⪰ 0, ‖A‖_F ≤ ζ_M} × Π_k {‖w_k‖ ≤ ζ_v}`. Projecting
//! onto it clamps negative eigenvalues of `A`, then rescales `A` and each
//! `w_k` into their balls.
//!
//! The gradient step is scaled per block (`A` and each `w_k`) by the inverse
//! of a local curvature estimate. A scalar per block leaves the projection onto
//! this product set unchanged, so each step is still an exact projection
//! followed by an Armijo backtracking search.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::QuantizedMeasurement;
use crate::quantized::loss::{ErmData, LossSpec};
use crate::quantized::stitch::psd_project;
use crate::subspace::{Subspace, SubspaceMetric};
use crate::sym::{packed_len, SymMatrix};

/// Backtracking parameters for the Armijo rule
/// `f(x⁺) ≤ f(x) + c·⟨∇f(x), x⁺ - x⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRule {
    pub armijo: f64,
    pub shrink: f64,
    pub initial: f64,
    /// Smallest step tried before the line search gives up.
    pub min_step: f64,
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule {
            armijo: 1e-4,
            shrink: 0.5,
            initial: 1.0,
            min_step: 1e-20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub zeta_m: f64,
    pub zeta_v: f64,
    pub max_iters: usize,
    /// Tolerance on `‖θ - P(θ - ∇f(θ))‖`.
    pub grad_tol: f64,
    pub step: StepRule,
    /// Stop when the objective drops by at most `1e-12·max(1, |f|)` over this many iterations.
    pub stagnation_window: usize,
    pub record_trace: bool,
}

impl SolverConfig {
    pub fn new(zeta_m: f64, zeta_v: f64) -> Result<Self> {
        let cfg = SolverConfig {
            zeta_m,
            zeta_v,
            max_iters: 100_000,
            grad_tol: 1e-6,
            step: StepRule::default(),
            stagnation_window: 100,
            record_trace: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.zeta_m) || !positive(self.zeta_v) {
            return Err(Error::InvalidParameter(
                "zeta_m and zeta_v must be positive and finite",
            ));
        }
        if !positive(self.grad_tol) {
            return Err(Error::InvalidParameter("grad_tol must be positive"));
        }
        let s = &self.step;
        if !(s.armijo > 0.0
            && s.armijo < 1.0
            && s.shrink > 0.0
            && s.shrink < 1.0
            && positive(s.initial))
        {
            return Err(Error::InvalidParameter("invalid step rule"));
        }
        Ok(())
    }
}

/// First and last widths of the hinge smoothing; each stage divides by 10.
const HINGE_SMOOTHING: f64 = 1.0;
const MIN_HINGE_SMOOTHING: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// No measurements: the zero parameters are returned.
    EmptyData,
    GradientTolerance,
    Stagnation,
    /// Backtracking reached `min_step` without sufficient decrease.
    LineSearchStall,
    MaxIterations,
}

/// Per-iteration state for the monotonicity and feasibility audits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    /// For the hinge, the smoothed objective of the current stage.
    pub objective: f64,
    pub step: f64,
    pub min_eigenvalue: f64,
    pub frobenius_norm: f64,
    pub max_w_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub q_hat: SubspaceMetric,
    /// Canonical-coordinate pseudo-ideal points, one per user.
    pub pseudo_points: Vec<DVector<f64>>,
    pub objective: f64,
    /// False only when the iteration budget ran out.
    pub converged: bool,
    pub stop: StopReason,
    pub iterations: usize,
    /// `‖θ - P(θ - ∇f(θ))‖` at the returned point.
    pub kkt_residual: f64,
    /// Iterates `0..=iterations` when `record_trace` is set.
    pub trace: Vec<IterationRecord>,
}

/// Projects a flat parameter vector onto the feasible set in place.
pub(crate) fn project(theta: &mut [f64], dim: usize, cfg: &SolverConfig) {
    let p = packed_len(dim);
    if dim == 1 {
        theta[0] = theta[0].max(0.0).min(cfg.zeta_m);
    } else {
        let a = SymMatrix::from_packed(dim, theta[..p].to_vec()).expect("packed length");
        let clamped = psd_project(&a).unwrap_or_else(|_| SymMatrix::zeros(dim));
        theta[..p].copy_from_slice(clamped.packed());
        rescale(&mut theta[..p], cfg.zeta_m);
    }
    for w in theta[p..].chunks_mut(dim) {
        rescale(w, cfg.zeta_v);
    }
}

fn rescale(v: &mut [f64], radius: f64) {
    let norm = libm::sqrt(crate::sym::dot(v, v));
    if norm > radius {
        let s = radius / norm;
        v.iter_mut().for_each(|x| *x *= s);
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

fn record(theta: &[f64], dim: usize, objective: f64, step: f64) -> IterationRecord {
    let p = packed_len(dim);
    let a = SymMatrix::from_packed(dim, theta[..p].to_vec()).expect("packed length");
    let max_w_norm = theta[p..]
        .chunks(dim)
        .map(|w| libm::sqrt(crate::sym::dot(w, w)))
        .fold(0.0, f64::max);
    IterationRecord {
        objective,
        step,
        min_eigenvalue: a.min_eigenvalue(),
        frobenius_norm: a.frobenius_norm(),
        max_w_norm,
    }
}

/// Minimizes the summed margin loss over the feasible set, starting from zero.
///
/// The hinge is handled by continuation over quadratic smoothings of the kink;
/// `objective` in the result is always the exact loss.
pub fn fit_constrained_erm(
    data: &ErmData,
    spec: &LossSpec,
    cfg: &SolverConfig,
) -> Result<FitResult> {
    spec.validate()?;
    cfg.validate()?;
    let dim = data.dim();
    let n = data.param_len();
    let mut theta = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut curvature = vec![0.0; 1 + data.users()];
    let mut direction = vec![0.0; n];
    let mut trace = Vec::new();

    let finish = |theta: &[f64], objective, stop, iterations, kkt_residual, trace| {
        let (a, w) = data.unflatten(theta);
        Ok(FitResult {
            q_hat: SubspaceMetric::new(Subspace::full(dim), a)?,
            pseudo_points: w,
            objective,
            converged: stop != StopReason::MaxIterations,
            stop,
            iterations,
            kkt_residual,
            trace,
        })
    };

    if data.is_empty() {
        return finish(&theta, 0.0, StopReason::EmptyData, 0, 0.0, trace);
    }

    // The hinge is minimized through smoothings of shrinking width `mu`;
    // each is an upper bound on the next, so the logged objective stays monotone.
    let mut mu = match spec {
        LossSpec::Hinge => HINGE_SMOOTHING,
        _ => 0.0,
    };
    let mut f = data.objective_smoothed(spec, &theta, Some(&mut grad), mu);
    if !f.is_finite() {
        return Err(Error::NonFinite { iteration: 0 });
    }
    if cfg.record_trace {
        trace.push(record(&theta, dim, f, 0.0));
    }
    let mut history = VecDeque::with_capacity(cfg.stagnation_window + 1);
    let mut step = cfg.step.initial;
    let mut iterations = 0;

    let kkt = |theta: &[f64], grad: &[f64], scratch: &mut [f64]| {
        for ((s, t), g) in scratch.iter_mut().zip(theta).zip(grad) {
            *s = t - g;
        }
        project(scratch, dim, cfg);
        distance(theta, scratch)
    };

    let stop = 'fit: loop {
        let stage_end = 'stage: {
            if kkt(&theta, &grad, &mut trial) <= cfg.grad_tol {
                break 'stage Some(StopReason::GradientTolerance);
            }
            if iterations >= cfg.max_iters {
                break 'fit StopReason::MaxIterations;
            }

            data.block_curvature(spec, &theta, mu, &mut curvature);
            let p = packed_len(dim);
            for (j, (d, g)) in direction.iter_mut().zip(&grad).enumerate() {
                let block = if j < p { 0 } else { 1 + (j - p) / dim };
                *d = g / curvature[block];
            }

            step = (2.0 * step).min(cfg.step.initial);
            let accepted = loop {
                for ((s, t), d) in trial.iter_mut().zip(&theta).zip(&direction) {
                    *s = t - step * d;
                }
                project(&mut trial, dim, cfg);
                let decrease: f64 = grad
                    .iter()
                    .zip(&trial)
                    .zip(&theta)
                    .map(|((g, s), t)| g * (s - t))
                    .sum();
                let f_trial = data.objective_smoothed(spec, &trial, None, mu);
                if f_trial.is_nan() {
                    return Err(Error::NonFinite {
                        iteration: iterations + 1,
                    });
                }
                if f_trial <= f + cfg.step.armijo * decrease {
                    break Some(f_trial);
                }
                step *= cfg.step.shrink;
                if step < cfg.step.min_step {
                    break None;
                }
            };
            let Some(f_new) = accepted else {
                break 'stage Some(StopReason::LineSearchStall);
            };
            debug_assert!(f_new <= f);
            core::mem::swap(&mut theta, &mut trial);
            iterations += 1;
            f = data.objective_smoothed(spec, &theta, Some(&mut grad), mu);
            if !f.is_finite() {
                return Err(Error::NonFinite {
                    iteration: iterations,
                });
            }
            if cfg.record_trace {
                trace.push(record(&theta, dim, f, step));
            }

            history.push_back(f);
            if history.len() > cfg.stagnation_window {
                let old = history.pop_front().unwrap();
                if old - f <= 1e-12 * f.abs().max(1.0) {
                    break 'stage Some(StopReason::Stagnation);
                }
            }
            None
        };
        match stage_end {
            Some(_) if mu > MIN_HINGE_SMOOTHING => {
                mu *= 0.1;
                f = data.objective_smoothed(spec, &theta, Some(&mut grad), mu);
                history.clear();
                step = cfg.step.initial;
            }
            Some(reason) => break reason,
            None => {}
        }
    };

    let residual = kkt(&theta, &grad, &mut trial);
    let objective = data.objective(spec, &theta, None);
    finish(&theta, objective, stop, iterations, residual, trace)
}

/// Fits in the canonical coordinates of `v`; the returned metric is tagged with `v`.
pub fn fit_subspace(
    v: &Subspace,
    per_user: &[Vec<QuantizedMeasurement>],
    spec: &LossSpec,
    cfg: &SolverConfig,
) -> Result<FitResult> {
    let reduced = v.canonicalize_measurements(per_user)?;
    let data = ErmData::new(v.dim(), &reduced)?;
    let mut fit = fit_constrained_erm(&data, spec, cfg)?;
    fit.q_hat = SubspaceMetric::new(v.clone(), fit.q_hat.q)?;
    Ok(fit)
}
