//! Recovery from binary responses: per-subspace constrained ERM (stage 1),
//! then stitching the subspace metrics and projecting onto the PSD cone
//! (stage 2).

pub mod loss;
pub mod solver;
pub mod stitch;

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::QuantizedMeasurement;
use crate::subspace::{check_clusterable, ClusterReport, Subspace};
use crate::sym::SymMatrix;

pub use loss::{loss_value_grad, ErmData, LossSpec};
pub use solver::{
    fit_constrained_erm, fit_subspace, FitResult, IterationRecord, SolverConfig, StepRule,
    StopReason,
};
pub use stitch::{
    psd_project, stitch, stitch_ls, stitch_robust, StitchMode, StitchResult, HUBER_DELTA,
};

/// Binary-response data observed on one subspace, with its solver settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceProblem {
    pub subspace: Subspace,
    /// Ambient-coordinate measurements per user; items lie in `subspace`.
    pub users: Vec<Vec<QuantizedMeasurement>>,
    pub config: SolverConfig,
}

impl SubspaceProblem {
    /// Stage 1 for this subspace.
    pub fn fit(&self, spec: &LossSpec) -> Result<FitResult> {
        fit_subspace(&self.subspace, &self.users, spec, &self.config)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub converged: bool,
    pub stop: Option<StopReason>,
    pub iterations: usize,
    pub objective: f64,
    /// Set when the fit returned an error instead of a result.
    pub error: Option<Error>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryDiagnostics {
    pub fits: Vec<FitSummary>,
    /// Indices of the subspaces whose fits were stitched.
    pub retained: Vec<usize>,
    /// No fit converged and only the last subspace was used.
    pub fallback_last: bool,
    /// Whether the retained subspaces determine the metric.
    pub unique: bool,
    pub sigma_min: f64,
    pub pi_rank: usize,
    /// Stitch residual per retained subspace.
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    /// PSD-projected estimate.
    pub metric: SymMatrix,
    /// Stitched estimate before projection.
    pub stitched: SymMatrix,
    pub diagnostics: RecoveryDiagnostics,
}

/// Clusterability of the problem items against their subspaces.
pub fn problem_clusterability(problems: &[SubspaceProblem]) -> Result<ClusterReport> {
    let mut items = Vec::new();
    let mut assignment = Vec::new();
    for (lambda, problem) in problems.iter().enumerate() {
        for m in problem.users.iter().flatten() {
            items.push(m.item_a.clone());
            items.push(m.item_b.clone());
            assignment.push(lambda);
            assignment.push(lambda);
        }
    }
    let subspaces: Vec<Subspace> = problems.iter().map(|p| p.subspace.clone()).collect();
    check_clusterable(&items, &assignment, &subspaces)
}

/// Both stages, sequentially.
pub fn recover_metric(
    problems: &[SubspaceProblem],
    spec: &LossSpec,
    mode: StitchMode,
) -> Result<Recovery> {
    let fits = problems.iter().map(|p| p.fit(spec)).collect();
    let subspaces: Vec<Subspace> = problems.iter().map(|p| p.subspace.clone()).collect();
    recover_from_fits(&subspaces, fits, mode)
}

/// Stage 2 from precomputed stage-1 outcomes (one per subspace, in order).
///
/// Non-converged or failed fits are dropped. When nothing converged the last
/// subspace is used alone. A non-injective `Π` over the kept subspaces gives
/// the minimum-norm stitch with `unique = false`.
pub fn recover_from_fits(
    subspaces: &[Subspace],
    fits: Vec<Result<FitResult>>,
    mode: StitchMode,
) -> Result<Recovery> {
    if subspaces.is_empty() {
        return Err(Error::Empty("subspace list"));
    }
    crate::error::check_dim(subspaces.len(), fits.len())?;
    let summaries: Vec<FitSummary> = fits
        .iter()
        .map(|f| match f {
            Ok(fit) => FitSummary {
                converged: fit.converged,
                stop: Some(fit.stop),
                iterations: fit.iterations,
                objective: fit.objective,
                error: None,
            },
            Err(e) => FitSummary {
                converged: false,
                stop: None,
                iterations: 0,
                objective: f64::NAN,
                error: Some(e.clone()),
            },
        })
        .collect();

    let mut retained: Vec<usize> = summaries
        .iter()
        .enumerate()
        .filter(|(_, s)| s.converged)
        .map(|(i, _)| i)
        .collect();
    let fallback_last = retained.is_empty();
    if fallback_last {
        retained.push(subspaces.len() - 1);
    }

    let mut fits: Vec<Option<FitResult>> = fits.into_iter().map(|f| f.ok()).collect();
    let estimates = retained
        .iter()
        .map(|&i| {
            fits[i]
                .take()
                .map(|f| f.q_hat)
                .ok_or_else(|| summaries[i].error.clone().unwrap_or(Error::Empty("fit")))
        })
        .collect::<Result<Vec<_>>>()?;

    let stitched = stitch(&estimates, mode, true)?;
    let metric = psd_project(&stitched.metric)?;
    Ok(Recovery {
        metric,
        stitched: stitched.metric,
        diagnostics: RecoveryDiagnostics {
            fits: summaries,
            retained,
            fallback_last,
            unique: stitched.unique,
            sigma_min: stitched.sigma_min,
            pi_rank: stitched.rank,
            residuals: stitched.residuals,
        },
    })
}
