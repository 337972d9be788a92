//! Sweep drivers: every (cell, run) pair generates a scenario, fits each
//! subspace, stitches, and reports the relative error against the truth.

use std::collections::BTreeMap;
use std::time::Instant;

use metric_stitch_core::quantized::recover_from_fits;
use metric_stitch_core::synth::{derive_seed, Role};
use metric_stitch_core::{
    gen_scenario, Error as CoreError, LossSpec, Recovery, Result as CoreResult, ScenarioConfig,
    SolverConfig, Subspace, SymMatrix,
};
use rayon::prelude::*;

use crate::config::{
    min_subspaces, Cell, ExperimentId, ExperimentSpec, SolverSettings, StitchKind,
};
use crate::error::{HarnessError, Result};

/// `‖M̂ - M‖_F / ‖M‖_F`.
pub fn relative_error(m_hat: &SymMatrix, m: &SymMatrix) -> CoreResult<f64> {
    let norm = m.frobenius_norm();
    if norm == 0.0 {
        return Err(CoreError::InvalidParameter(
            "reference metric has zero norm",
        ));
    }
    Ok(m_hat.distance(m)? / norm)
}

/// One emitted line; the CSV columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub run: usize,
    pub d: usize,
    pub r: usize,
    pub n_subspaces: usize,
    pub users: usize,
    pub comparisons: usize,
    pub beta_data: f64,
    pub loss: LossSpec,
    pub stitch: StitchKind,
    pub sigma: f64,
    /// NaN when the run failed.
    pub rel_error: f64,
    pub subspaces_retained: usize,
    pub wall_time_s: f64,
}

impl ResultRow {
    pub fn beta_model(&self) -> Option<f64> {
        match self.loss {
            LossSpec::Logistic { beta } => Some(beta),
            LossSpec::Hinge => None,
        }
    }
}

/// Per-run details carried by the JSON-lines output only.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub converged: usize,
    pub fallback_last: bool,
    pub unique: bool,
    pub sigma_min: f64,
    pub pi_rank: usize,
    pub mean_principal_angle: f64,
    pub error: Option<String>,
}

/// Truth and estimate behind one row, for later verification.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub cell: usize,
    pub run: usize,
    pub metric: Option<SymMatrix>,
    pub estimate: Option<SymMatrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub cell: Cell,
    pub runs: usize,
    pub failures: usize,
    pub mean_rel_error: f64,
    /// Sample standard deviation; zero for a single run.
    pub std_rel_error: f64,
    pub mean_retained: f64,
    pub mean_principal_angle: f64,
    /// Fewest subspaces that can determine the metric.
    pub threshold: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub cells: Vec<Cell>,
    /// Cell-major, run-minor.
    pub rows: Vec<ResultRow>,
    pub diagnostics: Vec<Diagnostics>,
    pub artifacts: Vec<Artifact>,
    pub summary: Vec<CellSummary>,
}

struct RunOutcome {
    row: ResultRow,
    diagnostics: Diagnostics,
    artifact: Artifact,
}

/// Seed shared by run `run` of every cell.
pub fn run_seed(base: u64, run: usize) -> u64 {
    derive_seed(base, Role::Run, run as u64)
}

pub fn scenario_config(cell: &Cell, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        d: cell.d,
        r: cell.r,
        n_subspaces: cell.n_subspaces,
        users_per_subspace: cell.users,
        comparisons_per_user: cell.comparisons,
        beta_data: cell.beta_data,
        sigma: cell.sigma,
        seed,
    }
}

pub fn solver_template(settings: &SolverSettings) -> CoreResult<SolverConfig> {
    let mut cfg = SolverConfig::new(1.0, 1.0)?;
    cfg.max_iters = settings.max_iters;
    cfg.grad_tol = settings.grad_tol;
    cfg.validate()?;
    Ok(cfg)
}

fn recover(
    cell: &Cell,
    metric_out: &mut Option<SymMatrix>,
    angle: &mut f64,
    seed: u64,
    template: &SolverConfig,
) -> CoreResult<Recovery> {
    let scenario = gen_scenario(&scenario_config(cell, seed))?;
    *metric_out = Some(scenario.metric.clone());
    if cell.sigma > 0.0 {
        *angle = scenario.mean_principal_angle()?;
    }
    let problems = scenario.problems(template)?;
    let fits = problems.par_iter().map(|p| p.fit(&cell.loss)).collect();
    let subspaces: Vec<Subspace> = problems.iter().map(|p| p.subspace.clone()).collect();
    recover_from_fits(&subspaces, fits, cell.stitch_mode())
}

fn run_one(
    cell_index: usize,
    cell: &Cell,
    run: usize,
    spec: &ExperimentSpec,
    template: &SolverConfig,
) -> RunOutcome {
    let start = spec.timing.then(Instant::now);
    let mut metric = None;
    let mut angle = 0.0;
    let outcome = recover(
        cell,
        &mut metric,
        &mut angle,
        run_seed(spec.seed, run),
        template,
    )
    .and_then(|rec| {
        let err = relative_error(&rec.metric, metric.as_ref().expect("set before recovery"))?;
        Ok((rec, err))
    });
    let wall_time_s = start.map_or(0.0, |t| t.elapsed().as_secs_f64());
    let mut row = ResultRow {
        run,
        d: cell.d,
        r: cell.r,
        n_subspaces: cell.n_subspaces,
        users: cell.users,
        comparisons: cell.comparisons,
        beta_data: cell.beta_data,
        loss: cell.loss,
        stitch: cell.stitch,
        sigma: cell.sigma,
        rel_error: f64::NAN,
        subspaces_retained: 0,
        wall_time_s,
    };
    let mut diagnostics = Diagnostics {
        mean_principal_angle: angle,
        ..Diagnostics::default()
    };
    let mut estimate = None;
    match outcome {
        Ok((rec, err)) => {
            let diag = &rec.diagnostics;
            row.rel_error = err;
            row.subspaces_retained = diag.retained.len();
            diagnostics.converged = diag.fits.iter().filter(|f| f.converged).count();
            diagnostics.fallback_last = diag.fallback_last;
            diagnostics.unique = diag.unique;
            diagnostics.sigma_min = diag.sigma_min;
            diagnostics.pi_rank = diag.pi_rank;
            if diag.fallback_last {
                log::warn!("cell {cell_index} run {run}: no subspace fit converged, used the last subspace alone");
            }
            estimate = Some(rec.metric);
        }
        Err(e) => {
            log::warn!("cell {cell_index} run {run} failed: {e}");
            diagnostics.error = Some(e.to_string());
        }
    }
    RunOutcome {
        row,
        diagnostics,
        artifact: Artifact {
            cell: cell_index,
            run,
            metric,
            estimate,
        },
    }
}

/// Runs every cell for `spec.runs` runs on the current rayon pool. Per-run
/// failures become rows with `rel_error = NaN`; the sweep continues.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let template =
        solver_template(&spec.solver).map_err(|e| HarnessError::Config(e.to_string()))?;
    let cells = spec.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..spec.runs).map(move |run| (c, run)))
        .collect();
    let outcomes: Vec<RunOutcome> = jobs
        .par_iter()
        .map(|&(c, run)| run_one(c, &cells[c], run, spec, &template))
        .collect();

    let summary = cells
        .iter()
        .enumerate()
        .map(|(c, cell)| summarize(cell, &outcomes[c * spec.runs..(c + 1) * spec.runs]))
        .collect();
    let mut out = ExperimentOutput {
        cells,
        rows: Vec::with_capacity(outcomes.len()),
        diagnostics: Vec::with_capacity(outcomes.len()),
        artifacts: Vec::with_capacity(outcomes.len()),
        summary,
    };
    for o in outcomes {
        out.rows.push(o.row);
        out.diagnostics.push(o.diagnostics);
        out.artifacts.push(o.artifact);
    }
    if matches!(
        spec.experiment,
        ExperimentId::Exp1 | ExperimentId::Exp3 | ExperimentId::Misspec
    ) {
        log_monotonicity(&out.summary);
    }
    Ok(out)
}

fn check_id(spec: &ExperimentSpec, id: ExperimentId) -> Result<()> {
    if spec.experiment != id {
        return Err(HarnessError::Config(format!(
            "config is for {}, not {}",
            spec.experiment.name(),
            id.name()
        )));
    }
    Ok(())
}

/// Error against users per subspace and comparisons per user.
pub fn run_experiment1(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    check_id(spec, ExperimentId::Exp1)?;
    run_experiment(spec)
}

/// Error against the number of subspaces; summaries carry the threshold.
pub fn run_experiment2(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    check_id(spec, ExperimentId::Exp2)?;
    run_experiment(spec)
}

/// Error against item noise σ, learning on SVD-denoised subspaces when σ > 0.
pub fn run_experiment3(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    check_id(spec, ExperimentId::Exp3)?;
    run_experiment(spec)
}

/// Data β swept independently of the model loss.
pub fn run_misspec(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    check_id(spec, ExperimentId::Misspec)?;
    run_experiment(spec)
}

fn summarize(cell: &Cell, outcomes: &[RunOutcome]) -> CellSummary {
    let ok: Vec<&RunOutcome> = outcomes
        .iter()
        .filter(|o| o.diagnostics.error.is_none())
        .collect();
    let n = ok.len() as f64;
    let mean = |f: &dyn Fn(&RunOutcome) -> f64| {
        if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().map(|o| f(o)).sum::<f64>() / n
        }
    };
    let mean_rel_error = mean(&|o| o.row.rel_error);
    let std_rel_error = if ok.len() > 1 {
        (ok.iter()
            .map(|o| (o.row.rel_error - mean_rel_error).powi(2))
            .sum::<f64>()
            / (n - 1.0))
            .sqrt()
    } else if ok.len() == 1 {
        0.0
    } else {
        f64::NAN
    };
    CellSummary {
        cell: *cell,
        runs: outcomes.len(),
        failures: outcomes.len() - ok.len(),
        mean_rel_error,
        std_rel_error,
        mean_retained: mean(&|o| o.row.subspaces_retained as f64),
        mean_principal_angle: mean(&|o| o.diagnostics.mean_principal_angle),
        threshold: min_subspaces(cell.d, cell.r),
    }
}

/// Swept axis for the monotonicity report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Users,
    Comparisons,
    Subspaces,
}

/// Adjacent grid pairs along `axis` (other parameters fixed) whose mean error
/// does not increase, out of all such pairs.
pub fn monotone_pairs(summary: &[CellSummary], axis: Axis) -> (usize, usize) {
    let mut groups: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    for s in summary {
        let mut key = s.cell;
        let value = match axis {
            Axis::Users => std::mem::take(&mut key.users),
            Axis::Comparisons => std::mem::take(&mut key.comparisons),
            Axis::Subspaces => std::mem::take(&mut key.n_subspaces),
        };
        groups
            .entry(format!("{key:?}"))
            .or_default()
            .push((value, s.mean_rel_error));
    }
    let mut ok = 0;
    let mut total = 0;
    for mut points in groups.into_values() {
        points.sort_by_key(|p| p.0);
        for w in points.windows(2) {
            total += 1;
            if w[1].1 <= w[0].1 {
                ok += 1;
            }
        }
    }
    (ok, total)
}

fn log_monotonicity(summary: &[CellSummary]) {
    for (axis, name) in [(Axis::Comparisons, "m"), (Axis::Users, "K")] {
        let (ok, total) = monotone_pairs(summary, axis);
        if total == 0 {
            continue;
        }
        if ok * 5 < total * 4 {
            log::warn!("error non-increasing in {name} for only {ok}/{total} adjacent cells");
        } else {
            log::info!("error non-increasing in {name} for {ok}/{total} adjacent cells");
        }
    }
}
