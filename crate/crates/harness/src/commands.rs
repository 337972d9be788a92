//! Subcommand bodies, shared by the binary and the tests.

use std::path::{Path, PathBuf};

use metric_stitch_core::quantized::recover_from_fits;
use metric_stitch_core::{gen_scenario, FitResult, Scenario, ScenarioConfig, Subspace};
use rayon::prelude::*;
use serde::Deserialize;

pub use crate::config::format_for;
use crate::config::{ExperimentId, ExperimentSpec, ModelSpec, SolverSettings, StitchKind};
use crate::error::{HarnessError, Result};
use crate::experiment::{relative_error, run_experiment, solver_template, ExperimentOutput};
use crate::files::{
    read_json, read_scenario, write_json, write_scenario, EstimateFile, FitRecord, FitsFile,
    FITS_FORMAT, VERSION,
};
use crate::output::{read_artifacts, read_results, rows_sym, write_experiment};

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub timing: bool,
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn load_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn resolve(config: &Path, p: PathBuf) -> PathBuf {
    config.parent().unwrap_or(Path::new("")).join(p)
}

fn output_path(config: &Path, from_file: Option<PathBuf>, ov: &Overrides) -> Result<PathBuf> {
    ov.out
        .clone()
        .or_else(|| from_file.map(|p| resolve(config, p)))
        .ok_or_else(|| config_err("no output path: set `output` in the config or pass --out"))
}

fn warn_unused_seed(ov: &Overrides, command: &str) {
    if ov.seed.is_some() {
        log::warn!("{command}: --seed has no effect on this command's config");
    }
}

fn one() -> usize {
    1
}
fn unit() -> f64 {
    1.0
}

/// Scenario parameters as written in `generate` configs and `fit` configs.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub d: usize,
    #[serde(default = "one")]
    pub r: usize,
    pub n_subspaces: usize,
    pub users: usize,
    pub comparisons: usize,
    #[serde(default = "unit")]
    pub beta_data: f64,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn config(&self, seed: Option<u64>) -> Result<ScenarioConfig> {
        let cfg = ScenarioConfig {
            d: self.d,
            r: self.r,
            n_subspaces: self.n_subspaces,
            users_per_subspace: self.users,
            comparisons_per_user: self.comparisons,
            beta_data: self.beta_data,
            sigma: self.sigma,
            seed: seed.unwrap_or(self.seed),
        };
        cfg.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateConfig {
    #[serde(flatten)]
    scenario: ScenarioSpec,
    output: Option<PathBuf>,
}

/// Writes a generated scenario file; returns its path.
pub fn generate(config: &Path, ov: &Overrides) -> Result<PathBuf> {
    let cfg: GenerateConfig = load_toml(config)?;
    let out = output_path(config, cfg.output, ov)?;
    let scenario = gen_scenario(&cfg.scenario.config(ov.seed)?)?;
    write_scenario(&out, &scenario)?;
    Ok(out)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitConfig {
    /// Scenario file to fit.
    scenario: Option<PathBuf>,
    /// Or parameters to generate one in place.
    generate: Option<ScenarioSpec>,
    #[serde(default = "matched")]
    model: ModelSpec,
    #[serde(default)]
    solver: SolverSettings,
    output: Option<PathBuf>,
}

fn matched() -> ModelSpec {
    ModelSpec::MATCHED
}

/// Stage 1 on every subspace with oracle constraint radii; writes a fits file.
pub fn fit(config: &Path, ov: &Overrides) -> Result<PathBuf> {
    let cfg: FitConfig = load_toml(config)?;
    let out = output_path(config, cfg.output, ov)?;
    let scenario: Scenario = match (cfg.scenario, cfg.generate) {
        (Some(path), None) => {
            warn_unused_seed(ov, "fit");
            read_scenario(&resolve(config, path))?
        }
        (None, Some(spec)) => gen_scenario(&spec.config(ov.seed)?)?,
        _ => return Err(config_err("set exactly one of `scenario` and `[generate]`")),
    };
    let loss = cfg.model.resolve(scenario.config.beta_data)?;
    let template = solver_template(&cfg.solver).map_err(|e| config_err(e.to_string()))?;
    let problems = scenario.problems(&template)?;
    let fits: Vec<metric_stitch_core::Result<FitResult>> =
        problems.par_iter().map(|p| p.fit(&loss)).collect();
    let file = FitsFile {
        format: FITS_FORMAT.into(),
        version: VERSION,
        model: cfg.model,
        reference_metric: Some(crate::output::sym_rows(&scenario.metric)),
        fits: problems
            .iter()
            .zip(&fits)
            .map(|(p, f)| FitRecord::new(&p.subspace, f))
            .collect(),
    };
    write_json(&out, &file)?;
    Ok(out)
}

fn default_delta() -> f64 {
    metric_stitch_core::quantized::HUBER_DELTA
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StitchConfig {
    fits: PathBuf,
    #[serde(default)]
    stitch: StitchKind,
    #[serde(default = "default_delta")]
    huber_delta: f64,
    output: Option<PathBuf>,
}

/// Stage 2 from a fits file; writes the estimate and, when the fits carry
/// the truth, its relative error.
pub fn stitch(config: &Path, ov: &Overrides) -> Result<(PathBuf, EstimateFile)> {
    warn_unused_seed(ov, "stitch");
    let cfg: StitchConfig = load_toml(config)?;
    let out = output_path(config, cfg.output, ov)?;
    let fits_path = resolve(config, cfg.fits);
    let file: FitsFile = read_json(&fits_path)?;
    file.check()
        .map_err(|e| HarnessError::format(&fits_path, e))?;
    let mut subspaces: Vec<Subspace> = Vec::with_capacity(file.fits.len());
    let mut fits = Vec::with_capacity(file.fits.len());
    for (i, rec) in file.fits.iter().enumerate() {
        let (v, f) = rec
            .to_fit()
            .map_err(|e| HarnessError::format(&fits_path, format!("fit {i}: {e}")))?;
        subspaces.push(v);
        fits.push(f);
    }
    let mode = match cfg.stitch {
        StitchKind::Ls => metric_stitch_core::StitchMode::LeastSquares,
        StitchKind::Huber => metric_stitch_core::StitchMode::Robust {
            delta: cfg.huber_delta,
        },
    };
    let rec = recover_from_fits(&subspaces, fits, mode)?;
    let rel_error = match &file.reference_metric {
        Some(rows) => {
            let truth = rows_sym(rows).map_err(|e| HarnessError::format(&fits_path, e))?;
            Some(relative_error(&rec.metric, &truth)?)
        }
        None => None,
    };
    let estimate = EstimateFile::new(&rec, rel_error);
    write_json(&out, &estimate)?;
    Ok((out, estimate))
}

/// Loads an experiment config and applies the overrides.
pub fn load_experiment(config: &Path, id: ExperimentId, ov: &Overrides) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::load(config)?;
    if spec.experiment != id {
        return Err(config_err(format!(
            "{} holds a {} config, not {}",
            config.display(),
            spec.experiment.name(),
            id.name()
        )));
    }
    if let Some(seed) = ov.seed {
        spec.seed = seed;
    }
    if let Some(out) = &ov.out {
        spec.output = Some(out.clone());
        spec.format = Some(format_for(out));
    }
    spec.timing |= ov.timing;
    if spec.output.is_none() {
        return Err(config_err(
            "no output path: set `output` in the config or pass --out",
        ));
    }
    Ok(spec)
}

/// Runs an experiment and writes its files; returns the output and the paths written.
pub fn experiment(spec: &ExperimentSpec) -> Result<(ExperimentOutput, Vec<PathBuf>)> {
    let out_path = spec
        .output
        .clone()
        .ok_or_else(|| config_err("no output path"))?;
    let output = run_experiment(spec)?;
    let written = write_experiment(
        &output,
        &out_path,
        spec.output_format(),
        spec.artifacts.as_deref(),
    )?;
    Ok((output, written))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifyConfig {
    results: PathBuf,
    artifacts: PathBuf,
    #[serde(default = "verify_tol")]
    tolerance: f64,
}

fn verify_tol() -> f64 {
    1e-12
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyReport {
    pub checked: usize,
    /// Failed runs, which carry no estimate.
    pub skipped: usize,
}

/// Recomputes every row's relative error from the stored `(M, M̂)` pairs.
pub fn verify(config: &Path, ov: &Overrides) -> Result<VerifyReport> {
    warn_unused_seed(ov, "verify");
    let cfg: VerifyConfig = load_toml(config)?;
    verify_files(
        &resolve(config, cfg.results),
        &resolve(config, cfg.artifacts),
        cfg.tolerance,
    )
}

pub fn verify_files(results: &Path, artifacts: &Path, tolerance: f64) -> Result<VerifyReport> {
    let rows = read_results(results)?;
    let file = std::fs::File::open(artifacts).map_err(|e| HarnessError::io(artifacts, e))?;
    let arts = read_artifacts(file).map_err(|e| HarnessError::format(artifacts, e))?;
    if rows.len() != arts.len() {
        return Err(HarnessError::Verify(format!(
            "{} rows but {} artifacts",
            rows.len(),
            arts.len()
        )));
    }
    let mut report = VerifyReport {
        checked: 0,
        skipped: 0,
    };
    for (i, (row, art)) in rows.iter().zip(&arts).enumerate() {
        if row.run != art.run {
            return Err(HarnessError::Verify(format!(
                "row {i}: run {} vs artifact run {}",
                row.run, art.run
            )));
        }
        match (&art.metric, &art.estimate) {
            (Some(m), Some(m_hat)) => {
                let again = relative_error(m_hat, m)?;
                if !((again - row.rel_error).abs() <= tolerance * row.rel_error.abs().max(1.0)) {
                    return Err(HarnessError::Verify(format!(
                        "row {i}: stored rel_error {} but artifacts give {again}",
                        row.rel_error
                    )));
                }
                report.checked += 1;
            }
            _ if row.rel_error.is_nan() => report.skipped += 1,
            _ => {
                return Err(HarnessError::Verify(format!(
                    "row {i}: no estimate for a finite rel_error"
                )))
            }
        }
    }
    Ok(report)
}
