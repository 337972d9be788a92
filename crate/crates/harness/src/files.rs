//! Versioned JSON files for scenarios, stage-1 fits and stitched estimates.
//! Matrices are nested row-major arrays; floats carry 17 significant digits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use metric_stitch_core::quantized::StopReason;
use metric_stitch_core::{
    FitResult, Label, Measurement, Recovery, Scenario, ScenarioConfig, Subspace, SubspaceMetric,
};
use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::ModelSpec;
use crate::error::{HarnessError, Result};
use crate::output::{json_float, matrix_rows, rows_matrix, rows_sym, sym_rows, to_json_writer};

pub const SCENARIO_FORMAT: &str = "metric-stitch-scenario";
pub const FITS_FORMAT: &str = "metric-stitch-fits";
pub const ESTIMATE_FORMAT: &str = "metric-stitch-estimate";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigRecord {
    pub d: usize,
    pub r: usize,
    pub n_subspaces: usize,
    pub users_per_subspace: usize,
    pub comparisons_per_user: usize,
    #[serde(with = "json_float")]
    pub beta_data: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl From<ScenarioConfig> for ConfigRecord {
    fn from(c: ScenarioConfig) -> Self {
        ConfigRecord {
            d: c.d,
            r: c.r,
            n_subspaces: c.n_subspaces,
            users_per_subspace: c.users_per_subspace,
            comparisons_per_user: c.comparisons_per_user,
            beta_data: c.beta_data,
            sigma: c.sigma,
            seed: c.seed,
        }
    }
}

impl From<ConfigRecord> for ScenarioConfig {
    fn from(c: ConfigRecord) -> Self {
        ScenarioConfig {
            d: c.d,
            r: c.r,
            n_subspaces: c.n_subspaces,
            users_per_subspace: c.users_per_subspace,
            comparisons_per_user: c.comparisons_per_user,
            beta_data: c.beta_data,
            sigma: c.sigma,
            seed: c.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonRecord {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// `+1` or `-1`.
    pub y: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserRecord {
    pub ideal_point: Vec<f64>,
    pub comparisons: Vec<ComparisonRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubspaceRecord {
    /// `d × r` orthonormal basis.
    pub basis: Vec<Vec<f64>>,
    pub users: Vec<UserRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub format: String,
    pub version: u32,
    pub config: ConfigRecord,
    pub metric: Vec<Vec<f64>>,
    pub subspaces: Vec<SubspaceRecord>,
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

impl ScenarioFile {
    pub fn from_scenario(s: &Scenario) -> Self {
        let subspaces = s
            .subspaces
            .iter()
            .zip(&s.users)
            .zip(&s.datasets)
            .map(|((v, ideal), per_user)| SubspaceRecord {
                basis: matrix_rows(v.basis()),
                users: ideal
                    .iter()
                    .zip(per_user)
                    .map(|(u, ms)| UserRecord {
                        ideal_point: vec_of(u),
                        comparisons: ms
                            .iter()
                            .map(|m| ComparisonRecord {
                                a: vec_of(&m.item_a),
                                b: vec_of(&m.item_b),
                                y: m.response.sign() as i8,
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect();
        ScenarioFile {
            format: SCENARIO_FORMAT.into(),
            version: VERSION,
            config: s.config.into(),
            metric: sym_rows(&s.metric),
            subspaces,
        }
    }

    pub fn to_scenario(&self) -> std::result::Result<Scenario, String> {
        check_header(&self.format, self.version, SCENARIO_FORMAT)?;
        let config: ScenarioConfig = self.config.clone().into();
        let metric = rows_sym(&self.metric)?;
        let mut subspaces = Vec::new();
        let mut users = Vec::new();
        let mut datasets = Vec::new();
        for (lambda, rec) in self.subspaces.iter().enumerate() {
            let at = |e: String| format!("subspace {lambda}: {e}");
            let basis = rows_matrix(&rec.basis, config.r).map_err(at)?;
            subspaces.push(Subspace::new(basis).map_err(|e| at(e.to_string()))?);
            users.push(
                rec.users
                    .iter()
                    .map(|u| DVector::from_vec(u.ideal_point.clone()))
                    .collect(),
            );
            let per_user = rec
                .users
                .iter()
                .map(|u| {
                    u.comparisons
                        .iter()
                        .map(|c| {
                            let y = Label::try_from(c.y as i64).map_err(|e| at(e.to_string()))?;
                            Ok(Measurement::new(
                                DVector::from_vec(c.a.clone()),
                                DVector::from_vec(c.b.clone()),
                                y,
                            ))
                        })
                        .collect::<std::result::Result<Vec<_>, String>>()
                })
                .collect::<std::result::Result<Vec<_>, String>>()?;
            datasets.push(per_user);
        }
        Scenario::from_parts(config, metric, subspaces, users, datasets).map_err(|e| e.to_string())
    }
}

fn check_header(format: &str, version: u32, expected: &str) -> std::result::Result<(), String> {
    if format != expected {
        return Err(format!("format is {format:?}, expected {expected:?}"));
    }
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    Ok(())
}

pub fn stop_name(stop: StopReason) -> &'static str {
    match stop {
        StopReason::EmptyData => "empty_data",
        StopReason::GradientTolerance => "gradient_tolerance",
        StopReason::Stagnation => "stagnation",
        StopReason::LineSearchStall => "line_search_stall",
        StopReason::MaxIterations => "max_iterations",
    }
}

pub fn parse_stop(name: &str) -> Option<StopReason> {
    [
        StopReason::EmptyData,
        StopReason::GradientTolerance,
        StopReason::Stagnation,
        StopReason::LineSearchStall,
        StopReason::MaxIterations,
    ]
    .into_iter()
    .find(|&s| stop_name(s) == name)
}

/// One subspace's stage-1 outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitRecord {
    pub basis: Vec<Vec<f64>>,
    /// Absent when the fit failed.
    #[serde(default)]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub pseudo_points: Vec<Vec<f64>>,
    #[serde(with = "json_float")]
    pub objective: f64,
    pub converged: bool,
    #[serde(default)]
    pub stop: Option<String>,
    pub iterations: usize,
    #[serde(with = "json_float")]
    pub kkt_residual: f64,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitsFile {
    pub format: String,
    pub version: u32,
    pub model: ModelSpec,
    /// Ground truth, copied from the scenario when known.
    #[serde(default)]
    pub reference_metric: Option<Vec<Vec<f64>>>,
    pub fits: Vec<FitRecord>,
}

impl FitRecord {
    pub fn new(subspace: &Subspace, fit: &metric_stitch_core::Result<FitResult>) -> Self {
        let basis = matrix_rows(subspace.basis());
        match fit {
            Ok(f) => FitRecord {
                basis,
                q: Some(sym_rows(&f.q_hat.q)),
                pseudo_points: f.pseudo_points.iter().map(vec_of).collect(),
                objective: f.objective,
                converged: f.converged,
                stop: Some(stop_name(f.stop).into()),
                iterations: f.iterations,
                kkt_residual: f.kkt_residual,
                error: None,
            },
            Err(e) => FitRecord {
                basis,
                q: None,
                pseudo_points: Vec::new(),
                objective: f64::NAN,
                converged: false,
                stop: None,
                iterations: 0,
                kkt_residual: f64::NAN,
                error: Some(e.to_string()),
            },
        }
    }

    /// The subspace and the fit as the stitcher expects it.
    pub fn to_fit(
        &self,
    ) -> std::result::Result<(Subspace, metric_stitch_core::Result<FitResult>), String> {
        let r = self.basis.first().map_or(0, Vec::len);
        let subspace = Subspace::new(rows_matrix(&self.basis, r)?).map_err(|e| e.to_string())?;
        let Some(q) = &self.q else {
            return Ok((
                subspace,
                Err(metric_stitch_core::Error::InvalidParameter(
                    "stage-1 fit failed",
                )),
            ));
        };
        let q = rows_sym(q)?;
        let stop = self
            .stop
            .as_deref()
            .and_then(parse_stop)
            .ok_or_else(|| format!("bad stop reason {:?}", self.stop))?;
        let fit = FitResult {
            q_hat: SubspaceMetric::new(subspace.clone(), q).map_err(|e| e.to_string())?,
            pseudo_points: self
                .pseudo_points
                .iter()
                .map(|p| DVector::from_vec(p.clone()))
                .collect(),
            objective: self.objective,
            converged: self.converged,
            stop,
            iterations: self.iterations,
            kkt_residual: self.kkt_residual,
            trace: Vec::new(),
        };
        Ok((subspace, Ok(fit)))
    }
}

impl FitsFile {
    pub fn check(&self) -> std::result::Result<(), String> {
        check_header(&self.format, self.version, FITS_FORMAT)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateFile {
    pub format: String,
    pub version: u32,
    /// PSD-projected estimate.
    pub metric: Vec<Vec<f64>>,
    pub stitched: Vec<Vec<f64>>,
    pub retained: Vec<usize>,
    pub fallback_last: bool,
    pub unique: bool,
    pub sigma_min: f64,
    pub pi_rank: usize,
    pub residuals: Vec<f64>,
    #[serde(default)]
    pub rel_error: Option<f64>,
}

impl EstimateFile {
    pub fn new(rec: &Recovery, rel_error: Option<f64>) -> Self {
        let d = &rec.diagnostics;
        EstimateFile {
            format: ESTIMATE_FORMAT.into(),
            version: VERSION,
            metric: sym_rows(&rec.metric),
            stitched: sym_rows(&rec.stitched),
            retained: d.retained.clone(),
            fallback_last: d.fallback_last,
            unique: d.unique,
            sigma_min: d.sigma_min,
            pi_rank: d.pi_rank,
            residuals: d.residuals.clone(),
            rel_error,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = BufWriter::new(file);
    to_json_writer(&mut w, value).map_err(|e| HarnessError::io(path, e.into()))?;
    w.write_all(b"\n").map_err(|e| HarnessError::io(path, e))?;
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| HarnessError::format(path, e))
}

pub fn write_scenario(path: &Path, s: &Scenario) -> Result<()> {
    write_json(path, &ScenarioFile::from_scenario(s))
}

pub fn read_scenario(path: &Path) -> Result<Scenario> {
    let file: ScenarioFile = read_json(path)?;
    file.to_scenario()
        .map_err(|e| HarnessError::format(path, e))
}
