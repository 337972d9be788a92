//! Experiment configuration: TOML sweep grids and their expansion into cells.

use std::path::{Path, PathBuf};

use metric_stitch_core::{LossSpec, StitchMode};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentId {
    /// Error against users per subspace and comparisons per user.
    Exp1,
    /// Error against the number of subspaces.
    Exp2,
    /// Error against off-subspace item noise, with SVD denoising.
    Exp3,
    /// Data and model link decoupled, including the hinge loss.
    Misspec,
}

impl ExperimentId {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::Exp1 => "exp1",
            ExperimentId::Exp2 => "exp2",
            ExperimentId::Exp3 => "exp3",
            ExperimentId::Misspec => "misspec",
        }
    }
}

/// Stage-1 loss. A logistic model without `beta` uses the data's β.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "loss", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelSpec {
    Logistic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        beta: Option<f64>,
    },
    Hinge,
}

impl ModelSpec {
    pub const MATCHED: ModelSpec = ModelSpec::Logistic { beta: None };

    pub fn resolve(&self, beta_data: f64) -> Result<LossSpec> {
        match *self {
            ModelSpec::Hinge => Ok(LossSpec::Hinge),
            ModelSpec::Logistic { beta } => {
                let beta = beta.unwrap_or(beta_data);
                LossSpec::logistic(beta).map_err(|_| {
                    HarnessError::Config(format!(
                        "logistic model needs a positive finite beta, got {beta} (set model.beta when beta_data is inf)"
                    ))
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StitchKind {
    Ls,
    #[default]
    Huber,
}

impl StitchKind {
    pub fn name(self) -> &'static str {
        match self {
            StitchKind::Ls => "ls",
            StitchKind::Huber => "huber",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            max_iters: default_max_iters(),
            grad_tol: default_grad_tol(),
        }
    }
}

fn default_max_iters() -> usize {
    100_000
}
fn default_grad_tol() -> f64 {
    1e-6
}
fn default_r() -> usize {
    1
}
fn default_sigma() -> Vec<f64> {
    vec![0.0]
}
fn default_beta() -> Vec<f64> {
    vec![1.0]
}
fn default_model() -> Vec<ModelSpec> {
    vec![ModelSpec::MATCHED]
}
fn default_delta() -> f64 {
    metric_stitch_core::quantized::HUBER_DELTA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment: ExperimentId,
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    pub d: Vec<usize>,
    #[serde(default = "default_r")]
    pub r: usize,
    pub n_subspaces: Vec<usize>,
    /// Users per subspace (K).
    pub users: Vec<usize>,
    /// Comparisons per user (m).
    pub comparisons: Vec<usize>,
    #[serde(default = "default_sigma")]
    pub sigma: Vec<f64>,
    #[serde(default = "default_beta")]
    pub beta_data: Vec<f64>,
    #[serde(default = "default_model")]
    pub model: Vec<ModelSpec>,
    #[serde(default)]
    pub stitch: StitchKind,
    #[serde(default = "default_delta")]
    pub huber_delta: f64,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Inferred from the output extension when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<OutputFormat>,
    /// Per-run `(M, M̂)` pairs as JSON lines, for `verify`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifacts: Option<PathBuf>,
    /// Record wall time per run; off keeps output byte-reproducible.
    #[serde(default)]
    pub timing: bool,
}

/// One point of the sweep grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub d: usize,
    pub r: usize,
    pub n_subspaces: usize,
    pub users: usize,
    pub comparisons: usize,
    pub beta_data: f64,
    pub sigma: f64,
    pub model: ModelSpec,
    pub loss: LossSpec,
    pub stitch: StitchKind,
    pub huber_delta: f64,
}

impl Cell {
    pub fn stitch_mode(&self) -> StitchMode {
        match self.stitch {
            StitchKind::Ls => StitchMode::LeastSquares,
            StitchKind::Huber => StitchMode::Robust {
                delta: self.huber_delta,
            },
        }
    }

    /// The model's β, absent for the hinge loss.
    pub fn beta_model(&self) -> Option<f64> {
        match self.loss {
            LossSpec::Logistic { beta } => Some(beta),
            LossSpec::Hinge => None,
        }
    }

    pub fn loss_name(&self) -> &'static str {
        match self.loss {
            LossSpec::Logistic { .. } => "logistic",
            LossSpec::Hinge => "hinge",
        }
    }
}

/// Fewest `r`-dimensional subspaces whose restrictions can determine a
/// `d`-dimensional metric: `⌈d(d+1) / (r(r+1))⌉`.
pub fn min_subspaces(d: usize, r: usize) -> usize {
    (d * (d + 1)).div_ceil(r * (r + 1))
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Reads a TOML file; relative output paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut spec = Self::from_toml_str(&text).map_err(|e| match e {
            HarnessError::Config(msg) => config_err(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        spec.output = spec.output.map(|p| base.join(p));
        spec.artifacts = spec.artifacts.map(|p| base.join(p));
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("experiment spec serializes")
    }

    /// Default grids: 30 runs, r = 1, β = 1, Huber stitching.
    pub fn preset(id: ExperimentId) -> Self {
        let mut spec = ExperimentSpec {
            experiment: id,
            runs: 30,
            seed: 0,
            d: vec![10],
            r: 1,
            n_subspaces: vec![80],
            users: vec![10, 20, 40, 60],
            comparisons: vec![2, 4, 6, 8],
            sigma: default_sigma(),
            beta_data: default_beta(),
            model: default_model(),
            stitch: StitchKind::Huber,
            huber_delta: default_delta(),
            solver: SolverSettings::default(),
            output: None,
            format: None,
            artifacts: None,
            timing: false,
        };
        match id {
            ExperimentId::Exp1 => {}
            ExperimentId::Exp2 => {
                spec.d = (3..=10).collect();
                spec.n_subspaces = (5..=80).collect();
                spec.users = vec![60];
                spec.comparisons = vec![4];
            }
            ExperimentId::Exp3 => {
                spec.comparisons = vec![8];
                spec.sigma = vec![0.0, 0.1, 0.2, 0.3];
            }
            ExperimentId::Misspec => {
                spec.beta_data = vec![1.0, 4.0, f64::INFINITY];
                spec.model = vec![ModelSpec::Logistic { beta: Some(1.0) }, ModelSpec::Hinge];
            }
        }
        spec
    }

    pub fn output_format(&self) -> OutputFormat {
        self.format
            .unwrap_or_else(|| self.output.as_deref().map_or(OutputFormat::Csv, format_for))
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(config_err("runs must be at least 1"));
        }
        let grids = [
            ("d", self.d.is_empty()),
            ("n_subspaces", self.n_subspaces.is_empty()),
            ("users", self.users.is_empty()),
            ("comparisons", self.comparisons.is_empty()),
            ("sigma", self.sigma.is_empty()),
            ("beta_data", self.beta_data.is_empty()),
            ("model", self.model.is_empty()),
        ];
        if let Some((name, _)) = grids.iter().find(|(_, empty)| *empty) {
            return Err(config_err(format!("grid `{name}` is empty")));
        }
        if self.r == 0 {
            return Err(config_err("r must be at least 1"));
        }
        if let Some(d) = self.d.iter().find(|&&d| d < self.r) {
            return Err(config_err(format!(
                "d = {d} is smaller than r = {}",
                self.r
            )));
        }
        let zero = |v: &[usize]| v.contains(&0);
        if zero(&self.n_subspaces) || zero(&self.users) || zero(&self.comparisons) {
            return Err(config_err(
                "n_subspaces, users and comparisons must be at least 1",
            ));
        }
        for &s in &self.sigma {
            if !(0.0..=1.0).contains(&s) {
                return Err(config_err(format!("sigma = {s} is outside [0, 1]")));
            }
            if s > 0.0 && self.d.contains(&self.r) {
                return Err(config_err("sigma > 0 needs d > r"));
            }
        }
        if matches!(self.experiment, ExperimentId::Exp1 | ExperimentId::Exp2)
            && self.sigma.iter().any(|&s| s != 0.0)
        {
            return Err(config_err(format!(
                "{} does not sweep sigma; use exp3",
                self.experiment.name()
            )));
        }
        if let Some(b) = self.beta_data.iter().find(|b| !(**b >= 0.0)) {
            return Err(config_err(format!("beta_data = {b} must be non-negative")));
        }
        if !(self.huber_delta > 0.0 && self.huber_delta.is_finite()) {
            return Err(config_err("huber_delta must be positive and finite"));
        }
        if !(self.solver.grad_tol > 0.0 && self.solver.grad_tol.is_finite()) {
            return Err(config_err("solver.grad_tol must be positive and finite"));
        }
        for model in &self.model {
            for &b in &self.beta_data {
                model.resolve(b)?;
            }
        }
        Ok(())
    }

    /// Grid cells in emission order: d, n, K, m, β_data, σ, model.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &d in &self.d {
            for &n in &self.n_subspaces {
                for &k in &self.users {
                    for &m in &self.comparisons {
                        for &beta_data in &self.beta_data {
                            for &sigma in &self.sigma {
                                for model in &self.model {
                                    out.push(Cell {
                                        d,
                                        r: self.r,
                                        n_subspaces: n,
                                        users: k,
                                        comparisons: m,
                                        beta_data,
                                        sigma,
                                        model: *model,
                                        loss: model.resolve(beta_data).expect("validated"),
                                        stitch: self.stitch,
                                        huber_delta: self.huber_delta,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// The output format implied by a path's extension.
pub fn format_for(path: &Path) -> OutputFormat {
    if path.extension().is_some_and(|e| e == "jsonl") {
        OutputFormat::Jsonl
    } else {
        OutputFormat::Csv
    }
}
