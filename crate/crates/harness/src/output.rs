//! Result files: CSV and JSON lines with 17-significant-digit floats, per-cell
//! summaries, and `(M, M̂)` artifacts.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use metric_stitch_core::{LossSpec, SymMatrix};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::{OutputFormat, StitchKind};
use crate::error::{HarnessError, Result};
use crate::experiment::{Artifact, CellSummary, Diagnostics, ExperimentOutput, ResultRow};

pub const CSV_HEADER: [&str; 14] = [
    "run",
    "d",
    "r",
    "n_subspaces",
    "K",
    "m",
    "beta_data",
    "beta_model",
    "loss",
    "stitch",
    "sigma",
    "rel_error",
    "subspaces_retained",
    "wall_time_s",
];

pub const SUMMARY_HEADER: [&str; 17] = [
    "d",
    "r",
    "n_subspaces",
    "K",
    "m",
    "beta_data",
    "beta_model",
    "loss",
    "stitch",
    "sigma",
    "runs",
    "failures",
    "mean_rel_error",
    "std_rel_error",
    "mean_retained",
    "mean_principal_angle",
    "threshold",
];

/// 17 significant digits, or `inf` / `-inf` / `nan`.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x:.16e}")
    }
}

pub fn parse_float(s: &str) -> Option<f64> {
    s.trim().parse().ok()
}

/// JSON formatter writing every float with 17 significant digits.
#[derive(Debug, Clone, Copy, Default)]
pub struct SciFormatter;

impl serde_json::ser::Formatter for SciFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        write!(writer, "{:.16e}", value as f64)
    }
}

/// Compact JSON with [`SciFormatter`] floats.
pub fn to_json_writer<W: Write, T: Serialize + ?Sized>(
    writer: W,
    value: &T,
) -> serde_json::Result<()> {
    let mut ser = serde_json::Serializer::with_formatter(writer, SciFormatter);
    value.serialize(&mut ser)
}

pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> String {
    let mut buf = Vec::new();
    to_json_writer(&mut buf, value).expect("in-memory JSON");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

/// Finite floats as JSON numbers, the rest as `"inf"`, `"-inf"` or `"nan"`.
pub fn float_value(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or_else(|| Value::String(fmt_float(x)), Value::Number)
}

pub fn value_float(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => parse_float(s),
        _ => None,
    }
}

/// Serde adapter for floats that may be infinite or NaN.
pub mod json_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_str(&super::fmt_float(*x))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(s) => super::parse_float(&s)
                .ok_or_else(|| serde::de::Error::custom(format!("bad float {s:?}"))),
        }
    }
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// Row-major nested arrays to a matrix; `cols` fixes the width of an empty list.
pub fn rows_matrix(rows: &[Vec<f64>], cols: usize) -> std::result::Result<DMatrix<f64>, String> {
    if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
        return Err(format!(
            "row {bad} has {} entries, expected {cols}",
            rows[bad].len()
        ));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn sym_rows(m: &SymMatrix) -> Vec<Vec<f64>> {
    matrix_rows(&m.to_matrix())
}

pub fn rows_sym(rows: &[Vec<f64>]) -> std::result::Result<SymMatrix, String> {
    let m = rows_matrix(rows, rows.len())?;
    SymMatrix::from_matrix(&m).map_err(|e| e.to_string())
}

fn row_fields(row: &ResultRow) -> [String; 14] {
    [
        row.run.to_string(),
        row.d.to_string(),
        row.r.to_string(),
        row.n_subspaces.to_string(),
        row.users.to_string(),
        row.comparisons.to_string(),
        fmt_float(row.beta_data),
        row.beta_model().map_or_else(String::new, fmt_float),
        loss_name(&row.loss).into(),
        row.stitch.name().into(),
        fmt_float(row.sigma),
        fmt_float(row.rel_error),
        row.subspaces_retained.to_string(),
        fmt_float(row.wall_time_s),
    ]
}

fn loss_name(loss: &LossSpec) -> &'static str {
    match loss {
        LossSpec::Logistic { .. } => "logistic",
        LossSpec::Hinge => "hinge",
    }
}

fn parse_loss(name: &str, beta: Option<f64>) -> std::result::Result<LossSpec, String> {
    match (name, beta) {
        ("logistic", Some(beta)) => Ok(LossSpec::Logistic { beta }),
        ("hinge", None) => Ok(LossSpec::Hinge),
        _ => Err(format!("bad loss {name:?} with beta_model {beta:?}")),
    }
}

fn parse_stitch(name: &str) -> std::result::Result<StitchKind, String> {
    match name {
        "ls" => Ok(StitchKind::Ls),
        "huber" => Ok(StitchKind::Huber),
        _ => Err(format!("bad stitch {name:?}")),
    }
}

pub fn write_csv<W: Write>(rows: &[ResultRow], writer: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.write_record(row_fields(row))?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(rows: &[ResultRow]) -> String {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf).expect("in-memory CSV");
    String::from_utf8(buf).expect("CSV is UTF-8")
}

fn parse_row(rec: &csv::StringRecord) -> std::result::Result<ResultRow, String> {
    let field = |i: usize| {
        rec.get(i)
            .ok_or_else(|| format!("missing column {}", CSV_HEADER[i]))
    };
    let int = |i: usize| -> std::result::Result<usize, String> {
        field(i)?
            .parse()
            .map_err(|_| format!("bad integer in {}", CSV_HEADER[i]))
    };
    let float = |i: usize| -> std::result::Result<f64, String> {
        parse_float(field(i)?).ok_or_else(|| format!("bad float in {}", CSV_HEADER[i]))
    };
    let beta_model = match field(7)? {
        "" => None,
        _ => Some(float(7)?),
    };
    Ok(ResultRow {
        run: int(0)?,
        d: int(1)?,
        r: int(2)?,
        n_subspaces: int(3)?,
        users: int(4)?,
        comparisons: int(5)?,
        beta_data: float(6)?,
        loss: parse_loss(field(8)?, beta_model)?,
        stitch: parse_stitch(field(9)?)?,
        sigma: float(10)?,
        rel_error: float(11)?,
        subspaces_retained: int(12)?,
        wall_time_s: float(13)?,
    })
}

/// Parses CSV written by [`write_csv`]; the header must match exactly.
pub fn read_csv<R: Read>(reader: R) -> std::result::Result<Vec<ResultRow>, String> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers().map_err(|e| e.to_string())?;
    if header.iter().ne(CSV_HEADER) {
        return Err(format!(
            "unexpected header {:?}",
            header.iter().collect::<Vec<_>>()
        ));
    }
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| e.to_string())?;
            parse_row(&rec).map_err(|e| format!("row {}: {e}", i + 1))
        })
        .collect()
}

pub fn row_json(row: &ResultRow, diag: &Diagnostics) -> Value {
    let mut m = Map::new();
    m.insert("run".into(), Value::from(row.run));
    m.insert("d".into(), Value::from(row.d));
    m.insert("r".into(), Value::from(row.r));
    m.insert("n_subspaces".into(), Value::from(row.n_subspaces));
    m.insert("K".into(), Value::from(row.users));
    m.insert("m".into(), Value::from(row.comparisons));
    m.insert("beta_data".into(), float_value(row.beta_data));
    m.insert(
        "beta_model".into(),
        row.beta_model().map_or(Value::Null, float_value),
    );
    m.insert("loss".into(), Value::from(loss_name(&row.loss)));
    m.insert("stitch".into(), Value::from(row.stitch.name()));
    m.insert("sigma".into(), float_value(row.sigma));
    m.insert("rel_error".into(), float_value(row.rel_error));
    m.insert(
        "subspaces_retained".into(),
        Value::from(row.subspaces_retained),
    );
    m.insert("wall_time_s".into(), float_value(row.wall_time_s));
    m.insert("converged".into(), Value::from(diag.converged));
    m.insert("fallback_last".into(), Value::Bool(diag.fallback_last));
    m.insert("unique".into(), Value::Bool(diag.unique));
    m.insert("sigma_min".into(), float_value(diag.sigma_min));
    m.insert("pi_rank".into(), Value::from(diag.pi_rank));
    m.insert(
        "mean_principal_angle".into(),
        float_value(diag.mean_principal_angle),
    );
    m.insert(
        "error".into(),
        diag.error.clone().map_or(Value::Null, Value::String),
    );
    Value::Object(m)
}

fn json_row(v: &Value) -> std::result::Result<(ResultRow, Diagnostics), String> {
    let get = |k: &str| v.get(k).ok_or_else(|| format!("missing field {k}"));
    let int = |k: &str| -> std::result::Result<usize, String> {
        get(k)?
            .as_u64()
            .map(|x| x as usize)
            .ok_or_else(|| format!("bad integer in {k}"))
    };
    let float = |k: &str| -> std::result::Result<f64, String> {
        value_float(get(k)?).ok_or_else(|| format!("bad float in {k}"))
    };
    let text = |k: &str| -> std::result::Result<&str, String> {
        get(k)?.as_str().ok_or_else(|| format!("bad string in {k}"))
    };
    let flag = |k: &str| -> std::result::Result<bool, String> {
        get(k)?.as_bool().ok_or_else(|| format!("bad bool in {k}"))
    };
    let beta_model = match get("beta_model")? {
        Value::Null => None,
        _ => Some(float("beta_model")?),
    };
    let row = ResultRow {
        run: int("run")?,
        d: int("d")?,
        r: int("r")?,
        n_subspaces: int("n_subspaces")?,
        users: int("K")?,
        comparisons: int("m")?,
        beta_data: float("beta_data")?,
        loss: parse_loss(text("loss")?, beta_model)?,
        stitch: parse_stitch(text("stitch")?)?,
        sigma: float("sigma")?,
        rel_error: float("rel_error")?,
        subspaces_retained: int("subspaces_retained")?,
        wall_time_s: float("wall_time_s")?,
    };
    let diag = Diagnostics {
        converged: int("converged")?,
        fallback_last: flag("fallback_last")?,
        unique: flag("unique")?,
        sigma_min: float("sigma_min")?,
        pi_rank: int("pi_rank")?,
        mean_principal_angle: float("mean_principal_angle")?,
        error: get("error")?.as_str().map(str::to_owned),
    };
    Ok((row, diag))
}

pub fn write_jsonl<W: Write>(
    rows: &[ResultRow],
    diags: &[Diagnostics],
    mut writer: W,
) -> io::Result<()> {
    for (row, diag) in rows.iter().zip(diags) {
        to_json_writer(&mut writer, &row_json(row, diag))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn read_jsonl<R: Read>(
    reader: R,
) -> std::result::Result<Vec<(ResultRow, Diagnostics)>, String> {
    BufReader::new(reader)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, line)| {
            let line = line.map_err(|e| e.to_string())?;
            let v: Value =
                serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?;
            json_row(&v).map_err(|e| format!("line {}: {e}", i + 1))
        })
        .collect()
}

pub fn write_summary<W: Write>(summary: &[CellSummary], writer: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(SUMMARY_HEADER)?;
    for s in summary {
        let c = &s.cell;
        w.write_record([
            c.d.to_string(),
            c.r.to_string(),
            c.n_subspaces.to_string(),
            c.users.to_string(),
            c.comparisons.to_string(),
            fmt_float(c.beta_data),
            c.beta_model().map_or_else(String::new, fmt_float),
            c.loss_name().into(),
            c.stitch.name().into(),
            fmt_float(c.sigma),
            s.runs.to_string(),
            s.failures.to_string(),
            fmt_float(s.mean_rel_error),
            fmt_float(s.std_rel_error),
            fmt_float(s.mean_retained),
            fmt_float(s.mean_principal_angle),
            s.threshold.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn artifact_json(a: &Artifact, rel_error: f64) -> Value {
    let mut m = Map::new();
    m.insert("cell".into(), Value::from(a.cell));
    m.insert("run".into(), Value::from(a.run));
    m.insert("rel_error".into(), float_value(rel_error));
    let mat = |s: &Option<SymMatrix>| {
        s.as_ref().map_or(Value::Null, |s| {
            serde_json::to_value(sym_rows(s)).expect("finite")
        })
    };
    m.insert("metric".into(), mat(&a.metric));
    m.insert("estimate".into(), mat(&a.estimate));
    Value::Object(m)
}

/// `(cell, run, metric, estimate)` per artifact line.
pub fn read_artifacts<R: Read>(reader: R) -> std::result::Result<Vec<Artifact>, String> {
    BufReader::new(reader)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, line)| {
            let line = line.map_err(|e| e.to_string())?;
            let v: Value =
                serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?;
            let mat = |k: &str| -> std::result::Result<Option<SymMatrix>, String> {
                match v.get(k) {
                    None | Some(Value::Null) => Ok(None),
                    Some(rows) => {
                        let rows: Vec<Vec<f64>> =
                            serde_json::from_value(rows.clone()).map_err(|e| e.to_string())?;
                        rows_sym(&rows).map(Some)
                    }
                }
            };
            let idx = |k: &str| {
                v.get(k)
                    .and_then(Value::as_u64)
                    .map(|x| x as usize)
                    .ok_or_else(|| format!("line {}: missing {k}", i + 1))
            };
            Ok(Artifact {
                cell: idx("cell")?,
                run: idx("run")?,
                metric: mat("metric")?,
                estimate: mat("estimate")?,
            })
        })
        .collect()
}

/// `exp1.csv` → `exp1.summary.csv`.
pub fn summary_path(out: &Path) -> PathBuf {
    out.with_extension("summary.csv")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| HarnessError::io(path, e))
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> HarnessError + '_ {
    move |e| HarnessError::io(path, e)
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::io(path, e.into())
}

/// Writes rows to `out` in `format`, the cell summary next to it, and the
/// artifacts when `artifacts` is set. Returns the paths written.
pub fn write_experiment(
    output: &ExperimentOutput,
    out: &Path,
    format: OutputFormat,
    artifacts: Option<&Path>,
) -> Result<Vec<PathBuf>> {
    let mut written = vec![out.to_path_buf()];
    let w = create(out)?;
    match format {
        OutputFormat::Csv => write_csv(&output.rows, w).map_err(csv_err(out))?,
        OutputFormat::Jsonl => {
            write_jsonl(&output.rows, &output.diagnostics, w).map_err(io_err(out))?
        }
    }
    let sp = summary_path(out);
    write_summary(&output.summary, create(&sp)?).map_err(csv_err(&sp))?;
    written.push(sp);
    if let Some(path) = artifacts {
        let mut w = create(path)?;
        for (a, row) in output.artifacts.iter().zip(&output.rows) {
            to_json_writer(&mut w, &artifact_json(a, row.rel_error))
                .map_err(|e| HarnessError::io(path, e.into()))?;
            w.write_all(b"\n").map_err(io_err(path))?;
        }
        w.flush().map_err(io_err(path))?;
        written.push(path.to_path_buf());
    }
    Ok(written)
}

/// Reads result rows from CSV, or JSON lines when the extension is `jsonl`.
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let rows = if path.extension().is_some_and(|e| e == "jsonl") {
        read_jsonl(file).map(|v| v.into_iter().map(|(r, _)| r).collect())
    } else {
        read_csv(file)
    };
    rows.map_err(|e| HarnessError::format(path, e))
}
