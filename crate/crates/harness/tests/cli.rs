use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use metric_stitch::commands::{self, Overrides};
use metric_stitch::config::{ExperimentId, ExperimentSpec};
use metric_stitch::files::EstimateFile;
use metric_stitch::output::read_results;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metric-stitch"))
        .args(args)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn shipped_configs_load_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for (file, id) in [
        ("exp1.toml", ExperimentId::Exp1),
        ("exp2.toml", ExperimentId::Exp2),
        ("exp3.toml", ExperimentId::Exp3),
        ("misspec.toml", ExperimentId::Misspec),
    ] {
        let spec = ExperimentSpec::load(&dir.join(file)).unwrap();
        assert_eq!(spec.experiment, id, "{file}");
        spec.validate().unwrap();
        assert!(!spec.cells().is_empty());
        assert!(spec.output.as_ref().unwrap().starts_with(&dir));
    }
}

#[test]
fn generate_fit_stitch_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gen = write(
        d,
        "gen.toml",
        "d = 3\nn_subspaces = 8\nusers = 20\ncomparisons = 6\nseed = 5\noutput = \"s.json\"\n",
    );
    let fit = write(
        d,
        "fit.toml",
        "scenario = \"s.json\"\noutput = \"f.json\"\n",
    );
    let stitch = write(d, "stitch.toml", "fits = \"f.json\"\noutput = \"e.json\"\n");
    for (cmd, cfg) in [("generate", &gen), ("fit", &fit), ("stitch", &stitch)] {
        let out = bin(&[cmd, s(cfg)]);
        assert!(
            out.status.success(),
            "{cmd}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let estimate: EstimateFile =
        serde_json::from_str(&std::fs::read_to_string(d.join("e.json")).unwrap()).unwrap();
    let err = estimate.rel_error.unwrap();
    assert!(err.is_finite() && err < 1.0, "rel_error {err}");

    // the library path gives the same estimate bytes
    let again = d.join("e2.json");
    commands::stitch(
        &stitch,
        &Overrides {
            out: Some(again.clone()),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(
        std::fs::read(d.join("e.json")).unwrap(),
        std::fs::read(again).unwrap()
    );
}

#[test]
fn fit_can_generate_in_place() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "fit.toml",
        "output = \"f.json\"\nmodel = { loss = \"hinge\" }\n[generate]\nd = 2\nn_subspaces = 4\nusers = 10\ncomparisons = 4\n",
    );
    let out = bin(&["fit", s(&cfg), "--seed", "9"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(dir.path().join("f.json")).unwrap();
    assert!(text.contains("\"hinge\""));
}

#[test]
fn experiment_with_artifacts_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write(
        d,
        "exp.toml",
        "experiment = \"misspec\"\nruns = 2\nd = [4]\nn_subspaces = [12]\nusers = [10]\ncomparisons = [4]\n\
         beta_data = [1.0, inf]\nmodel = [{ loss = \"logistic\", beta = 1.0 }, { loss = \"hinge\" }]\n\
         output = \"r.jsonl\"\nartifacts = \"a.jsonl\"\n",
    );
    let out = bin(&["misspec", s(&cfg), "--jobs", "2"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("wrote"));
    let rows = read_results(&d.join("r.jsonl")).unwrap();
    assert_eq!(rows.len(), 8);
    assert!(d.join("r.summary.csv").exists());

    let verify = write(
        d,
        "verify.toml",
        "results = \"r.jsonl\"\nartifacts = \"a.jsonl\"\n",
    );
    let out = bin(&["verify", s(&verify)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = commands::verify(&verify, &Overrides::default()).unwrap();
    assert_eq!(report.checked + report.skipped, 8);
}

#[test]
fn verify_rejects_tampered_results() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write(
        d,
        "exp.toml",
        "experiment = \"exp1\"\nruns = 1\nd = [3]\nn_subspaces = [8]\nusers = [10]\ncomparisons = [4]\n\
         output = \"r.csv\"\nartifacts = \"a.jsonl\"\n",
    );
    assert!(bin(&["exp1", s(&cfg)]).status.success());
    let text = std::fs::read_to_string(d.join("r.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let cols: Vec<&str> = lines[1].split(',').collect();
    let idx = metric_stitch::output::CSV_HEADER
        .iter()
        .position(|&c| c == "rel_error")
        .unwrap();
    let mut cols: Vec<String> = cols.into_iter().map(String::from).collect();
    cols[idx] = "5.0000000000000000e-1".into();
    lines[1] = cols.join(",");
    std::fs::write(d.join("r.csv"), lines.join("\n") + "\n").unwrap();
    let verify = write(
        d,
        "verify.toml",
        "results = \"r.csv\"\nartifacts = \"a.jsonl\"\n",
    );
    let out = bin(&["verify", s(&verify)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bad = write(d, "bad.toml", "experiment = \"exp1\"\nruns = 0\nd = [3]\nn_subspaces = [8]\nusers = [10]\ncomparisons = [4]\noutput = \"r.csv\"\n");
    assert_eq!(bin(&["exp1", s(&bad)]).status.code(), Some(2));
    let unknown = write(d, "unknown.toml", "experiment = \"exp1\"\nbogus = 1\n");
    assert_eq!(bin(&["exp1", s(&unknown)]).status.code(), Some(2));
    let wrong = write(d, "wrong.toml", "experiment = \"exp3\"\nruns = 1\nd = [3]\nn_subspaces = [8]\nusers = [10]\ncomparisons = [4]\noutput = \"r.csv\"\n");
    assert_eq!(bin(&["exp1", s(&wrong)]).status.code(), Some(2));
    assert_eq!(
        bin(&["exp1", s(&d.join("missing.toml"))]).status.code(),
        Some(1)
    );
    let stitch = write(
        d,
        "stitch.toml",
        "fits = \"nope.json\"\noutput = \"e.json\"\n",
    );
    assert_eq!(bin(&["stitch", s(&stitch)]).status.code(), Some(1));
    assert_eq!(
        bin(&["exp1", s(&bad), "--jobs", "0"]).status.code(),
        Some(2)
    );
    assert_eq!(bin(&["no-such-command"]).status.code(), Some(2));
}
