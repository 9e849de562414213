use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::Rng;

use fairaudit::experiment::{Experiment, ExperimentConfig, Method, ReportFormat};
use fairaudit::{rng, Error};

const MANIFEST: &str = r#"
name = "toy"
source_path = "toy.csv"
sensitive_column = "sex"
privileged = { values = ["M"], otherwise = ["F"] }
label_column = "label"
favorable = { values = ["yes"], otherwise = ["no"] }
split_fraction = 0.5
features = [
    { name = "a", kind = "numeric" },
    { name = "b", kind = "numeric" },
    { name = "color", kind = "categorical" },
]
"#;

const CONFIG: &str = r#"
name = "toy"
dataset = "toy.toml"
runs = 2
base_seed = 7
output_dir = "out"
workers = 2

[biased]
hidden_sizes = [8]
epochs = 4
learning_rate = 0.01

[lfr]
iterations = 40

[adversarial_dp]
adversary_weight = 1.0
[adversarial_dp.classifier]
hidden_sizes = [8]
epochs = 3

[adversarial_eo]
[adversarial_eo.classifier]
hidden_sizes = [8]
epochs = 3

[roc]
objective_target = 0.8

[plsda]
pairs = [["lfr", "adversarial_dp"], ["roc", "threshold_opt"]]
group = 0
"#;

/// A study directory with a biased toy dataset, its manifest and a config.
fn workspace(extra: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng::stream(99, "pipeline-toy");
    let mut csv = String::from("a,b,color,sex,label\n");
    for _ in 0..600 {
        let male = r.gen_bool(0.6);
        let a: f64 = r.gen_range(-2.0..2.0);
        let b: f64 = r.gen_range(-2.0..2.0) + if male { 0.8 } else { -0.8 };
        let color = ["red", "green", "blue"][r.gen_range(0..3)];
        let positive = a + b + r.gen_range(-1.0..1.0) > 0.3;
        let _ = writeln!(
            csv,
            "{a:.4},{b:.4},{color},{},{}",
            if male { "M" } else { "F" },
            if positive { "yes" } else { "no" }
        );
    }
    std::fs::write(dir.path().join("toy.csv"), csv).unwrap();
    std::fs::write(dir.path().join("toy.toml"), MANIFEST).unwrap();
    let config_path = dir.path().join("study.toml");
    std::fs::write(&config_path, format!("{CONFIG}\n{extra}")).unwrap();
    (dir, config_path)
}

fn experiment(config_path: &Path, out: &Path) -> Experiment {
    let mut config = ExperimentConfig::load(config_path).unwrap();
    config.output_dir = out.to_path_buf();
    Experiment::new(config).unwrap()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    if !dir.exists() {
        return out;
    }
    for entry in std::fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().into_owned();
        if path.is_dir() {
            for (k, v) in snapshot(&path) {
                out.insert(format!("{name}/{k}"), v);
            }
        } else {
            out.insert(name, std::fs::read(&path).unwrap());
        }
    }
    out
}

#[test]
fn full_study_writes_every_cell_and_is_deterministic() {
    let (dir, config) = workspace("");
    let exp = experiment(&config, &dir.path().join("one"));
    let (report, rendered) = exp.run_all().unwrap();

    let preds = snapshot(&exp.out().join("predictions"));
    assert_eq!(preds.len(), 2 + 2 * Method::ALL.len(), "{:?}", preds.keys());
    assert!(!exp.out().join("status").exists());
    assert_eq!(report.cells.len(), Method::ALL.len());
    assert!(report.cells.iter().all(|m| m.summary.runs_ok == 2));
    // The biased model is fixed, so ROC flips the same people each run.
    let roc = report.method("roc").unwrap().stability.as_ref().unwrap();
    assert_eq!(roc.always_changed_pct, roc.mean_changed_pct);
    assert!(report.plsda.len() == 2);

    let again = experiment(&config, &dir.path().join("two"));
    let (_, rendered2) = again.run_all().unwrap();
    assert_eq!(snapshot(&again.out().join("predictions")), preds);
    assert_eq!(rendered.report_hash, rendered2.report_hash);
    assert_eq!(snapshot(&exp.report_dir()), snapshot(&again.report_dir()));
}

#[test]
fn stages_rebuild_deleted_artifacts_byte_identically() {
    let (dir, config) = workspace("");
    let exp = experiment(&config, &dir.path().join("out"));
    exp.run_all().unwrap();
    let before = snapshot(exp.out());

    for sub in ["audit", "report", "plsda"] {
        std::fs::remove_dir_all(exp.out().join(sub)).unwrap();
    }
    std::fs::remove_file(exp.predictions_path("roc", 1)).unwrap();
    std::fs::remove_file(exp.predictions_path("lfr", 0)).unwrap();
    exp.mitigate().unwrap();
    exp.audit().unwrap();
    exp.plsda().unwrap();
    exp.report(ReportFormat::Both).unwrap();
    assert_eq!(snapshot(exp.out()), before);
}

#[test]
fn failed_cells_are_reported_as_missing() {
    let (dir, config) = workspace("");
    let mut cfg = ExperimentConfig::load(&config).unwrap();
    cfg.output_dir = dir.path().join("out");
    // No prototypes: every LFR cell fails.
    cfg.lfr.prototypes = 0;
    let exp = Experiment::new(cfg).unwrap();
    exp.prepare_data().unwrap();
    exp.train().unwrap();
    let summary = exp.mitigate().unwrap();
    assert_eq!(summary.failed.len(), 2);
    assert!(summary.failed.iter().all(|(m, _, _)| m == "lfr"));

    let report = exp.audit().unwrap();
    let lfr = report.method("lfr").unwrap();
    assert_eq!(lfr.summary.runs_ok, 0);
    assert!(lfr.summary.accuracy.is_none());
    assert!(lfr
        .runs
        .iter()
        .all(|c| c.audit.is_none() && c.missing.as_deref().unwrap().contains("prototype")));
    assert!(report
        .iou_series("dp")
        .unwrap()
        .per_run
        .iter()
        .all(Option::is_none));
    let pls = exp.plsda().unwrap();
    assert!(pls[0].skipped.is_some());

    let (_, rendered) = exp.report(ReportFormat::Tables).unwrap();
    for name in [
        "performance.csv",
        "directions.csv",
        "stability.csv",
        "group_rates.csv",
        "impact.csv",
        "cells.csv",
    ] {
        let path = rendered.files.iter().find(|p| p.ends_with(name)).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(
            text.lines()
                .any(|l| l.starts_with("lfr,") && l.contains("missing")),
            "{name}:\n{text}"
        );
    }
}

#[test]
fn stages_name_missing_prerequisites() {
    let (dir, config) = workspace("");
    let exp = experiment(&config, &dir.path().join("out"));
    match exp.train() {
        Err(Error::MissingArtifact(p)) => assert!(p.ends_with("data/train.split"), "{p:?}"),
        other => panic!("expected a missing artifact, got {other:?}"),
    }
    exp.prepare_data().unwrap();
    match exp.audit() {
        Err(Error::MissingArtifact(p)) => assert!(p.ends_with("predictions/biased_run0.csv")),
        other => panic!("expected a missing artifact, got {other:?}"),
    }
}

#[test]
fn audit_refuses_predictions_from_another_config() {
    let (dir, config) = workspace("");
    let out = dir.path().join("out");
    let exp = experiment(&config, &out);
    exp.prepare_data().unwrap();
    exp.train().unwrap();
    exp.mitigate().unwrap();

    let mut other = ExperimentConfig::load(&config).unwrap();
    other.output_dir = out.clone();
    other.roc.objective_target = 0.85;
    let other = Experiment::new(other).unwrap();
    assert_ne!(other.hash, exp.hash);
    assert!(matches!(
        other.audit(),
        Err(Error::ConfigHashMismatch { .. })
    ));

    // Output location and worker count do not change the hash.
    let mut moved = ExperimentConfig::load(&config).unwrap();
    moved.output_dir = dir.path().join("elsewhere");
    moved.workers = 1;
    assert_eq!(Experiment::new(moved).unwrap().hash, exp.hash);
}

fn cli(args: &[&str], env_out: Option<&Path>) -> std::process::Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fairaudit"));
    cmd.args(args).env("RUST_LOG", "warn");
    match env_out {
        Some(dir) => cmd.env("FAIRAUDIT_OUT", dir),
        None => cmd.env_remove("FAIRAUDIT_OUT"),
    };
    cmd.output().unwrap()
}

#[test]
fn cli_runs_stages_and_reports_failures() {
    let (dir, config) = workspace("");
    let config = config.to_str().unwrap();
    let env_out = dir.path().join("from-env");

    let bad = cli(&["frobnicate", "--config", config], None);
    assert!(!bad.status.success());

    // A stage without its inputs names the missing file.
    let early = cli(&["train", "--config", config], Some(&env_out));
    assert!(!early.status.success());
    assert!(String::from_utf8_lossy(&early.stderr).contains("train.split"));

    let all = cli(&["run-all", "--config", config], Some(&env_out));
    assert!(
        all.status.success(),
        "{}",
        String::from_utf8_lossy(&all.stderr)
    );
    assert!(String::from_utf8_lossy(&all.stdout).contains("report sha256"));
    assert!(env_out.join("report/report.json").exists());

    // --out beats the environment.
    let flag_out = dir.path().join("from-flag");
    let flag_str = flag_out.to_str().unwrap();
    for stage in ["prepare-data", "train", "mitigate", "audit", "plsda"] {
        let o = cli(
            &[stage, "--config", config, "--out", flag_str],
            Some(&env_out),
        );
        assert!(
            o.status.success(),
            "{stage}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let tables = cli(
        &[
            "report", "--config", config, "--out", flag_str, "--format", "tables",
        ],
        None,
    );
    assert!(tables.status.success());
    assert!(!flag_out.join("report/report.json").exists());
    for entry in std::fs::read_dir(flag_out.join("report/tables")).unwrap() {
        let path = entry.unwrap().path();
        assert!(std::fs::metadata(&path).unwrap().len() > 0, "{path:?}");
    }
    assert_eq!(
        std::fs::read(flag_out.join("predictions/adversarial_dp_run1.csv")).unwrap(),
        std::fs::read(env_out.join("predictions/adversarial_dp_run1.csv")).unwrap()
    );

    // Drop one row from a fair predictions file: ids no longer match.
    let fair = flag_out.join("predictions/roc_run0.csv");
    let text = std::fs::read_to_string(&fair).unwrap();
    let trimmed: Vec<&str> = text.lines().collect();
    std::fs::write(&fair, trimmed[..trimmed.len() - 1].join("\n") + "\n").unwrap();
    let o = cli(&["audit", "--config", config, "--out", flag_str], None);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("biased_run0.csv") && err.contains("roc_run0.csv"),
        "{err}"
    );

    // A different seed is a different config.
    let o = cli(
        &[
            "audit",
            "--config",
            config,
            "--out",
            env_out.to_str().unwrap(),
            "--seed",
            "8",
        ],
        None,
    );
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("hash mismatch"));
}
