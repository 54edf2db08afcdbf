use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_hypocart");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const ROOT_RULE_TREE: &str = r#"{
  "feature": "x_t",
  "threshold": 6.45,
  "left": { "class": "H", "n_N": 40, "n_H": 12 },
  "right": { "class": "N", "n_N": 300, "n_H": 0 }
}"#;

#[test]
fn predict_applies_root_rule() {
    let dir = tempfile::tempdir().unwrap();
    let tree = dir.path().join("tree.json");
    fs::write(&tree, ROOT_RULE_TREE).unwrap();

    let out = run(&["predict", "--tree", p(&tree), "--xt", "8.0", "--rate", "0.081"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(stdout(&out), "N\n");

    let out = run(&["predict", "--tree", p(&tree), "--xt", "5.2", "--rate", "-0.01"]);
    assert_eq!(stdout(&out), "H\n");
}

#[test]
fn predict_rejects_bad_tree_document() {
    let dir = tempfile::tempdir().unwrap();
    let tree = dir.path().join("tree.json");
    fs::write(&tree, r#"{"feature": "x_t", "threshold": 6.45, "left": {"class": "H", "n_N": 1, "n_H": 1}}"#).unwrap();
    let out = run(&["predict", "--tree", p(&tree), "--xt", "8.0", "--rate", "0.08"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.starts_with("error kind=validation exit=2"), "{err}");
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn ingest_reports_non_monotone_row() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("p1.csv");
    fs::write(
        &file,
        "Sample#,Date,Time,Meal,SensorBG\n\
         0,7.Sep.15,9:22,.,11.8\n\
         1,7.Sep.15,9:27,.,11.4\n\
         2,7.Sep.15,9:25,.,11.0\n",
    )
    .unwrap();
    let out = run(&["ingest", "--in", p(&file)]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("line=4"), "{err}");
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn ingest_converts_mg_per_dl() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("p1.csv");
    fs::write(
        &file,
        "Sample#,Date,Time,Meal,SensorBG\n\
         0,7.Sep.15,9:22,.,180\n\
         1,7.Sep.15,9:27,190,N/A\n\
         2,7.Sep.15,9:32,.,200\n",
    )
    .unwrap();
    let out = run(&["ingest", "--in", p(&file), "--unit", "mg"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("p1,other,3,1,1"), "{text}");
    assert!(text.contains("patients=1"));

    // 180 mg/dL read as mmol/L is out of range.
    let out = run(&["ingest", "--in", p(&file)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_one() {
    for args in [&["frobnicate"][..], &["predict", "--xt", "1"], &["anova", "--report", "x", "--metric", "recall"]] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(stderr(&out).starts_with("error kind=usage exit=1"));
    }
}

#[test]
fn full_pipeline_with_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("cohort");
    let table = dir.path().join("features.csv");
    let tree = dir.path().join("tree.json");
    let report = dir.path().join("report");

    let out = run(&["synth", "--seed", "9", "--out", p(&cohort)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(cohort.join("patients.csv").is_file());
    assert!(cohort.join("P00.csv").is_file());
    let synth_manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cohort.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(synth_manifest["seeds"]["master"], 9);
    assert_eq!(synth_manifest["outputs"].as_array().unwrap().len(), 33 + 2);

    let out = run(&["ingest", "--in", p(&cohort)]);
    assert!(stdout(&out).contains("patients=33"));

    let out = run(&["features", "--in", p(&cohort), "--out", p(&table)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(dir.path().join("features.csv.manifest.json").is_file());

    let out = run(&["train", "--features", p(&table), "--out", p(&tree)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let out = run(&["predict", "--tree", p(&tree), "--xt", "12.0", "--rate", "0.02"]);
    assert_eq!(stdout(&out), "N\n");

    let out = run(&["evaluate", "--features", p(&table), "--k", "5", "--allocations", "4", "--seed", "3", "--out", p(&report)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("runs=20 "));
    let perf = fs::read_to_string(report.join("performance.csv")).unwrap();
    assert_eq!(perf.lines().count(), 1 + 20 + 1);

    // Every listed output carries the digest of the file on disk.
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(report.join("manifest.json")).unwrap()).unwrap();
    for entry in manifest["outputs"].as_array().unwrap() {
        let bytes = fs::read(report.join(entry["path"].as_str().unwrap())).unwrap();
        use sha2::Digest;
        assert_eq!(entry["sha256"].as_str().unwrap(), hex::encode(sha2::Sha256::digest(&bytes)));
    }

    // The manifest alone regenerates the report.
    let again = dir.path().join("again");
    let out = run(&["report", "--manifest", p(&report.join("manifest.json")), "--out", p(&again)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for name in ["performance.csv", "per_patient.csv", "groups.csv", "missed_events.csv", "summary.json", "performance.svg"] {
        assert_eq!(fs::read(report.join(name)).unwrap(), fs::read(again.join(name)).unwrap(), "{name}");
    }

    let out = run(&["anova", "--report", p(&report.join("summary.json")), "--group-by", "dm_type", "--metric", "specificity"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("F=") && text.contains(" p="), "{text}");

    // A changed input invalidates the manifest.
    fs::write(&table, "tampered").unwrap();
    let out = run(&["report", "--manifest", p(&report.join("manifest.json")), "--out", p(&again)]);
    assert_eq!(out.status.code(), Some(2));
}
