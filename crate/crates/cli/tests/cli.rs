mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const PART_A: [&str; 5] = ["CHAR_NGRAM_LR", "TFIDF_SVM", "TFIDF_GBDT", "BOWV_SVM", "BOWV_GBDT"];

fn hatebench(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hatebench"))
        .args(args)
        .current_dir(dir)
        .env_remove("HATEBENCH_OUT")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_accepts_fixture() {
    let dir = tempfile::tempdir().unwrap();
    common::write_fixture(dir.path(), 60, &PART_A, 3);
    let out = hatebench(&["validate", "run.toml"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("OK: 5 specs, 60 tweets"));
}

#[test]
fn unknown_method_is_invalid() {
    let dir = tempfile::tempdir().unwrap();
    common::write_fixture(dir.path(), 60, &["TFIDF_SVM", "NOT_A_METHOD"], 3);
    let out = hatebench(&["validate", "run.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("NOT_A_METHOD"), "{err}");
    assert!(err.contains("LSTM_RAND_GBDT"), "valid ids should be listed: {err}");
}

#[test]
fn missing_label_column_is_named() {
    let dir = tempfile::tempdir().unwrap();
    common::write_fixture(dir.path(), 30, &["TFIDF_SVM"], 3);
    fs::write(dir.path().join("tweets.csv"), "id,text,class\n1,hello,none\n").unwrap();
    let out = hatebench(&["validate", "run.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("label"), "{}", stderr(&out));
}

#[test]
fn set_override_is_checked() {
    let dir = tempfile::tempdir().unwrap();
    common::write_fixture(dir.path(), 60, &["TFIDF_SVM"], 3);
    let ok = hatebench(&["validate", "run.toml", "--set", "run.k=2"], dir.path());
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    let bad = hatebench(&["validate", "run.toml", "--set", "run.bogus=2"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn part_a_run_then_resume() {
    let dir = tempfile::tempdir().unwrap();
    common::write_fixture(dir.path(), 90, &PART_A, 3);
    let first = hatebench(&["run", "run.toml", "--out", "out"], dir.path());
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    assert!(stdout(&first).contains("5 completed, 0 skipped, 0 failed"));

    let runs: Vec<_> = fs::read_dir(dir.path().join("out")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(runs.len(), 1);
    let run = &runs[0];
    assert!(run.file_name().unwrap().to_string_lossy().starts_with("run-"));
    assert_eq!(fs::read_dir(run.join("reports")).unwrap().count(), 5);
    let table = fs::read_to_string(run.join("table.md")).unwrap();
    let rows = table.lines().filter(|l| l.contains("| STRICT |")).count();
    assert_eq!(rows, 5, "{table}");
    assert_eq!(fs::read_to_string(run.join("table.csv")).unwrap().lines().count(), 6);

    let second = hatebench(&["run", "run.toml", "--out", "out"], dir.path());
    assert_eq!(second.status.code(), Some(0), "{}", stderr(&second));
    assert!(stdout(&second).contains("0 completed, 5 skipped, 0 failed"));
    assert_eq!(fs::read_to_string(run.join("table.md")).unwrap(), table);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["invocations"].as_array().unwrap().len(), 2);

    let csv = hatebench(&["report", &run.display().to_string(), "--format", "csv"], dir.path());
    assert_eq!(stdout(&csv), fs::read_to_string(run.join("table.csv")).unwrap());
    let from_reports = hatebench(&["report", &run.display().to_string()], dir.path());
    assert_eq!(stdout(&from_reports), table);
}

#[test]
fn neighbors_on_toy_table() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("toy.txt"),
        "cat 1 0\nkitten 0.9 0.1\ndog 0.6 0.8\nbird 0 1\ncar -1 0\n",
    )
    .unwrap();
    let out = hatebench(
        &["neighbors", "--table", "toy.txt", "--dim", "2", "--words", "Cat,zebra", "-n", "2", "--format", "json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let text = json.to_string();
    // cos(cat, kitten) = 0.994, cos(cat, dog) = 0.6, bird 0, car -1.
    let kitten = text.find("kitten").unwrap();
    let dog = text.find("dog").unwrap();
    assert!(kitten < dog, "{text}");
    assert!(!text.contains("bird"), "{text}");
    assert!(text.contains("zebra"), "{text}");
}

#[test]
fn neighbors_needs_a_source() {
    let dir = tempfile::tempdir().unwrap();
    let out = hatebench(&["neighbors", "--words", "cat"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}
