mod common;

use std::process::Command;

use psalm::cli::{run_with, EXIT_FAILURE, EXIT_SUCCESS, EXIT_USAGE};
use psalm::io::{
    pca_project, read_results, read_table, standardize, write_results, Format, ReadOptions,
    ResultsDocument, YEAST_COLUMNS,
};

use common::data_path;

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn crabs() -> psalm::io::Dataset {
    read_table(
        data_path("crabs.csv"),
        &ReadOptions {
            label_column: Some("sp".into()),
            features: Some(strings(&["FL", "RW", "CL", "CW", "BD"])),
            ..Default::default()
        },
    )
    .unwrap()
}

fn run(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut argv = vec!["psalm"];
    argv.extend_from_slice(args);
    let code = run_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

#[test]
fn reads_the_bundled_data_sets() {
    let c = crabs();
    assert_eq!((c.n(), c.p()), (200, 5));
    let yeast = read_table(
        data_path("yeast_cyt_me3.data"),
        &ReadOptions {
            format: Format::Whitespace,
            column_names: Some(strings(&YEAST_COLUMNS)),
            label_column: Some("class".into()),
            features: Some(strings(&["mcg", "alm", "vac"])),
            classes: Some(strings(&["CYT", "ME3"])),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!((yeast.n(), yeast.p()), (626, 3));
    let (names, codes) = yeast.label_codes().unwrap();
    assert_eq!(names, strings(&["CYT", "ME3"]));
    assert_eq!(codes.iter().filter(|&&c| c == 0).count(), 463);
}

#[test]
fn crabs_correlation_pca_concentrates_variance() {
    let (_, summary) = pca_project(&crabs(), &[0, 1, 2], true).unwrap();
    let three: f64 = summary.explained[..3].iter().sum();
    assert!(three >= 0.95, "first three components explain {three}");
}

#[test]
fn transform_log_replays_preprocessing() {
    let raw = crabs();
    let (projected, _) = pca_project(&standardize(&raw).unwrap(), &[0, 2], true).unwrap();
    let replayed = projected.provenance.replay(&raw.matrix).unwrap();
    assert!((replayed - &projected.matrix).amax() < 1e-12);
}

#[test]
fn results_round_trip_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("sample.csv");
    let out = dir.path().join("fit.json");
    let (code, _, err) = run(&["sample", "--n", "120", "--seed", "4", "--output", data.to_str().unwrap()]);
    assert_eq!(code, EXIT_SUCCESS, "{err}");
    let (code, _, err) = run(&[
        "fit", "--data", data.to_str().unwrap(), "--label-column", "label", "--models", "UUUU",
        "--g-range", "2..2", "--starts", "2", "--output", out.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_SUCCESS, "{err}");
    let doc = read_results(&out).unwrap();
    assert_eq!(doc.schema_version, psalm::io::SCHEMA_VERSION);
    let model = &doc.models[0];
    assert!(model.evaluation.as_ref().unwrap().ari > 0.95);
    let again = dir.path().join("again.json");
    write_results(&doc, &again).unwrap();
    let reread = read_results(&again).unwrap();
    assert_eq!(reread.models[0].fit.bic.to_bits(), model.fit.bic.to_bits());
    assert_eq!(reread, doc);
    let mut text = std::fs::read_to_string(&out).unwrap();
    text = text.replacen("\"schema_version\": 1", "\"schema_version\": 99", 1);
    assert!(ResultsDocument::from_json(&text).is_err());
}

#[test]
fn identical_runs_write_identical_json() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("sample.csv");
    run(&["sample", "--n", "90", "--seed", "9", "--output", data.to_str().unwrap()]);
    let search = |name: &str| {
        let out = dir.path().join(name);
        let (code, _, err) = run(&[
            "search", "--data", data.to_str().unwrap(), "--models", "CCCC,UUUU", "--g-range", "1..2",
            "--starts", "1", "--seed", "3", "--output", out.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_SUCCESS, "{err}");
        std::fs::read(out).unwrap()
    };
    let a = search("a.json");
    assert_eq!(a, search("b.json"));
    let doc = ResultsDocument::from_json(std::str::from_utf8(&a).unwrap()).unwrap();
    assert_eq!(doc.models.len() + doc.failures.len(), 4);
    assert_eq!(doc.criterion, Some(psalm::select::Criterion::Bic));
}

#[test]
fn score_of_identical_files_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("labels.csv");
    std::fs::write(&path, "label\na\nb\nb\nc\na\n").unwrap();
    let p = path.to_str().unwrap();
    let (code, out, _) = run(&["score", "--truth", p, "--predicted", p]);
    assert_eq!(code, EXIT_SUCCESS);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["ari"], 1.0);
    assert_eq!(v["rand_index"], 1.0);
}

#[test]
fn pca_subcommand_writes_scores_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pcs.csv");
    let crabs = data_path("crabs.csv");
    let (code, summary, err) = run(&[
        "pca", "--data", crabs.to_str().unwrap(), "--features", "FL,RW,CL,CW,BD", "--label-column", "sex",
        "--components", "1,3", "--output", out.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_SUCCESS, "{err}");
    let v: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(v["use_correlation"], true);
    let scores = read_table(&out, &ReadOptions { label_column: Some("label".into()), ..Default::default() }).unwrap();
    assert_eq!((scores.n(), scores.p()), (200, 2));
    assert_eq!(scores.feature_names, strings(&["PC1", "PC3"]));
    let (code, _, err) = run(&["pca", "--data", crabs.to_str().unwrap(), "--features", "FL,RW", "--components", "3"]);
    assert_eq!(code, EXIT_USAGE, "{err}");
}

#[test]
fn errors_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "a,b\n1,2\n3,oops\n").unwrap();
    let (code, _, err) = run(&["fit", "--data", bad.to_str().unwrap(), "--models", "CCCC", "--g-range", "1"]);
    assert_eq!(code, EXIT_FAILURE);
    let v: serde_json::Value = serde_json::from_str(&err).unwrap();
    assert_eq!(v["error"]["kind"], "runtime");
    assert!(v["error"]["message"].as_str().unwrap().contains("oops"));
    let (code, _, _) = run(&["search", "--data", bad.to_str().unwrap(), "--criterion", "aic"]);
    assert_eq!(code, EXIT_USAGE);
    let (code, _, _) = run(&["classify", "--data", bad.to_str().unwrap(), "--models", "CCCU"]);
    assert_eq!(code, EXIT_USAGE);
}

#[test]
fn binary_reports_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_psalm");
    let out = Command::new(exe).args(["fit", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"]["exit_code"], EXIT_USAGE);
    let out = Command::new(exe).args(["sample", "--n", "5"]).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_SUCCESS));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 6);
}
