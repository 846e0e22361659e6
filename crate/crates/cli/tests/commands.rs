mod common;

use std::fs;
use std::process::Command;

use emodetect_cli::{run_from, CliError, Summary};
use emodetect_core::corpus::Track;

fn aggregate(summary: &Summary) -> Vec<f64> {
    match summary {
        Summary::Eval(groups) => groups.iter().map(|(_, r)| r.aggregate).collect(),
        other => panic!("not an eval summary: {other:?}"),
    }
}

#[test]
fn echo_pairwise_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::corpus(dir.path(), 40, &["eng", "amh"], Track::A, 1);
    let preds = dir.path().join("infer");
    let out = run_from(common::args(
        &[
            "infer",
            "--backend",
            "mock-echo",
            "--strategy",
            "pairwise",
            "--track",
            "a",
            "--out",
            preds.to_str().unwrap(),
        ],
        &data,
    ))
    .unwrap();
    match &out.summary {
        Summary::Infer(groups) => {
            // 20 samples x 5 labels (eng) and 20 x 6 (amh)
            assert_eq!(groups[0].1.requests, 120);
            assert_eq!(groups[1].1.requests, 100);
        }
        other => panic!("{other:?}"),
    }
    let eval = run_from(common::args(
        &[
            "eval",
            "--track",
            "a",
            "--predictions",
            preds.to_str().unwrap(),
            "--out",
            dir.path().join("eval").to_str().unwrap(),
        ],
        &data,
    ))
    .unwrap();
    assert_eq!(aggregate(&eval.summary), vec![1.0, 1.0]);
    assert!(dir.path().join("eval/eng/report.csv").is_file());
    assert_eq!(eval.manifest.inputs.len(), 4);
}

#[test]
fn split_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::corpus(dir.path(), 90, &["eng", "hau"], Track::B, 2);
    let run = |name: &str| {
        let out = dir.path().join(name);
        run_from(common::args(
            &[
                "split",
                "--seed",
                "7",
                "--track",
                "b",
                "--out",
                out.to_str().unwrap(),
            ],
            &data,
        ))
        .unwrap();
        (
            fs::read(out.join("eng/dev.jsonl")).unwrap(),
            fs::read(out.join("hau/train.jsonl")).unwrap(),
        )
    };
    assert_eq!(run("one"), run("two"));
    let dev = fs::read_to_string(dir.path().join("one/eng/dev.jsonl")).unwrap();
    assert_eq!(dev.lines().count(), 5);
}

#[test]
fn pairwise_export_has_one_line_per_label() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::corpus(dir.path(), 10, &["eng"], Track::A, 3);
    let out = dir.path().join("export");
    run_from(common::args(
        &[
            "export",
            "--strategy",
            "pairwise",
            "--out",
            out.to_str().unwrap(),
        ],
        &data,
    ))
    .unwrap();
    let text = fs::read_to_string(out.join("eng/instructions.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 50);
}

#[test]
fn mixed_regime_pools_languages() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::corpus(dir.path(), 60, &["eng", "amh", "sun"], Track::B, 4);
    let preds = dir.path().join("infer");
    run_from(common::args(
        &[
            "infer",
            "--backend",
            "mock-echo",
            "--track",
            "b",
            "--regime",
            "mixed",
            "--concurrency",
            "3",
            "--out",
            preds.to_str().unwrap(),
        ],
        &data,
    ))
    .unwrap();
    let eval = run_from(common::args(
        &[
            "eval",
            "--track",
            "b",
            "--regime",
            "mixed",
            "--predictions",
            preds.to_str().unwrap(),
            "--out",
            dir.path().join("eval").to_str().unwrap(),
        ],
        &data,
    ))
    .unwrap();
    assert_eq!(aggregate(&eval.summary), vec![1.0]);
    let n = fs::read_to_string(preds.join("mixed/predictions.jsonl"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(n, 60);
}

#[test]
fn head_trains_and_predicts() {
    let dir = tempfile::tempdir().unwrap();
    let d = emodetect_core::synthetic::keyword_separable(
        120,
        &[("anger", "furious"), ("joy", "delighted")],
        "eng",
        5,
    );
    let csv = dir.path().join("eng.csv");
    common::write_csv(&d, &csv);
    let data = vec!["--data".to_string(), format!("eng={}", csv.display())];
    let heads = dir.path().join("heads");
    let config = dir.path().join("train.json");
    fs::write(
        &config,
        r#"{"train": {"batch_size": 4}, "feature_dim": 256}"#,
    )
    .unwrap();
    let trained = run_from(common::args(
        &[
            "train-head",
            "--seed",
            "1",
            "--config",
            config.to_str().unwrap(),
            "--out",
            heads.to_str().unwrap(),
        ],
        &data,
    ))
    .unwrap();
    let Summary::TrainHead(groups) = &trained.summary else {
        panic!()
    };
    assert_eq!(groups[0].history.len(), 6);

    let preds = dir.path().join("infer");
    run_from(common::args(
        &[
            "infer",
            "--backend",
            "head",
            "--checkpoint",
            heads.to_str().unwrap(),
            "--out",
            preds.to_str().unwrap(),
        ],
        &data,
    ))
    .unwrap();
    let eval = run_from(common::args(
        &[
            "eval",
            "--predictions",
            preds.to_str().unwrap(),
            "--out",
            dir.path().join("eval").to_str().unwrap(),
        ],
        &data,
    ))
    .unwrap();
    assert!(aggregate(&eval.summary)[0] > 0.8);
}

#[test]
fn compare_writes_histogram_and_intensity_tables() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::corpus(dir.path(), 30, &["eng"], Track::B, 6);
    let lexicon = dir.path().join("lexicon.json");
    fs::write(
        &lexicon,
        r#"{"anger": ["river"], "joy": ["music", "garden"], "fear": ["winter"]}"#,
    )
    .unwrap();
    for strategy in ["base", "pairwise"] {
        let out = dir.path().join(strategy);
        run_from(common::args(
            &[
                "infer",
                "--track",
                "b",
                "--backend",
                "mock-lexicon",
                "--lexicon",
                lexicon.to_str().unwrap(),
                "--strategy",
                strategy,
                "--out",
                out.to_str().unwrap(),
            ],
            &data,
        ))
        .unwrap();
    }
    let out = dir.path().join("compare");
    let cmp = run_from(common::args(
        &[
            "compare",
            "--track",
            "b",
            "--base",
            dir.path().join("base").to_str().unwrap(),
            "--pairwise",
            dir.path().join("pairwise").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        &data,
    ))
    .unwrap();
    let Summary::Compare(groups) = &cmp.summary else {
        panic!()
    };
    assert_eq!(groups[0].1.total(), 30);
    for f in [
        "improvement.csv",
        "improvement.svg",
        "intensity_base.csv",
        "intensity_pairwise.csv",
    ] {
        assert!(out.join("eng").join(f).is_file(), "{f}");
    }
    let intensity = fs::read_to_string(out.join("eng/intensity_base.csv")).unwrap();
    assert_eq!(intensity.lines().count(), 1 + 5 * 4);
}

#[test]
fn manifest_records_inputs_and_template() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::corpus(dir.path(), 20, &["eng"], Track::A, 7);
    let out = dir.path().join("split");
    let csv_before = fs::read(dir.path().join("data/eng_a.csv")).unwrap();
    let outcome = run_from(common::args(
        &["split", "--seed", "3", "--out", out.to_str().unwrap()],
        &data,
    ))
    .unwrap();
    assert_eq!(
        fs::read(dir.path().join("data/eng_a.csv")).unwrap(),
        csv_before
    );

    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 3);
    assert_eq!(m["command"], "split");
    assert_eq!(
        m["template_hash"],
        emodetect_core::prompting::template_hash()
    );
    let (path, hash) = outcome.manifest.inputs.iter().next().unwrap();
    assert_eq!(hash, &emodetect_cli::content_hash(&fs::read(path).unwrap()));
    assert!(m["timings"]["total"].as_f64().unwrap() >= 0.0);

    // the recorded config replays to identical outputs
    let replay = dir.path().join("replay.json");
    let mut config = m["config"].clone();
    config["out"] = serde_json::json!(dir.path().join("split2"));
    fs::write(&replay, config.to_string()).unwrap();
    run_from(["emodetect", "split", "--config", replay.to_str().unwrap()]).unwrap();
    assert_eq!(
        fs::read(out.join("eng/dev.jsonl")).unwrap(),
        fs::read(dir.path().join("split2/eng/dev.jsonl")).unwrap()
    );
}

#[test]
fn config_errors_are_collected() {
    let err = run_from([
        "emodetect",
        "infer",
        "--backend",
        "mock-lexicon",
        "--concurrency",
        "0",
        "--data",
        "eng=/missing.csv",
    ])
    .unwrap_err();
    let CliError::Config(problems) = &err else {
        panic!("{err}")
    };
    assert_eq!(problems.len(), 3, "{problems:#?}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn binary_reports_categorized_failure() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "id,text,anger\n1,hello,7\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_emodetect"))
        .args([
            "split",
            "--data",
            &format!("eng={}", bad.display()),
            "--out",
        ])
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data error"));

    let ok = Command::new(env!("CARGO_BIN_EXE_emodetect"))
        .arg("--help")
        .output()
        .unwrap();
    assert!(ok.status.success());
}
