use std::fs;
use std::path::Path;
use std::process::Command;

use veritas_cli::cli::{run, EXIT_OK, EXIT_PARTIAL, EXIT_USAGE};
use veritas_core::corpus::read_corpus;

fn veritas(workspace: &Path, args: &[&str]) -> i32 {
    let mut argv = vec!["veritas", "--workspace", workspace.to_str().unwrap()];
    argv.extend_from_slice(args);
    run(argv)
}

#[test]
fn usage_errors_exit_with_one() {
    let bin = env!("CARGO_BIN_EXE_veritas");
    let status = Command::new(bin).arg("frobnicate").output().unwrap().status;
    assert_eq!(status.code(), Some(EXIT_USAGE));
    let status = Command::new(bin).arg("--help").output().unwrap().status;
    assert_eq!(status.code(), Some(EXIT_OK));
    let status = Command::new(bin)
        .args(["annotate", "--backend", "telepathy"])
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(EXIT_USAGE));
}

#[test]
fn twin_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    assert_eq!(veritas(&ws, &["twin"]), EXIT_OK);
    assert_eq!(veritas(&ws, &["twin"]), EXIT_USAGE);
    assert_eq!(veritas(&ws, &["report"]), EXIT_OK);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ws.join("reports/report.json")).unwrap()).unwrap();
    assert_eq!(report["coverage"]["total"], 6120);
    assert!(fs::read_to_string(ws.join("reports/report.txt")).unwrap().contains("0.7089"));

    let queue = dir.path().join("queue.json");
    assert_eq!(veritas(&ws, &["adjudicate", "export", "--out", queue.to_str().unwrap()]), EXIT_OK);
    assert_eq!(fs::read_to_string(&queue).unwrap().trim(), "[]");
    assert_eq!(
        veritas(&ws, &["adjudicate", "record", "HeadAcc:missing", "--adjudicator", "adjudicator", "--indeterminate"]),
        EXIT_USAGE
    );
}

#[test]
fn mock_annotation_without_humans_is_partial() {
    let dir = tempfile::tempdir().unwrap();
    let twin = dir.path().join("twin");
    assert_eq!(veritas(&twin, &["twin"]), EXIT_OK);
    let all = twin.join("corpus.jsonl");

    let sample = dir.path().join("sample.jsonl");
    let args = [
        "corpus", "sample", "--input", all.to_str().unwrap(), "--out", sample.to_str().unwrap(),
        "--per-publisher", "1", "--from", "2021-01-01", "--to", "2022-01-01", "--seed", "7",
    ];
    assert_eq!(veritas(&twin, &args), EXIT_OK);
    assert_eq!(read_corpus(&sample).unwrap().len(), 34);

    let ws = dir.path().join("ws");
    let corpus = sample.to_str().unwrap();
    // Strict mock: every call misses the empty fixture.
    assert_eq!(veritas(&ws, &["annotate", "--backend", "mock", "--corpus", corpus]), EXIT_PARTIAL);
    assert!(fs::read_to_string(ws.join("failures.jsonl")).unwrap().contains("FIXTURE_MISS"));
    assert_eq!(
        veritas(&ws, &["annotate", "--backend", "mock", "--default-response", "No", "--timestamp", "2022-01-01T00:00:00Z"]),
        EXIT_OK
    );
    // No human annotations yet, so coverage is incomplete.
    assert_eq!(veritas(&ws, &["report"]), EXIT_PARTIAL);
    assert_eq!(veritas(&ws, &["annotate", "--backend", "mock", "--concurrency", "0"]), EXIT_USAGE);
}

#[test]
fn import_human_is_all_or_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    assert_eq!(veritas(&ws, &["twin"]), EXIT_OK);
    let corpus = read_corpus(&ws.join("corpus.jsonl")).unwrap();
    let before = fs::read_to_string(ws.join("annotations.jsonl")).unwrap();

    let bad = dir.path().join("bad.csv");
    fs::write(
        &bad,
        format!(
            "article_id,criterion,annotator,version,answer,sub_answer\n{},HeadAcc,rater-9,refined,Accurate,\nghost,HeadAcc,rater-9,refined,Accurate,\n",
            corpus[0].id
        ),
    )
    .unwrap();
    assert_eq!(veritas(&ws, &["import-human", bad.to_str().unwrap()]), EXIT_USAGE);
    assert_eq!(fs::read_to_string(ws.join("annotations.jsonl")).unwrap(), before);

    let good = dir.path().join("good.csv");
    fs::write(
        &good,
        format!(
            "article_id,criterion,annotator,version,answer,sub_answer\n{},HeadAcc,rater-9,refined,Accurate,\n{},NegTarg,rater-9,refined,Yes,Gender\n",
            corpus[0].id, corpus[1].id
        ),
    )
    .unwrap();
    assert_eq!(veritas(&ws, &["import-human", good.to_str().unwrap()]), EXIT_OK);
    let after = fs::read_to_string(ws.join("annotations.jsonl")).unwrap();
    assert_eq!(after.lines().count(), before.lines().count() + 2);

    let table = dir.path().join("table.csv");
    assert_eq!(veritas(&ws, &["export-table", "--out", table.to_str().unwrap()]), EXIT_OK);
    assert!(fs::read_to_string(&table).unwrap().contains("rater-9,refined,Yes,Gender"));
}

#[test]
fn sanitize_needs_a_redaction_source() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    assert_eq!(veritas(&ws, &["twin"]), EXIT_OK);
    let input = ws.join("corpus.jsonl");
    let out = dir.path().join("clean.jsonl");
    let io = ["corpus", "sanitize", "--input", input.to_str().unwrap(), "--out", out.to_str().unwrap()];
    assert_eq!(veritas(&ws, &io), EXIT_USAGE);

    let redaction = dir.path().join("redaction.json");
    fs::write(&redaction, r#"{"publisher_names": ["Il Fatto Quotidiano"], "author_patterns": ["di <CapWord> <CapWord>"]}"#).unwrap();
    let mut args = io.to_vec();
    args.extend(["--redaction", redaction.to_str().unwrap()]);
    assert_eq!(veritas(&ws, &args), EXIT_OK);
    let clean = read_corpus(&out).unwrap();
    assert_eq!(clean.len(), 340);
    assert!(clean.iter().all(|a| a.sanitized && !a.body.contains("Il Fatto Quotidiano")));
}
