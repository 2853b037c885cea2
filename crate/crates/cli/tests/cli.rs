use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ctxaug(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctxaug"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).expect("valid json")
}

fn synth(dir: &Path, args: &[&str]) {
    let mut all = vec!["synth", "--out", "."];
    all.extend_from_slice(args);
    let out = ctxaug(dir, &all);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn run_small_config_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, &["--target", "100", "--in-domain", "200", "--domain-related", "200", "--experiment", "2:2, 0.9"]);

    let out = ctxaug(d, &["--config", "ctxaug.toml", "--threads", "2", "run"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let budget = json(&out.stdout);
    assert_eq!(budget["num_examples"], 400);
    let dataset = fs::read(d.join("out/dataset.jsonl")).unwrap();
    assert_eq!(dataset.iter().filter(|&&b| b == b'\n').count(), 400);
    assert!(d.join("out/config.resolved.toml").is_file());
    assert!(d.join("out/augment_audit.jsonl").is_file());

    let again = ctxaug(d, &["--config", "ctxaug.toml", "--threads", "3", "run"]);
    assert_eq!(code(&again), 0);
    let log = stderr(&again);
    assert!(log.contains("augment      cached") && log.contains("dataset      cached"), "{log}");
    assert_eq!(fs::read(d.join("out/dataset.jsonl")).unwrap(), dataset);
}

#[test]
fn flag_overrides_reach_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, &["--target", "30", "--in-domain", "60", "--domain-related", "60"]);
    let out = ctxaug(
        d,
        &["--config", "ctxaug.toml", "--seed", "9", "run", "--experiment", "1:3, 0.9", "--sources", "ID", "--output-dir", "ablation"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(json(&out.stdout)["num_examples"], 90);
    let resolved = fs::read_to_string(d.join("ablation/config.resolved.toml")).unwrap();
    assert!(resolved.contains("experiment = \"1:3, 0.9\""), "{resolved}");
    assert!(resolved.contains("rng_seed = 9"));
}

#[test]
fn missing_vocab_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, &["--target", "10", "--in-domain", "10", "--domain-related", "10"]);
    fs::remove_file(d.join("vocab.txt")).unwrap();
    let out = ctxaug(d, &["--config", "ctxaug.toml", "run"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("vocab not found"));
    assert!(!d.join("out").exists());
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&ctxaug(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&ctxaug(dir.path(), &["run"])), 1);
    assert_eq!(code(&ctxaug(dir.path(), &["--threads", "0", "report", "--reference"])), 1);
    assert_eq!(code(&ctxaug(dir.path(), &["--help"])), 0);
}

#[test]
fn stage_failure_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, &["--target", "10", "--in-domain", "10", "--domain-related", "10"]);
    fs::write(d.join("id.txt"), "\n\n").unwrap();
    let out = ctxaug(d, &["--config", "ctxaug.toml", "run"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("stage `ingest-id` failed"), "{}", stderr(&out));
    assert!(!d.join("out/dataset.jsonl").exists());
}

#[test]
fn budget_report_for_200k_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, &["--target", "10000", "--in-domain", "5", "--domain-related", "5", "--experiment", "10:10, 0.8"]);
    let out = ctxaug(d, &["--config", "ctxaug.toml", "report", "--budget"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json(&out.stdout);
    assert_eq!(report["num_examples"], 200_000);
    assert_eq!(report["steps_per_epoch"], 3_125);
    assert_eq!(report["total_steps"], 62_500);
    assert!(report["notes"][0].as_str().unwrap().starts_with("DISCREPANCY"));

    let out = ctxaug(d, &["report", "--budget", "--examples", "200000", "--batch-size", "64", "--epochs", "20"]);
    assert_eq!(json(&out.stdout)["total_steps"], 62_500);
}

#[test]
fn eval_writes_scaled_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("run.txt"),
        "q1 Q0 a 1 0.9 r\nq1 Q0 b 2 0.8 r\nq2 Q0 c 1 0.9 r\nq2 Q0 d 2 0.8 r\n",
    )
    .unwrap();
    fs::write(d.join("qrels.txt"), "q1 0 a 1\nq2 0 d 1\nq2 0 c 0\n").unwrap();
    fs::write(d.join("run2.txt"), "q1 Q0 x 1 0.5 r\n").unwrap();
    fs::write(d.join("qrels2.txt"), "q1 0 y 1\n").unwrap();

    let out = ctxaug(d, &["eval", "--run", "run.txt", "--qrels", "qrels.txt", "--out", "report.json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = json(&fs::read(d.join("report.json")).unwrap());
    let m = &r["macro_average"];
    assert_eq!(m["map10"], 75.0);
    assert_eq!(m["mrr"], 75.0);
    // (1 + 1/log2(3)) / 2
    assert_eq!(m["ndcg10"], 81.55);

    let out = ctxaug(
        d,
        &["eval", "--run", "run.txt", "--qrels", "qrels.txt", "--run", "run2.txt", "--qrels", "qrels2.txt"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = json(&out.stdout);
    assert_eq!(r["collections"].as_array().unwrap().len(), 2);
    assert_eq!(r["macro_average"]["mrr"], 37.5);

    let out = ctxaug(d, &["eval", "--run", "run.txt", "--qrels", "qrels.txt", "--run", "run2.txt"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn stage_commands_support_single_source_augmentation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, &["--target", "40", "--in-domain", "120", "--domain-related", "10"]);
    let steps: &[&[&str]] = &[
        &["ingest", "--input", "target.txt", "--out", "t.jsonl"],
        &["ingest", "--role", "ID", "--input", "id.txt", "--out", "i.jsonl", "--rejects", "i.rejects"],
        &["embed", "--corpus", "t.jsonl", "--out", "t.emb", "--dim", "64"],
        &["embed", "--corpus", "i.jsonl", "--role", "ID", "--out", "i.emb", "--dim", "64"],
        &["index", "--embeddings", "i.emb", "--source", "ID", "--out", "i.idx"],
        &[
            "augment", "--target", "t.jsonl", "--target-embeddings", "t.emb", "--id-corpus", "i.jsonl",
            "--id-index", "i.idx", "--sources", "ID", "--vocab", "vocab.txt", "--max-distance", "0.9",
            "--out", "records.jsonl", "--audit", "audit.jsonl",
        ],
        &["build-dataset", "--records", "records.jsonl", "--vocab", "vocab.txt", "--variations", "10:2", "--out", "ds.jsonl", "--budget", "budget.json"],
    ];
    for args in steps {
        let out = ctxaug(d, args);
        assert_eq!(code(&out), 0, "{args:?}: {}", stderr(&out));
    }
    let audit = fs::read_to_string(d.join("audit.jsonl")).unwrap();
    assert_eq!(audit.lines().count(), 40);
    assert!(audit.lines().all(|l| l.contains("\"source\":\"ID\"")));
    let budget = json(&fs::read(d.join("budget.json")).unwrap());
    assert_eq!(budget["num_examples"], 80);

    let out = ctxaug(d, &["augment", "--target", "t.jsonl", "--target-embeddings", "t.emb", "--sources", "DR", "--vocab", "vocab.txt", "--out", "x.jsonl"]);
    assert_eq!(code(&out), 1);
}
