mod common;

use std::fs;
use std::path::Path;

use ctxaug_core::config::ImportPaths;
use ctxaug_core::corpus;
use ctxaug_core::embedding;
use ctxaug_core::pipeline::{AUDIT_FILE, BUDGET_FILE, CONFIG_FILE, DATASET_FILE};
use ctxaug_core::synthetic::DemoSizes;
use ctxaug_core::{run_pipeline, Error, PipelineOptions, RunConfig, Source};

use common::demo_config;

const SMALL: DemoSizes = DemoSizes {
    target: 100,
    in_domain: 150,
    domain_related: 150,
};

fn opts(threads: usize) -> PipelineOptions {
    PipelineOptions {
        threads: Some(threads),
    }
}

fn lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn small_run_has_expected_cardinality() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo_config(dir.path(), SMALL, "2:2, 0.9", 64, 128);
    let out = run_pipeline(&cfg, &opts(2)).unwrap();
    assert_eq!(out.budget.num_examples, 400);
    assert_eq!(lines(&out.dataset_path()), 400);
    assert_eq!(lines(&cfg.output_dir.join(AUDIT_FILE)), 200);
    assert!(!out.all_cached());

    let echoed = RunConfig::load(&cfg.output_dir.join(CONFIG_FILE)).unwrap();
    let mut resolved = cfg.clone();
    resolved.resolve().unwrap();
    assert_eq!(echoed, resolved);
    assert!(!cfg.output_dir.join(".lock").exists());
}

#[test]
fn rerun_is_cached_and_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = demo_config(dir.path(), SMALL, "2:1, 0.8", 64, 128);
    run_pipeline(&cfg, &opts(4)).unwrap();
    let first = fs::read(cfg.output_dir.join(DATASET_FILE)).unwrap();
    let first_budget = fs::read(cfg.output_dir.join(BUDGET_FILE)).unwrap();

    let again = run_pipeline(&cfg, &opts(4)).unwrap();
    assert!(again
        .stages
        .iter()
        .filter(|s| s.stage != "report")
        .all(|s| s.cached));
    assert_eq!(fs::read(cfg.output_dir.join(DATASET_FILE)).unwrap(), first);
    assert_eq!(fs::read(cfg.output_dir.join(BUDGET_FILE)).unwrap(), first_budget);

    // a new masking seed only invalidates the dataset stage
    cfg.masking.rng_seed += 1;
    let changed = run_pipeline(&cfg, &opts(4)).unwrap();
    for s in &changed.stages {
        let expect_cached = !matches!(s.stage.as_str(), "dataset" | "report");
        assert_eq!(s.cached, expect_cached, "{}", s.stage);
    }
    assert_ne!(fs::read(cfg.output_dir.join(DATASET_FILE)).unwrap(), first);
}

#[test]
fn missing_vocab_fails_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = demo_config(dir.path(), SMALL, "2:2, 0.9", 64, 128);
    cfg.tokenizer.vocab = dir.path().join("absent.txt");
    let err = run_pipeline(&cfg, &opts(1)).unwrap_err();
    assert!(err.is_validation(), "{err}");
    assert!(!cfg.output_dir.exists());
}

#[test]
fn locked_output_dir_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo_config(dir.path(), SMALL, "2:2, 0.9", 64, 128);
    fs::create_dir_all(&cfg.output_dir).unwrap();
    fs::write(cfg.output_dir.join(".lock"), "").unwrap();
    assert!(matches!(run_pipeline(&cfg, &opts(1)), Err(Error::Locked(_))));
}

#[test]
fn stage_failure_names_stage_and_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo_config(dir.path(), SMALL, "2:2, 0.9", 64, 128);
    run_pipeline(&cfg, &opts(2)).unwrap();
    assert!(cfg.output_dir.join(DATASET_FILE).exists());

    fs::write(cfg.corpora.domain_related.clone().unwrap(), "\n   \n\n").unwrap();
    let err = run_pipeline(&cfg, &opts(2)).unwrap_err();
    match &err {
        Error::Stage { stage, source } => {
            assert_eq!(stage, "ingest-dr");
            assert!(matches!(**source, Error::EmptyCorpus));
        }
        other => panic!("unexpected {other}"),
    }
    assert!(!cfg.output_dir.join(DATASET_FILE).exists());
    assert!(!cfg.output_dir.join(BUDGET_FILE).exists());
    assert!(!cfg.output_dir.join(".lock").exists());
    for entry in fs::read_dir(cfg.output_dir.join(".cache")).unwrap() {
        let name = entry.unwrap().file_name();
        assert!(!name.to_string_lossy().starts_with(".tmp"), "{name:?}");
    }
}

#[test]
fn imported_vectors_reproduce_builtin_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo_config(dir.path(), SMALL, "1:1, 0.8", 64, 128);
    run_pipeline(&cfg, &opts(2)).unwrap();
    let builtin = fs::read(cfg.output_dir.join(DATASET_FILE)).unwrap();

    let mut imported = cfg.clone();
    imported.output_dir = dir.path().join("out-import");
    let mut paths = ImportPaths::default();
    for role in Source::ALL {
        let c = corpus::ingest(cfg.corpora.path(role).unwrap(), role, cfg.corpora.format)
            .unwrap()
            .corpus;
        let set = embedding::embed_builtin(&c, &cfg.embedding.builtin).unwrap();
        let p = dir.path().join(format!("{}.emb", role.id_prefix()));
        embedding::export_embeddings(&set, &p).unwrap();
        match role {
            Source::Target => paths.target = Some(p),
            Source::InDomain => paths.in_domain = Some(p),
            Source::DomainRelated => paths.domain_related = Some(p),
        }
    }
    imported.embedding.import = Some(paths);
    run_pipeline(&imported, &opts(2)).unwrap();
    assert_eq!(fs::read(imported.output_dir.join(DATASET_FILE)).unwrap(), builtin);
}

#[test]
fn mismatched_import_is_a_stage_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = demo_config(dir.path(), SMALL, "1:1, 0.8", 64, 128);
    let p = dir.path().join("bad.emb");
    fs::write(&p, b"EMB1 0 64\n").unwrap();
    cfg.embedding.import = Some(ImportPaths {
        target: Some(p.clone()),
        in_domain: Some(p.clone()),
        domain_related: Some(p),
    });
    let err = run_pipeline(&cfg, &opts(1)).unwrap_err();
    match err {
        Error::Stage { stage, source } => {
            assert_eq!(stage, "embed-target");
            assert!(matches!(*source, Error::MissingEmbedding(_)), "{source}");
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn budget_report_flags_published_discrepancy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo_config(dir.path(), SMALL, "10:10, 0.8", 64, 128);
    let out = run_pipeline(&cfg, &opts(2)).unwrap();
    assert_eq!(out.budget.num_examples, 2000);
    assert!(out.budget.notes.iter().any(|n| n.starts_with("DISCREPANCY")), "{:?}", out.budget.notes);
    let json = fs::read_to_string(out.budget_path()).unwrap();
    assert!(json.contains("DISCREPANCY"));
}
