//! End-to-end run: ingest → embed → index → augment → mask → budget.
//!
//! Every stage artifact lives in `<output_dir>/.cache/<stage>-<key>/`, where
//! the key is a SHA-256 over the stage's inputs (file contents, upstream
//! keys, and the stage's own settings). A complete entry is reused as-is,
//! so a rerun with unchanged inputs skips all work. Final outputs are copied
//! into the output directory only after every stage has succeeded:
//!
//! | file | content |
//! | --- | --- |
//! | `config.resolved.toml` | the fully resolved run configuration |
//! | `rejects-<role>.jsonl` | rejected input lines per corpus |
//! | `augment_audit.jsonl` | neighbours and distances per record |
//! | `dataset.jsonl` | masked examples |
//! | `budget.json` | step budget with reference reconciliation notes |
//! | `manifest.json` | stage keys and cache hits for this run |

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::augment::{self, AugmentedRecord, ContextSource};
use crate::budget::{self, BudgetReport};
use crate::config::RunConfig;
use crate::corpus::{self, Corpus, InputMode, Source};
use crate::embedding::{self, EmbeddingSet};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::knn::FlatIndex;
use crate::masking::{self, DatasetSummary};
use crate::reference;
use crate::tokenizer::{Tokenizer, Vocab};

/// Bumped whenever an artifact format changes, invalidating old caches.
const CACHE_VERSION: &str = "ctxaug-cache-1";

#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    /// Worker threads; `None` uses rayon's default. Never affects output bytes.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageOutcome {
    pub stage: String,
    pub key: String,
    pub cached: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub output_dir: PathBuf,
    pub stages: Vec<StageOutcome>,
    pub budget: BudgetReport,
}

impl PipelineOutcome {
    pub fn dataset_path(&self) -> PathBuf {
        self.output_dir.join(DATASET_FILE)
    }

    pub fn budget_path(&self) -> PathBuf {
        self.output_dir.join(BUDGET_FILE)
    }

    pub fn all_cached(&self) -> bool {
        self.stages.iter().all(|s| s.cached)
    }
}

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const BUDGET_FILE: &str = "budget.json";
pub const AUDIT_FILE: &str = "augment_audit.jsonl";
pub const CONFIG_FILE: &str = "config.resolved.toml";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Validates `config` and runs every stage.
///
/// Validation problems surface as [`Error::Config`] before any file is
/// touched; failures inside a stage come back as [`Error::Stage`].
pub fn run_pipeline(config: &RunConfig, options: &PipelineOptions) -> Result<PipelineOutcome> {
    let mut cfg = config.clone();
    cfg.resolve()?;
    cfg.validate()?;
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = options.threads {
            b = b.num_threads(n);
        }
        b.build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
    };
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let _lock = DirLock::acquire(&cfg.output_dir)?;
    let result = pool.install(|| Pipeline::new(&cfg).run());
    if result.is_err() {
        remove_outputs(&cfg.output_dir);
    }
    result
}

/// Deletes published files so a failed run never leaves a stale mix behind.
/// Complete cache entries stay; they are valid for their keys.
fn remove_outputs(dir: &Path) {
    let mut names: Vec<String> = [CONFIG_FILE, AUDIT_FILE, DATASET_FILE, BUDGET_FILE, MANIFEST_FILE]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend(Source::ALL.iter().map(|s| format!("rejects-{}.jsonl", s.id_prefix())));
    for name in names {
        let _ = fs::remove_file(dir.join(name));
    }
}

struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Locked(dir.to_path_buf()))
            }
            Err(e) => Err(Error::io(path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

struct KeyBuilder(Sha256);

impl KeyBuilder {
    fn new(stage: &str) -> Self {
        let mut h = Sha256::new();
        h.update(CACHE_VERSION.as_bytes());
        let mut k = Self(h);
        k.add("stage", stage.as_bytes());
        k
    }

    fn add(&mut self, label: &str, bytes: &[u8]) -> &mut Self {
        for part in [label.as_bytes(), bytes] {
            self.0.update((part.len() as u64).to_le_bytes());
            self.0.update(part);
        }
        self
    }

    fn finish(&mut self) -> String {
        let digest = std::mem::take(&mut self.0).finalize();
        digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
    }
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("config serialization is infallible")
}

struct Pipeline<'a> {
    cfg: &'a RunConfig,
    cache_dir: PathBuf,
    stages: Vec<StageOutcome>,
}

fn stage_err(stage: &str) -> impl FnOnce(Error) -> Error + '_ {
    move |e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage {
            stage: stage.to_owned(),
            source: Box::new(e),
        },
    }
}

impl<'a> Pipeline<'a> {
    fn new(cfg: &'a RunConfig) -> Self {
        Self {
            cfg,
            cache_dir: cfg.output_dir.join(".cache"),
            stages: Vec::new(),
        }
    }

    /// Returns the entry directory, building it with `build` on a miss.
    fn cached<F>(&mut self, stage: &str, key: &str, build: F) -> Result<PathBuf>
    where
        F: FnOnce(&Path) -> Result<()>,
    {
        let entry = self.cache_dir.join(format!("{stage}-{key}"));
        let marker = entry.join(".complete");
        let hit = marker.is_file();
        if !hit {
            log::info!("stage {stage}: building ({key})");
            fs::create_dir_all(&self.cache_dir).map_err(|e| Error::io(&self.cache_dir, e))?;
            let tmp = tempfile::Builder::new()
                .prefix(".tmp-")
                .tempdir_in(&self.cache_dir)
                .map_err(|e| Error::io(&self.cache_dir, e))?;
            build(tmp.path()).map_err(stage_err(stage))?;
            fs::write(tmp.path().join(".complete"), key).map_err(|e| Error::io(tmp.path(), e))?;
            if entry.exists() {
                fs::remove_dir_all(&entry).map_err(|e| Error::io(&entry, e))?;
            }
            let built = tmp.keep();
            fs::rename(&built, &entry).map_err(|e| Error::io(&entry, e))?;
        } else {
            log::info!("stage {stage}: cached ({key})");
        }
        self.stages.push(StageOutcome {
            stage: stage.to_owned(),
            key: key.to_owned(),
            cached: hit,
        });
        Ok(entry)
    }

    fn run(mut self) -> Result<PipelineOutcome> {
        let cfg = self.cfg;
        let roles = cfg.roles();
        let vocab_bytes = fsutil::read(&cfg.tokenizer.vocab)?;

        // ingest: keys from file contents
        let mut ingest = Vec::new();
        for &role in &roles {
            let path = cfg.corpora.path(role).expect("validated");
            let bytes = fsutil::read(path)?;
            let key = KeyBuilder::new("ingest")
                .add("role", role.tag().as_bytes())
                .add("format", &json(&cfg.corpora.format))
                .add("input", &bytes)
                .finish();
            let stage = format!("ingest-{}", role.id_prefix());
            let entry = self.cached(&stage, &key, |dir| {
                let out = corpus::ingest_bytes(&bytes, role, cfg.corpora.format)?;
                if out.corpus.is_empty() {
                    return Err(Error::EmptyCorpus);
                }
                out.corpus.write_jsonl(&dir.join("corpus.jsonl"))?;
                out.write_rejects(&dir.join("rejects.jsonl"))
            })?;
            ingest.push((role, key, entry));
        }

        // embedding keys
        let mut embed_keys = Vec::new();
        for (role, ingest_key, _) in &ingest {
            let mut k = KeyBuilder::new("embed");
            k.add("corpus", ingest_key.as_bytes());
            match &cfg.embedding.import {
                Some(import) => {
                    let p = import.path(*role).expect("validated");
                    k.add("import", &fsutil::read(p)?);
                }
                None => {
                    k.add("builtin", &json(&cfg.embedding.builtin));
                }
            }
            embed_keys.push(k.finish());
        }

        let tokenizer_cfg = json(&cfg.tokenizer.config);
        let augment_key = {
            let mut k = KeyBuilder::new("augment");
            for key in &embed_keys {
                k.add("embed", key.as_bytes());
            }
            k.add("vocab", &vocab_bytes)
                .add("tokenizer", &tokenizer_cfg)
                .add("augment", &json(&cfg.augment))
                .finish()
        };
        let dataset_key = KeyBuilder::new("dataset")
            .add("augment", augment_key.as_bytes())
            .add("vocab", &vocab_bytes)
            .add("masking", &json(&cfg.masking))
            .finish();

        let vocab = Vocab::from_bytes(&vocab_bytes).map_err(stage_err("tokenizer"))?;
        let tokenizer =
            Tokenizer::new(vocab.clone(), cfg.tokenizer.config.clone()).map_err(stage_err("tokenizer"))?;

        let mut records: Option<Vec<AugmentedRecord>> = None;
        let dataset_cached = self
            .cache_dir
            .join(format!("dataset-{dataset_key}"))
            .join(".complete")
            .is_file();
        let augment_entry = if dataset_cached {
            self.cache_dir.join(format!("augment-{augment_key}"))
        } else {
            let entry = self.augment_stage(&ingest, &embed_keys, &augment_key, &tokenizer)?;
            records = Some(
                augment::read_records(&entry.join("records.jsonl")).map_err(stage_err("augment"))?,
            );
            entry
        };
        if dataset_cached {
            // keep the manifest complete even though the upstream work was skipped
            for (i, (role, _, _)) in ingest.iter().enumerate() {
                self.stages.push(StageOutcome {
                    stage: format!("embed-{}", role.id_prefix()),
                    key: embed_keys[i].clone(),
                    cached: true,
                });
            }
            self.stages.push(StageOutcome {
                stage: "augment".to_owned(),
                key: augment_key.clone(),
                cached: true,
            });
        }

        let masking_cfg = &cfg.masking;
        let dataset_entry = self.cached("dataset", &dataset_key, |dir| {
            let records = records.as_deref().expect("records are loaded on a dataset miss");
            let file = fs::File::create(dir.join(DATASET_FILE)).map_err(|e| Error::io(dir, e))?;
            let summary =
                masking::write_dataset(records, masking_cfg, &vocab, std::io::BufWriter::new(file))?;
            fs::write(dir.join("summary.json"), json(&summary)).map_err(|e| Error::io(dir, e))?;
            Ok(())
        })?;

        let summary: DatasetSummary = serde_json::from_slice(&fsutil::read(
            &dataset_entry.join("summary.json"),
        )?)?;
        let mut report = budget::budget(
            summary.num_examples,
            cfg.training.batch_size,
            cfg.training.epochs,
        )
        .map_err(stage_err("report"))?;
        report.approx_bytes = Some(summary.bytes);
        let exp = cfg.current_experiment();
        budget::annotate(
            &mut report,
            &reference::matching(
                exp.variations_dr,
                exp.variations_id,
                exp.max_distance,
                cfg.training.epochs,
            ),
        );
        self.stages.push(StageOutcome {
            stage: "report".to_owned(),
            key: String::new(),
            cached: false,
        });

        // publish
        let out = &cfg.output_dir;
        fsutil::write_atomic(&out.join(CONFIG_FILE), cfg.to_toml().as_bytes())?;
        for (role, _, entry) in &ingest {
            copy_atomic(
                &entry.join("rejects.jsonl"),
                &out.join(format!("rejects-{}.jsonl", role.id_prefix())),
            )?;
        }
        copy_atomic(&augment_entry.join(AUDIT_FILE), &out.join(AUDIT_FILE))?;
        copy_atomic(&dataset_entry.join(DATASET_FILE), &out.join(DATASET_FILE))?;
        let mut budget_json = serde_json::to_vec_pretty(&report)?;
        budget_json.push(b'\n');
        fsutil::write_atomic(&out.join(BUDGET_FILE), &budget_json)?;
        fsutil::write_atomic(&out.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&self.stages)?)?;

        Ok(PipelineOutcome {
            output_dir: out.clone(),
            stages: self.stages,
            budget: report,
        })
    }

    fn augment_stage(
        &mut self,
        ingest: &[(Source, String, PathBuf)],
        embed_keys: &[String],
        augment_key: &str,
        tokenizer: &Tokenizer,
    ) -> Result<PathBuf> {
        let cfg = self.cfg;
        let entry = self.cache_dir.join(format!("augment-{augment_key}"));
        if entry.join(".complete").is_file() {
            for (i, (role, _, _)) in ingest.iter().enumerate() {
                self.stages.push(StageOutcome {
                    stage: format!("embed-{}", role.id_prefix()),
                    key: embed_keys[i].clone(),
                    cached: true,
                });
            }
            return self.cached("augment", augment_key, |_| unreachable!("entry is complete"));
        }

        let mut corpora: Vec<(Corpus, EmbeddingSet)> = Vec::new();
        for (i, (role, _, ingest_entry)) in ingest.iter().enumerate() {
            let corpus = corpus::ingest_bytes(
                &fsutil::read(&ingest_entry.join("corpus.jsonl"))?,
                *role,
                InputMode::Jsonl,
            )
            .map_err(stage_err("ingest"))?
            .corpus;
            let stage = format!("embed-{}", role.id_prefix());
            let embed_entry = self.cached(&stage, &embed_keys[i], |dir| {
                let set = match &cfg.embedding.import {
                    Some(import) => embedding::import_embeddings(
                        import.path(*role).expect("validated"),
                        &corpus,
                        None,
                    )?,
                    None => embedding::embed_builtin(&corpus, &cfg.embedding.builtin)?,
                };
                embedding::export_embeddings(&set, &dir.join("vectors.emb"))
            })?;
            let set = embedding::import_embeddings(&embed_entry.join("vectors.emb"), &corpus, None)
                .map_err(stage_err(&stage))?;
            corpora.push((corpus, set));
        }

        self.cached("augment", augment_key, |dir| {
            let (target, target_emb) = &corpora[0];
            let indexes = corpora[1..]
                .iter()
                .map(|(c, e)| FlatIndex::build(e, c.role()))
                .collect::<Result<Vec<_>>>()?;
            let contexts = indexes
                .iter()
                .zip(&corpora[1..])
                .map(|(idx, (c, _))| ContextSource::new(idx, c))
                .collect::<Result<Vec<_>>>()?;
            let records =
                augment::augment_corpus(target, target_emb, &contexts, tokenizer, &cfg.augment)?;
            augment::write_records(&records, &dir.join("records.jsonl"))?;
            augment::write_audit(&records, &dir.join(AUDIT_FILE))
        })
    }
}

fn copy_atomic(from: &Path, to: &Path) -> Result<()> {
    let dir = to.parent().unwrap_or_else(|| Path::new("."));
    let tmp = fsutil::temp_in(dir)?;
    fs::copy(from, tmp.path()).map_err(|e| Error::io(from, e))?;
    tmp.persist(to).map_err(|e| Error::io(to, e.error))?;
    Ok(())
}
