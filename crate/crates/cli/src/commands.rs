use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use ctxaug_core::augment::{self, ContextSource};
use ctxaug_core::budget;
use ctxaug_core::config::{CorporaConfig, EmbeddingSection, TokenizerSection};
use ctxaug_core::corpus::{self, Corpus};
use ctxaug_core::embedding::{self, Embedder, EmbeddingRecord};
use ctxaug_core::eval::{self, Collection};
use ctxaug_core::masking::{self, BudgetParams, MaskConfig};
use ctxaug_core::reference::{self, PUBLISHED_RUNS};
use ctxaug_core::synthetic::{self, DemoSizes};
use ctxaug_core::{
    AugmentConfig, EmbeddingSet, Error, Experiment, FlatIndex, InputMode, PipelineOptions, Qrels,
    Result, Run, RunConfig, Source, Tokenizer, TokenizerConfig, Vocab,
};

use crate::{parse_format, parse_source, GlobalArgs};

fn invalid(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn require_file(what: &str, path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("{what} not found: {}", path.display())))
    }
}

fn load_config(g: &GlobalArgs) -> Result<Option<RunConfig>> {
    match &g.config {
        Some(path) => {
            require_file("config", path)?;
            Ok(Some(RunConfig::load(path)?))
        }
        None => Ok(None),
    }
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(io_err(p)),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(io_err(Path::new("<stdout>"))),
    }
}

fn pretty_json<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

/// Vocabulary path and tokenizer settings from flags, falling back to the config.
fn tokenizer_from(
    cfg: Option<&RunConfig>,
    vocab: Option<&Path>,
    max_len: Option<usize>,
) -> Result<Tokenizer> {
    let path = vocab
        .map(Path::to_path_buf)
        .or_else(|| cfg.map(|c| c.tokenizer.vocab.clone()))
        .ok_or_else(|| invalid("no vocabulary given (use --vocab or --config)"))?;
    require_file("vocab", &path)?;
    let mut config = cfg.map(|c| c.tokenizer.config.clone()).unwrap_or_default();
    if let Some(n) = max_len {
        config.max_len = n;
    }
    config.validate()?;
    Tokenizer::new(Vocab::load(&path)?, config)
}

fn load_corpus(path: &Path, role: Source, format: InputMode) -> Result<Corpus> {
    require_file("corpus", path)?;
    let out = corpus::ingest(path, role, format)?;
    if !out.rejects.is_empty() {
        log::warn!("{}: {} lines rejected", path.display(), out.rejects.len());
    }
    Ok(out.corpus)
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Corpus role: TARGET, ID or DR.
    #[arg(long, default_value = "TARGET", value_parser = parse_source)]
    role: Source,
    /// Input file; defaults to the config's path for the role.
    #[arg(long)]
    input: Option<PathBuf>,
    /// `raw` (one text per line) or `jsonl` ({"id", "text"} per line).
    #[arg(long, value_parser = parse_format)]
    format: Option<InputMode>,
    /// Normalised corpus, one {"id", "text"} object per line.
    #[arg(long)]
    out: PathBuf,
    /// Rejected lines with their reasons.
    #[arg(long)]
    rejects: Option<PathBuf>,
    /// Print size statistics (needs a vocabulary).
    #[arg(long)]
    stats: bool,
    #[arg(long)]
    vocab: Option<PathBuf>,
}

pub fn ingest(g: &GlobalArgs, a: IngestArgs) -> Result<()> {
    let cfg = load_config(g)?;
    let input = a
        .input
        .clone()
        .or_else(|| cfg.as_ref().and_then(|c| c.corpora.path(a.role).map(Path::to_path_buf)))
        .ok_or_else(|| invalid(format!("no input for {} (use --input or --config)", a.role)))?;
    require_file("input", &input)?;
    let format = a
        .format
        .or_else(|| cfg.as_ref().map(|c| c.corpora.format))
        .unwrap_or_default();
    let tokenizer = if a.stats {
        Some(tokenizer_from(cfg.as_ref(), a.vocab.as_deref(), None)?)
    } else {
        None
    };

    let outcome = corpus::ingest(&input, a.role, format)?;
    if outcome.corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    outcome.corpus.write_jsonl(&a.out)?;
    if let Some(p) = &a.rejects {
        outcome.write_rejects(p)?;
    }
    eprintln!(
        "{}: {} documents, {} rejected of {} lines",
        a.role,
        outcome.corpus.count(),
        outcome.rejects.len(),
        outcome.lines
    );
    if let Some(tok) = tokenizer {
        write_output(None, &pretty_json(&corpus::stats(&outcome.corpus, &tok)?)?)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Corpus written by `ingest`.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "TARGET", value_parser = parse_source)]
    role: Source,
    #[arg(long, default_value = "jsonl", value_parser = parse_format)]
    format: InputMode,
    /// Output `EMB1` file.
    #[arg(long)]
    out: PathBuf,
    /// Validate and align precomputed vectors instead of embedding.
    #[arg(long)]
    import: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    ngram_min: Option<usize>,
    #[arg(long)]
    ngram_max: Option<usize>,
    /// Hash salt of the built-in embedder.
    #[arg(long)]
    embed_seed: Option<u64>,
}

pub fn embed(g: &GlobalArgs, a: EmbedArgs) -> Result<()> {
    let cfg = load_config(g)?;
    let mut ec = cfg.map(|c| c.embedding.builtin).unwrap_or_default();
    ec.dim = a.dim.unwrap_or(ec.dim);
    ec.ngram_min = a.ngram_min.unwrap_or(ec.ngram_min);
    ec.ngram_max = a.ngram_max.unwrap_or(ec.ngram_max);
    ec.seed = a.embed_seed.unwrap_or(ec.seed);
    ec.validate()?;
    if let Some(p) = &a.import {
        require_file("embedding import", p)?;
    }
    let corpus = load_corpus(&a.corpus, a.role, a.format)?;
    let set = match &a.import {
        Some(p) => embedding::import_embeddings(p, &corpus, a.dim)?,
        None => Embedder::new(ec)?.embed_corpus(&corpus)?,
    };
    embedding::export_embeddings(&set, &a.out)?;
    eprintln!("{}: {} vectors of dim {}", a.role, set.len(), set.dim());
    Ok(())
}

fn load_vectors(path: &Path) -> Result<EmbeddingSet> {
    require_file("embeddings", path)?;
    let raw = embedding::parse_embedding_bytes(&fs::read(path).map_err(io_err(path))?)?;
    let records = raw
        .records
        .into_iter()
        .map(|(id, v)| EmbeddingRecord::new(id, v))
        .collect::<Result<Vec<_>>>()?;
    EmbeddingSet::from_records(raw.dim, records)
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    /// `EMB1` file written by `embed`.
    #[arg(long)]
    embeddings: PathBuf,
    /// Context source the index serves: ID or DR.
    #[arg(long, value_parser = parse_source)]
    source: Source,
    #[arg(long)]
    out: PathBuf,
}

pub fn index(_g: &GlobalArgs, a: IndexArgs) -> Result<()> {
    let set = load_vectors(&a.embeddings)?;
    let index = FlatIndex::build(&set, a.source)?;
    index.save(&a.out)?;
    eprintln!("{}: indexed {} vectors of dim {}", a.source, index.len(), index.dim());
    Ok(())
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Target corpus written by `ingest`.
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    target_embeddings: PathBuf,
    #[arg(long)]
    id_corpus: Option<PathBuf>,
    #[arg(long)]
    id_index: Option<PathBuf>,
    #[arg(long)]
    dr_corpus: Option<PathBuf>,
    #[arg(long)]
    dr_index: Option<PathBuf>,
    /// Context sources in output order, e.g. `ID,DR` or `ID`.
    #[arg(long, value_delimiter = ',', value_parser = parse_source)]
    sources: Vec<Source>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    max_distance: Option<f64>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    max_len: Option<usize>,
    /// Augmented records, one JSON object per line.
    #[arg(long)]
    out: PathBuf,
    /// Neighbour ids and distances per record.
    #[arg(long)]
    audit: Option<PathBuf>,
}

pub fn augment(g: &GlobalArgs, a: AugmentArgs) -> Result<()> {
    let mut cfg = load_config(g)?;
    if let Some(c) = &mut cfg {
        c.resolve()?;
    }
    let tokenizer = tokenizer_from(cfg.as_ref(), a.vocab.as_deref(), a.max_len)?;
    let mut ac: AugmentConfig = cfg.as_ref().map(|c| c.augment.clone()).unwrap_or_default();
    if !a.sources.is_empty() {
        ac.sources = a.sources.clone();
    }
    ac.k = a.k.unwrap_or(ac.k);
    ac.max_distance = a.max_distance.unwrap_or(ac.max_distance);
    ac.token_budget = tokenizer.config().max_len;
    ac.validate(&tokenizer)?;

    let mut inputs = Vec::new();
    for &s in &ac.sources {
        let (c, i) = match s {
            Source::InDomain => (&a.id_corpus, &a.id_index),
            _ => (&a.dr_corpus, &a.dr_index),
        };
        let (c, i) = match (c, i) {
            (Some(c), Some(i)) => (c, i),
            _ => {
                let flag = s.id_prefix();
                return Err(invalid(format!(
                    "source {s} needs --{flag}-corpus and --{flag}-index"
                )));
            }
        };
        require_file("index", i)?;
        inputs.push((load_corpus(c, s, InputMode::Jsonl)?, FlatIndex::load(i)?));
    }
    require_file("target embeddings", &a.target_embeddings)?;
    let target = load_corpus(&a.target, Source::Target, InputMode::Jsonl)?;
    let target_emb = embedding::import_embeddings(&a.target_embeddings, &target, None)?;

    let contexts = inputs
        .iter()
        .map(|(c, i)| ContextSource::new(i, c))
        .collect::<Result<Vec<_>>>()?;
    let records = augment::augment_corpus(&target, &target_emb, &contexts, &tokenizer, &ac)?;
    augment::write_records(&records, &a.out)?;
    if let Some(p) = &a.audit {
        augment::write_audit(&records, p)?;
    }
    let fallbacks = records.iter().filter(|r| r.fallback).count();
    eprintln!("{} records ({fallbacks} without neighbours)", records.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct BuildDatasetArgs {
    /// Records written by `augment`.
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// `X:Y`: variations per DR record and per ID record.
    #[arg(long)]
    variations: Option<String>,
    #[arg(long)]
    mlm_prob: Option<f64>,
    #[arg(long)]
    batch_size: Option<u64>,
    #[arg(long)]
    epochs: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Budget report; printed to stdout when omitted.
    #[arg(long)]
    budget: Option<PathBuf>,
}

fn parse_variations(s: &str) -> Result<(usize, usize)> {
    let bad = || invalid(format!("variations `{s}` is not of the form X:Y"));
    let (x, y) = s.split_once(':').ok_or_else(bad)?;
    let x: usize = x.trim().parse().map_err(|_| bad())?;
    let y: usize = y.trim().parse().map_err(|_| bad())?;
    Ok((x, y))
}

pub fn build_dataset(g: &GlobalArgs, a: BuildDatasetArgs) -> Result<()> {
    let mut cfg = load_config(g)?;
    if let Some(c) = &mut cfg {
        c.resolve()?;
    }
    let vocab_path = a
        .vocab
        .clone()
        .or_else(|| cfg.as_ref().map(|c| c.tokenizer.vocab.clone()))
        .ok_or_else(|| invalid("no vocabulary given (use --vocab or --config)"))?;
    require_file("vocab", &vocab_path)?;
    require_file("records", &a.records)?;
    let mut mc: MaskConfig = cfg.as_ref().map(|c| c.masking.clone()).unwrap_or_default();
    if let Some(v) = &a.variations {
        (mc.variations_dr, mc.variations_id) = parse_variations(v)?;
    }
    mc.mlm_prob = a.mlm_prob.unwrap_or(mc.mlm_prob);
    mc.rng_seed = g.seed.unwrap_or(mc.rng_seed);
    mc.validate()?;
    let mut params: BudgetParams = cfg.as_ref().map(|c| c.training).unwrap_or_default();
    params.batch_size = a.batch_size.unwrap_or(params.batch_size);
    params.epochs = a.epochs.unwrap_or(params.epochs);
    if params.batch_size == 0 || params.epochs == 0 {
        return Err(invalid("batch size and epochs must be positive"));
    }

    let vocab = Vocab::load(&vocab_path)?;
    let records = augment::read_records(&a.records)?;
    let report = masking::build_dataset(&records, &mc, &vocab, &a.out, params)?;
    eprintln!("{} examples written to {}", report.num_examples, a.out.display());
    write_output(a.budget.as_deref(), &pretty_json(&report)?)
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// TREC run file; repeat once per collection.
    #[arg(long, required = true)]
    run: Vec<PathBuf>,
    /// TREC qrels file; one per `--run`, in the same order.
    #[arg(long, required = true)]
    qrels: Vec<PathBuf>,
    /// Collection names; default to the run file stems.
    #[arg(long)]
    name: Vec<String>,
    /// JSON report (scores ×100); printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also print a plain-text table to stderr.
    #[arg(long)]
    table: bool,
}

pub fn eval(_g: &GlobalArgs, a: EvalArgs) -> Result<()> {
    if a.run.len() != a.qrels.len() {
        return Err(invalid(format!(
            "{} --run files but {} --qrels files",
            a.run.len(),
            a.qrels.len()
        )));
    }
    if !a.name.is_empty() && a.name.len() != a.run.len() {
        return Err(invalid("--name must be given once per --run or not at all"));
    }
    for (r, q) in a.run.iter().zip(&a.qrels) {
        require_file("run", r)?;
        require_file("qrels", q)?;
    }
    let collections = a
        .run
        .iter()
        .zip(&a.qrels)
        .enumerate()
        .map(|(i, (r, q))| {
            let name = a.name.get(i).cloned().unwrap_or_else(|| {
                r.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| format!("collection-{i}"))
            });
            Ok(Collection {
                name,
                run: Run::load(r)?,
                qrels: Qrels::load(q)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = eval::evaluate_collections(&collections)?;
    if a.table {
        eprint!("{}", report.to_table());
    }
    let mut json = report.to_scaled_json().into_bytes();
    json.push(b'\n');
    write_output(a.out.as_deref(), &json)
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    /// Query corpus ({"id", "text"} per line).
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    query_embeddings: PathBuf,
    /// Document corpus ({"id", "text"} per line).
    #[arg(long)]
    docs: PathBuf,
    #[arg(long)]
    doc_embeddings: PathBuf,
    #[arg(long, default_value_t = 100)]
    top_n: usize,
    #[arg(long, default_value = "ctxaug")]
    run_name: String,
    /// TREC run output.
    #[arg(long)]
    out: PathBuf,
}

pub fn retrieve(_g: &GlobalArgs, a: RetrieveArgs) -> Result<()> {
    require_file("query embeddings", &a.query_embeddings)?;
    require_file("document embeddings", &a.doc_embeddings)?;
    let queries = load_corpus(&a.queries, Source::Target, InputMode::Jsonl)?;
    let docs = load_corpus(&a.docs, Source::InDomain, InputMode::Jsonl)?;
    let q_emb = embedding::import_embeddings(&a.query_embeddings, &queries, None)?;
    let d_emb = embedding::import_embeddings(&a.doc_embeddings, &docs, Some(q_emb.dim()))?;
    let run = eval::retrieve(&queries, &q_emb, &docs, &d_emb, a.top_n)?;
    let mut buf = Vec::new();
    run.write_trec(&mut buf, &a.run_name)
        .map_err(io_err(&a.out))?;
    fs::write(&a.out, buf).map_err(io_err(&a.out))
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Step budget for the configured (or given) dataset size.
    #[arg(long)]
    budget: bool,
    /// Published accounting and score rows.
    #[arg(long)]
    reference: bool,
    /// Dataset size; counted from the config's corpora when omitted.
    #[arg(long)]
    examples: Option<u64>,
    #[arg(long)]
    batch_size: Option<u64>,
    #[arg(long)]
    epochs: Option<u64>,
    /// `"X:Y, D"`; selects the published rows to reconcile against.
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn report(g: &GlobalArgs, a: ReportArgs) -> Result<()> {
    if !a.budget && !a.reference {
        return Err(invalid("nothing to report (use --budget and/or --reference)"));
    }
    let mut out = Vec::new();
    if a.reference {
        out.extend(pretty_json(&PUBLISHED_RUNS)?);
    }
    if a.budget {
        let mut cfg = load_config(g)?;
        if let (Some(c), Some(e)) = (&mut cfg, &a.experiment) {
            c.experiment = Some(e.clone());
        }
        if let Some(c) = &mut cfg {
            c.resolve()?;
        }
        let experiment = match (&a.experiment, &cfg) {
            (Some(e), _) => Some(e.parse::<Experiment>()?),
            (None, Some(c)) => Some(c.current_experiment()),
            (None, None) => None,
        };
        let params = cfg.as_ref().map(|c| c.training).unwrap_or_default();
        let batch = a.batch_size.unwrap_or(params.batch_size);
        let epochs = a.epochs.unwrap_or(params.epochs);
        let examples = match (a.examples, &cfg) {
            (Some(n), _) => n,
            (None, Some(c)) => configured_examples(c)?,
            (None, None) => {
                return Err(invalid("--budget needs --examples or --config"));
            }
        };
        let mut report = budget::budget(examples, batch, epochs)?;
        if let Some(e) = experiment {
            let rows = reference::matching(e.variations_dr, e.variations_id, e.max_distance, epochs);
            budget::annotate(&mut report, &rows);
        }
        out.extend(pretty_json(&report)?);
    }
    write_output(a.out.as_deref(), &out)
}

/// Target documents times the variations summed over the configured sources.
/// Every seed yields one record per source, with or without neighbours.
fn configured_examples(cfg: &RunConfig) -> Result<u64> {
    require_file("target corpus", &cfg.corpora.target)?;
    let target = load_corpus(&cfg.corpora.target, Source::Target, cfg.corpora.format)?;
    let per_seed: usize = cfg
        .augment
        .sources
        .iter()
        .map(|&s| cfg.masking.variations_for(s))
        .sum();
    Ok(target.count() as u64 * per_seed as u64)
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// `"X:Y, D"`; overrides the configured experiment.
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    max_distance: Option<f64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_source)]
    sources: Vec<Source>,
    #[arg(long)]
    mlm_prob: Option<f64>,
    #[arg(long)]
    batch_size: Option<u64>,
    #[arg(long)]
    epochs: Option<u64>,
    #[arg(long)]
    dim: Option<usize>,
}

pub fn run(g: &GlobalArgs, a: RunArgs) -> Result<()> {
    let mut cfg = load_config(g)?.ok_or_else(|| invalid("`run` needs --config"))?;
    if let Some(e) = &a.experiment {
        cfg.experiment = Some(e.clone());
    }
    cfg.resolve()?;
    if let Some(d) = a.max_distance {
        cfg.augment.max_distance = d;
    }
    // drop the shorthand so the explicit overrides win, then re-derive it
    cfg.experiment = None;
    if let Some(p) = a.output_dir {
        cfg.output_dir = p;
    }
    if !a.sources.is_empty() {
        cfg.augment.sources = a.sources;
    }
    cfg.augment.k = a.k.unwrap_or(cfg.augment.k);
    cfg.masking.mlm_prob = a.mlm_prob.unwrap_or(cfg.masking.mlm_prob);
    cfg.masking.rng_seed = g.seed.unwrap_or(cfg.masking.rng_seed);
    cfg.training.batch_size = a.batch_size.unwrap_or(cfg.training.batch_size);
    cfg.training.epochs = a.epochs.unwrap_or(cfg.training.epochs);
    cfg.embedding.builtin.dim = a.dim.unwrap_or(cfg.embedding.builtin.dim);

    let outcome = ctxaug_core::run_pipeline(
        &cfg,
        &PipelineOptions {
            threads: g.threads,
        },
    )?;
    for s in &outcome.stages {
        let state = if s.cached { "cached" } else { "built" };
        eprintln!("{:<12} {state}", s.stage);
    }
    eprintln!("dataset: {}", outcome.dataset_path().display());
    write_output(None, &pretty_json(&outcome.budget)?)
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory for the corpora, vocabulary and `ctxaug.toml`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    target: usize,
    #[arg(long, default_value_t = 400)]
    in_domain: usize,
    #[arg(long, default_value_t = 400)]
    domain_related: usize,
    #[arg(long, default_value = "10:10, 0.7")]
    experiment: String,
}

pub fn synth(g: &GlobalArgs, a: SynthArgs) -> Result<()> {
    let experiment: Experiment = a.experiment.parse()?;
    if a.target == 0 || a.in_domain == 0 || a.domain_related == 0 {
        return Err(invalid("corpus sizes must be positive"));
    }
    let seed = g.seed.unwrap_or(0);
    synthetic::write_demo(
        &a.out,
        DemoSizes {
            target: a.target,
            in_domain: a.in_domain,
            domain_related: a.domain_related,
        },
        seed,
    )?;
    let mut cfg = RunConfig {
        output_dir: "out".into(),
        experiment: Some(experiment.to_string()),
        corpora: CorporaConfig {
            target: "target.txt".into(),
            in_domain: Some("id.txt".into()),
            domain_related: Some("dr.txt".into()),
            format: InputMode::Raw,
        },
        tokenizer: TokenizerSection {
            vocab: "vocab.txt".into(),
            config: TokenizerConfig::default(),
        },
        embedding: EmbeddingSection::default(),
        augment: AugmentConfig::default(),
        masking: MaskConfig {
            rng_seed: seed,
            ..MaskConfig::default()
        },
        training: BudgetParams::default(),
    };
    cfg.resolve()?;
    let path = a.out.join("ctxaug.toml");
    fs::write(&path, cfg.to_toml()).map_err(io_err(&path))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}
