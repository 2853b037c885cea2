//! Context augmentation: each seed record is packed together with its
//! nearest neighbours from one context source.
//!
//! For a seed and a source the packed sequence is
//! `[CLS] seed [SEP] nn1 [SEP] nn2 [SEP] ...` with neighbours in ascending
//! distance, truncated from the tail to the token budget. A seed with no
//! neighbour inside the distance threshold is packed alone and flagged as a
//! fallback record.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, Corpus, Document, Source};
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::knn::{FlatIndex, QueryParams};
use crate::tokenizer::{TokenSeq, Tokenizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub k: usize,
    pub max_distance: f64,
    pub token_budget: usize,
    pub sources: Vec<Source>,
    /// Drop a neighbour whose id equals the seed id.
    pub exclude_self: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            k: 3,
            max_distance: 0.7,
            token_budget: 512,
            sources: vec![Source::InDomain, Source::DomainRelated],
            exclude_self: true,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self, tokenizer: &Tokenizer) -> Result<()> {
        QueryParams::new(self.k, self.max_distance).validate()?;
        if self.token_budget != tokenizer.config().max_len {
            return Err(Error::Config(format!(
                "token budget {} does not match tokenizer max_len {}",
                self.token_budget,
                tokenizer.config().max_len
            )));
        }
        if self.sources.is_empty() {
            return Err(Error::Config("at least one context source is required".to_owned()));
        }
        for (i, s) in self.sources.iter().enumerate() {
            if *s == Source::Target {
                return Err(Error::Config("TARGET cannot be a context source".to_owned()));
            }
            if self.sources[..i].contains(s) {
                return Err(Error::Config(format!("source {s} listed twice")));
            }
        }
        Ok(())
    }

    fn query_params(&self, seed_id: &str) -> QueryParams {
        let params = QueryParams::new(self.k, self.max_distance);
        if self.exclude_self {
            params.excluding(seed_id)
        } else {
            params
        }
    }
}

/// A context corpus paired with the index built from its embeddings.
#[derive(Debug, Clone, Copy)]
pub struct ContextSource<'a> {
    index: &'a FlatIndex,
    corpus: &'a Corpus,
}

impl<'a> ContextSource<'a> {
    /// Index rows must line up one-to-one with the corpus documents.
    pub fn new(index: &'a FlatIndex, corpus: &'a Corpus) -> Result<Self> {
        if index.source() != corpus.role() {
            return Err(Error::SpaceMismatch(format!(
                "{} index paired with a {} corpus",
                index.source(),
                corpus.role()
            )));
        }
        let aligned = index.len() == corpus.count()
            && index.ids().iter().zip(corpus).all(|(id, doc)| *id == doc.id);
        if !aligned {
            return Err(Error::SpaceMismatch(format!(
                "{} index rows do not match the corpus documents",
                index.source()
            )));
        }
        Ok(Self { index, corpus })
    }

    pub fn source(&self) -> Source {
        self.index.source()
    }

    pub fn index(&self) -> &'a FlatIndex {
        self.index
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedRecord {
    pub seed_id: String,
    pub source: Source,
    pub neighbor_ids: Vec<String>,
    pub neighbor_distances: Vec<f64>,
    pub packed: TokenSeq,
    pub fallback: bool,
    /// Seed text followed by neighbour texts, one per paragraph.
    pub augmented_text: String,
}

/// Separator used only in `augmented_text`; the packed ids use `[SEP]`.
pub const TEXT_SEPARATOR: &str = "\n\n";

/// Augments one seed from one context source.
pub fn augment(
    seed: &Document,
    seed_vector: &[f32],
    context: &ContextSource<'_>,
    tokenizer: &Tokenizer,
    config: &AugmentConfig,
) -> Result<AugmentedRecord> {
    if seed_vector.len() != context.index.dim() {
        return Err(Error::SpaceMismatch(format!(
            "seed `{}` has a {}-d vector, {} index is {}-d",
            seed.id,
            seed_vector.len(),
            context.source(),
            context.index.dim()
        )));
    }
    let hits = context
        .index
        .query(seed_vector, &config.query_params(&seed.id))?;

    let mut segments = Vec::with_capacity(hits.len() + 1);
    segments.push(tokenizer.tokenize(&seed.text));
    let mut text = seed.text.clone();
    for hit in &hits {
        let doc = &context.corpus.documents()[hit.row];
        segments.push(tokenizer.tokenize(&doc.text));
        text.push_str(TEXT_SEPARATOR);
        text.push_str(&doc.text);
    }
    Ok(AugmentedRecord {
        seed_id: seed.id.clone(),
        source: context.source(),
        fallback: hits.is_empty(),
        neighbor_ids: hits.iter().map(|h| h.doc_id.clone()).collect(),
        neighbor_distances: hits.iter().map(|h| h.distance).collect(),
        packed: tokenizer.pack(&segments),
        augmented_text: text,
    })
}

/// Augments every seed against every configured source.
///
/// Output is ordered by seed, then by the order of `config.sources`.
pub fn augment_corpus(
    target: &Corpus,
    target_embeddings: &EmbeddingSet,
    contexts: &[ContextSource<'_>],
    tokenizer: &Tokenizer,
    config: &AugmentConfig,
) -> Result<Vec<AugmentedRecord>> {
    config.validate(tokenizer)?;
    target_embeddings.check_aligned(target)?;
    let ordered: Vec<&ContextSource<'_>> = config
        .sources
        .iter()
        .map(|&s| {
            contexts
                .iter()
                .find(|c| c.source() == s)
                .ok_or(Error::MissingSource(s))
        })
        .collect::<Result<_>>()?;

    let per_seed: Vec<Vec<AugmentedRecord>> = target
        .documents()
        .par_iter()
        .zip(target_embeddings.records().par_iter())
        .map(|(seed, emb)| {
            ordered
                .iter()
                .map(|ctx| augment(seed, &emb.vector, ctx, tokenizer, config))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let records: Vec<AugmentedRecord> = per_seed.into_iter().flatten().collect();
    let fallbacks = records.iter().filter(|r| r.fallback).count();
    log::info!(
        "augmented {} seeds into {} records ({} fallback)",
        target.count(),
        records.len(),
        fallbacks
    );
    Ok(records)
}

/// One line of the augmentation audit dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seed_id: String,
    pub source: Source,
    pub neighbor_ids: Vec<String>,
    pub distances: Vec<f64>,
    pub fallback: bool,
}

impl From<&AugmentedRecord> for AuditEntry {
    fn from(r: &AugmentedRecord) -> Self {
        Self {
            seed_id: r.seed_id.clone(),
            source: r.source,
            neighbor_ids: r.neighbor_ids.clone(),
            distances: r.neighbor_distances.clone(),
            fallback: r.fallback,
        }
    }
}

pub fn write_audit(records: &[AugmentedRecord], path: &Path) -> Result<()> {
    let entries: Vec<AuditEntry> = records.iter().map(AuditEntry::from).collect();
    fsutil::write_atomic_with(path, |w| corpus::write_jsonl(w, &entries))
}

/// Full records, one JSON object per line; read back with [`read_records`].
pub fn write_records(records: &[AugmentedRecord], path: &Path) -> Result<()> {
    fsutil::write_atomic_with(path, |w: &mut dyn Write| corpus::write_jsonl(w, records))
}

pub fn read_records(path: &Path) -> Result<Vec<AugmentedRecord>> {
    let bytes = fsutil::read(path)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| Error::Config(format!("{}: not UTF-8: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingRecord;
    use crate::tokenizer::{TokenizerConfig, Vocab, CLS, MASK, PAD, SEP, UNK};

    fn tokenizer() -> Tokenizer {
        let vocab = Vocab::from_tokens([PAD, UNK, CLS, SEP, MASK, "seed", "eins", "zwei", "drei"])
            .unwrap();
        Tokenizer::new(vocab, TokenizerConfig::default()).unwrap()
    }

    fn unit(angle: f64) -> Vec<f32> {
        vec![angle.cos() as f32, angle.sin() as f32]
    }

    /// Context corpus of three docs at chosen angles from the x axis.
    fn context(source: Source, angles: &[f64], texts: &[&str]) -> (Corpus, FlatIndex) {
        let corpus = Corpus::from_texts(source, texts).unwrap();
        let set = EmbeddingSet::from_records(
            2,
            corpus
                .iter()
                .zip(angles)
                .map(|(d, &a)| EmbeddingRecord::new(d.id.clone(), unit(a)).unwrap())
                .collect(),
        )
        .unwrap();
        let index = FlatIndex::build(&set, source).unwrap();
        (corpus, index)
    }

    fn angle_for(distance: f64) -> f64 {
        (1.0 - distance).acos()
    }

    #[test]
    fn two_hits_in_ascending_order() {
        let tok = tokenizer();
        let (corpus, index) = context(
            Source::InDomain,
            &[angle_for(0.55), angle_for(0.31), angle_for(0.95)],
            &["zwei", "eins", "drei"],
        );
        let ctx = ContextSource::new(&index, &corpus).unwrap();
        let seed = Document {
            id: "s".into(),
            source: Source::Target,
            text: "seed".into(),
        };
        let rec = augment(&seed, &unit(0.0), &ctx, &tok, &AugmentConfig::default()).unwrap();
        assert_eq!(rec.neighbor_ids, ["id-00000001", "id-00000000"]);
        assert!((rec.neighbor_distances[0] - 0.31).abs() < 1e-6);
        assert!((rec.neighbor_distances[1] - 0.55).abs() < 1e-6);
        assert!(!rec.fallback);
        let v = tok.vocab();
        let want: Vec<u32> = ["[CLS]", "seed", "[SEP]", "eins", "[SEP]", "zwei", "[SEP]"]
            .iter()
            .map(|t| v.id(t).unwrap())
            .collect();
        assert_eq!(&rec.packed.ids[..7], &want[..]);
        assert!(rec.packed.ids[7..].iter().all(|&i| i == v.specials().pad));
        assert_eq!(rec.packed.len(), 512);
        assert_eq!(rec.augmented_text, "seed\n\neins\n\nzwei");
    }

    #[test]
    fn no_hits_is_fallback() {
        let tok = tokenizer();
        let (corpus, index) = context(Source::DomainRelated, &[1.5, 2.0, 3.0], &["a", "b", "c"]);
        let ctx = ContextSource::new(&index, &corpus).unwrap();
        let seed = Document {
            id: "s".into(),
            source: Source::Target,
            text: "seed".into(),
        };
        let rec = augment(&seed, &unit(0.0), &ctx, &tok, &AugmentConfig::default()).unwrap();
        assert!(rec.fallback);
        assert!(rec.neighbor_ids.is_empty());
        assert_eq!(rec.packed, tok.encode_segments(&["seed"]));
    }

    #[test]
    fn seed_id_excluded_from_own_source() {
        let tok = tokenizer();
        let (corpus, index) = context(Source::InDomain, &[0.0, 0.2], &["eins", "zwei"]);
        let ctx = ContextSource::new(&index, &corpus).unwrap();
        let seed = Document {
            id: "id-00000000".into(),
            source: Source::Target,
            text: "eins".into(),
        };
        let rec = augment(&seed, &unit(0.0), &ctx, &tok, &AugmentConfig::default()).unwrap();
        assert_eq!(rec.neighbor_ids, ["id-00000001"]);
        let keep = AugmentConfig {
            exclude_self: false,
            ..Default::default()
        };
        let rec = augment(&seed, &unit(0.0), &ctx, &tok, &keep).unwrap();
        assert_eq!(rec.neighbor_ids, ["id-00000000", "id-00000001"]);
    }

    #[test]
    fn config_validation() {
        let tok = tokenizer();
        let cfg = AugmentConfig {
            token_budget: 256,
            ..Default::default()
        };
        assert!(cfg.validate(&tok).is_err());
        let cfg = AugmentConfig {
            sources: vec![Source::Target],
            ..Default::default()
        };
        assert!(cfg.validate(&tok).is_err());
        let cfg = AugmentConfig {
            sources: vec![Source::InDomain, Source::InDomain],
            ..Default::default()
        };
        assert!(cfg.validate(&tok).is_err());
    }

    #[test]
    fn missing_source_index() {
        let tok = tokenizer();
        let target = Corpus::from_texts(Source::Target, ["seed"]).unwrap();
        let emb = EmbeddingSet::from_records(
            2,
            vec![EmbeddingRecord::new("target-00000000", unit(0.0)).unwrap()],
        )
        .unwrap();
        let (corpus, index) = context(Source::InDomain, &[0.0], &["eins"]);
        let ctx = ContextSource::new(&index, &corpus).unwrap();
        let err = augment_corpus(&target, &emb, &[ctx], &tok, &AugmentConfig::default()).unwrap_err();
        assert!(matches!(err, Error::MissingSource(Source::DomainRelated)));
    }

    #[test]
    fn dimension_mismatch_is_space_error() {
        let tok = tokenizer();
        let (corpus, index) = context(Source::InDomain, &[0.0], &["eins"]);
        let ctx = ContextSource::new(&index, &corpus).unwrap();
        let seed = Document {
            id: "s".into(),
            source: Source::Target,
            text: "seed".into(),
        };
        let err = augment(&seed, &[1.0, 0.0, 0.0], &ctx, &tok, &AugmentConfig::default()).unwrap_err();
        assert!(matches!(err, Error::SpaceMismatch(_)));
    }
}
