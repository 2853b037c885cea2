//! Document vectors.
//!
//! The built-in embedder hashes character n-grams into a fixed number of
//! signed buckets and L2-normalises the counts. It is deterministic across
//! platforms: the hash is FNV-1a over the little-endian salt followed by the
//! UTF-8 bytes of the n-gram. Externally computed vectors (e.g. from a
//! sentence encoder) come in through the `EMB1` file format:
//!
//! ```text
//! EMB1 <count> <dim>\n
//! <id>\n<dim little-endian f32>   (repeated count times)
//! ```

use std::collections::HashMap;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::fsutil;

/// Maximum deviation of a stored vector's norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;
/// Imported vectors may drift this far from unit norm before being rejected.
pub const IMPORT_DRIFT_TOLERANCE: f64 = 1e-3;
/// Imported vectors closer than this to unit norm are kept bit-for-bit.
const RENORMALIZE_THRESHOLD: f64 = 1e-6;

const MAGIC: &str = "EMB1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub dim: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
    /// Salt mixed into every n-gram hash.
    pub seed: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            dim: 384,
            ngram_min: 3,
            ngram_max: 5,
            seed: 42,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 8 {
            return Err(Error::Config(format!("embedding dim must be >= 8, got {}", self.dim)));
        }
        if self.ngram_min == 0 || self.ngram_min > self.ngram_max {
            return Err(Error::Config(format!(
                "invalid n-gram range {}..{}",
                self.ngram_min, self.ngram_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub doc_id: String,
    pub vector: Vec<f32>,
}

impl EmbeddingRecord {
    /// Checks finiteness and unit norm.
    pub fn new(doc_id: impl Into<String>, vector: Vec<f32>) -> Result<Self> {
        let doc_id = doc_id.into();
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { id: doc_id });
        }
        let norm = l2_norm(&vector);
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::NotUnitNorm { id: doc_id, norm });
        }
        Ok(Self { doc_id, vector })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    records: Vec<EmbeddingRecord>,
}

impl EmbeddingSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            records: Vec::new(),
        }
    }

    pub fn from_records(dim: usize, records: Vec<EmbeddingRecord>) -> Result<Self> {
        let mut set = Self::new(dim);
        set.records.reserve(records.len());
        for r in records {
            set.push(r)?;
        }
        Ok(set)
    }

    /// Appends a record, rejecting vectors of the wrong length.
    pub fn push(&mut self, record: EmbeddingRecord) -> Result<()> {
        if record.vector.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: record.vector.len(),
            });
        }
        self.records.push(record);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn vector(&self, index: usize) -> Option<&[f32]> {
        self.records.get(index).map(|r| r.vector.as_slice())
    }

    /// Verifies one record per corpus document, in corpus order.
    pub fn check_aligned(&self, corpus: &Corpus) -> Result<()> {
        if self.records.len() != corpus.count() {
            return Err(Error::SpaceMismatch(format!(
                "{} vectors for {} {} documents",
                self.records.len(),
                corpus.count(),
                corpus.role()
            )));
        }
        for (rec, doc) in self.records.iter().zip(corpus) {
            if rec.doc_id != doc.id {
                return Err(Error::SpaceMismatch(format!(
                    "vector `{}` does not line up with document `{}`",
                    rec.doc_id, doc.id
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = format!("{MAGIC} {} {}\n", self.records.len(), self.dim).into_bytes();
        out.reserve(self.records.len() * (self.dim * 4 + 16));
        for r in &self.records {
            if r.doc_id.contains('\n') || r.doc_id.contains('\r') {
                return Err(Error::EmbeddingFormat(format!(
                    "id `{}` contains a line break",
                    r.doc_id.escape_debug()
                )));
            }
            out.extend_from_slice(r.doc_id.as_bytes());
            out.push(b'\n');
            for x in &r.vector {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }
}

pub(crate) fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// Dot product accumulated in f64.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// `1 - a·b` for unit vectors, clamped to `[0, 2]`.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> f64 {
    (1.0 - dot(a, b)).clamp(0.0, 2.0)
}

/// Hashed character n-gram embedder.
#[derive(Debug, Clone)]
pub struct Embedder {
    config: EmbedderConfig,
}

impl Embedder {
    pub fn new(config: EmbedderConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.config
    }

    /// Embeds one text. Never returns a zero vector: texts without any
    /// n-gram signal map to the first basis vector.
    pub fn embed(&self, text: &str) -> Vec<f32> {
        let raw = self.raw_counts(text);
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            log::warn!("text {:?} has no n-gram signal; using basis vector e0", truncate(text));
            let mut e0 = vec![0.0f32; self.config.dim];
            e0[0] = 1.0;
            return e0;
        }
        raw.iter().map(|&x| (x / norm) as f32).collect()
    }

    fn raw_counts(&self, text: &str) -> Vec<f64> {
        let dim = self.config.dim as u64;
        let mut counts = vec![0.0f64; self.config.dim];
        let chars = ngram_chars(text);
        let mut buf = [0u8; 4];
        for n in self.config.ngram_min..=self.config.ngram_max {
            if chars.len() < n {
                break;
            }
            for window in chars.windows(n) {
                let mut h = FnvHasher::default();
                h.write(&self.config.seed.to_le_bytes());
                for c in window {
                    h.write(c.encode_utf8(&mut buf).as_bytes());
                }
                let h = h.finish();
                let bucket = (h % dim) as usize;
                let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
                counts[bucket] += sign;
            }
        }
        counts
    }

    /// Embeds every document of `corpus`, in corpus order.
    pub fn embed_corpus(&self, corpus: &Corpus) -> Result<EmbeddingSet> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let records = corpus
            .documents()
            .par_iter()
            .map(|doc| EmbeddingRecord {
                doc_id: doc.id.clone(),
                vector: self.embed(&doc.text),
            })
            .collect();
        Ok(EmbeddingSet {
            dim: self.config.dim,
            records,
        })
    }
}

/// Character sequence the n-grams are taken from: lower-cased, whitespace
/// runs collapsed to one space, padded with a space on both ends.
pub fn ngram_chars(text: &str) -> Vec<char> {
    let mut chars = vec![' '];
    for word in text.split_whitespace() {
        chars.extend(word.chars().flat_map(char::to_lowercase));
        chars.push(' ');
    }
    chars
}

fn truncate(text: &str) -> String {
    text.chars().take(40).collect()
}

/// Embeds a corpus with the built-in embedder.
pub fn embed_builtin(corpus: &Corpus, config: &EmbedderConfig) -> Result<EmbeddingSet> {
    Embedder::new(config.clone())?.embed_corpus(corpus)
}

/// Unvalidated content of an `EMB1` file.
#[derive(Debug, Clone)]
pub struct RawEmbeddings {
    pub dim: usize,
    pub records: Vec<(String, Vec<f32>)>,
}

pub fn parse_embedding_bytes(bytes: &[u8]) -> Result<RawEmbeddings> {
    let bad = |msg: String| Error::EmbeddingFormat(msg);
    let header_end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| bad("header is not UTF-8".into()))?;
    let mut parts = header.split(' ');
    if parts.next() != Some(MAGIC) {
        return Err(bad(format!("expected `{MAGIC}` header, got `{header}`")));
    }
    let mut number = |what: &str| -> Result<usize> {
        parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(format!("header has no valid {what}")))
    };
    let count = number("count")?;
    let dim = number("dim")?;
    if parts.next().is_some() {
        return Err(bad("trailing fields in header".into()));
    }

    let mut pos = header_end + 1;
    let mut records = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        let rel = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad(format!("record {i}: missing id line")))?;
        let id = std::str::from_utf8(&bytes[pos..pos + rel])
            .map_err(|_| bad(format!("record {i}: id is not UTF-8")))?
            .to_owned();
        pos += rel + 1;
        let end = pos + dim * 4;
        if end > bytes.len() {
            return Err(bad(format!("record {i} (`{id}`): truncated vector")));
        }
        let vector = bytes[pos..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        pos = end;
        records.push((id, vector));
    }
    if pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes after {count} records", bytes.len() - pos)));
    }
    Ok(RawEmbeddings { dim, records })
}

/// Writes `set` as an `EMB1` file.
pub fn export_embeddings(set: &EmbeddingSet, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &set.to_bytes()?)
}

/// Loads an `EMB1` file and aligns it to `corpus`.
///
/// Ids must match the corpus exactly (no missing, extra or repeated ids).
/// Vectors within 1e-3 of unit norm are renormalised; larger drift is an
/// error. `expected_dim`, when given, must equal the file's dimension.
pub fn import_embeddings(
    path: &Path,
    corpus: &Corpus,
    expected_dim: Option<usize>,
) -> Result<EmbeddingSet> {
    let raw = parse_embedding_bytes(&fsutil::read(path)?)?;
    align_embeddings(raw, corpus, expected_dim)
}

pub fn align_embeddings(
    raw: RawEmbeddings,
    corpus: &Corpus,
    expected_dim: Option<usize>,
) -> Result<EmbeddingSet> {
    if let Some(expected) = expected_dim {
        if expected != raw.dim {
            return Err(Error::DimMismatch {
                expected,
                actual: raw.dim,
            });
        }
    }
    let position: HashMap<&str, usize> = corpus
        .iter()
        .enumerate()
        .map(|(i, d)| (d.id.as_str(), i))
        .collect();
    let mut slots: Vec<Option<Vec<f32>>> = vec![None; corpus.count()];
    for (id, mut vector) in raw.records {
        let &slot = position
            .get(id.as_str())
            .ok_or_else(|| Error::UnknownEmbedding(id.clone()))?;
        if slots[slot].is_some() {
            return Err(Error::EmbeddingFormat(format!("id `{id}` appears twice")));
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { id });
        }
        let norm = l2_norm(&vector);
        let drift = (norm - 1.0).abs();
        if drift > IMPORT_DRIFT_TOLERANCE {
            return Err(Error::NormDrift {
                id,
                norm,
                tolerance: IMPORT_DRIFT_TOLERANCE,
            });
        }
        if drift > RENORMALIZE_THRESHOLD {
            for x in &mut vector {
                *x = (f64::from(*x) / norm) as f32;
            }
        }
        slots[slot] = Some(vector);
    }
    let records = slots
        .into_iter()
        .zip(corpus)
        .map(|(v, doc)| {
            v.map(|vector| EmbeddingRecord {
                doc_id: doc.id.clone(),
                vector,
            })
            .ok_or_else(|| Error::MissingEmbedding(doc.id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EmbeddingSet {
        dim: raw.dim,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Source;

    fn unit(v: &[f32]) -> Vec<f32> {
        let n = l2_norm(v);
        v.iter().map(|&x| (f64::from(x) / n) as f32).collect()
    }

    #[test]
    fn identical_texts_zero_distance() {
        let e = Embedder::new(EmbedderConfig::default()).unwrap();
        let a = e.embed("Pumpe P-101 läuft wieder");
        let b = e.embed("Pumpe P-101 läuft wieder");
        assert_eq!(a, b);
        assert!(cosine_distance(&a, &b) < 1e-6);
    }

    #[test]
    fn outputs_are_unit_norm() {
        let e = Embedder::new(EmbedderConfig::default()).unwrap();
        for text in ["a", "ab", "Kessel", "Druckabfall im Reaktor R2", "x y z"] {
            let v = e.embed(text);
            assert_eq!(v.len(), 384);
            assert!((l2_norm(&v) - 1.0).abs() <= 1e-5, "{text}");
        }
    }

    #[test]
    fn signal_free_text_maps_to_e0() {
        let cfg = EmbedderConfig {
            ngram_min: 5,
            ngram_max: 5,
            ..Default::default()
        };
        let v = Embedder::new(cfg).unwrap().embed("a");
        assert_eq!(v[0], 1.0);
        assert!(v[1..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn config_validation() {
        assert!(EmbedderConfig { dim: 4, ..Default::default() }.validate().is_err());
        assert!(EmbedderConfig { ngram_min: 4, ngram_max: 3, ..Default::default() }
            .validate()
            .is_err());
    }

    #[test]
    fn push_rejects_wrong_dim() {
        let mut set = EmbeddingSet::new(3);
        let rec = EmbeddingRecord::new("a", vec![1.0, 0.0]).unwrap();
        assert!(matches!(set.push(rec), Err(Error::DimMismatch { expected: 3, actual: 2 })));
    }

    #[test]
    fn empty_set_is_header_only() {
        assert_eq!(EmbeddingSet::new(16).to_bytes().unwrap(), b"EMB1 0 16\n");
    }

    fn corpus2() -> Corpus {
        Corpus::from_texts(Source::InDomain, ["a", "b"]).unwrap()
    }

    #[test]
    fn import_aligns_to_corpus_order() {
        let raw = RawEmbeddings {
            dim: 2,
            records: vec![
                ("id-00000001".into(), vec![0.0, 1.0]),
                ("id-00000000".into(), vec![1.0, 0.0]),
            ],
        };
        let set = align_embeddings(raw, &corpus2(), Some(2)).unwrap();
        assert_eq!(set.records()[0].vector, vec![1.0, 0.0]);
        assert_eq!(set.records()[1].doc_id, "id-00000001");
    }

    #[test]
    fn import_norm_drift_rejected() {
        let raw = RawEmbeddings {
            dim: 2,
            records: vec![
                ("id-00000000".into(), vec![0.9, 0.0]),
                ("id-00000001".into(), vec![0.0, 1.0]),
            ],
        };
        let err = align_embeddings(raw, &corpus2(), None).unwrap_err();
        assert!(err.to_string().contains("norm drift exceeds tolerance"));
    }

    #[test]
    fn import_small_drift_renormalised() {
        let raw = RawEmbeddings {
            dim: 2,
            records: vec![
                ("id-00000000".into(), vec![1.0005, 0.0]),
                ("id-00000001".into(), vec![0.0, 1.0]),
            ],
        };
        let set = align_embeddings(raw, &corpus2(), None).unwrap();
        assert!((l2_norm(&set.records()[0].vector) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn import_id_mismatches() {
        let missing = RawEmbeddings {
            dim: 2,
            records: vec![("id-00000000".into(), vec![1.0, 0.0])],
        };
        assert!(matches!(
            align_embeddings(missing, &corpus2(), None),
            Err(Error::MissingEmbedding(_))
        ));
        let extra = RawEmbeddings {
            dim: 2,
            records: vec![("zzz".into(), vec![1.0, 0.0])],
        };
        assert!(matches!(
            align_embeddings(extra, &corpus2(), None),
            Err(Error::UnknownEmbedding(_))
        ));
        let nan = RawEmbeddings {
            dim: 2,
            records: vec![("id-00000000".into(), vec![f32::NAN, 0.0])],
        };
        assert!(matches!(align_embeddings(nan, &corpus2(), None), Err(Error::NonFinite { .. })));
        let dims = RawEmbeddings { dim: 2, records: vec![] };
        assert!(matches!(
            align_embeddings(dims, &corpus2(), Some(3)),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(parse_embedding_bytes(b"EMB2 0 4\n").is_err());
        assert!(parse_embedding_bytes(b"EMB1 1 4\nx\n\0\0").is_err());
        assert!(parse_embedding_bytes(b"EMB1 0 4\nextra").is_err());
    }

    #[test]
    fn unit_vectors_survive_import_unchanged() {
        let v = unit(&[0.3, -0.2, 0.9, 0.1]);
        let set = EmbeddingSet::from_records(
            4,
            vec![
                EmbeddingRecord::new("id-00000000", v.clone()).unwrap(),
                EmbeddingRecord::new("id-00000001", unit(&[1.0, 1.0, 0.0, 0.0])).unwrap(),
            ],
        )
        .unwrap();
        let raw = parse_embedding_bytes(&set.to_bytes().unwrap()).unwrap();
        let back = align_embeddings(raw, &corpus2(), Some(4)).unwrap();
        for (a, b) in back.records()[0].vector.iter().zip(&v) {
            assert!((a - b).abs() <= 1e-6);
        }
    }
}
