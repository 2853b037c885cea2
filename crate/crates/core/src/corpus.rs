//! Corpus ingestion.
//!
//! A corpus file holds one record per line, either as raw text or as a JSON
//! object `{"id": ..., "text": ...}` (the `id` key is optional). Text is NFC
//! normalised and CR/LF line endings are folded to LF. Lines that cannot be
//! turned into a document end up in a rejects report instead of aborting the
//! ingest; duplicate explicit ids do abort.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::fsutil;
use crate::tokenizer::Tokenizer;

/// Role a corpus plays in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    /// Seed records to be augmented.
    #[serde(rename = "TARGET")]
    Target,
    /// In-domain context.
    #[serde(rename = "ID")]
    InDomain,
    /// Domain-related context.
    #[serde(rename = "DR")]
    DomainRelated,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Target, Source::InDomain, Source::DomainRelated];

    pub fn tag(self) -> &'static str {
        match self {
            Source::Target => "TARGET",
            Source::InDomain => "ID",
            Source::DomainRelated => "DR",
        }
    }

    /// Lower-case prefix used for auto-assigned document ids.
    pub fn id_prefix(self) -> &'static str {
        match self {
            Source::Target => "target",
            Source::InDomain => "id",
            Source::DomainRelated => "dr",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "TARGET" => Ok(Source::Target),
            "ID" => Ok(Source::InDomain),
            "DR" => Ok(Source::DomainRelated),
            other => Err(Error::Config(format!(
                "unknown source `{other}` (expected TARGET, ID or DR)"
            ))),
        }
    }
}

/// How lines of a corpus file are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    /// Each line is the document text.
    #[default]
    Raw,
    /// Each line is a JSON object with `text` and an optional `id`.
    Jsonl,
}

impl FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "raw" | "text" => Ok(InputMode::Raw),
            "jsonl" | "json" => Ok(InputMode::Jsonl),
            other => Err(Error::Config(format!(
                "unknown input mode `{other}` (expected raw or jsonl)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub source: Source,
    pub text: String,
}

/// An ordered, immutable collection of documents sharing one role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    role: Source,
    documents: Vec<Document>,
}

impl Corpus {
    /// Builds a corpus from already-validated documents.
    ///
    /// Fails on duplicate ids, empty ids, blank texts, or documents whose
    /// source differs from `role`.
    pub fn from_documents(role: Source, documents: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            if doc.id.is_empty() || doc.text.trim().is_empty() {
                return Err(Error::Config(format!(
                    "document {i} has an empty id or text"
                )));
            }
            if doc.source != role {
                return Err(Error::Config(format!(
                    "document `{}` has source {} in a {role} corpus",
                    doc.id, doc.source
                )));
            }
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::DuplicateId {
                    id: doc.id.clone(),
                    line: i + 1,
                });
            }
        }
        Ok(Self { role, documents })
    }

    /// Convenience constructor assigning `<role>-<index>` ids to raw texts.
    pub fn from_texts<I, S>(role: Source, texts: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let documents = texts
            .into_iter()
            .enumerate()
            .map(|(i, t)| Document {
                id: auto_id(role, i),
                source: role,
                text: normalize_text(t.as_ref()),
            })
            .collect();
        Self::from_documents(role, documents)
    }

    pub fn role(&self) -> Source {
        self.role
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn count(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Document> {
        self.documents.get(index)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.documents.iter()
    }

    /// Canonical serialization: one `{"id","text"}` object per line.
    ///
    /// Re-ingesting this output in [`InputMode::Jsonl`] reproduces the corpus.
    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for doc in &self.documents {
            let rec = RecordOut {
                id: &doc.id,
                text: &doc.text,
            };
            serde_json::to_writer(&mut out, &rec).expect("string serialization is infallible");
            out.push(b'\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.to_jsonl())
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Document;
    type IntoIter = std::slice::Iter<'a, Document>;

    fn into_iter(self) -> Self::IntoIter {
        self.documents.iter()
    }
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    text: &'a str,
}

#[derive(Deserialize)]
struct RecordIn {
    #[serde(default)]
    id: Option<String>,
    text: String,
}

/// One rejected input line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    /// 1-based line number in the input file.
    pub line_number: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub corpus: Corpus,
    pub rejects: Vec<Reject>,
    /// Number of input lines seen (accepted + rejected).
    pub lines: usize,
}

impl IngestOutcome {
    pub fn rejects_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for r in &self.rejects {
            serde_json::to_writer(&mut out, r).expect("reject serialization is infallible");
            out.push(b'\n');
        }
        out
    }

    pub fn write_rejects(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.rejects_jsonl())
    }
}

pub(crate) fn auto_id(role: Source, index: usize) -> String {
    format!("{}-{index:08}", role.id_prefix())
}

/// NFC + newline folding, applied to every ingested text.
pub fn normalize_text(text: &str) -> String {
    let folded = if text.contains('\r') {
        text.replace("\r\n", "\n").replace('\r', "\n")
    } else {
        text.to_owned()
    };
    folded.nfc().collect()
}

/// Reads a corpus file.
pub fn ingest(path: &Path, role: Source, mode: InputMode) -> Result<IngestOutcome> {
    let bytes = fsutil::read(path)?;
    ingest_bytes(&bytes, role, mode)
}

/// Same as [`ingest`] over an in-memory buffer.
pub fn ingest_bytes(bytes: &[u8], role: Source, mode: InputMode) -> Result<IngestOutcome> {
    let mut documents = Vec::new();
    let mut rejects = Vec::new();
    // id -> line number of first occurrence
    let mut ids: HashMap<String, usize> = HashMap::new();

    let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    let mut lines = 0;
    if !bytes.is_empty() {
        for (index, raw) in body.split(|&b| b == b'\n').enumerate() {
            lines += 1;
            let line_number = index + 1;
            let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
            let line = match std::str::from_utf8(raw) {
                Ok(s) => s,
                Err(e) => {
                    rejects.push(Reject {
                        line_number,
                        reason: format!("invalid UTF-8: {e}"),
                    });
                    continue;
                }
            };
            let (explicit_id, text) = match parse_line(line, mode) {
                Ok(parsed) => parsed,
                Err(reason) => {
                    rejects.push(Reject {
                        line_number,
                        reason,
                    });
                    continue;
                }
            };
            let text = normalize_text(&text);
            if text.trim().is_empty() {
                rejects.push(Reject {
                    line_number,
                    reason: "empty text".to_owned(),
                });
                continue;
            }
            let id = match explicit_id {
                Some(id) => id.nfc().collect::<String>(),
                None => auto_id(role, index),
            };
            if let Some(&first) = ids.get(&id) {
                log::error!("duplicate id `{id}` on lines {first} and {line_number}");
                return Err(Error::DuplicateId {
                    id,
                    line: line_number,
                });
            }
            ids.insert(id.clone(), line_number);
            documents.push(Document {
                id,
                source: role,
                text,
            });
        }
    }

    if !rejects.is_empty() {
        log::warn!("{role} ingest: {} line(s) rejected", rejects.len());
    }
    Ok(IngestOutcome {
        corpus: Corpus { role, documents },
        rejects,
        lines,
    })
}

fn parse_line(line: &str, mode: InputMode) -> std::result::Result<(Option<String>, String), String> {
    match mode {
        InputMode::Raw => Ok((None, line.to_owned())),
        InputMode::Jsonl => {
            if line.trim().is_empty() {
                return Err("empty text".to_owned());
            }
            let rec: RecordIn =
                serde_json::from_str(line).map_err(|e| format!("malformed record: {e}"))?;
            match rec.id {
                Some(id) if id.is_empty() => Err("empty id".to_owned()),
                Some(id) if id.contains('\n') || id.contains('\r') => {
                    Err("id contains a line break".to_owned())
                }
                id => Ok((id, rec.text)),
            }
        }
    }
}

/// Token-count histogram bucket: `[min_tokens, max_tokens)`; open-ended when
/// `max_tokens` is `None`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBucket {
    pub min_tokens: usize,
    pub max_tokens: Option<usize>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub doc_count: usize,
    pub total_bytes: u64,
    pub total_tokens: u64,
    pub histogram: Vec<HistogramBucket>,
    /// Documents whose text already appeared earlier in the corpus.
    pub duplicate_texts: usize,
}

const HISTOGRAM_EDGES: [usize; 9] = [0, 8, 16, 32, 64, 128, 256, 512, 1024];

/// Size statistics; token counts exclude special tokens.
pub fn stats(corpus: &Corpus, tokenizer: &Tokenizer) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut histogram: Vec<HistogramBucket> = HISTOGRAM_EDGES
        .iter()
        .enumerate()
        .map(|(i, &lo)| HistogramBucket {
            min_tokens: lo,
            max_tokens: HISTOGRAM_EDGES.get(i + 1).copied(),
            count: 0,
        })
        .collect();
    let mut total_bytes = 0u64;
    let mut total_tokens = 0u64;
    let mut seen = HashSet::new();
    let mut duplicate_texts = 0;
    for doc in corpus {
        total_bytes += doc.text.len() as u64;
        let n = tokenizer.tokenize(&doc.text).len();
        total_tokens += n as u64;
        let bucket = HISTOGRAM_EDGES.partition_point(|&edge| edge <= n) - 1;
        histogram[bucket].count += 1;
        if !seen.insert(doc.text.as_str()) {
            duplicate_texts += 1;
        }
    }
    if duplicate_texts > 0 {
        log::info!("{} corpus holds {duplicate_texts} duplicate text(s)", corpus.role());
    }
    Ok(CorpusStats {
        doc_count: corpus.count(),
        total_bytes,
        total_tokens,
        histogram,
        duplicate_texts,
    })
}

/// Writes any serializable records as JSON lines.
pub(crate) fn write_jsonl<T: Serialize>(w: &mut dyn Write, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *w, item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_raw_lines() {
        let out = ingest_bytes(b"eins\nzwei\ndrei\n", Source::InDomain, InputMode::Raw).unwrap();
        assert_eq!(out.corpus.count(), 3);
        assert_eq!(out.corpus.role(), Source::InDomain);
        assert_eq!(out.corpus.documents()[1].id, "id-00000001");
        assert!(out.rejects.is_empty());
    }

    #[test]
    fn empty_text_is_rejected_with_line_number() {
        let out = ingest_bytes(b"a\n   \nb", Source::Target, InputMode::Raw).unwrap();
        assert_eq!(out.corpus.count(), 2);
        assert_eq!(out.rejects.len(), 1);
        assert_eq!(out.rejects[0].line_number, 2);
        assert_eq!(out.lines, 3);
    }

    #[test]
    fn jsonl_with_optional_ids_and_malformed_line() {
        let input = br#"{"id":"a","text":"Pumpe defekt"}
{"text":"ohne id"}
{not json
{"id":"","text":"x"}
{"id":"b"}
"#;
        let out = ingest_bytes(input, Source::InDomain, InputMode::Jsonl).unwrap();
        let ids: Vec<_> = out.corpus.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, ["a", "id-00000001"]);
        let lines: Vec<_> = out.rejects.iter().map(|r| r.line_number).collect();
        assert_eq!(lines, [3, 4, 5]);
        assert_eq!(out.corpus.count() + out.rejects.len(), out.lines);
    }

    #[test]
    fn duplicate_explicit_id_is_fatal() {
        let input = b"{\"id\":\"x\",\"text\":\"a\"}\n{\"id\":\"x\",\"text\":\"b\"}\n";
        let err = ingest_bytes(input, Source::InDomain, InputMode::Jsonl).unwrap_err();
        assert!(matches!(err, Error::DuplicateId { line: 2, .. }));
    }

    #[test]
    fn crlf_and_nfc() {
        // "Ä" as A + combining diaeresis, CRLF line ending, lone CR inside.
        let input = "A\u{0308}rger\r\nfoo\rbar\r\n".as_bytes();
        let out = ingest_bytes(input, Source::Target, InputMode::Raw).unwrap();
        assert_eq!(out.corpus.documents()[0].text, "\u{00C4}rger");
        assert_eq!(out.corpus.documents()[1].text, "foo\nbar");
    }

    #[test]
    fn invalid_utf8_line_is_rejected() {
        let out = ingest_bytes(b"ok\n\xff\xfe\n", Source::Target, InputMode::Raw).unwrap();
        assert_eq!(out.corpus.count(), 1);
        assert_eq!(out.rejects[0].line_number, 2);
    }

    #[test]
    fn ingest_is_idempotent_through_jsonl() {
        let first = ingest_bytes("Öl\nWasser\u{0308}\n".as_bytes(), Source::DomainRelated, InputMode::Raw)
            .unwrap()
            .corpus;
        let again = ingest_bytes(&first.to_jsonl(), Source::DomainRelated, InputMode::Jsonl)
            .unwrap()
            .corpus;
        assert_eq!(first.to_jsonl(), again.to_jsonl());
    }

    #[test]
    fn missing_file_is_fatal() {
        let err = ingest(Path::new("/definitely/not/here.txt"), Source::Target, InputMode::Raw)
            .unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn source_parsing() {
        assert_eq!("id".parse::<Source>().unwrap(), Source::InDomain);
        assert_eq!("DR".parse::<Source>().unwrap(), Source::DomainRelated);
        assert!("xx".parse::<Source>().is_err());
        assert_eq!(serde_json::to_string(&Source::Target).unwrap(), "\"TARGET\"");
    }
}
