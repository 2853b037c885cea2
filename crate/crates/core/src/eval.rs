//! Zero-shot retrieval and rank-quality metrics.
//!
//! Conventions:
//!
//! * relevance is binary; graded qrels are rejected;
//! * AP@10 divides by the total number of relevant documents `R` (the
//!   `map_cut` convention), not by `min(R, 10)`;
//! * reciprocal rank looks at the full ranking, without a cutoff;
//! * nDCG@10 uses gain 1 and discount `1 / log2(rank + 1)`;
//! * each collection is averaged over its judged queries, then collections
//!   are averaged with equal weight.
//!
//! Sums run in query-id order with pairwise summation so that results are
//! bit-stable.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embedding::{self, EmbeddingSet};
use crate::error::{Error, Result};
use crate::fsutil;

pub const CUTOFF: usize = 10;

/// Binary relevance judgments for one collection.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    queries: BTreeMap<String, BTreeSet<String>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>) {
        self.queries.entry(query_id.into()).or_default().insert(doc_id.into());
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn relevant(&self, query_id: &str) -> Option<&BTreeSet<String>> {
        self.queries.get(query_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BTreeSet<String>)> {
        self.queries.iter()
    }

    /// Parses `query_id 0 doc_id relevance` lines.
    ///
    /// Relevance 0 lines are judged-irrelevant and ignored; queries left
    /// without any relevant document are dropped.
    pub fn from_trec<R: BufRead>(reader: R) -> Result<Self> {
        let mut qrels = Qrels::new();
        let mut judged = BTreeSet::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<qrels>", e))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let [qid, _, doc, rel] = fields[..] else {
                return Err(Error::Qrels(format!(
                    "line {}: expected 4 fields, got {}",
                    n + 1,
                    fields.len()
                )));
            };
            let rel: i64 = rel
                .parse()
                .map_err(|_| Error::Qrels(format!("line {}: bad relevance `{rel}`", n + 1)))?;
            judged.insert(qid.to_owned());
            match rel {
                0 => {}
                1 => qrels.insert(qid, doc),
                r => {
                    return Err(Error::Qrels(format!(
                        "line {}: graded relevance {r} is not supported (binary 0/1 only)",
                        n + 1
                    )))
                }
            }
        }
        let dropped = judged.iter().filter(|q| !qrels.queries.contains_key(*q)).count();
        if dropped > 0 {
            log::warn!("qrels: dropped {dropped} query(ies) without relevant documents");
        }
        Ok(qrels)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fsutil::read(path)?;
        Self::from_trec(&bytes[..])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

/// Ranked results per query, sorted by descending score then ascending id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Run {
    queries: BTreeMap<String, Vec<ScoredDoc>>,
}

impl Run {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets the ranking for a query; rejects repeated documents.
    pub fn insert(&mut self, query_id: impl Into<String>, mut docs: Vec<ScoredDoc>) -> Result<()> {
        let query_id = query_id.into();
        let mut seen = HashSet::with_capacity(docs.len());
        for d in &docs {
            if !d.score.is_finite() {
                return Err(Error::Run(format!("query `{query_id}`: non-finite score")));
            }
            if !seen.insert(d.doc_id.as_str()) {
                return Err(Error::Run(format!(
                    "query `{query_id}` ranks document `{}` twice",
                    d.doc_id
                )));
            }
        }
        docs.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id)));
        self.queries.insert(query_id, docs);
        Ok(())
    }

    pub fn ranking(&self, query_id: &str) -> Option<&[ScoredDoc]> {
        self.queries.get(query_id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Parses `query_id Q0 doc_id rank score run_name` lines. The rank
    /// column is ignored; order is re-derived from the scores.
    pub fn from_trec<R: BufRead>(reader: R) -> Result<Self> {
        let mut grouped: BTreeMap<String, Vec<ScoredDoc>> = BTreeMap::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<run>", e))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if fields.len() != 6 {
                return Err(Error::Run(format!(
                    "line {}: expected 6 fields, got {}",
                    n + 1,
                    fields.len()
                )));
            }
            let score: f64 = fields[4]
                .parse()
                .map_err(|_| Error::Run(format!("line {}: bad score `{}`", n + 1, fields[4])))?;
            grouped.entry(fields[0].to_owned()).or_default().push(ScoredDoc {
                doc_id: fields[2].to_owned(),
                score,
            });
        }
        let mut run = Run::new();
        for (q, docs) in grouped {
            run.insert(q, docs)?;
        }
        Ok(run)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fsutil::read(path)?;
        Self::from_trec(&bytes[..])
    }

    pub fn write_trec<W: Write>(&self, mut w: W, run_name: &str) -> std::io::Result<()> {
        for (q, docs) in &self.queries {
            for (i, d) in docs.iter().enumerate() {
                writeln!(w, "{q} Q0 {} {} {:.6} {run_name}", d.doc_id, i + 1, d.score)?;
            }
        }
        Ok(())
    }
}

/// Ranks `docs` for every query by dot product of unit vectors.
pub fn retrieve(
    queries: &Corpus,
    query_embeddings: &EmbeddingSet,
    docs: &Corpus,
    doc_embeddings: &EmbeddingSet,
    top_n: usize,
) -> Result<Run> {
    if query_embeddings.dim() != doc_embeddings.dim() {
        return Err(Error::SpaceMismatch(format!(
            "queries are {}-d, documents are {}-d",
            query_embeddings.dim(),
            doc_embeddings.dim()
        )));
    }
    query_embeddings.check_aligned(queries)?;
    doc_embeddings.check_aligned(docs)?;
    let top_n = top_n.max(1);
    let rankings: Vec<Vec<ScoredDoc>> = query_embeddings
        .records()
        .par_iter()
        .map(|q| {
            let mut scored: Vec<(f64, &str)> = doc_embeddings
                .records()
                .iter()
                .map(|d| (embedding::dot(&q.vector, &d.vector), d.doc_id.as_str()))
                .collect();
            let cmp = |a: &(f64, &str), b: &(f64, &str)| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1));
            if scored.len() > top_n {
                scored.select_nth_unstable_by(top_n - 1, cmp);
                scored.truncate(top_n);
            }
            scored.sort_by(cmp);
            scored
                .into_iter()
                .map(|(score, id)| ScoredDoc {
                    doc_id: id.to_owned(),
                    score,
                })
                .collect()
        })
        .collect();
    let mut run = Run::new();
    for (q, ranking) in queries.iter().zip(rankings) {
        run.insert(q.id.clone(), ranking)?;
    }
    Ok(run)
}

/// Σ_{k≤cutoff} P@k·rel_k / R.
pub fn average_precision_at(ranking: &[&str], relevant: &BTreeSet<String>, cutoff: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, doc) in ranking.iter().take(cutoff).enumerate() {
        if relevant.contains(*doc) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / relevant.len() as f64
}

/// 1 / rank of the first relevant document, 0 when none is ranked.
pub fn reciprocal_rank(ranking: &[&str], relevant: &BTreeSet<String>) -> f64 {
    ranking
        .iter()
        .position(|d| relevant.contains(*d))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

pub fn ndcg_at(ranking: &[&str], relevant: &BTreeSet<String>, cutoff: usize) -> f64 {
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = ranking
        .iter()
        .take(cutoff)
        .enumerate()
        .filter(|(_, d)| relevant.contains(**d))
        .map(|(i, _)| discount(i))
        .sum();
    let ideal: f64 = (0..relevant.len().min(cutoff)).map(discount).sum();
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        pairwise_sum(values) / values.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryScores {
    pub map10: f64,
    pub mrr: f64,
    pub ndcg10: f64,
}

pub fn score_query(ranking: &[&str], relevant: &BTreeSet<String>) -> QueryScores {
    QueryScores {
        map10: average_precision_at(ranking, relevant, CUTOFF),
        mrr: reciprocal_rank(ranking, relevant),
        ndcg10: ndcg_at(ranking, relevant, CUTOFF),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionScores {
    pub name: String,
    pub queries: usize,
    pub missing_queries: usize,
    pub map10: f64,
    pub mrr: f64,
    pub ndcg10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub collections: Vec<CollectionScores>,
    pub map10: f64,
    pub mrr: f64,
    pub ndcg10: f64,
    pub mean_of_metrics: f64,
}

/// One named collection: its run and its judgments.
#[derive(Debug, Clone)]
pub struct Collection {
    pub name: String,
    pub run: Run,
    pub qrels: Qrels,
}

pub fn evaluate_collection(name: &str, run: &Run, qrels: &Qrels) -> Result<CollectionScores> {
    if qrels.is_empty() {
        return Err(Error::Qrels(format!("collection `{name}` has no judged queries")));
    }
    let per_query: Vec<(QueryScores, bool)> = qrels
        .queries
        .par_iter()
        .map(|(qid, relevant)| match run.ranking(qid) {
            Some(docs) => {
                let ids: Vec<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
                (score_query(&ids, relevant), false)
            }
            None => (
                QueryScores {
                    map10: 0.0,
                    mrr: 0.0,
                    ndcg10: 0.0,
                },
                true,
            ),
        })
        .collect();
    let missing = per_query.iter().filter(|(_, m)| *m).count();
    if missing > 0 {
        log::warn!("collection `{name}`: {missing} judged query(ies) absent from the run, scored 0");
    }
    let column = |f: fn(&QueryScores) -> f64| -> Vec<f64> { per_query.iter().map(|(s, _)| f(s)).collect() };
    Ok(CollectionScores {
        name: name.to_owned(),
        queries: per_query.len(),
        missing_queries: missing,
        map10: mean(&column(|s| s.map10)),
        mrr: mean(&column(|s| s.mrr)),
        ndcg10: mean(&column(|s| s.ndcg10)),
    })
}

/// Scores every collection and macro-averages across them.
pub fn evaluate_collections(collections: &[Collection]) -> Result<EvalReport> {
    if collections.is_empty() {
        return Err(Error::Qrels("no collections to evaluate".to_owned()));
    }
    let scores = collections
        .iter()
        .map(|c| evaluate_collection(&c.name, &c.run, &c.qrels))
        .collect::<Result<Vec<_>>>()?;
    let map10 = mean(&scores.iter().map(|c| c.map10).collect::<Vec<_>>());
    let mrr = mean(&scores.iter().map(|c| c.mrr).collect::<Vec<_>>());
    let ndcg10 = mean(&scores.iter().map(|c| c.ndcg10).collect::<Vec<_>>());
    Ok(EvalReport {
        collections: scores,
        map10,
        mrr,
        ndcg10,
        mean_of_metrics: mean_of_three(map10, mrr, ndcg10),
    })
}

/// Single-collection evaluation.
pub fn evaluate(run: &Run, qrels: &Qrels) -> Result<EvalReport> {
    evaluate_collections(&[Collection {
        name: "default".to_owned(),
        run: run.clone(),
        qrels: qrels.clone(),
    }])
}

pub fn mean_of_three(map10: f64, mrr: f64, ndcg10: f64) -> f64 {
    (map10 + mrr + ndcg10) / 3.0
}

/// Arithmetic mean of the macro MAP@10, MRR and nDCG@10.
pub fn mean_of_metrics(report: &EvalReport) -> f64 {
    mean_of_three(report.map10, report.mrr, report.ndcg10)
}

fn pct(v: f64) -> f64 {
    (v * 10_000.0).round() / 100.0
}

#[derive(Debug, Clone, Serialize)]
struct ScaledCollection<'a> {
    name: &'a str,
    queries: usize,
    missing_queries: usize,
    map10: f64,
    mrr: f64,
    ndcg10: f64,
    mean: f64,
}

#[derive(Debug, Clone, Serialize)]
struct ScaledReport<'a> {
    collections: Vec<ScaledCollection<'a>>,
    macro_average: ScaledCollection<'a>,
}

impl EvalReport {
    /// JSON report with every value ×100 and rounded to two decimals.
    pub fn to_scaled_json(&self) -> String {
        let scaled = ScaledReport {
            collections: self
                .collections
                .iter()
                .map(|c| ScaledCollection {
                    name: &c.name,
                    queries: c.queries,
                    missing_queries: c.missing_queries,
                    map10: pct(c.map10),
                    mrr: pct(c.mrr),
                    ndcg10: pct(c.ndcg10),
                    mean: pct(mean_of_three(c.map10, c.mrr, c.ndcg10)),
                })
                .collect(),
            macro_average: ScaledCollection {
                name: "macro",
                queries: self.collections.iter().map(|c| c.queries).sum(),
                missing_queries: self.collections.iter().map(|c| c.missing_queries).sum(),
                map10: pct(self.map10),
                mrr: pct(self.mrr),
                ndcg10: pct(self.ndcg10),
                mean: pct(self.mean_of_metrics),
            },
        };
        serde_json::to_string_pretty(&scaled).expect("report serialization is infallible")
    }

    /// Plain-text table in the same ×100 scale.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<24} {:>8} {:>8} {:>8} {:>8}\n",
            "collection", "MAP@10", "MRR", "nDCG@10", "Mean"
        );
        let mut line = |name: &str, m: f64, r: f64, n: f64| {
            out.push_str(&format!(
                "{name:<24} {:>8.2} {:>8.2} {:>8.2} {:>8.2}\n",
                m * 100.0,
                r * 100.0,
                n * 100.0,
                mean_of_three(m, r, n) * 100.0
            ));
        };
        for c in &self.collections {
            line(&c.name, c.map10, c.mrr, c.ndcg10);
        }
        line("macro", self.map10, self.mrr, self.ndcg10);
        out
    }
}
