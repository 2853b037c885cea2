//! Exact k-nearest-neighbour search over unit vectors.
//!
//! Every query scans all rows. Results hold at most `k` hits with cosine
//! distance `<= max_distance`, ordered by `(distance, doc_id)` so that ties
//! resolve the same way regardless of scan order or thread count.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Source;
use crate::embedding::{self, cosine_distance, EmbeddingRecord, EmbeddingSet, UNIT_NORM_TOLERANCE};
use crate::error::{Error, Result};
use crate::fsutil;

#[derive(Debug, Clone)]
pub struct FlatIndex {
    dim: usize,
    ids: Vec<String>,
    row_of: HashMap<String, usize>,
    /// Row-major, `ids.len() * dim`.
    matrix: Vec<f32>,
    source: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborHit {
    pub doc_id: String,
    /// Row of the hit in the index (and in the corpus it was built from).
    pub row: usize,
    pub distance: f64,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryParams {
    pub k: usize,
    pub max_distance: f64,
    pub exclude_ids: HashSet<String>,
}

impl Default for QueryParams {
    fn default() -> Self {
        Self {
            k: 3,
            max_distance: 0.7,
            exclude_ids: HashSet::new(),
        }
    }
}

impl QueryParams {
    pub fn new(k: usize, max_distance: f64) -> Self {
        Self {
            k,
            max_distance,
            exclude_ids: HashSet::new(),
        }
    }

    pub fn excluding(mut self, id: impl Into<String>) -> Self {
        self.exclude_ids.insert(id.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".to_owned()));
        }
        if !(0.0..=2.0).contains(&self.max_distance) {
            return Err(Error::Config(format!(
                "max_distance must lie in [0, 2], got {}",
                self.max_distance
            )));
        }
        Ok(())
    }
}

impl FlatIndex {
    pub fn build(set: &EmbeddingSet, source: Source) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let dim = set.dim();
        let mut matrix = Vec::with_capacity(set.len() * dim);
        let mut ids = Vec::with_capacity(set.len());
        let mut row_of = HashMap::with_capacity(set.len());
        for (row, rec) in set.records().iter().enumerate() {
            if rec.vector.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    actual: rec.vector.len(),
                });
            }
            let norm = embedding::l2_norm(&rec.vector);
            if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::NotUnitNorm {
                    id: rec.doc_id.clone(),
                    norm,
                });
            }
            if row_of.insert(rec.doc_id.clone(), row).is_some() {
                return Err(Error::DuplicateId {
                    id: rec.doc_id.clone(),
                    line: row + 1,
                });
            }
            ids.push(rec.doc_id.clone());
            matrix.extend_from_slice(&rec.vector);
        }
        Ok(Self {
            dim,
            ids,
            row_of,
            matrix,
            source,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.matrix[row * self.dim..(row + 1) * self.dim]
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.row_of.get(id).copied()
    }

    pub fn query(&self, query: &[f32], params: &QueryParams) -> Result<Vec<NeighborHit>> {
        params.validate()?;
        if query.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: query.len(),
            });
        }
        let norm = embedding::l2_norm(query);
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::NotUnitNorm {
                id: "<query>".to_owned(),
                norm,
            });
        }
        let excluded: Vec<usize> = params
            .exclude_ids
            .iter()
            .filter_map(|id| self.row_of(id))
            .collect();

        let mut heap: BinaryHeap<Candidate<'_>> = BinaryHeap::with_capacity(params.k + 1);
        for (row, vector) in self.matrix.chunks_exact(self.dim).enumerate() {
            let distance = cosine_distance(query, vector);
            if distance > params.max_distance || excluded.contains(&row) {
                continue;
            }
            let cand = Candidate {
                distance,
                id: &self.ids[row],
                row,
            };
            if heap.len() < params.k {
                heap.push(cand);
            } else if let Some(worst) = heap.peek() {
                if cand < *worst {
                    heap.pop();
                    heap.push(cand);
                }
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .enumerate()
            .map(|(i, c)| NeighborHit {
                doc_id: c.id.to_owned(),
                row: c.row,
                distance: c.distance,
                rank: i + 1,
            })
            .collect())
    }

    /// Runs many queries in parallel; output order follows input order.
    pub fn query_batch(
        &self,
        queries: &[&[f32]],
        params: &QueryParams,
    ) -> Result<Vec<Vec<NeighborHit>>> {
        queries.par_iter().map(|q| self.query(q, params)).collect()
    }

    /// Index dump: a `SOURCE <tag>` line followed by an `EMB1` payload.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let records = self
            .ids
            .iter()
            .enumerate()
            .map(|(row, id)| EmbeddingRecord {
                doc_id: id.clone(),
                vector: self.row(row).to_vec(),
            })
            .collect();
        let set = EmbeddingSet::from_records(self.dim, records)?;
        let mut out = format!("SOURCE {}\n", self.source).into_bytes();
        out.extend(set.to_bytes()?);
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.to_bytes()?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::EmbeddingFormat("index dump: missing SOURCE line".into()))?;
        let line = std::str::from_utf8(&bytes[..nl])
            .map_err(|_| Error::EmbeddingFormat("index dump: bad SOURCE line".into()))?;
        let tag = line
            .strip_prefix("SOURCE ")
            .ok_or_else(|| Error::EmbeddingFormat(format!("index dump: unexpected `{line}`")))?;
        let source: Source = tag.parse()?;
        let raw = embedding::parse_embedding_bytes(&bytes[nl + 1..])?;
        let records = raw
            .records
            .into_iter()
            .map(|(id, v)| EmbeddingRecord::new(id, v))
            .collect::<Result<Vec<_>>>()?;
        Self::build(&EmbeddingSet::from_records(raw.dim, records)?, source)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fsutil::read(path)?)
    }
}

/// Heap entry ordered by `(distance, id)`; the max-heap top is the worst kept hit.
#[derive(Debug)]
struct Candidate<'a> {
    distance: f64,
    id: &'a str,
    row: usize,
}

impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then_with(|| self.id.cmp(other.id))
    }
}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}
