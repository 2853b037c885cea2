//! Retrieval-augmented context packing and masked-LM dataset construction.
//!
//! The crate turns a small set of target texts into a continual-pretraining
//! dataset: every target ("seed") record is embedded, its nearest neighbours
//! are retrieved from an in-domain and a domain-related corpus with an exact
//! cosine scan, the neighbours are packed behind the seed into one fixed-size
//! WordPiece sequence, and each packed sequence is masked several times.
//!
//! Alongside the data path sit a zero-shot retrieval evaluator (MAP@10, MRR,
//! nDCG@10 with per-collection macro averaging) and the step/size arithmetic
//! used to plan training runs.
//!
//! Module map:
//!
//! | module | role |
//! | --- | --- |
//! | [`corpus`] | ingest line-delimited corpora, NFC normalisation, rejects |
//! | [`tokenizer`] | vocab loading, WordPiece, fixed-length packing |
//! | [`embedding`] | hashed n-gram embedder, `EMB1` vector files |
//! | [`knn`] | flat cosine index with k / max-distance queries |
//! | [`augment`] | seed + neighbour packing per context source |
//! | [`masking`] | masked variations and the dataset file |
//! | [`budget`] | steps-per-epoch accounting |
//! | [`eval`] | TREC qrels/run I/O, retrieval runner, metrics |
//! | [`pipeline`] | config-driven end-to-end run with stage caching |
//! | [`synthetic`] | seeded synthetic corpora and vocabulary for tests and demos |

pub mod augment;
pub mod budget;
pub mod config;
pub mod corpus;
pub mod embedding;
mod error;
pub mod eval;
mod fsutil;
pub mod knn;
pub mod masking;
pub mod pipeline;
pub mod reference;
pub mod synthetic;
pub mod tokenizer;

pub use augment::{augment, augment_corpus, AugmentConfig, AugmentedRecord, ContextSource};
pub use budget::{budget, BudgetReport};
pub use config::{Experiment, RunConfig};
pub use corpus::{ingest, Corpus, Document, InputMode, Source};
pub use embedding::{cosine_distance, EmbedderConfig, EmbeddingRecord, EmbeddingSet};
pub use error::{Error, Result};
pub use eval::{evaluate, mean_of_metrics, retrieve, EvalReport, Qrels, Run};
pub use knn::{FlatIndex, NeighborHit, QueryParams};
pub use masking::{build_dataset, mask_variations, MaskConfig, MaskedExample};
pub use pipeline::{run_pipeline, PipelineOptions, PipelineOutcome};
pub use tokenizer::{TokenSeq, Tokenizer, TokenizerConfig, Vocab};
