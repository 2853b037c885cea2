//! Declarative run configuration (TOML).
//!
//! ```toml
//! output_dir = "out"
//! experiment = "10:20, 0.7"      # X:Y, D; overrides the fields it covers
//!
//! [corpora]
//! target = "target.txt"
//! in_domain = "id.txt"
//! domain_related = "dr.txt"
//! format = "raw"                 # or "jsonl"
//!
//! [tokenizer]
//! vocab = "vocab.txt"
//!
//! [embedding]                    # built-in hashed n-gram embedder
//! dim = 384
//! # [embedding.import]           # or precomputed EMB1 files per role
//! # target = "target.emb"
//!
//! [augment]
//! k = 3
//! sources = ["ID", "DR"]
//!
//! [masking]
//! rng_seed = 13
//!
//! [training]
//! batch_size = 64
//! epochs = 20
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::corpus::{InputMode, Source};
use crate::embedding::EmbedderConfig;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::masking::{BudgetParams, MaskConfig};
use crate::tokenizer::TokenizerConfig;

/// The `"X:Y, D"` shorthand: X variations per domain-related record, Y per
/// in-domain record, maximum cosine distance D.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Experiment {
    pub variations_dr: usize,
    pub variations_id: usize,
    pub max_distance: f64,
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("experiment `{s}` is not of the form \"X:Y, D\""));
        let (ratio, distance) = s.split_once(',').ok_or_else(bad)?;
        let (x, y) = ratio.split_once(':').ok_or_else(bad)?;
        let exp = Experiment {
            variations_dr: x.trim().parse().map_err(|_| bad())?,
            variations_id: y.trim().parse().map_err(|_| bad())?,
            max_distance: distance.trim().parse().map_err(|_| bad())?,
        };
        if exp.variations_dr == 0 || exp.variations_id == 0 {
            return Err(Error::Config(format!("experiment `{s}`: variation counts must be >= 1")));
        }
        if !(0.0..=2.0).contains(&exp.max_distance) {
            return Err(Error::Config(format!("experiment `{s}`: distance must lie in [0, 2]")));
        }
        Ok(exp)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}, {}", self.variations_dr, self.variations_id, self.max_distance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorporaConfig {
    pub target: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_domain: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_related: Option<PathBuf>,
    #[serde(default)]
    pub format: InputMode,
}

impl CorporaConfig {
    pub fn path(&self, role: Source) -> Option<&Path> {
        match role {
            Source::Target => Some(&self.target),
            Source::InDomain => self.in_domain.as_deref(),
            Source::DomainRelated => self.domain_related.as_deref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerSection {
    pub vocab: PathBuf,
    #[serde(flatten)]
    pub config: TokenizerConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImportPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_domain: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_related: Option<PathBuf>,
}

impl ImportPaths {
    pub fn path(&self, role: Source) -> Option<&Path> {
        match role {
            Source::Target => self.target.as_deref(),
            Source::InDomain => self.in_domain.as_deref(),
            Source::DomainRelated => self.domain_related.as_deref(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSection {
    #[serde(flatten)]
    pub builtin: EmbedderConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub import: Option<ImportPaths>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
    pub corpora: CorporaConfig,
    pub tokenizer: TokenizerSection,
    #[serde(default)]
    pub embedding: EmbeddingSection,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub masking: MaskConfig,
    #[serde(default)]
    pub training: BudgetParams,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fsutil::read(path)?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| Error::Config(format!("{}: not UTF-8: {e}", path.display())))?;
        let base = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let base = std::path::absolute(base).map_err(|e| Error::io(base, e))?;
        Self::from_toml(text, &base)
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.rebase(base_dir);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.corpora.target);
        self.corpora.in_domain.as_mut().map(fix);
        self.corpora.domain_related.as_mut().map(fix);
        fix(&mut self.tokenizer.vocab);
        if let Some(import) = &mut self.embedding.import {
            import.target.as_mut().map(fix);
            import.in_domain.as_mut().map(fix);
            import.domain_related.as_mut().map(fix);
        }
    }

    /// Expands the experiment shorthand into the fields it controls and
    /// canonicalises it. Called before [`RunConfig::validate`].
    pub fn resolve(&mut self) -> Result<()> {
        if let Some(exp) = &self.experiment {
            let exp: Experiment = exp.parse()?;
            self.masking.variations_dr = exp.variations_dr;
            self.masking.variations_id = exp.variations_id;
            self.augment.max_distance = exp.max_distance;
        }
        self.experiment = Some(self.current_experiment().to_string());
        Ok(())
    }

    pub fn current_experiment(&self) -> Experiment {
        Experiment {
            variations_dr: self.masking.variations_dr,
            variations_id: self.masking.variations_id,
            max_distance: self.augment.max_distance,
        }
    }

    /// Checks numeric invariants and that every referenced input exists.
    pub fn validate(&self) -> Result<()> {
        self.tokenizer.config.validate()?;
        self.embedding.builtin.validate()?;
        self.masking.validate()?;
        if self.training.batch_size == 0 || self.training.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".to_owned()));
        }
        if self.augment.token_budget != self.tokenizer.config.max_len {
            return Err(Error::Config(format!(
                "augment.token_budget ({}) must equal tokenizer.max_len ({})",
                self.augment.token_budget, self.tokenizer.config.max_len
            )));
        }
        if self.augment.sources.is_empty() {
            return Err(Error::Config("augment.sources is empty".to_owned()));
        }
        crate::knn::QueryParams::new(self.augment.k, self.augment.max_distance).validate()?;

        let must_exist = |what: &str, p: &Path| -> Result<()> {
            if p.is_file() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} not found: {}", p.display())))
            }
        };
        must_exist("vocab", &self.tokenizer.vocab)?;
        must_exist("target corpus", &self.corpora.target)?;
        for &src in &self.augment.sources {
            if src == Source::Target {
                return Err(Error::Config("TARGET cannot be a context source".to_owned()));
            }
            let p = self.corpora.path(src).ok_or_else(|| {
                Error::Config(format!("source {src} is configured but has no corpus path"))
            })?;
            must_exist(&format!("{src} corpus"), p)?;
        }
        if let Some(import) = &self.embedding.import {
            for role in self.roles() {
                let p = import.path(role).ok_or_else(|| {
                    Error::Config(format!("embedding import is missing a file for {role}"))
                })?;
                must_exist(&format!("{role} embeddings"), p)?;
            }
        }
        Ok(())
    }

    /// Target followed by the configured context sources.
    pub fn roles(&self) -> Vec<Source> {
        std::iter::once(Source::Target)
            .chain(self.augment.sources.iter().copied())
            .collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization is infallible")
    }
}
