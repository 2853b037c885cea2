//! Masked-LM variations and the dataset file.
//!
//! Each augmented record is masked several times: `variations_dr` times for
//! domain-related records and `variations_id` times for in-domain records.
//! Within one variation every content position is selected independently
//! with probability `mlm_prob`; a selected position becomes `[MASK]`, a
//! random non-special token, or stays unchanged (80/10/10 by default). If no
//! position is selected, one content position is drawn uniformly and
//! selected. Labels hold the original id at selected positions and `-100`
//! elsewhere.
//!
//! Every `(rng_seed, seed_id, source, variation_index)` tuple owns its own
//! ChaCha8 stream, so the output does not depend on processing order or
//! thread count.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentedRecord;
use crate::budget::{budget, BudgetReport};
use crate::corpus::Source;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::tokenizer::Vocab;

/// Label value for positions that do not contribute to the loss.
pub const IGNORE_INDEX: i64 = -100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskConfig {
    pub mlm_prob: f64,
    /// Variations per domain-related record (X).
    pub variations_dr: usize,
    /// Variations per in-domain record (Y).
    pub variations_id: usize,
    pub mask_frac: f64,
    pub random_frac: f64,
    pub keep_frac: f64,
    pub rng_seed: u64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            mlm_prob: 0.15,
            variations_dr: 10,
            variations_id: 10,
            mask_frac: 0.8,
            random_frac: 0.1,
            keep_frac: 0.1,
            rng_seed: 0,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mlm_prob > 0.0 && self.mlm_prob < 1.0) {
            return Err(Error::Config(format!(
                "mlm_prob must lie in (0, 1), got {}",
                self.mlm_prob
            )));
        }
        if self.variations_dr == 0 || self.variations_id == 0 {
            return Err(Error::Config("variation counts must be at least 1".to_owned()));
        }
        let fracs = [self.mask_frac, self.random_frac, self.keep_frac];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config("replacement fractions must lie in [0, 1]".to_owned()));
        }
        if (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "replacement fractions must sum to 1, got {}",
                fracs.iter().sum::<f64>()
            )));
        }
        Ok(())
    }

    pub fn variations_for(&self, source: Source) -> usize {
        match source {
            Source::DomainRelated => self.variations_dr,
            _ => self.variations_id,
        }
    }
}

/// One line of the dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedExample {
    pub example_id: String,
    pub seed_id: String,
    pub source: Source,
    pub variation_index: usize,
    pub input_ids: Vec<u32>,
    pub labels: Vec<i64>,
    pub attention_mask: Vec<u8>,
    pub augmented_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Action {
    Mask,
    Random,
    Keep,
}

/// Masks records against one vocabulary.
#[derive(Debug, Clone)]
pub struct Masker<'a> {
    config: &'a MaskConfig,
    vocab: &'a Vocab,
    replacements: Vec<u32>,
}

impl<'a> Masker<'a> {
    pub fn new(config: &'a MaskConfig, vocab: &'a Vocab) -> Result<Self> {
        config.validate()?;
        let replacements = vocab.non_special_ids();
        if replacements.is_empty() && config.random_frac > 0.0 {
            return Err(Error::Vocab(
                "no non-special tokens available for random replacement".to_owned(),
            ));
        }
        Ok(Self {
            config,
            vocab,
            replacements,
        })
    }

    pub fn config(&self) -> &MaskConfig {
        self.config
    }

    pub fn mask_variation(
        &self,
        record: &AugmentedRecord,
        variation_index: usize,
    ) -> Result<MaskedExample> {
        let packed = &record.packed;
        let maskable: Vec<usize> = (0..packed.len()).filter(|&i| !packed.is_special[i]).collect();
        if maskable.is_empty() {
            return Err(Error::NothingToMask(record.seed_id.clone()));
        }
        let mut rng = variation_rng(
            self.config.rng_seed,
            &record.seed_id,
            record.source,
            variation_index,
        );
        let mut input_ids = packed.ids.clone();
        let mut labels = vec![IGNORE_INDEX; packed.len()];
        let mut selected = 0usize;
        for &pos in &maskable {
            if rng.random::<f64>() < self.config.mlm_prob {
                self.apply(&mut rng, pos, &mut input_ids, &mut labels);
                selected += 1;
            }
        }
        if selected == 0 {
            let pos = maskable[rng.random_range(0..maskable.len())];
            self.apply(&mut rng, pos, &mut input_ids, &mut labels);
        }
        let pad = self.vocab.specials().pad;
        let attention_mask = packed
            .ids
            .iter()
            .zip(&packed.is_special)
            .map(|(&id, &special)| u8::from(!(special && id == pad)))
            .collect();
        Ok(MaskedExample {
            example_id: format!("{}:{}:{}", record.seed_id, record.source, variation_index),
            seed_id: record.seed_id.clone(),
            source: record.source,
            variation_index,
            input_ids,
            labels,
            attention_mask,
            augmented_text: record.augmented_text.clone(),
        })
    }

    fn apply(&self, rng: &mut ChaCha8Rng, pos: usize, input_ids: &mut [u32], labels: &mut [i64]) {
        labels[pos] = i64::from(input_ids[pos]);
        match self.draw_action(rng) {
            Action::Mask => input_ids[pos] = self.vocab.specials().mask,
            Action::Random => {
                input_ids[pos] = self.replacements[rng.random_range(0..self.replacements.len())]
            }
            Action::Keep => {}
        }
    }

    fn draw_action(&self, rng: &mut ChaCha8Rng) -> Action {
        let u = rng.random::<f64>();
        if u < self.config.mask_frac {
            Action::Mask
        } else if u < self.config.mask_frac + self.config.random_frac {
            Action::Random
        } else {
            Action::Keep
        }
    }

    /// All variations of one record, in variation order.
    pub fn mask_record(&self, record: &AugmentedRecord) -> Result<Vec<MaskedExample>> {
        (0..self.config.variations_for(record.source))
            .map(|v| self.mask_variation(record, v))
            .collect()
    }
}

/// Deterministic per-variation stream.
fn variation_rng(rng_seed: u64, seed_id: &str, source: Source, variation: usize) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(rng_seed.to_le_bytes());
    h.update((seed_id.len() as u64).to_le_bytes());
    h.update(seed_id.as_bytes());
    h.update(source.tag().as_bytes());
    h.update((variation as u64).to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Masks one record `X` or `Y` times depending on its source.
pub fn mask_variations(
    record: &AugmentedRecord,
    config: &MaskConfig,
    vocab: &Vocab,
) -> Result<Vec<MaskedExample>> {
    Masker::new(config, vocab)?.mask_record(record)
}

/// Number of examples a record set expands into.
pub fn count_examples(records: &[AugmentedRecord], config: &MaskConfig) -> u64 {
    records
        .iter()
        .map(|r| config.variations_for(r.source) as u64)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub num_examples: u64,
    pub bytes: u64,
}

/// Records masked per parallel batch before the batch is written out.
const WRITE_CHUNK: usize = 256;

/// Streams the dataset as JSON lines into `out`.
///
/// Records are masked in parallel chunks and written in input order, so the
/// bytes are the same for every thread count.
pub fn write_dataset<W: Write>(
    records: &[AugmentedRecord],
    config: &MaskConfig,
    vocab: &Vocab,
    mut out: W,
) -> Result<DatasetSummary> {
    let masker = Masker::new(config, vocab)?;
    let mut summary = DatasetSummary {
        num_examples: 0,
        bytes: 0,
    };
    for chunk in records.chunks(WRITE_CHUNK) {
        let encoded: Vec<(u64, Vec<u8>)> = chunk
            .par_iter()
            .map(|rec| -> Result<(u64, Vec<u8>)> {
                let mut buf = Vec::new();
                let examples = masker.mask_record(rec)?;
                for ex in &examples {
                    serde_json::to_writer(&mut buf, ex)?;
                    buf.push(b'\n');
                }
                Ok((examples.len() as u64, buf))
            })
            .collect::<Result<_>>()?;
        for (n, buf) in encoded {
            out.write_all(&buf)
                .map_err(|e| Error::io("<dataset>", e))?;
            summary.num_examples += n;
            summary.bytes += buf.len() as u64;
        }
    }
    out.flush().map_err(|e| Error::io("<dataset>", e))?;
    Ok(summary)
}

/// Training schedule used to derive the step budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetParams {
    pub batch_size: u64,
    pub epochs: u64,
}

impl Default for BudgetParams {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 20,
        }
    }
}

/// Writes the dataset file and returns its training budget.
pub fn build_dataset(
    records: &[AugmentedRecord],
    config: &MaskConfig,
    vocab: &Vocab,
    out_path: &Path,
    params: BudgetParams,
) -> Result<BudgetReport> {
    let mut summary = None;
    fsutil::write_atomic_with(out_path, |w| {
        let s = write_dataset(records, config, vocab, w).map_err(std::io::Error::other)?;
        summary = Some(s);
        Ok(())
    })?;
    let summary = summary.expect("writer ran");
    let mut report = budget(summary.num_examples, params.batch_size, params.epochs)?;
    report.approx_bytes = Some(summary.bytes);
    Ok(report)
}
