//! Shared fixtures and independent reference implementations.

#![allow(dead_code)]

use std::path::Path;

use ctxaug_core::config::{CorporaConfig, EmbeddingSection, TokenizerSection};
use ctxaug_core::masking::{BudgetParams, MaskConfig};
use ctxaug_core::synthetic::{self, DemoSizes, SyntheticWorld};
use ctxaug_core::{
    AugmentConfig, Corpus, EmbeddingRecord, EmbeddingSet, InputMode, RunConfig, Source, Tokenizer,
    TokenizerConfig, Vocab,
};
use rand::Rng;

pub fn world() -> SyntheticWorld {
    SyntheticWorld::new(7, 12, 40)
}

pub fn tokenizer(world: &SyntheticWorld, max_len: usize) -> Tokenizer {
    let vocab = Vocab::from_tokens(world.vocab_tokens()).unwrap();
    Tokenizer::new(
        vocab,
        TokenizerConfig {
            max_len,
            ..TokenizerConfig::default()
        },
    )
    .unwrap()
}

pub fn corpus(world: &SyntheticWorld, role: Source, n: usize, seed: u64, min: usize, max: usize) -> Corpus {
    Corpus::from_texts(role, world.documents(n, seed, min, max)).unwrap()
}

pub fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.iter().map(|x| (x / n) as f32).collect();
        }
    }
}

/// Unit vector close to `base`: base plus noise of the given scale.
pub fn perturbed(rng: &mut impl Rng, base: &[f32], scale: f64) -> Vec<f32> {
    let v: Vec<f64> = base
        .iter()
        .map(|&x| f64::from(x) + scale * (rng.random::<f64>() * 2.0 - 1.0))
        .collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

pub fn set_from(vectors: &[(String, Vec<f32>)]) -> EmbeddingSet {
    let dim = vectors[0].1.len();
    EmbeddingSet::from_records(
        dim,
        vectors
            .iter()
            .map(|(id, v)| EmbeddingRecord::new(id.clone(), v.clone()).unwrap())
            .collect(),
    )
    .unwrap()
}

/// Exhaustive scan: every distance, filter, full sort, cut at k.
pub fn naive_knn(
    vectors: &[(String, Vec<f32>)],
    query: &[f32],
    k: usize,
    max_distance: f64,
    exclude: &[String],
) -> Vec<(String, f64)> {
    let mut all = Vec::new();
    for (id, v) in vectors {
        if exclude.contains(id) {
            continue;
        }
        let mut d = 0.0f64;
        for i in 0..v.len() {
            d += f64::from(v[i]) * f64::from(query[i]);
        }
        let d = (1.0 - d).clamp(0.0, 2.0);
        if d <= max_distance {
            all.push((id.clone(), d));
        }
    }
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// FNV-1a, 64 bit, written out from the published constants.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Second implementation of the hashed n-gram embedder.
pub fn oracle_embed(text: &str, dim: usize, nmin: usize, nmax: usize, seed: u64) -> Vec<f64> {
    let words: Vec<String> = text.split_whitespace().map(|w| w.to_lowercase()).collect();
    let padded = format!(" {} ", words.join(" "));
    let chars: Vec<char> = padded.chars().collect();
    let mut acc = vec![0.0f64; dim];
    for n in nmin..=nmax {
        if chars.len() < n {
            continue;
        }
        for start in 0..=chars.len() - n {
            let gram: String = chars[start..start + n].iter().collect();
            let mut bytes = seed.to_le_bytes().to_vec();
            bytes.extend_from_slice(gram.as_bytes());
            let h = fnv1a(&bytes);
            let sign = if h & (1 << 63) != 0 { -1.0 } else { 1.0 };
            acc[(h % dim as u64) as usize] += sign;
        }
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        let mut e0 = vec![0.0; dim];
        e0[0] = 1.0;
        return e0;
    }
    acc.iter().map(|x| x / norm).collect()
}

/// Writes synthetic corpora plus a run config and returns the config.
pub fn demo_config(
    dir: &Path,
    sizes: DemoSizes,
    experiment: &str,
    dim: usize,
    max_len: usize,
) -> RunConfig {
    synthetic::write_demo(dir, sizes, 11).unwrap();
    RunConfig {
        output_dir: dir.join("out"),
        experiment: Some(experiment.to_owned()),
        corpora: CorporaConfig {
            target: dir.join("target.txt"),
            in_domain: Some(dir.join("id.txt")),
            domain_related: Some(dir.join("dr.txt")),
            format: InputMode::Raw,
        },
        tokenizer: TokenizerSection {
            vocab: dir.join("vocab.txt"),
            config: TokenizerConfig {
                max_len,
                ..TokenizerConfig::default()
            },
        },
        embedding: EmbeddingSection {
            builtin: ctxaug_core::EmbedderConfig {
                dim,
                ..Default::default()
            },
            import: None,
        },
        augment: AugmentConfig {
            token_budget: max_len,
            ..AugmentConfig::default()
        },
        masking: MaskConfig {
            rng_seed: 5,
            ..MaskConfig::default()
        },
        training: BudgetParams::default(),
    }
}
