//! Seeded synthetic corpora and a matching WordPiece vocabulary.
//!
//! Used by the test suites, the benchmarks and the `synth` CLI command. Words
//! are compounds of German-looking syllables; every syllable is in the
//! vocabulary both as a word start and as a `##` continuation, so compounds
//! tokenize into syllable pieces the way real WordPiece vocabularies split
//! German compounds. Documents are drawn from topic clusters, which gives the
//! n-gram embedder real neighbourhood structure to retrieve from.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fsutil;
use crate::tokenizer::{CLS, MASK, PAD, SEP, UNK};

const SYLLABLES: &[&str] = &[
    "was", "ser", "pum", "pe", "kes", "sel", "druck", "ven", "til", "re", "ak", "tor", "ab",
    "lauf", "mess", "wert", "an", "la", "ge", "stand", "schicht", "be", "häl", "ter", "kühl",
    "mit", "tel", "dampf", "lei", "tung", "fil", "ruhr", "werk", "mo", "dos", "sier", "ein",
    "heit", "kol", "on", "ne", "sta", "tion", "pro", "be", "nah", "me", "rühr", "kes", "schal",
    "ven", "flan", "sch", "dich", "tung", "lö", "sung", "mit", "kat", "aly", "sa", "bat", "ch",
    "char", "ge", "zen", "tri", "fu", "ga", "trock", "ner", "öl", "stoff", "säu", "re", "lau",
    "ge", "gra", "nu", "lat", "tab", "let", "ten", "pres", "se", "hal", "le", "tank",
];

const FILLERS: &[&str] = &[
    "und", "der", "die", "das", "ist", "im", "am", "wurde", "nach", "bei", "zu", "von", "mit",
    "nicht", "wieder", "läuft", "gestoppt", "geprüft", "erneuert", "i.O.", "Schicht", "Meldung",
];

/// Topic-clustered vocabulary of synthetic compound words.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    topics: Vec<Vec<String>>,
}

impl SyntheticWorld {
    pub fn new(seed: u64, topics: usize, words_per_topic: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topics = (0..topics.max(1))
            .map(|_| {
                (0..words_per_topic.max(1))
                    .map(|_| compound(&mut rng))
                    .collect()
            })
            .collect();
        Self { topics }
    }

    pub fn topics(&self) -> usize {
        self.topics.len()
    }

    /// Vocabulary tokens: specials first, then pieces in sorted order.
    pub fn vocab_tokens(&self) -> Vec<String> {
        let mut pieces = BTreeSet::new();
        for s in SYLLABLES {
            pieces.insert(s.to_string());
            pieces.insert(capitalize(s));
            pieces.insert(format!("##{s}"));
        }
        for f in FILLERS {
            pieces.insert(f.to_string());
        }
        for c in ('a'..='z').chain("äöüß".chars()) {
            pieces.insert(c.to_string());
            pieces.insert(format!("##{c}"));
            pieces.insert(c.to_uppercase().collect());
        }
        for d in 0..10 {
            pieces.insert(d.to_string());
            pieces.insert(format!("##{d}"));
        }
        for p in [".", ",", "-", ":", "/", "(", ")", "%"] {
            pieces.insert(p.to_string());
        }
        // some compounds are whole-word entries
        for topic in &self.topics {
            for w in topic.iter().step_by(3) {
                pieces.insert(w.clone());
            }
        }
        [PAD, UNK, CLS, SEP, MASK]
            .iter()
            .map(|s| s.to_string())
            .chain(pieces)
            .collect()
    }

    /// One document mostly about `topic`.
    pub fn document(&self, rng: &mut impl Rng, topic: usize, min_words: usize, max_words: usize) -> String {
        let words = &self.topics[topic % self.topics.len()];
        let n = rng.random_range(min_words..=max_words.max(min_words));
        let mut out: Vec<String> = Vec::with_capacity(n + 2);
        for _ in 0..n {
            let r: f64 = rng.random();
            let w = if r < 0.6 {
                words.choose(rng).expect("non-empty topic").clone()
            } else if r < 0.9 {
                FILLERS.choose(rng).expect("fillers").to_string()
            } else {
                format!("{}-{}", (b'A' + rng.random_range(0..26u8)) as char, rng.random_range(100..999))
            };
            out.push(w);
        }
        let mut text = out.join(" ");
        text.push('.');
        text
    }

    /// `n` documents with topics assigned round-robin from a seeded shuffle.
    pub fn documents(&self, n: usize, seed: u64, min_words: usize, max_words: usize) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let topic = rng.random_range(0..self.topics.len());
                self.document(&mut rng, topic, min_words, max_words)
            })
            .collect()
    }
}

fn compound(rng: &mut impl Rng) -> String {
    let parts = rng.random_range(2..=4);
    let mut w: String = (0..parts)
        .map(|_| *SYLLABLES.choose(rng).expect("syllables"))
        .collect();
    if rng.random_bool(0.5) {
        w = capitalize(&w);
    }
    w
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Sizes for [`write_demo`].
#[derive(Debug, Clone, Copy)]
pub struct DemoSizes {
    pub target: usize,
    pub in_domain: usize,
    pub domain_related: usize,
}

/// Writes `target.txt`, `id.txt`, `dr.txt` and `vocab.txt` into `dir`.
pub fn write_demo(dir: &Path, sizes: DemoSizes, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    let world = SyntheticWorld::new(seed, 12, 40);
    let lines = |docs: Vec<String>| {
        let mut s = docs.join("\n");
        s.push('\n');
        s
    };
    fsutil::write_atomic(
        &dir.join("target.txt"),
        lines(world.documents(sizes.target, seed ^ 1, 6, 20)).as_bytes(),
    )?;
    fsutil::write_atomic(
        &dir.join("id.txt"),
        lines(world.documents(sizes.in_domain, seed ^ 2, 8, 40)).as_bytes(),
    )?;
    fsutil::write_atomic(
        &dir.join("dr.txt"),
        lines(world.documents(sizes.domain_related, seed ^ 3, 30, 120)).as_bytes(),
    )?;
    fsutil::write_atomic(
        &dir.join("vocab.txt"),
        lines(world.vocab_tokens()).as_bytes(),
    )?;
    Ok(())
}
