//! WordPiece tokenization and fixed-length packing.
//!
//! Pre-tokenization rules, applied in order:
//!
//! 1. control characters (other than whitespace), NUL and U+FFFD are dropped;
//! 2. if the tokenizer is uncased the text is lower-cased;
//! 3. the text is split on Unicode whitespace;
//! 4. every punctuation character becomes a pre-token of its own. Punctuation
//!    is ASCII punctuation plus the Latin-1 marks `¡ § « ¶ · » ¿`, the General
//!    Punctuation block (U+2000–U+206F) and CJK punctuation (U+3000–U+303F).
//!    A code like `A-123` therefore yields `A`, `-`, `123`.
//!
//! Each pre-token is then split greedily, longest vocabulary match first, with
//! non-initial pieces looked up under the continuation prefix (`##`). A
//! pre-token that cannot be fully covered, or is longer than
//! `max_chars_per_word` characters, becomes a single `[UNK]`.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialIds {
    pub pad: u32,
    pub unk: u32,
    pub cls: u32,
    pub sep: u32,
    pub mask: u32,
}

impl SpecialIds {
    pub fn contains(&self, id: u32) -> bool {
        id == self.pad || id == self.unk || id == self.cls || id == self.sep || id == self.mask
    }
}

/// A BERT-style vocabulary: line index is the token id.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    id_of: HashMap<String, u32>,
    specials: SpecialIds,
}

impl Vocab {
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let mut id_of = HashMap::with_capacity(tokens.len());
        let mut problems = Vec::new();
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                problems.push(format!("empty token on line {}", i + 1));
                continue;
            }
            if let Some(prev) = id_of.insert(tok.clone(), i as u32) {
                problems.push(format!(
                    "duplicate token `{tok}` on lines {} and {}",
                    prev + 1,
                    i + 1
                ));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Vocab(problems.join("; ")));
        }
        if tokens.len() > u32::MAX as usize {
            return Err(Error::Vocab("too many tokens".to_owned()));
        }
        let lookup = |name: &str| {
            id_of
                .get(name)
                .copied()
                .ok_or_else(|| Error::Vocab(format!("missing special token {name}")))
        };
        let specials = SpecialIds {
            pad: lookup(PAD)?,
            unk: lookup(UNK)?,
            cls: lookup(CLS)?,
            sep: lookup(SEP)?,
            mask: lookup(MASK)?,
        };
        Ok(Self {
            tokens,
            id_of,
            specials,
        })
    }

    /// Loads a one-token-per-line vocabulary file.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fsutil::read(path)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes)
            .map_err(|e| Error::Vocab(format!("vocabulary is not UTF-8: {e}")))?;
        Self::from_tokens(text.lines())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.id_of.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn specials(&self) -> SpecialIds {
        self.specials
    }

    pub fn is_special(&self, id: u32) -> bool {
        self.specials.contains(id)
    }

    /// All ids except the five special tokens, ascending.
    pub fn non_special_ids(&self) -> Vec<u32> {
        (0..self.tokens.len() as u32)
            .filter(|&id| !self.is_special(id))
            .collect()
    }
}

/// Loads a vocabulary file; see [`Vocab::load`].
pub fn load_vocab(path: &Path) -> Result<Vocab> {
    Vocab::load(path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    pub max_len: usize,
    pub cased: bool,
    pub continuation_prefix: String,
    pub max_chars_per_word: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            max_len: 512,
            cased: true,
            continuation_prefix: "##".to_owned(),
            max_chars_per_word: 100,
        }
    }
}

impl TokenizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_len < 8 {
            return Err(Error::Config(format!(
                "max_len must be at least 8, got {}",
                self.max_len
            )));
        }
        if self.max_chars_per_word == 0 {
            return Err(Error::Config("max_chars_per_word must be positive".to_owned()));
        }
        Ok(())
    }
}

/// Token ids with a parallel mask of structural tokens ([CLS]/[SEP]/[PAD]).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub is_special: Vec<bool>,
}

impl TokenSeq {
    /// Content tokens only.
    pub fn content(ids: Vec<u32>) -> Self {
        let is_special = vec![false; ids.len()];
        Self { ids, is_special }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn push(&mut self, id: u32, special: bool) {
        self.ids.push(id);
        self.is_special.push(special);
    }
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab: Vocab,
    config: TokenizerConfig,
}

impl Tokenizer {
    pub fn new(vocab: Vocab, config: TokenizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { vocab, config })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn config(&self) -> &TokenizerConfig {
        &self.config
    }

    /// Splits `text` into the pre-tokens handed to WordPiece.
    pub fn pre_tokenize(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut current = String::new();
        for c in text.chars() {
            if c == '\0' || c == '\u{FFFD}' || (c.is_control() && !c.is_whitespace()) {
                continue;
            }
            if c.is_whitespace() {
                flush(&mut current, &mut out);
            } else if is_punctuation(c) {
                flush(&mut current, &mut out);
                out.push(self.fold_case(c));
            } else if self.config.cased {
                current.push(c);
            } else {
                current.extend(c.to_lowercase());
            }
        }
        flush(&mut current, &mut out);
        out
    }

    fn fold_case(&self, c: char) -> String {
        if self.config.cased {
            c.to_string()
        } else {
            c.to_lowercase().collect()
        }
    }

    /// Tokenizes without adding special tokens.
    pub fn tokenize(&self, text: &str) -> TokenSeq {
        let mut ids = Vec::new();
        let mut scratch = String::new();
        for word in self.pre_tokenize(text) {
            self.wordpiece(&word, &mut ids, &mut scratch);
        }
        TokenSeq::content(ids)
    }

    /// Greedy longest-match-first split of one pre-token.
    fn wordpiece(&self, word: &str, out: &mut Vec<u32>, scratch: &mut String) {
        let unk = self.vocab.specials.unk;
        if word.chars().count() > self.config.max_chars_per_word {
            out.push(unk);
            return;
        }
        let start_len = out.len();
        let mut start = 0;
        while start < word.len() {
            let mut end = word.len();
            let mut found = None;
            while end > start {
                scratch.clear();
                if start > 0 {
                    scratch.push_str(&self.config.continuation_prefix);
                }
                scratch.push_str(&word[start..end]);
                if let Some(id) = self.vocab.id(scratch) {
                    found = Some(id);
                    break;
                }
                end = word[..end]
                    .char_indices()
                    .next_back()
                    .map(|(i, _)| i)
                    .unwrap_or(start);
            }
            match found {
                Some(id) => {
                    out.push(id);
                    start = end;
                }
                None => {
                    out.truncate(start_len);
                    out.push(unk);
                    return;
                }
            }
        }
    }

    /// Packs segments as `[CLS] s1 [SEP] s2 [SEP] ...` into exactly
    /// `max_len` ids.
    ///
    /// Overflow is cut from the tail: each segment is shortened to whatever
    /// fits before its closing `[SEP]`, and segments that would contribute
    /// nothing once the budget is spent are dropped, so the last non-pad
    /// token is always `[SEP]`. The remainder is filled with `[PAD]`. An
    /// empty segment list packs like a single empty segment.
    pub fn pack(&self, segments: &[TokenSeq]) -> TokenSeq {
        let max_len = self.config.max_len;
        let sp = self.vocab.specials;
        let mut out = TokenSeq {
            ids: Vec::with_capacity(max_len),
            is_special: Vec::with_capacity(max_len),
        };
        out.push(sp.cls, true);
        let empty = [TokenSeq::default()];
        let segments = if segments.is_empty() { &empty[..] } else { segments };
        for seg in segments {
            // room for content before the closing [SEP]
            let room = max_len.saturating_sub(out.len() + 1);
            if room == 0 {
                break;
            }
            let take = seg.len().min(room);
            for (&id, &special) in seg.ids[..take].iter().zip(&seg.is_special[..take]) {
                out.push(id, special);
            }
            out.push(sp.sep, true);
        }
        while out.len() < max_len {
            out.push(sp.pad, true);
        }
        out
    }

    /// Tokenizes each text and packs the results.
    pub fn encode_segments<S: AsRef<str>>(&self, texts: &[S]) -> TokenSeq {
        let segs: Vec<TokenSeq> = texts.iter().map(|t| self.tokenize(t.as_ref())).collect();
        self.pack(&segs)
    }
}

fn flush(current: &mut String, out: &mut Vec<String>) {
    if !current.is_empty() {
        out.push(std::mem::take(current));
    }
}

pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c, '¡' | '§' | '«' | '¶' | '·' | '»' | '¿')
        || ('\u{2000}'..='\u{206F}').contains(&c) && !c.is_whitespace()
        || ('\u{3000}'..='\u{303F}').contains(&c) && !c.is_whitespace()
}
