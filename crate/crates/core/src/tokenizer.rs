//! Uncased WordPiece tokenization.
//!
//! Vocabulary files use the published BERT layout: UTF-8, one token per
//! line, token id = zero-based line number.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use thiserror::Error;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

/// Words longer than this (in chars) map straight to `[UNK]`.
pub const MAX_WORD_CHARS: usize = 100;

pub type TokenId = u32;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("token id out of range: {id} >= {size}")]
    IdOutOfRange { id: TokenId, size: usize },
    #[error("vocabulary is missing special token {0}")]
    MissingSpecial(&'static str),
    #[error("duplicate vocabulary token {0:?}")]
    Duplicate(String),
    #[error("empty vocabulary token at line {0}")]
    EmptyToken(usize),
    #[error("vocabulary build needs target_size >= 6, got {0}")]
    TargetTooSmall(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TokenizerError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpecialIds {
    pub pad: TokenId,
    pub unk: TokenId,
    pub cls: TokenId,
    pub sep: TokenId,
    pub mask: TokenId,
}

impl SpecialIds {
    pub fn contains(&self, id: TokenId) -> bool {
        [self.pad, self.unk, self.cls, self.sep, self.mask].contains(&id)
    }
}

#[derive(Clone, Debug)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    specials: SpecialIds,
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
    }
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                return Err(TokenizerError::EmptyToken(i));
            }
            if index.insert(tok.clone(), i as TokenId).is_some() {
                return Err(TokenizerError::Duplicate(tok.clone()));
            }
        }
        let find = |t: &'static str| index.get(t).copied().ok_or(TokenizerError::MissingSpecial(t));
        let specials = SpecialIds {
            pad: find(PAD)?,
            unk: find(UNK)?,
            cls: find(CLS)?,
            sep: find(SEP)?,
            mask: find(MASK)?,
        };
        Ok(Self {
            tokens,
            index,
            specials,
        })
    }

    pub fn from_reader(reader: impl BufRead) -> Result<Self> {
        let mut tokens = Vec::new();
        for line in reader.lines() {
            let line = line?;
            tokens.push(line.trim_end_matches('\r').to_string());
        }
        Self::from_tokens(tokens)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        for tok in &self.tokens {
            writeln!(w, "{tok}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn specials(&self) -> SpecialIds {
        self.specials
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.specials.contains(id)
    }
}

/// Token ids of one sentence, wrapped in `[CLS] … [SEP]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
    pub n_content: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Content tokens without the surrounding specials.
    pub fn content(&self) -> &[TokenId] {
        &self.ids[1..self.ids.len() - 1]
    }

    /// Drops content tokens from the end so that `len() <= max_len`; `[SEP]`
    /// is kept. Returns whether anything was dropped.
    pub fn truncate(&mut self, max_len: usize) -> bool {
        let max_len = max_len.max(2);
        if self.ids.len() <= max_len {
            return false;
        }
        let sep = *self.ids.last().expect("sequence has [SEP]");
        self.ids.truncate(max_len - 1);
        self.ids.push(sep);
        self.n_content = self.ids.len() - 2;
        true
    }
}

/// Lowercases, strips accents (NFD, then drop combining marks), removes
/// control characters and collapses whitespace runs to single spaces.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.chars().flat_map(char::to_lowercase).nfd() {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
            continue;
        }
        if c.is_control() || c == '\u{fffd}' || is_combining_mark(c) {
            continue;
        }
        if pending_space {
            out.push(' ');
            pending_space = false;
        }
        out.push(c);
    }
    out
}

/// ASCII punctuation ranges plus the common Unicode punctuation blocks.
pub fn is_punctuation(c: char) -> bool {
    if c.is_ascii() {
        return c.is_ascii_punctuation();
    }
    matches!(c,
        '\u{00a1}' | '\u{00a7}' | '\u{00ab}' | '\u{00b6}' | '\u{00b7}' | '\u{00bb}' | '\u{00bf}'
        | '\u{037e}' | '\u{0387}'
        | '\u{2010}'..='\u{2027}'
        | '\u{2030}'..='\u{2043}'
        | '\u{2045}'..='\u{2051}'
        | '\u{2053}'..='\u{205e}'
        | '\u{3001}'..='\u{3003}'
        | '\u{3008}'..='\u{3011}'
        | '\u{3014}'..='\u{301f}'
        | '\u{ff01}'..='\u{ff03}'
        | '\u{ff05}'..='\u{ff0a}'
        | '\u{ff0c}'..='\u{ff0f}'
        | '\u{ff1a}' | '\u{ff1b}' | '\u{ff1f}' | '\u{ff20}'
    )
}

/// Splits normalized text on whitespace and around every punctuation char.
pub fn split_words(normalized: &str) -> Vec<&str> {
    let mut words = Vec::new();
    for chunk in normalized.split_whitespace() {
        let mut start = 0;
        for (i, c) in chunk.char_indices() {
            if is_punctuation(c) {
                if start < i {
                    words.push(&chunk[start..i]);
                }
                words.push(&chunk[i..i + c.len_utf8()]);
                start = i + c.len_utf8();
            }
        }
        if start < chunk.len() {
            words.push(&chunk[start..]);
        }
    }
    words
}

#[derive(Clone, Debug)]
pub struct Tokenizer {
    vocab: Vocab,
}

impl Tokenizer {
    pub fn new(vocab: Vocab) -> Self {
        Self { vocab }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Greedy longest-match-first decomposition of one word. A word with any
    /// undecomposable remainder becomes a single `[UNK]`.
    pub fn wordpiece(&self, word: &str, out: &mut Vec<TokenId>) {
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        if chars.len() > MAX_WORD_CHARS {
            out.push(self.vocab.specials.unk);
            return;
        }
        let mark = out.len();
        let mut start = 0;
        let mut piece = String::new();
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                let from = chars[start].0;
                let to = chars.get(end).map_or(word.len(), |c| c.0);
                piece.clear();
                if start > 0 {
                    piece.push_str("##");
                }
                piece.push_str(&word[from..to]);
                if let Some(id) = self.vocab.id(&piece) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    out.push(id);
                    start = end;
                }
                None => {
                    out.truncate(mark);
                    out.push(self.vocab.specials.unk);
                    return;
                }
            }
        }
    }

    /// Content token ids of `text`, without `[CLS]`/`[SEP]`.
    pub fn content_ids(&self, text: &str) -> Vec<TokenId> {
        let norm = normalize(text);
        let mut ids = Vec::new();
        for word in split_words(&norm) {
            self.wordpiece(word, &mut ids);
        }
        ids
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        let content = self.content_ids(text);
        let sp = self.vocab.specials;
        let mut ids = Vec::with_capacity(content.len() + 2);
        ids.push(sp.cls);
        ids.extend_from_slice(&content);
        ids.push(sp.sep);
        TokenSequence {
            n_content: content.len(),
            ids,
        }
    }

    /// Token strings for `ids` (specials included), for diff rendering.
    pub fn pieces(&self, ids: &[TokenId]) -> Result<Vec<&str>> {
        ids.iter()
            .map(|&id| {
                self.vocab.token(id).ok_or(TokenizerError::IdOutOfRange {
                    id,
                    size: self.vocab.len(),
                })
            })
            .collect()
    }

    /// Joins pieces back into text: specials dropped, `##` pieces glued to the
    /// previous piece, single spaces elsewhere.
    pub fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        let mut out = String::new();
        for (&id, piece) in ids.iter().zip(self.pieces(ids)?) {
            if self.vocab.is_special(id) {
                continue;
            }
            match piece.strip_prefix("##") {
                Some(rest) if !out.is_empty() => out.push_str(rest),
                _ => {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(piece);
                }
            }
        }
        Ok(out)
    }
}

/// Builds a desk-scale vocabulary: the five specials, then whole words by
/// descending frequency (ties lexicographic), then every single character and
/// its `##` continuation so that each seen word decomposes without `[UNK]`.
///
/// Character pieces are mandatory, so the result can exceed `target_size` when
/// the alphabet alone does not fit.
pub fn build_vocab<'a>(texts: impl IntoIterator<Item = &'a str>, target_size: usize) -> Result<Vocab> {
    if target_size < 6 {
        return Err(TokenizerError::TargetTooSmall(target_size));
    }
    let mut freq: BTreeMap<String, u64> = BTreeMap::new();
    for text in texts {
        let norm = normalize(text);
        for word in split_words(&norm) {
            if word.chars().count() <= MAX_WORD_CHARS {
                *freq.entry(word.to_string()).or_default() += 1;
            }
        }
    }
    let alphabet: BTreeSet<char> = freq.keys().flat_map(|w| w.chars()).collect();
    let mut required: BTreeSet<String> = BTreeSet::new();
    for c in &alphabet {
        required.insert(c.to_string());
        required.insert(format!("##{c}"));
    }
    let mut ranked: Vec<(&String, u64)> = freq.iter().map(|(w, &n)| (w, n)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut tokens: Vec<String> = [PAD, UNK, CLS, SEP, MASK].iter().map(|s| s.to_string()).collect();
    let mut present: BTreeSet<String> = tokens.iter().cloned().collect();
    let mut missing = required.len();
    for (word, _) in ranked {
        if present.contains(word.as_str()) {
            continue;
        }
        if required.contains(word.as_str()) {
            missing -= 1;
        } else if tokens.len() + missing + 1 > target_size {
            continue;
        }
        present.insert(word.clone());
        tokens.push(word.clone());
    }
    for piece in required {
        if !present.contains(&piece) {
            tokens.push(piece);
        }
    }
    Vocab::from_tokens(tokens)
}
