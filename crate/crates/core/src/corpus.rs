//! Corpus ingestion: sentence segmentation, length filtering, train/test
//! splitting and length statistics.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::{is_punctuation, Tokenizer};

pub const DEFAULT_MAX_CHARS: usize = 512;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("test split larger than corpus ({n_test} > {n_records})")]
    TestSplitTooLarge { n_test: usize, n_records: usize },
    #[error("empty corpus")]
    Empty,
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("unknown length dimension {0:?} (expected chars, words or tokens)")]
    UnknownDimension(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    #[default]
    Unassigned,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub text: String,
    pub char_len: usize,
    pub word_len: usize,
    /// WordPiece content tokens; 0 until tokenized.
    pub token_len: usize,
    pub doc_id: u64,
    pub split: Split,
}

impl SentenceRecord {
    pub fn new(text: String, doc_id: u64) -> Self {
        Self {
            char_len: text.chars().count(),
            word_len: count_words(&text),
            token_len: 0,
            doc_id,
            split: Split::Unassigned,
            text,
        }
    }

    pub fn len_of(&self, dim: Dimension) -> usize {
        match dim {
            Dimension::Chars => self.char_len,
            Dimension::Words => self.word_len,
            Dimension::Tokens => self.token_len,
        }
    }
}

/// Each whitespace-separated chunk is split into alternating runs of
/// punctuation and non-punctuation; every run counts as one word.
pub fn count_words(text: &str) -> usize {
    text.split_whitespace()
        .map(|chunk| {
            let mut runs = 0;
            let mut prev: Option<bool> = None;
            for c in chunk.chars() {
                let p = is_punctuation(c);
                if prev != Some(p) {
                    runs += 1;
                    prev = Some(p);
                }
            }
            runs
        })
        .sum()
}

const ABBREVIATIONS: &[&str] = &[
    "Mr.", "Mrs.", "Ms.", "Dr.", "Prof.", "Sr.", "Jr.", "St.", "No.", "vs.", "etc.", "e.g.", "i.e.",
];

fn is_closing(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '}' | '\u{201d}' | '\u{2019}' | '\u{00bb}')
}

fn is_opening(c: char) -> bool {
    matches!(c, '"' | '\'' | '(' | '[' | '{' | '\u{201c}' | '\u{2018}' | '\u{00ab}')
}

fn is_abbreviation(word: &str) -> bool {
    let core = word.trim_start_matches(is_opening);
    if ABBREVIATIONS.contains(&core) {
        return true;
    }
    // single capital initials such as "J."
    let mut chars = core.chars();
    matches!((chars.next(), chars.next(), chars.next()), (Some(c), Some('.'), None) if c.is_uppercase())
}

fn ends_sentence(word: &str, next: &str) -> bool {
    let core = word.trim_end_matches(is_closing);
    let Some(last) = core.chars().last() else {
        return false;
    };
    if !matches!(last, '.' | '?' | '!') {
        return false;
    }
    let Some(first) = next.chars().next() else {
        return false;
    };
    if !(first.is_uppercase() || first.is_ascii_digit() || is_opening(first)) {
        return false;
    }
    !(last == '.' && is_abbreviation(core))
}

/// Deterministic rule-based sentence splitter.
///
/// A boundary follows a word ending in `.`, `?` or `!` (optionally followed
/// by closing quotes or brackets) when the next word starts with an
/// uppercase letter, a digit or an opening quote, unless the word is a
/// known abbreviation or a single-letter initial. Whitespace runs become
/// single spaces.
pub fn split_sentences(document: &str, doc_id: u64) -> Vec<SentenceRecord> {
    let words: Vec<&str> = document.split_whitespace().collect();
    let mut out = Vec::new();
    let mut start = 0;
    for i in 0..words.len() {
        let boundary = match words.get(i + 1) {
            Some(next) => ends_sentence(words[i], next),
            None => true,
        };
        if boundary {
            out.push(SentenceRecord::new(words[start..=i].join(" "), doc_id));
            start = i + 1;
        }
    }
    out
}

/// Splits raw text into documents at blank lines.
pub fn split_documents(text: &str) -> Vec<String> {
    let mut docs = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                docs.push(current.join("\n"));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        docs.push(current.join("\n"));
    }
    docs
}

/// Keeps records strictly shorter than `max_chars` characters.
pub fn filter_sentences(records: Vec<SentenceRecord>, max_chars: usize) -> Vec<SentenceRecord> {
    records.into_iter().filter(|r| r.char_len < max_chars).collect()
}

/// Marks exactly `n_test` records (chosen by a seeded permutation) as test
/// and the rest as train.
pub fn assign_splits(mut records: Vec<SentenceRecord>, n_test: usize, seed: u64) -> Result<Vec<SentenceRecord>> {
    if n_test > records.len() {
        return Err(CorpusError::TestSplitTooLarge {
            n_test,
            n_records: records.len(),
        });
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for r in records.iter_mut() {
        r.split = Split::Train;
    }
    for &i in &order[..n_test] {
        records[i].split = Split::Test;
    }
    Ok(records)
}

/// Fills `token_len` with the WordPiece content length of each record.
pub fn fill_token_lengths(records: &mut [SentenceRecord], tokenizer: &Tokenizer) {
    records
        .par_iter_mut()
        .for_each(|r| r.token_len = tokenizer.content_ids(&r.text).len());
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dimension {
    Chars,
    Words,
    Tokens,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::Chars, Dimension::Words, Dimension::Tokens];

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Chars => "chars",
            Dimension::Words => "words",
            Dimension::Tokens => "tokens",
        }
    }
}

impl FromStr for Dimension {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chars" => Ok(Dimension::Chars),
            "words" => Ok(Dimension::Words),
            "tokens" => Ok(Dimension::Tokens),
            other => Err(CorpusError::UnknownDimension(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub mean: f64,
    pub stddev: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub iqr: f64,
    pub q95: f64,
    pub q99: f64,
}

impl LengthSummary {
    /// Population mean/stddev and nearest-rank quantiles.
    pub fn from_lengths(lengths: &[usize]) -> Self {
        let mut sorted = lengths.to_vec();
        sorted.sort_unstable();
        let n = sorted.len() as f64;
        let mean = sorted.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = sorted.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let q = |p: f64| nearest_rank(&sorted, p) as f64;
        let (q25, q75) = (q(25.0), q(75.0));
        Self {
            mean,
            stddev: var.sqrt(),
            median: q(50.0),
            q25,
            q75,
            iqr: q75 - q25,
            q95: q(95.0),
            q99: q(99.0),
        }
    }
}

/// Nearest-rank percentile of ascending `sorted`: element at rank ⌈p/100 · n⌉.
pub fn nearest_rank(sorted: &[usize], p: f64) -> usize {
    let n = sorted.len();
    // p·n computed as an integer ratio to avoid rounding at exact ranks
    let scaled = (p * 1_000_000.0).round() as u128 * n as u128;
    let rank = scaled.div_ceil(100_000_000) as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_documents: u64,
    pub n_sentences: u64,
    pub n_characters: u64,
    pub n_words: u64,
    pub n_tokens: u64,
    pub chars_per_word: f64,
    pub chars_per_token: f64,
    pub tokens_per_word: f64,
    pub chars: LengthSummary,
    pub words: LengthSummary,
    pub tokens: LengthSummary,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl CorpusStats {
    pub fn from_totals(n_characters: u64, n_words: u64, n_tokens: u64) -> (f64, f64, f64) {
        (
            ratio(n_characters, n_words),
            ratio(n_characters, n_tokens),
            ratio(n_tokens, n_words),
        )
    }
}

/// Statistics over `records`, tokenizing each sentence with `tokenizer`.
pub fn compute_stats(records: &[SentenceRecord], tokenizer: &Tokenizer) -> Result<CorpusStats> {
    if records.is_empty() {
        return Err(CorpusError::Empty);
    }
    let token_lens: Vec<usize> = records
        .par_iter()
        .map(|r| tokenizer.content_ids(&r.text).len())
        .collect();
    let char_lens: Vec<usize> = records.iter().map(|r| r.char_len).collect();
    let word_lens: Vec<usize> = records.iter().map(|r| r.word_len).collect();
    let total = |v: &[usize]| v.iter().map(|&x| x as u64).sum::<u64>();
    let (n_characters, n_words, n_tokens) = (total(&char_lens), total(&word_lens), total(&token_lens));
    let (chars_per_word, chars_per_token, tokens_per_word) = CorpusStats::from_totals(n_characters, n_words, n_tokens);
    let docs: BTreeSet<u64> = records.iter().map(|r| r.doc_id).collect();
    Ok(CorpusStats {
        n_documents: docs.len() as u64,
        n_sentences: records.len() as u64,
        n_characters,
        n_words,
        n_tokens,
        chars_per_word,
        chars_per_token,
        tokens_per_word,
        chars: LengthSummary::from_lengths(&char_lens),
        words: LengthSummary::from_lengths(&word_lens),
        tokens: LengthSummary::from_lengths(&token_lens),
    })
}

/// Contiguous histogram from 0 to the maximum length; empty bins included.
pub fn length_histogram(records: &[SentenceRecord], dimension: Dimension, bin_width: usize) -> Vec<(usize, usize)> {
    assert!(bin_width >= 1, "bin_width must be positive");
    let Some(max) = records.iter().map(|r| r.len_of(dimension)).max() else {
        return Vec::new();
    };
    let mut counts = vec![0usize; max / bin_width + 1];
    for r in records {
        counts[r.len_of(dimension) / bin_width] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (i * bin_width, c))
        .collect()
}

pub fn histogram_csv(hist: &[(usize, usize)]) -> String {
    let mut out = String::from("bin_start,count\n");
    for (start, count) in hist {
        out.push_str(&format!("{start},{count}\n"));
    }
    out
}

pub fn write_jsonl(records: &[SentenceRecord], mut w: impl Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| CorpusError::Json { line: 0, source: e })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<SentenceRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CorpusError::Json { line: i + 1, source: e })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(records: &[SentenceRecord]) -> Vec<&str> {
        records.iter().map(|r| r.text.as_str()).collect()
    }

    #[test]
    fn splitter_examples() {
        assert!(split_sentences("", 0).is_empty());
        assert_eq!(
            texts(&split_sentences("It rained. We left.", 0)),
            ["It rained.", "We left."]
        );
        assert_eq!(
            texts(&split_sentences("He said \"Go.\" Then he left.", 0)),
            ["He said \"Go.\"", "Then he left."]
        );
    }

    #[test]
    fn splitter_abbreviations_and_starts() {
        let doc = "Mr. Smith met Dr. Jones at St. Mary's. J. R. R. Tolkien wrote books, e.g. The Hobbit. \
                   Was it 1937? Yes!  It was\n1937.";
        assert_eq!(
            texts(&split_sentences(doc, 3)),
            [
                "Mr. Smith met Dr. Jones at St. Mary's.",
                "J. R. R. Tolkien wrote books, e.g. The Hobbit.",
                "Was it 1937?",
                "Yes!",
                "It was 1937."
            ]
        );
        // lowercase continuation is not a boundary
        assert_eq!(split_sentences("See p. five of it.", 0).len(), 1);
        assert!(split_sentences(doc, 3)
            .iter()
            .all(|r| r.doc_id == 3 && r.split == Split::Unassigned));
    }

    #[test]
    fn splitter_preserves_non_whitespace() {
        let doc = "  A  b. C!\n\n\"D?\" e (F.) G\t. ";
        let joined: String = split_sentences(doc, 0)
            .iter()
            .map(|r| r.text.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        let strip = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<String>();
        assert_eq!(strip(&joined), strip(doc));
    }

    #[test]
    fn word_counts() {
        assert_eq!(count_words("ab cd"), 2);
        assert_eq!(count_words("He said \"Go.\""), 5);
        assert_eq!(count_words("don't ... stop!"), 6);
        assert_eq!(count_words(""), 0);
    }

    #[test]
    fn filter_is_strict() {
        let rec = |n: usize| SentenceRecord::new("x".repeat(n), 0);
        assert_eq!(filter_sentences(vec![rec(511)], 512).len(), 1);
        assert!(filter_sentences(vec![rec(512)], 512).is_empty());
        // scalars, not bytes
        let r = SentenceRecord::new("é".repeat(300), 0);
        assert_eq!(r.char_len, 300);
        assert_eq!(filter_sentences(vec![r], 512).len(), 1);
    }

    #[test]
    fn splits() {
        let recs: Vec<SentenceRecord> = (0..10).map(|i| SentenceRecord::new(format!("S{i}."), 0)).collect();
        let all_train = assign_splits(recs.clone(), 0, 1).unwrap();
        assert!(all_train.iter().all(|r| r.split == Split::Train));
        let all_test = assign_splits(recs.clone(), 10, 1).unwrap();
        assert!(all_test.iter().all(|r| r.split == Split::Test));
        let a = assign_splits(recs.clone(), 4, 9).unwrap();
        let b = assign_splits(recs.clone(), 4, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|r| r.split == Split::Test).count(), 4);
        let err = assign_splits(recs, 11, 1).unwrap_err();
        assert!(err.to_string().starts_with("test split larger than corpus"));
    }

    #[test]
    fn nearest_rank_quantiles() {
        let v: Vec<usize> = (1..=100).collect();
        assert_eq!(nearest_rank(&v, 25.0), 25);
        assert_eq!(nearest_rank(&v, 50.0), 50);
        assert_eq!(nearest_rank(&v, 99.0), 99);
        assert_eq!(nearest_rank(&[7], 1.0), 7);
        let v = [1, 2, 3, 4, 5];
        assert_eq!(nearest_rank(&v, 50.0), 3);
        assert_eq!(nearest_rank(&v, 95.0), 5);
        assert_eq!(nearest_rank(&v, 20.0), 1);
    }

    #[test]
    fn histogram_is_contiguous() {
        let recs = vec![SentenceRecord::new("x".repeat(10), 0)];
        assert_eq!(length_histogram(&recs, Dimension::Chars, 16), vec![(0, 1)]);
        let recs = vec![
            SentenceRecord::new("x".to_string(), 0),
            SentenceRecord::new("x".repeat(20), 0),
        ];
        assert_eq!(
            length_histogram(&recs, Dimension::Chars, 8),
            vec![(0, 1), (8, 0), (16, 1)]
        );
        assert!(length_histogram(&[], Dimension::Chars, 8).is_empty());
        assert_eq!(histogram_csv(&[(0, 1)]), "bin_start,count\n0,1\n");
    }

    #[test]
    fn chars_per_word_at_corpus_scale() {
        let (cpw, _, _) = CorpusStats::from_totals(23_711_156_366, 4_625_810_070, 1);
        assert!((cpw - 5.13).abs() < 0.005);
    }

    #[test]
    fn jsonl_round_trip_and_field_order() {
        let recs = split_sentences("Héllo there. Bye now.", 2);
        let mut buf = Vec::new();
        write_jsonl(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "{\"text\":\"Héllo there.\",\"char_len\":12,\"word_len\":3,\"token_len\":0,\"doc_id\":2,\"split\":\"unassigned\"}\n"
        ));
        assert_eq!(read_jsonl(&buf[..]).unwrap(), recs);
    }

    #[test]
    fn documents_split_on_blank_lines() {
        assert_eq!(
            split_documents("a\nb\n\n \nc\n"),
            vec!["a\nb".to_string(), "c".to_string()]
        );
        assert!(split_documents("").is_empty());
    }
}
