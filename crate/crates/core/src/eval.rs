//! Reconstruction accuracy: per-sentence positional accuracy, macro and
//! token-weighted aggregates, length-binned curves and sampled diffs.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::SentenceRecord;
use crate::model::{Autoencoder, ModelError};
use crate::tensor::Element;
use crate::tokenizer::{TokenId, Tokenizer, TokenizerError};
use crate::train::{tokenize_records, TargetPolicy};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: gold has {gold} tokens, prediction has {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("no evaluation positions")]
    NoPositions,
    #[error("empty test set")]
    EmptyTestSet,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// Fraction of positions where `pred` equals `gold`.
pub fn sentence_accuracy(gold: &[TokenId], pred: &[TokenId]) -> Result<f64> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    if gold.is_empty() {
        return Err(EvalError::NoPositions);
    }
    Ok(count_correct(gold, pred) as f64 / gold.len() as f64)
}

fn count_correct(gold: &[TokenId], pred: &[TokenId]) -> usize {
    gold.iter().zip(pred).filter(|(a, b)| a == b).count()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReconDiff {
    pub original: Vec<String>,
    pub reconstructed: Vec<String>,
    pub matches: Vec<bool>,
}

impl ReconDiff {
    pub fn new(tokenizer: &Tokenizer, gold: &[TokenId], pred: &[TokenId]) -> Result<Self> {
        if gold.len() != pred.len() {
            return Err(EvalError::LengthMismatch {
                gold: gold.len(),
                pred: pred.len(),
            });
        }
        let words = |ids: &[TokenId]| -> Result<Vec<String>> {
            Ok(tokenizer.pieces(ids)?.into_iter().map(str::to_string).collect())
        };
        Ok(Self {
            original: words(gold)?,
            reconstructed: words(pred)?,
            matches: gold.iter().zip(pred).map(|(a, b)| a == b).collect(),
        })
    }

    pub fn n_errors(&self) -> usize {
        self.matches.iter().filter(|m| !**m).count()
    }
}

/// Two lines, `O:` with the original and `R:` with the reconstruction, where
/// each mispredicted token is wrapped in `»…«`.
pub fn render_diff(diff: &ReconDiff) -> String {
    let r: Vec<String> = diff
        .reconstructed
        .iter()
        .zip(&diff.matches)
        .map(|(t, &ok)| if ok { t.clone() } else { format!("»{t}«") })
        .collect();
    format!("O: {}\nR: {}\n", diff.original.join(" "), r.join(" "))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LengthBin {
    /// Inclusive lower edge in scored tokens.
    pub length_bin: usize,
    pub mean_accuracy: f64,
    pub count: usize,
    pub n_tokens: usize,
    pub n_correct: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub mean_acc: f64,
    pub weighted_acc: f64,
    pub n_sentences: usize,
    pub n_tokens: usize,
    pub n_correct: usize,
    /// Sentences with no scored position, left out of every aggregate.
    pub n_skipped: usize,
    pub by_length: Vec<LengthBin>,
    pub samples: Vec<ReconDiff>,
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub bin_width: usize,
    pub n_samples: usize,
    /// Scored-length window for sampled diffs, inclusive.
    pub sample_lengths: (usize, usize),
    pub seed: u64,
    pub policy: TargetPolicy,
    /// Sentences per forward pass.
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            bin_width: 5,
            n_samples: 10,
            sample_lengths: (10, 30),
            seed: 0,
            policy: TargetPolicy::default(),
            batch_size: 32,
        }
    }
}

/// Aggregates already-scored `(gold, predicted)` pairs. Both sides hold only
/// the evaluation positions.
pub fn aggregate(pairs: &[(Vec<TokenId>, Vec<TokenId>)], bin_width: usize) -> Result<EvalReport> {
    let bin_width = bin_width.max(1);
    let mut bins: std::collections::BTreeMap<usize, LengthBin> = Default::default();
    let (mut acc_sum, mut n_tokens, mut n_correct, mut n_sentences, mut n_skipped) = (0.0, 0, 0, 0, 0);
    for (gold, pred) in pairs {
        if gold.len() != pred.len() {
            return Err(EvalError::LengthMismatch {
                gold: gold.len(),
                pred: pred.len(),
            });
        }
        if gold.is_empty() {
            n_skipped += 1;
            continue;
        }
        let correct = count_correct(gold, pred);
        let acc = correct as f64 / gold.len() as f64;
        acc_sum += acc;
        n_tokens += gold.len();
        n_correct += correct;
        n_sentences += 1;
        let start = gold.len() / bin_width * bin_width;
        let bin = bins.entry(start).or_insert(LengthBin {
            length_bin: start,
            mean_accuracy: 0.0,
            count: 0,
            n_tokens: 0,
            n_correct: 0,
        });
        bin.mean_accuracy += acc;
        bin.count += 1;
        bin.n_tokens += gold.len();
        bin.n_correct += correct;
    }
    if n_sentences == 0 {
        return Err(EvalError::EmptyTestSet);
    }
    let by_length = bins
        .into_values()
        .map(|mut b| {
            b.mean_accuracy /= b.count as f64;
            b
        })
        .collect();
    Ok(EvalReport {
        mean_acc: acc_sum / n_sentences as f64,
        weighted_acc: n_correct as f64 / n_tokens as f64,
        n_sentences,
        n_tokens,
        n_correct,
        n_skipped,
        by_length,
        samples: Vec::new(),
    })
}

/// Reconstructs every record with dropout off and scores it.
pub fn evaluate<T: Element>(
    model: &Autoencoder<T>,
    records: &[SentenceRecord],
    tokenizer: &Tokenizer,
    options: &EvalOptions,
) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let (seqs, _) = tokenize_records(records, tokenizer, model.config().max_seq_len);
    let chunks: Vec<&[_]> = seqs.chunks(options.batch_size.max(1)).collect();
    let preds: Vec<Vec<TokenId>> = chunks
        .par_iter()
        .map(|chunk| {
            let ids: Vec<&[TokenId]> = chunk.iter().map(|s| s.ids.as_slice()).collect();
            model.reconstruct_batch(&ids)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();

    let pairs: Vec<(Vec<TokenId>, Vec<TokenId>)> = seqs
        .iter()
        .zip(&preds)
        .map(|(s, p)| {
            let r = options.policy.eval_range(s.len());
            (s.ids[r.clone()].to_vec(), p[r].to_vec())
        })
        .collect();
    let mut report = aggregate(&pairs, options.bin_width)?;

    let (lo, hi) = options.sample_lengths;
    let mut candidates: Vec<usize> = (0..pairs.len())
        .filter(|&i| {
            let (g, p) = &pairs[i];
            (lo..=hi).contains(&g.len()) && g != p
        })
        .collect();
    candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(options.seed));
    candidates.truncate(options.n_samples);
    candidates.sort_unstable();
    report.samples = candidates
        .into_iter()
        .map(|i| ReconDiff::new(tokenizer, &pairs[i].0, &pairs[i].1))
        .collect::<Result<_>>()?;
    Ok(report)
}

pub const BY_LENGTH_HEADER: &str = "length_bin,mean_accuracy,count";

pub fn accuracy_by_length_csv(report: &EvalReport) -> String {
    let mut out = format!("{BY_LENGTH_HEADER}\n");
    for b in &report.by_length {
        writeln!(out, "{},{},{}", b.length_bin, b.mean_accuracy, b.count).expect("write to String");
    }
    out
}

/// Mean accuracy against length bin as a bare polyline chart.
pub fn accuracy_by_length_svg(report: &EvalReport) -> String {
    let (w, h, pad) = (480.0, 320.0, 40.0);
    let max_bin = report.by_length.last().map_or(1, |b| b.length_bin.max(1)) as f64;
    let points: Vec<String> = report
        .by_length
        .iter()
        .map(|b| {
            let x = pad + (w - 2.0 * pad) * b.length_bin as f64 / max_bin;
            let y = h - pad - (h - 2.0 * pad) * b.mean_accuracy;
            format!("{x:.1},{y:.1}")
        })
        .collect();
    let mut svg = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    svg.push('\n');
    let (x0, y0, x1, y1) = (pad, h - pad, w - pad, pad);
    writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#).unwrap();
    writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#).unwrap();
    writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="12">token length</text>"#,
        w / 2.0 - 30.0,
        h - 8.0
    )
    .unwrap();
    writeln!(svg, r#"<text x="4" y="{}" font-size="12">accuracy</text>"#, pad - 10.0).unwrap();
    writeln!(
        svg,
        r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
        points.join(" ")
    )
    .unwrap();
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentence_accuracy_examples() {
        assert_eq!(sentence_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(sentence_accuracy(&[1, 2, 3], &[1, 2, 9]).unwrap(), 2.0 / 3.0);
        assert_eq!(sentence_accuracy(&[1, 2], &[2, 1]).unwrap(), 0.0);
        assert!(matches!(
            sentence_accuracy(&[1], &[1, 2]),
            Err(EvalError::LengthMismatch { gold: 1, pred: 2 })
        ));
    }

    #[test]
    fn mean_and_weighted_diverge() {
        let pairs = vec![
            (vec![1, 2], vec![1, 2]),
            (vec![1, 2, 3, 4, 5, 6, 7, 8], vec![1, 2, 3, 4, 0, 0, 0, 0]),
        ];
        let r = aggregate(&pairs, 5).unwrap();
        assert_eq!(r.mean_acc, 0.75);
        assert_eq!(r.weighted_acc, 0.6);
        assert_eq!(r.by_length.len(), 2);
        assert_eq!(r.by_length.iter().map(|b| b.count).sum::<usize>(), 2);
    }

    #[test]
    fn render_marks_mismatches() {
        let d = ReconDiff {
            original: vec!["the".into(), "cat".into(), "sat".into()],
            reconstructed: vec!["the".into(), "cat".into(), "ran".into()],
            matches: vec![true, true, false],
        };
        assert_eq!(render_diff(&d), "O: the cat sat\nR: the cat »ran«\n");
    }

    #[test]
    fn csv_rows_ascend() {
        let pairs = vec![
            (vec![1; 12], vec![1; 12]),
            (vec![1; 3], vec![0; 3]),
            (vec![1; 7], vec![1; 7]),
        ];
        let csv = accuracy_by_length_csv(&aggregate(&pairs, 5).unwrap());
        assert_eq!(csv, "length_bin,mean_accuracy,count\n0,0,1\n5,1,1\n10,1,1\n");
    }
}
