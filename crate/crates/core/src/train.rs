//! Reconstruction training: shuffled, padded micro-batches, masked
//! cross-entropy, gradient accumulation and Adam.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SentenceRecord;
use crate::model::{save_checkpoint, Autoencoder, ModelError};
use crate::tensor::{Adam, Element, Graph, TensorError};
use crate::tokenizer::{TokenId, TokenSequence, Tokenizer};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("divergence at step {step}: loss {loss} after {sentences} sentences")]
    Divergence { step: u64, loss: f64, sentences: u64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

/// Which positions are reconstruction targets (loss) and scored (accuracy).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetPolicy {
    /// Content tokens plus `[SEP]` are predicted; accuracy counts content only.
    #[default]
    ContentAndSep,
    /// Every position including `[CLS]` and `[SEP]` is predicted and scored.
    AllTokens,
}

impl TargetPolicy {
    pub fn loss_position(self, pos: usize) -> bool {
        match self {
            TargetPolicy::ContentAndSep => pos > 0,
            TargetPolicy::AllTokens => true,
        }
    }

    /// Positions of a sequence of length `n` scored by accuracy metrics.
    pub fn eval_range(self, n: usize) -> std::ops::Range<usize> {
        match self {
            TargetPolicy::ContentAndSep => 1..n.saturating_sub(1).max(1),
            TargetPolicy::AllTokens => 0..n,
        }
    }
}

fn default_micro_batch() -> usize {
    16
}
fn default_accum() -> usize {
    8
}
fn default_epochs() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_micro_batch")]
    pub micro_batch: usize,
    #[serde(default = "default_accum")]
    pub accum_steps: usize,
    /// `None` uses [`lr_for`] on the model width.
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Optimizer updates between checkpoints; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default)]
    pub max_steps: Option<u64>,
    #[serde(default)]
    pub targets: TargetPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            micro_batch: default_micro_batch(),
            accum_steps: default_accum(),
            lr: None,
            epochs: default_epochs(),
            seed: 0,
            checkpoint_every: 0,
            max_steps: None,
            targets: TargetPolicy::default(),
        }
    }
}

impl TrainConfig {
    pub fn effective_batch(&self) -> usize {
        self.micro_batch * self.accum_steps
    }

    pub fn lr_for_model(&self, d: usize) -> f64 {
        self.lr.unwrap_or_else(|| lr_for(d))
    }

    pub fn validate(&self) -> Result<()> {
        if self.micro_batch == 0 || self.accum_steps == 0 {
            return Err(TrainError::InvalidConfig(
                "micro_batch and accum_steps must be >= 1".into(),
            ));
        }
        if let Some(lr) = self.lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(TrainError::InvalidConfig(format!("lr must be positive, got {lr}")));
            }
        }
        Ok(())
    }
}

/// 1e-4 below width 1024, 5e-5 from 1024 up.
pub fn lr_for(d: usize) -> f64 {
    if d < 1024 {
        1e-4
    } else {
        5e-5
    }
}

/// Right-padded micro-batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    /// `[len, n_max]` row-major, padded with the pad id.
    pub ids: Vec<TokenId>,
    pub n_max: usize,
    pub lengths: Vec<usize>,
    /// Same layout as `ids`; true where the position contributes to the loss.
    pub loss_mask: Vec<bool>,
}

impl Batch {
    pub fn from_sequences(seqs: &[&TokenSequence], pad: TokenId, policy: TargetPolicy) -> Self {
        let n_max = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(seqs.len() * n_max);
        let mut loss_mask = Vec::with_capacity(seqs.len() * n_max);
        for s in seqs {
            ids.extend_from_slice(&s.ids);
            ids.extend(std::iter::repeat_n(pad, n_max - s.len()));
            loss_mask.extend((0..n_max).map(|p| p < s.len() && policy.loss_position(p)));
        }
        Self {
            ids,
            n_max,
            lengths: seqs.iter().map(|s| s.len()).collect(),
            loss_mask,
        }
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    /// Unpadded ids of sentence `i`.
    pub fn sentence(&self, i: usize) -> &[TokenId] {
        &self.ids[i * self.n_max..i * self.n_max + self.lengths[i]]
    }

    pub fn sentences(&self) -> Vec<&[TokenId]> {
        (0..self.len()).map(|i| self.sentence(i)).collect()
    }

    /// Number of loss positions.
    pub fn n_targets(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m).count()
    }

    /// Targets for the packed (unpadded) logits rows, `None` where masked.
    fn packed_targets(&self) -> Vec<Option<usize>> {
        (0..self.len())
            .flat_map(|i| (0..self.lengths[i]).map(move |p| i * self.n_max + p))
            .map(|flat| self.loss_mask[flat].then(|| self.ids[flat] as usize))
            .collect()
    }
}

/// Tokenizes `records`, truncating to `max_seq_len`. Also returns how many
/// sentences were truncated.
pub fn tokenize_records(
    records: &[SentenceRecord],
    tokenizer: &Tokenizer,
    max_seq_len: usize,
) -> (Vec<TokenSequence>, usize) {
    use rayon::prelude::*;
    let out: Vec<(TokenSequence, bool)> = records
        .par_iter()
        .map(|r| {
            let mut s = tokenizer.tokenize(&r.text);
            let cut = s.truncate(max_seq_len);
            (s, cut)
        })
        .collect();
    let truncated = out.iter().filter(|(_, cut)| *cut).count();
    (out.into_iter().map(|(s, _)| s).collect(), truncated)
}

/// Shuffles the sequences with `seed` and cuts them into micro-batches; the
/// last batch may be smaller.
pub fn make_batches(
    seqs: &[TokenSequence],
    micro_batch: usize,
    seed: u64,
    pad: TokenId,
    policy: TargetPolicy,
) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
        .chunks(micro_batch.max(1))
        .map(|chunk| {
            let group: Vec<&TokenSequence> = chunk.iter().map(|&i| &seqs[i]).collect();
            Batch::from_sequences(&group, pad, policy)
        })
        .collect()
}

/// Optimizer and bookkeeping that persist across steps.
pub struct TrainState {
    pub adam: Adam,
    pub accum_steps: usize,
    pub steps: u64,
    pub micro_batches_seen: u64,
    pub sentences_seen: u64,
    rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(lr: f64, accum_steps: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // keep dropout draws independent of the shuffle stream
        rng.set_stream(1);
        Self {
            adam: Adam::new(lr),
            accum_steps,
            steps: 0,
            micro_batches_seen: 0,
            sentences_seen: 0,
            rng,
        }
    }
}

/// Forward and backward for one micro-batch, adding `weight × ∇(sum of token
/// losses)` into the parameter gradients. Returns the summed token loss.
pub fn accumulate_gradients<T: Element>(
    model: &mut Autoencoder<T>,
    batch: &Batch,
    normalizer: usize,
    training: bool,
    state: &mut TrainState,
) -> Result<f64> {
    let sentences = batch.sentences();
    let mut g = Graph::new();
    let out = model.forward(&mut g, &sentences, training, &mut state.rng, None)?;
    let targets: Vec<usize> = batch
        .packed_targets()
        .into_iter()
        .map(|t| t.unwrap_or(usize::MAX))
        .collect();
    let count = batch.n_targets();
    let ce = g.cross_entropy(out.logits, &targets, usize::MAX)?;
    let mean = g.value(ce).item().as_f64();
    let loss = g.scale(ce, T::from_f64_lossy(count as f64 / normalizer as f64));
    let grads = g.backward(loss)?;
    grads.accumulate_into(&mut model.params_mut());
    Ok(mean * count as f64)
}

/// One optimizer update from a group of micro-batches. Gradients are the
/// token-mean over the whole group, so the update does not depend on how the
/// group is split. Returns that mean loss.
pub fn train_step<T: Element>(model: &mut Autoencoder<T>, group: &[Batch], state: &mut TrainState) -> Result<f64> {
    train_step_with(model, group, state, true)
}

/// [`train_step`] with explicit control over dropout.
pub fn train_step_with<T: Element>(
    model: &mut Autoencoder<T>,
    group: &[Batch],
    state: &mut TrainState,
    training: bool,
) -> Result<f64> {
    let total: usize = group.iter().map(Batch::n_targets).sum();
    if total == 0 {
        return Err(TensorError::NoLossPositions.into());
    }
    let mut sum = 0.0;
    for batch in group {
        sum += accumulate_gradients(model, batch, total, training, state)?;
        state.micro_batches_seen += 1;
        state.sentences_seen += batch.len() as u64;
    }
    let loss = sum / total as f64;
    if !loss.is_finite() {
        for p in model.params_mut() {
            p.zero_grad();
        }
        return Err(TrainError::Divergence {
            step: state.steps + 1,
            loss,
            sentences: state.sentences_seen,
        });
    }
    state.adam.step(&mut model.params_mut());
    state.steps += 1;
    Ok(loss)
}

/// Where [`train`] writes its artifacts.
#[derive(Default)]
pub struct TrainOutputs<'a> {
    pub checkpoint: Option<PathBuf>,
    /// Receives the CSV metrics log, one row per optimizer update.
    pub log: Option<&'a mut dyn Write>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub sentences_seen: u64,
    pub final_loss: Option<f64>,
    pub elapsed_s: f64,
    pub truncated_sentences: usize,
}

pub const LOG_HEADER: &str = "step,loss,sentences_per_sec,elapsed_s";

/// Runs `epochs` passes over `records` (reshuffled per epoch), stopping
/// early at `max_steps`. A trailing group with fewer than `accum_steps`
/// micro-batches is skipped so every update sees a full effective batch.
pub fn train<T: Element>(
    model: &mut Autoencoder<T>,
    records: &[SentenceRecord],
    tokenizer: &Tokenizer,
    config: &TrainConfig,
    mut outputs: TrainOutputs<'_>,
) -> Result<TrainSummary> {
    config.validate()?;
    model.config().validate_shapes()?;
    if records.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let start = Instant::now();
    let max_len = model.config().max_seq_len;
    let (seqs, truncated_sentences) = tokenize_records(records, tokenizer, max_len);
    let pad = tokenizer.vocab().specials().pad;
    let mut state = TrainState::new(config.lr_for_model(model.config().d), config.accum_steps, config.seed);
    let max_steps = config.max_steps.unwrap_or(u64::MAX);
    let mut final_loss = None;

    if let Some(log) = outputs.log.as_deref_mut() {
        writeln!(log, "{LOG_HEADER}")?;
    }
    'epochs: for epoch in 0..config.epochs {
        let batches = make_batches(
            &seqs,
            config.micro_batch,
            config.seed.wrapping_add(epoch as u64),
            pad,
            config.targets,
        );
        for group in batches.chunks_exact(config.accum_steps) {
            if state.steps >= max_steps {
                break 'epochs;
            }
            let loss = train_step(model, group, &mut state)?;
            final_loss = Some(loss);
            let elapsed = start.elapsed().as_secs_f64();
            if let Some(log) = outputs.log.as_deref_mut() {
                let rate = state.sentences_seen as f64 / elapsed.max(1e-9);
                writeln!(log, "{},{loss:.6},{rate:.2},{elapsed:.3}", state.steps)?;
            }
            if let Some(path) = &outputs.checkpoint {
                if config.checkpoint_every > 0 && state.steps.is_multiple_of(config.checkpoint_every) {
                    save_checkpoint(model, path)?;
                }
            }
        }
    }
    if let Some(path) = &outputs.checkpoint {
        save_checkpoint(model, path)?;
    }
    if let Some(log) = outputs.log.as_deref_mut() {
        log.flush()?;
    }
    Ok(TrainSummary {
        steps: state.steps,
        sentences_seen: state.sentences_seen,
        final_loss,
        elapsed_s: start.elapsed().as_secs_f64(),
        truncated_sentences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(ids: &[TokenId]) -> TokenSequence {
        TokenSequence {
            ids: ids.to_vec(),
            n_content: ids.len() - 2,
        }
    }

    #[test]
    fn lr_rule() {
        assert_eq!(lr_for(768), 1e-4);
        assert_eq!(lr_for(1024), 5e-5);
        assert_eq!(lr_for(2048), 5e-5);
        assert_eq!(lr_for(64), 1e-4);
    }

    #[test]
    fn batch_padding_and_mask() {
        let a = seq(&[2, 7, 3]);
        let b = seq(&[2, 8, 9, 10, 3]);
        let batch = Batch::from_sequences(&[&a, &b], 0, TargetPolicy::ContentAndSep);
        assert_eq!(batch.n_max, 5);
        assert_eq!(batch.ids, vec![2, 7, 3, 0, 0, 2, 8, 9, 10, 3]);
        assert_eq!(
            batch.loss_mask,
            vec![false, true, true, false, false, false, true, true, true, true]
        );
        assert_eq!(batch.sentence(0), &[2, 7, 3]);
        assert_eq!(batch.n_targets(), 6);
        let all = Batch::from_sequences(&[&a], 0, TargetPolicy::AllTokens);
        assert_eq!(all.n_targets(), 3);
    }

    #[test]
    fn partition_sizes() {
        let seqs: Vec<TokenSequence> = (0..10).map(|i| seq(&[2, 5 + i, 3])).collect();
        let batches = make_batches(&seqs, 4, 1, 0, TargetPolicy::ContentAndSep);
        let sizes: Vec<usize> = batches.iter().map(Batch::len).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert_eq!(batches, make_batches(&seqs, 4, 1, 0, TargetPolicy::ContentAndSep));
    }

    #[test]
    fn eval_ranges() {
        assert_eq!(TargetPolicy::ContentAndSep.eval_range(5), 1..4);
        assert_eq!(TargetPolicy::AllTokens.eval_range(5), 0..5);
    }
}
