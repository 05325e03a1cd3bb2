use std::fs;

use sbae::corpus::SentenceRecord;
use sbae::model::{save_checkpoint, Autoencoder, ModelConfig, Multiplier};
use sbae::synth::{self, GrammarOptions};
use sbae::tokenizer::{build_vocab, TokenSequence, Tokenizer};
use sbae::train::{
    accumulate_gradients, make_batches, train, train_step_with, Batch, TargetPolicy, TrainConfig, TrainError,
    TrainOutputs, TrainState,
};

struct Setup {
    tok: Tokenizer,
    records: Vec<SentenceRecord>,
    seqs: Vec<TokenSequence>,
}

fn setup(n: usize) -> Setup {
    let texts = synth::generate(n, 12, &GrammarOptions::default());
    let tok = Tokenizer::new(build_vocab(texts.iter().map(String::as_str), 300).unwrap());
    let seqs = texts.iter().map(|t| tok.tokenize(t)).collect();
    let records = texts.into_iter().map(|t| SentenceRecord::new(t, 0)).collect();
    Setup { tok, records, seqs }
}

fn config(tok: &Tokenizer, d: usize, ell: usize) -> ModelConfig {
    let mut c = ModelConfig::new(d, ell, Multiplier::Finite(2), tok.vocab().len());
    c.max_seq_len = 32;
    c
}

fn grads(model: &Autoencoder<f64>) -> Vec<Vec<f64>> {
    model.params().iter().map(|p| p.grad.data().to_vec()).collect()
}

#[test]
fn initial_loss_is_near_uniform() {
    let s = setup(64);
    let mut model = Autoencoder::<f32>::init(config(&s.tok, 32, 2), 0).unwrap();
    let batch = &make_batches(&s.seqs, 64, 0, 0, TargetPolicy::ContentAndSep)[0];
    let mut state = TrainState::new(1e-3, 1, 0);
    let sum = accumulate_gradients(&mut model, batch, batch.n_targets(), false, &mut state).unwrap();
    let mean = sum / batch.n_targets() as f64;
    let ln_v = (s.tok.vocab().len() as f64).ln();
    assert!((mean - ln_v).abs() < 0.1 * ln_v, "{mean} vs {ln_v}");
}

#[test]
fn pad_id_does_not_affect_gradients() {
    let s = setup(16);
    let refs: Vec<&TokenSequence> = s.seqs.iter().collect();
    let init = Autoencoder::<f64>::init(config(&s.tok, 16, 1), 1).unwrap();
    let mut out = Vec::new();
    for pad in [0, 17] {
        let batch = Batch::from_sequences(&refs, pad, TargetPolicy::ContentAndSep);
        let mut model = init.clone();
        let mut state = TrainState::new(1e-3, 1, 0);
        accumulate_gradients(&mut model, &batch, batch.n_targets(), false, &mut state).unwrap();
        out.push(grads(&model));
    }
    assert_eq!(out[0], out[1]);
}

#[test]
fn batch_gradient_is_sum_of_sentence_gradients() {
    let s = setup(6);
    let init = Autoencoder::<f64>::init(config(&s.tok, 16, 2), 2).unwrap();
    let all: Vec<&TokenSequence> = s.seqs.iter().collect();
    let whole = Batch::from_sequences(&all, 0, TargetPolicy::ContentAndSep);
    let total = whole.n_targets();
    let mut state = TrainState::new(1e-3, 1, 0);

    let mut together = init.clone();
    accumulate_gradients(&mut together, &whole, total, false, &mut state).unwrap();
    let mut apart = init.clone();
    for seq in &all {
        let one = Batch::from_sequences(&[seq], 0, TargetPolicy::ContentAndSep);
        accumulate_gradients(&mut apart, &one, total, false, &mut state).unwrap();
    }
    for (a, b) in grads(&together).iter().zip(grads(&apart)) {
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-6 * x.abs().max(y.abs()).max(1e-9), "{x} vs {y}");
        }
    }
}

#[test]
fn update_count_follows_accumulation() {
    let s = setup(160);
    let mut model = Autoencoder::<f32>::init(config(&s.tok, 16, 1), 3).unwrap();
    let cfg = TrainConfig {
        micro_batch: 16,
        accum_steps: 3,
        lr: Some(1e-3),
        ..TrainConfig::default()
    };
    let summary = train(&mut model, &s.records, &s.tok, &cfg, TrainOutputs::default()).unwrap();
    // ten micro-batches, the trailing single one is skipped
    assert_eq!(summary.steps, 3);
    assert_eq!(summary.sentences_seen, 9 * 16);
    assert!(model.params().iter().all(|p| p.step_count == 3));
}

#[test]
fn zero_steps_saves_the_initial_model() {
    let s = setup(40);
    let dir = tempfile::tempdir().unwrap();
    let init = Autoencoder::<f32>::init(config(&s.tok, 16, 1), 4).unwrap();
    save_checkpoint(&init, &dir.path().join("init.ckpt")).unwrap();
    let mut model = init.clone();
    let cfg = TrainConfig {
        max_steps: Some(0),
        ..TrainConfig::default()
    };
    let outputs = TrainOutputs {
        checkpoint: Some(dir.path().join("zero.ckpt")),
        log: None,
    };
    let summary = train(&mut model, &s.records, &s.tok, &cfg, outputs).unwrap();
    assert_eq!(summary.steps, 0);
    assert_eq!(
        fs::read(dir.path().join("zero.ckpt")).unwrap(),
        fs::read(dir.path().join("init.ckpt")).unwrap()
    );
}

#[test]
fn overfitting_loss_falls_steadily() {
    let s = setup(8);
    let mut c = config(&s.tok, 32, 1);
    c.dropout_p = 0.0;
    let mut model = Autoencoder::<f32>::init(c, 5).unwrap();
    let group = make_batches(&s.seqs, 8, 0, 0, TargetPolicy::ContentAndSep);
    let mut state = TrainState::new(1e-3, 1, 0);
    let losses: Vec<f64> = (0..150)
        .map(|_| train_step_with(&mut model, &group, &mut state, true).unwrap())
        .collect();
    let upticks = losses.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(upticks as f64 <= 0.05 * losses.len() as f64, "{upticks} upticks");
    assert!(losses[149] < 0.5 * losses[0], "{} -> {}", losses[0], losses[149]);
}

#[test]
fn non_finite_loss_is_a_divergence() {
    let s = setup(16);
    let mut model = Autoencoder::<f32>::init(config(&s.tok, 16, 1), 6).unwrap();
    model.param_by_name_mut("lm_head.weight").unwrap().value.data_mut()[0] = f32::NAN;
    let group = make_batches(&s.seqs, 16, 0, 0, TargetPolicy::ContentAndSep);
    let mut state = TrainState::new(1e-3, 1, 0);
    let err = train_step_with(&mut model, &group, &mut state, true).unwrap_err();
    assert!(
        matches!(
            err,
            TrainError::Divergence {
                step: 1,
                sentences: 16,
                ..
            }
        ),
        "{err}"
    );
}

#[test]
fn long_sentences_are_truncated_and_counted() {
    let s = setup(20);
    let mut records = s.records.clone();
    records.push(SentenceRecord::new(["the cat sees the dog"; 10].join(" "), 0));
    let mut model = Autoencoder::<f32>::init(config(&s.tok, 16, 1), 7).unwrap();
    let cfg = TrainConfig {
        micro_batch: 7,
        accum_steps: 1,
        ..TrainConfig::default()
    };
    let summary = train(&mut model, &records, &s.tok, &cfg, TrainOutputs::default()).unwrap();
    assert_eq!(summary.truncated_sentences, 1);
    assert_eq!(summary.steps, 3);
}

#[test]
fn training_log_has_one_row_per_update() {
    let s = setup(64);
    let mut model = Autoencoder::<f32>::init(config(&s.tok, 16, 1), 8).unwrap();
    let mut log = Vec::new();
    let cfg = TrainConfig {
        micro_batch: 8,
        accum_steps: 2,
        ..TrainConfig::default()
    };
    let outputs = TrainOutputs {
        checkpoint: None,
        log: Some(&mut log),
    };
    train(&mut model, &s.records, &s.tok, &cfg, outputs).unwrap();
    let text = String::from_utf8(log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], sbae::train::LOG_HEADER);
    assert_eq!(lines.len(), 1 + 4);
    assert!(lines[4].starts_with("4,"));
}

#[test]
fn bad_settings_are_rejected() {
    let s = setup(8);
    let mut model = Autoencoder::<f32>::init(config(&s.tok, 16, 1), 9).unwrap();
    for cfg in [
        TrainConfig {
            micro_batch: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            accum_steps: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            lr: Some(-1.0),
            ..TrainConfig::default()
        },
    ] {
        let err = train(&mut model, &s.records, &s.tok, &cfg, TrainOutputs::default()).unwrap_err();
        assert!(matches!(err, TrainError::InvalidConfig(_)), "{err}");
    }
    let err = train(
        &mut model,
        &[],
        &s.tok,
        &TrainConfig::default(),
        TrainOutputs::default(),
    )
    .unwrap_err();
    assert!(matches!(err, TrainError::EmptyCorpus));
}
