use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbae::model::{load_checkpoint, save_checkpoint, Autoencoder, ModelConfig, ModelError, Multiplier};
use sbae::tensor::Tensor;
use sbae::tokenizer::TokenId;

fn model(d: usize, ell: usize, m: Multiplier, v: usize, seed: u64) -> Autoencoder<f32> {
    let mut c = ModelConfig::new(d, ell, m, v);
    c.n_heads = if d.is_multiple_of(4) { 4 } else { 1 };
    c.max_seq_len = 24;
    Autoencoder::init(c, seed).unwrap()
}

fn sentence(rng: &mut ChaCha8Rng, n: usize, v: usize) -> Vec<TokenId> {
    let mut ids = vec![2];
    ids.extend((0..n).map(|_| rng.gen_range(5..v as TokenId)));
    ids.push(3);
    ids
}

#[test]
fn forced_embedding_hides_the_input() {
    let ae = model(16, 2, Multiplier::Finite(3), 40, 1);
    let zero = |_: usize, h: &mut Tensor<f32>| h.data_mut()[..16].fill(0.25);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = sentence(&mut rng, 7, 40);
    let b = sentence(&mut rng, 7, 40);
    assert_ne!(a, b);
    let la = ae.logits(&[&a], Some(&zero)).unwrap();
    let lb = ae.logits(&[&b], Some(&zero)).unwrap();
    assert!(la[0].bit_eq(&lb[0]));
}

#[test]
fn non_leading_rows_never_reach_the_decoder() {
    let ae = model(16, 1, Multiplier::Inf, 40, 3);
    let ids: Vec<TokenId> = vec![2, 9, 10, 11, 3];
    let base = ae.logits(&[&ids], None).unwrap();
    let noisy = |_: usize, h: &mut Tensor<f32>| {
        for (i, v) in h.data_mut()[16..].iter_mut().enumerate() {
            *v = (i as f32).cos() * 5.0;
        }
    };
    assert!(base[0].bit_eq(&ae.logits(&[&ids], Some(&noisy)).unwrap()[0]));

    let moved = |_: usize, h: &mut Tensor<f32>| h.data_mut()[0] += 1.0;
    assert!(!base[0].bit_eq(&ae.logits(&[&ids], Some(&moved)).unwrap()[0]));
}

#[test]
fn padded_positions_agree_without_position_embeddings() {
    let mut ae = model(16, 2, Multiplier::Finite(2), 30, 4);
    ae.param_by_name_mut("position_embedding")
        .unwrap()
        .value
        .data_mut()
        .fill(0.0);
    let ids: Vec<TokenId> = vec![2, 6, 7, 8, 9, 10, 3];
    let l = &ae.logits(&[&ids], None).unwrap()[0];
    for r in 3..ids.len() {
        assert_eq!(l.row(2), l.row(r), "row {r}");
    }
    assert_ne!(l.row(0), l.row(2));
}

#[test]
fn logits_stay_finite_across_tiny_configs() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..10_000 {
        let d = [1, 2, 4, 8][rng.gen_range(0..4)];
        let ell = rng.gen_range(0..3);
        let m = if rng.gen_bool(0.2) {
            Multiplier::Inf
        } else {
            Multiplier::Finite(rng.gen_range(1..5))
        };
        let v = rng.gen_range(6..20);
        let mut c = ModelConfig::new(d, ell, m, v);
        c.n_heads = if d >= 2 { d / 2 } else { 1 };
        c.max_seq_len = 12;
        let ae = Autoencoder::<f32>::init(c, case).unwrap();
        let n_sent = rng.gen_range(1..4);
        let sents: Vec<Vec<TokenId>> = (0..n_sent)
            .map(|_| {
                let n = rng.gen_range(0..10);
                sentence(&mut rng, n, v)
            })
            .collect();
        let refs: Vec<&[TokenId]> = sents.iter().map(Vec::as_slice).collect();
        for (s, l) in sents.iter().zip(ae.logits(&refs, None).unwrap()) {
            assert_eq!(l.shape(), &[s.len(), v]);
            assert!(l.data().iter().all(|x| x.is_finite()), "case {case}");
        }
    }
}

#[test]
fn inference_is_deterministic_and_batch_independent() {
    let ae = model(32, 2, Multiplier::Finite(2), 50, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let sents: Vec<Vec<TokenId>> = (0..6).map(|i| sentence(&mut rng, 3 + i, 50)).collect();
    let refs: Vec<&[TokenId]> = sents.iter().map(Vec::as_slice).collect();
    let a = ae.logits(&refs, None).unwrap();
    let b = ae.logits(&refs, None).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.bit_eq(y)));
    for (s, batched) in refs.iter().zip(&a) {
        let alone = &ae.logits(&[s], None).unwrap()[0];
        let worst = alone
            .data()
            .iter()
            .zip(batched.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f32::max);
        assert!(worst < 1e-5, "{worst}");
    }
}

#[test]
fn checkpoint_round_trip_keeps_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let ae = model(16, 1, Multiplier::Finite(4), 25, 7);
    save_checkpoint(&ae, &path).unwrap();
    let back: Autoencoder<f32> = load_checkpoint(&path).unwrap();
    assert_eq!(back.config(), ae.config());
    let ids: Vec<TokenId> = vec![2, 5, 6, 7, 3];
    assert!(ae.logits(&[&ids], None).unwrap()[0].bit_eq(&back.logits(&[&ids], None).unwrap()[0]));
}

#[test]
fn invalid_inputs_are_rejected() {
    let ae = model(8, 1, Multiplier::Finite(2), 20, 0);
    let long: Vec<TokenId> = vec![5; 25];
    assert!(matches!(
        ae.logits(&[&long], None),
        Err(ModelError::SequenceTooLong { len: 25, max: 24 })
    ));
    assert!(matches!(
        ae.logits(&[&[2, 99, 3]], None),
        Err(ModelError::TokenOutOfRange { id: 99, .. })
    ));
    assert!(ae.logits(&[&[]], None).is_err());
    let mut bad = ModelConfig::new(10, 1, Multiplier::Inf, 20);
    bad.n_heads = 3;
    assert!(matches!(
        Autoencoder::<f32>::init(bad, 0),
        Err(ModelError::InvalidConfig(_))
    ));
}
