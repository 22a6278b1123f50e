use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn small_cfg() -> TinyLmConfig {
    TinyLmConfig { embed_dim: 16, layers: 2, heads: 2, ff_dim: 32, max_len: 64, ..TinyLmConfig::default() }
}

fn random(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn causality_holds_at_every_position() {
    let lm = build_lm::<f64>(&small_cfg(), 10, 0, 1).unwrap();
    let x = random(12, 16, 2);
    let base = lm.lm_forward(&x).unwrap();
    for t in 0..11 {
        let mut y = x.clone();
        for v in &mut y.data_mut()[(t + 1) * 16..] {
            *v += 0.5;
        }
        let out = lm.lm_forward(&y).unwrap();
        for r in 0..=t {
            assert_eq!(out.row(r), base.row(r), "row {r} changed when perturbing after {t}");
        }
        assert_ne!(out.row(t + 1), base.row(t + 1));
    }
}

#[test]
fn single_row_and_overlength() {
    let lm = build_lm::<f64>(&small_cfg(), 10, 0, 1).unwrap();
    assert_eq!(lm.lm_forward(&random(1, 16, 0)).unwrap().shape(), &[1, 10]);
    assert!(matches!(lm.lm_forward(&random(65, 16, 0)), Err(Error::TooLong { limit: 64, .. })));
}

#[test]
fn seeded_forward_is_bit_identical() {
    let a = build_lm::<f32>(&TinyLmConfig::default(), 71, 9, 4).unwrap();
    let b = build_lm::<f32>(&TinyLmConfig::default(), 71, 9, 4).unwrap();
    let x = random(20, 64, 3).cast::<f32>();
    let ya = a.lm_forward(&x).unwrap();
    let yb = b.lm_forward(&x).unwrap();
    assert!(ya.data().iter().zip(yb.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn session_matches_full_forward() {
    let lm = build_lm::<f64>(&small_cfg(), 10, 3, 7).unwrap();
    let prefix = random(6, 16, 8);
    let tokens = [4usize, 7, 1];
    let (mut st, first) = lm.start(&prefix).unwrap();
    let mut rows: Vec<Vec<f64>> = (0..6).map(|r| prefix.row(r).to_vec()).collect();
    let full = lm.lm_forward(&prefix).unwrap();
    for (a, b) in first.iter().zip(full.row(5)) {
        assert!((a - b).abs() < 1e-10);
    }
    for &t in &tokens {
        let step = lm.advance_token(&mut st, t).unwrap();
        rows.push(lm.embedding_rows(&[t]).unwrap().row(0).to_vec());
        let full = lm.lm_forward(&Tensor::from_rows(&rows).unwrap()).unwrap();
        for (a, b) in step.iter().zip(full.row(rows.len() - 1)) {
            assert!((a - b).abs() < 1e-10);
        }
    }
    assert_eq!(st.len(), 9);
}

fn template_3_8() -> PromptTemplate {
    PromptTemplate { p1_text: "unvoiced emg :".into(), p2_text: "a b c d e f g h".into() }
}

#[test]
fn assemble_example_lengths() {
    let t = template_3_8();
    let lm = build_lm::<f64>(&small_cfg(), 10, t.reserved_tokens().len(), 1).unwrap();
    let mut g = Graph::new();
    let e = g.input(random(5, 16, 1), false);
    let a = assemble_input(&mut g, &lm, &t, e, Some(&[4, 5, 6, 7])).unwrap();
    assert_eq!(a.rows, 21);
    assert_eq!(g.value(a.input).rows(), 21);
    assert_eq!(a.mask.iter().filter(|&&m| m).count(), 5);
    assert_eq!(a.targets, vec![4, 5, 6, 7, EOS]);
    assert!(matches!(assemble_input(&mut g, &lm, &t, e, Some(&[])), Err(Error::Empty(_))));
    let inf = assemble_input(&mut g, &lm, &t, e, None).unwrap();
    assert_eq!(inf.rows, 3 + 5 + 8 + 1);
    assert!(inf.mask.iter().all(|m| !m));
    let bad = g.input(random(5, 8, 1), false);
    assert!(matches!(assemble_input(&mut g, &lm, &t, bad, None), Err(Error::Shape { .. })));
}

proptest! {
    #[test]
    fn assemble_arithmetic(t_hat in 1usize..30, len in 1usize..8) {
        let t = PromptTemplate::default();
        let lm = build_lm::<f32>(&small_cfg(), 10, t.reserved_tokens().len(), 1).unwrap();
        let mut g = Graph::new();
        let e = g.input(Tensor::zeros(&[t_hat, 16]), false);
        let target = vec![4usize; len];
        let a = assemble_input(&mut g, &lm, &t, e, Some(&target)).unwrap();
        prop_assert_eq!(a.rows, 3 + t_hat + 9 + 1 + len);
        prop_assert_eq!(a.mask.iter().filter(|&&m| m).count(), len + 1);
        prop_assert_eq!(a.bos_pos, 3 + t_hat + 9);
        let prefix = assemble_prefix(&lm, &t, g.value(e)).unwrap();
        prop_assert_eq!(prefix.rows(), 3 + t_hat + 9 + 1);
    }
}

#[test]
fn lora_zero_delta_and_counts() {
    let base = build_lm::<f64>(&TinyLmConfig::default(), 71, 9, 2).unwrap();
    let mut tuned = base.clone();
    tuned.apply_lora(&LoraConfig { rank: 2, alpha: 4.0, last_layers: 1, targets: vec!["q".into()] }, 0).unwrap();
    assert_eq!(tuned.params.count(true), 256);
    let x = random(10, 64, 5);
    assert_eq!(base.lm_forward(&x).unwrap(), tuned.lm_forward(&x).unwrap());

    let mut default = base.clone();
    default.apply_lora(&LoraConfig::default(), 0).unwrap();
    let frac = default.trainable_fraction();
    assert!((0.001..=0.002).contains(&frac), "{frac}");

    let mut bad = base.clone();
    assert!(matches!(
        bad.apply_lora(&LoraConfig { rank: 65, ..LoraConfig::default() }, 0),
        Err(Error::Param { .. })
    ));
}

#[test]
fn initial_loss_is_near_uniform() {
    let lm = build_lm::<f32>(&TinyLmConfig::default(), 71, 9, 3).unwrap();
    let seqs: Vec<Vec<usize>> = (0..20).map(|i| (0..4).map(|j| 4 + (i * 7 + j * 13) % 67).collect()).collect();
    let loss = heldout_loss(&lm, &seqs).unwrap();
    let uniform = (71f64).ln();
    assert!((loss - uniform).abs() / uniform < 0.05, "{loss}");
}

#[test]
fn pretraining_learns_and_freezes() {
    let words: Vec<String> = ["yes", "no", "stop", "go", "wait"].iter().map(|s| s.to_string()).collect();
    let vocab = Vocabulary::new(&words).unwrap();
    let template = PromptTemplate::default();
    let mut lm = build_lm::<f32>(&small_cfg(), vocab.size(), template.reserved_tokens().len(), 0).unwrap();
    // Deterministic successor language: yes -> no -> stop -> go -> wait.
    let text: Vec<String> = (0..40)
        .map(|i| (0..3).map(|j| words[(i + j) % 5].as_str()).collect::<Vec<_>>().join(" "))
        .collect();
    let cfg = PretrainConfig { epochs: 15, batch_size: 8, lr: 1e-2, extra_transcripts: 0, ..PretrainConfig::default() };
    let report = pretrain_lm(&mut lm, &vocab, &template, &text[..30], &text[30..], &cfg, 1).unwrap();
    assert!(report.final_heldout < 0.5 * report.initial_heldout, "{report:?}");
    assert!(lm.is_frozen());
    assert!(pretrain_lm(&mut lm, &vocab, &template, &[], &[], &cfg, 1).is_err());
}

#[test]
fn bigram_transcripts_follow_observed_pairs() {
    let seqs = vec![vec![4, 5, 6], vec![5, 7], vec![]];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = bigram_transcripts(&seqs, 200, &mut rng);
    assert_eq!(out.len(), 200);
    let pairs = [(4, 5), (5, 6), (5, 7)];
    for s in &out {
        assert!(!s.is_empty() && s.len() <= 3);
        assert!(s[0] == 4 || s[0] == 5);
        assert!(s.windows(2).all(|w| pairs.contains(&(w[0], w[1]))));
    }
    assert!(bigram_transcripts(&[], 5, &mut rng).is_empty());
}

#[test]
fn lm_checkpoint_round_trip() {
    let words: Vec<String> = ["yes", "no"].iter().map(|s| s.to_string()).collect();
    let vocab = Vocabulary::new(&words).unwrap();
    let t = PromptTemplate::default();
    let mut lm = build_lm::<f32>(&small_cfg(), vocab.size(), t.reserved_tokens().len(), 5).unwrap();
    lm.freeze();
    let dir = tempfile::tempdir().unwrap();
    save_lm(dir.path(), &lm, &vocab, &t, &serde_json::json!({})).unwrap();
    let (back, v2, t2) = load_lm(dir.path()).unwrap();
    assert!(back.params.values_bit_equal(&lm.params));
    assert!(back.is_frozen());
    assert_eq!((v2, t2), (vocab, t));
}
