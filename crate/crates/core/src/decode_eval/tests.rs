use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::{Error, Result};
use crate::lm::{build_lm, TinyLmConfig, EOS, N_SPECIAL};
use crate::numerics::Tensor;
use crate::rng::derive_seed_indexed;

/// Logits are a seeded function of the token history.
struct TableModel {
    vocab: usize,
    seed: u64,
    peak: Option<Vec<usize>>,
}

impl TableModel {
    fn logits(&self, history: &[usize]) -> Vec<f64> {
        if let Some(path) = &self.peak {
            let want = path.get(history.len()).copied().unwrap_or(EOS);
            return (0..self.vocab).map(|k| if k == want { 50.0 } else { 0.0 }).collect();
        }
        let h = history.iter().fold(self.seed, |acc, &t| derive_seed_indexed(acc, "table", t as u64));
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        (0..self.vocab).map(|_| rng.random_range(-3.0..3.0)).collect()
    }
}

impl StepModel for TableModel {
    type State = Vec<usize>;

    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn advance(&self, state: &mut Vec<usize>, token: usize) -> Result<Vec<f64>> {
        state.push(token);
        Ok(self.logits(state))
    }
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s = z.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
    z.iter().map(|v| v - s).collect()
}

#[test]
fn width_one_equals_greedy_on_random_lms() {
    let cfg = TinyLmConfig { embed_dim: 16, layers: 1, heads: 2, ff_dim: 32, head_init_gain: 3.0, ..TinyLmConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for seed in 0..100 {
        let lm = build_lm::<f32>(&cfg, 9, 0, seed).unwrap();
        let prefix =
            Tensor::new(vec![4, 16], (0..64).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap();
        for constrained in [false, true] {
            let dc = DecodeConfig { beam_width: 1, max_len: 8, length_norm: 0.0, constrained };
            let (state, first) = lm.start(&prefix).unwrap();
            let first: Vec<f64> = first.iter().map(|&v| v as f64).collect();
            let beam = beam_search(&lm, state.clone(), first.clone(), &dc).unwrap();
            let greedy = greedy_decode(&lm, state, first, 8, constrained).unwrap();
            assert_eq!(beam[0].tokens, greedy.tokens, "seed {seed}");
            assert_eq!(beam[0].log_prob, greedy.log_prob);
            assert_eq!(beam[0].truncated, greedy.truncated);
        }
    }
}

#[test]
fn peaked_model_returns_its_sequence() {
    let m = TableModel { vocab: 8, seed: 0, peak: Some(vec![5, 6, 4]) };
    let dc = DecodeConfig { beam_width: 4, max_len: 6, ..DecodeConfig::default() };
    let top = beam_search(&m, vec![], m.logits(&[]), &dc).unwrap().remove(0);
    assert_eq!(top.tokens, vec![5, 6, 4, EOS]);
    assert_eq!(top.words(), &[5, 6, 4]);
    assert!(top.log_prob <= 0.0 && top.log_prob > -1e-9);
    assert!(top.finished && !top.truncated);
}

/// Every sequence of at most `max_len` tokens that is either EOS-terminated
/// or exactly `max_len` long, with its log-probability.
fn enumerate(m: &TableModel, max_len: usize, constrained: bool) -> Vec<(Vec<usize>, f64)> {
    let mut out = Vec::new();
    let mut stack = vec![(Vec::<usize>::new(), 0.0)];
    while let Some((toks, lp)) = stack.pop() {
        let probs = log_softmax(&m.logits(&toks));
        for k in 0..m.vocab {
            if constrained && k != EOS && k < N_SPECIAL {
                continue;
            }
            let mut t = toks.clone();
            t.push(k);
            let l = lp + probs[k];
            if k == EOS || t.len() == max_len {
                out.push((t, l));
            } else {
                stack.push((t, l));
            }
        }
    }
    out
}

#[test]
fn wide_beam_matches_exhaustive_enumeration() {
    for seed in 0..20 {
        // Four words after the specials.
        let m = TableModel { vocab: 8, seed, peak: None };
        let all = enumerate(&m, 3, true);
        let best = all.iter().cloned().fold((vec![], f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
        let dc = DecodeConfig { beam_width: 125, max_len: 3, length_norm: 0.0, constrained: true };
        let hyps = beam_search(&m, vec![], m.logits(&[]), &dc).unwrap();
        assert_eq!(hyps[0].tokens, best.0);
        assert!((hyps[0].log_prob - best.1).abs() < 1e-12);

        let narrow = DecodeConfig { beam_width: 4, ..dc };
        let hyps = beam_search(&m, vec![], m.logits(&[]), &narrow).unwrap();
        for h in &hyps {
            assert!(hyps[0].score(0.0) >= h.score(0.0));
            assert!(h.log_prob <= 0.0);
            let exact = all.iter().find(|(t, _)| *t == h.tokens).unwrap().1;
            assert!((exact - h.log_prob).abs() < 1e-12);
        }
    }
}

#[test]
fn length_norm_changes_ranking_only() {
    let m = TableModel { vocab: 8, seed: 3, peak: None };
    let dc = DecodeConfig { beam_width: 6, max_len: 5, length_norm: 1.0, constrained: true };
    let hyps = beam_search(&m, vec![], m.logits(&[]), &dc).unwrap();
    assert!(hyps.windows(2).all(|w| w[0].score(1.0) >= w[1].score(1.0)));
    assert!(hyps.iter().all(|h| h.tokens.len() <= 5 && (h.tokens.last() == Some(&EOS)) != h.truncated));
}

/// Minimum edit cost over every alignment path, without memoization.
fn brute_alignment(r: &[usize], h: &[usize]) -> usize {
    match (r, h) {
        ([], _) => h.len(),
        (_, []) => r.len(),
        ([a, rr @ ..], [b, hh @ ..]) => {
            let diag = brute_alignment(rr, hh) + usize::from(a != b);
            let del = brute_alignment(rr, h) + 1;
            let ins = brute_alignment(r, hh) + 1;
            diag.min(del).min(ins)
        }
    }
}

fn sequences(alphabet: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut layer = vec![vec![]];
    for _ in 0..max_len {
        layer = layer.iter().flat_map(|p: &Vec<usize>| (0..alphabet).map(move |a| [p.as_slice(), &[a]].concat())).collect();
        out.extend(layer.iter().cloned());
    }
    out
}

#[test]
fn wer_matches_exhaustive_alignment() {
    let all = sequences(3, 4);
    assert_eq!(all.len(), 121);
    for r in &all {
        for h in &all {
            let c = edit_counts(r, h);
            assert_eq!(c.errors(), brute_alignment(r, h), "{r:?} {h:?}");
            assert_eq!(c.deletions + c.substitutions + (r.len() - c.deletions - c.substitutions), r.len());
            assert_eq!(h.len(), r.len() - c.deletions + c.insertions);
            if !r.is_empty() {
                assert_eq!(wer(r, h).unwrap(), c.errors() as f64 / r.len() as f64);
            }
        }
    }
}

#[test]
fn wer_examples() {
    fn s(t: &str) -> Vec<&str> {
        t.split_whitespace().collect()
    }
    assert_eq!(wer(&s("a b c"), &s("a b c")).unwrap(), 0.0);
    assert_eq!(wer(&s("a b c d"), &s("")).unwrap(), 1.0);
    assert_eq!(wer(&s("a b c d"), &s("a c d")).unwrap(), 0.25);
    assert_eq!(wer(&s("a"), &s("b c d")).unwrap(), 3.0);
    assert!(matches!(wer::<&str>(&[], &s("a")), Err(Error::Empty(_))));
}

struct Oracle;

impl Transcriber for Oracle {
    fn transcribe(&self, item: &EvalItem) -> Result<Hypothesis> {
        Ok(Hypothesis { text: item.reference.to_uppercase() + "!", log_prob: 0.0 })
    }
}

struct Silent;

impl Transcriber for Silent {
    fn transcribe(&self, _: &EvalItem) -> Result<Hypothesis> {
        Ok(Hypothesis { text: String::new(), log_prob: -1.0 })
    }
}

fn items() -> Vec<EvalItem> {
    ["yes no", "stop go now", "wait"]
        .iter()
        .enumerate()
        .map(|(i, t)| EvalItem { utterance_id: format!("u{i}"), reference: t.to_string(), features: Tensor::zeros(&[1, 1]) })
        .collect()
}

#[test]
fn evaluate_oracle_and_silent() {
    let r = evaluate_split(&Oracle, &items()).unwrap();
    assert_eq!((r.wer, r.n_words, r.n_errors, r.n_utterances), (0.0, 6, 0, 3));
    assert_eq!(r.records[1].hypothesis, "stop go now");
    let s = evaluate_split(&Silent, &items()).unwrap();
    assert_eq!(s.wer, 1.0);
    assert_eq!(s.mean_utterance_wer, 1.0);
    assert!(matches!(evaluate_split(&Oracle, &[]), Err(Error::Empty(_))));
    let (m, sd) = summarize_folds(&[r.clone(), s.clone()]);
    assert_eq!((m, sd), (0.5, 0.5));
}

#[test]
fn fold_statistics() {
    let (m, s) = mean_std(&[0.4, 0.5, 0.6]);
    assert!((m - 0.5).abs() < 1e-12);
    assert!((s - (0.02f64 / 3.0).sqrt()).abs() < 1e-12);
}

#[test]
fn prediction_and_metric_files() {
    let dir = tempfile::tempdir().unwrap();
    let r = evaluate_split(&Oracle, &items()).unwrap();
    let p = dir.path().join("pred.jsonl");
    write_predictions(&p, &r.records).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["utterance_id", "reference", "hypothesis", "log_prob", "wer"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    let c = dir.path().join("m.csv");
    write_metrics_csv(&c, &[MetricRow { fold: 0, split: "test".into(), wer: r.wer, n_words: 6, n_errors: 0 }]).unwrap();
    assert_eq!(std::fs::read_to_string(&c).unwrap(), "fold,split,wer,n_words,n_errors\n0,test,0.000000,6,0\n");
}

#[test]
fn pool_examples() {
    let one = Tensor::new(vec![1, 3], vec![1.0, -2.0, 3.0]).unwrap();
    assert_eq!(pid_pool(&one).unwrap(), one);
    let two = Tensor::new(vec![2, 2], vec![0.0, 2.0, 2.0, 0.0]).unwrap();
    assert_eq!(pid_pool(&two).unwrap().data(), &[1.0, 1.0]);
}

proptest! {
    #[test]
    fn pool_matches_column_mean_and_is_linear(
        data in prop::collection::vec(-5.0f64..5.0, 12),
        alpha in -3.0f64..3.0,
    ) {
        let z = Tensor::new(vec![4, 3], data.clone()).unwrap();
        let p = pid_pool(&z).unwrap();
        for c in 0..3 {
            let m = (0..4).map(|r| data[r * 3 + c]).sum::<f64>() / 4.0;
            prop_assert!((p.data()[c] - m).abs() < 1e-6);
        }
        let scaled = pid_pool(&z.map(|v| v * alpha)).unwrap();
        for c in 0..3 {
            prop_assert!((scaled.data()[c] - alpha * p.data()[c]).abs() < 1e-9);
        }
    }
}

#[test]
fn pid_needs_two_speakers() {
    use crate::adaptor::{build_adaptor, AdaptorConfig};
    let a = build_adaptor::<f32>(&AdaptorConfig { input_dim: 4, ..AdaptorConfig::default() }, 0).unwrap();
    let lm = build_lm::<f32>(&TinyLmConfig::default(), 10, 0, 0).unwrap();
    let items: Vec<PidItem> = (0..10).map(|_| PidItem { features: Tensor::zeros(&[16, 4]), speaker: 0 }).collect();
    assert!(matches!(train_pid_probe(&a, &lm, &items, &PidConfig::default(), 0), Err(Error::Param { .. })));
}

#[test]
fn pid_separates_offset_speakers_in_both_probe_modes() {
    use crate::adaptor::{build_adaptor, AdaptorConfig};
    let cfg = AdaptorConfig { input_dim: 4, inner_dim: 8, backbone_hidden: 4, output_dim: 8, ..AdaptorConfig::default() };
    let a = build_adaptor::<f32>(&cfg, 0).unwrap();
    let lm_cfg = TinyLmConfig { embed_dim: 8, layers: 1, heads: 2, ff_dim: 8, max_len: 32, ..TinyLmConfig::default() };
    let lm = build_lm::<f32>(&lm_cfg, 10, 0, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let items: Vec<PidItem> = (0..60)
        .map(|i| {
            let speaker = i % 2;
            let shift = if speaker == 0 { 1.0 } else { -1.0 };
            let data = (0..64).map(|k| rng.random_range(-1.0f32..1.0) + if k % 4 == 0 { shift } else { 0.0 }).collect();
            PidItem { features: Tensor::new(vec![16, 4], data).unwrap(), speaker }
        })
        .collect();
    for train_adaptor in [true, false] {
        let pid = PidConfig { hidden: 8, batch_size: 8, train_adaptor, probe_epochs: 30, probe_lr: 1e-2, e2e_epochs: 30, e2e_lr: 1e-2, ..PidConfig::default() };
        let r = train_pid_probe(&a, &lm, &items, &pid, 1).unwrap();
        assert_eq!((r.n_speakers, r.n_train, r.n_test), (2, 48, 12));
        assert!(r.probe_accuracy >= 0.9 && r.e2e_accuracy >= 0.9, "{r:?}");
    }
}
