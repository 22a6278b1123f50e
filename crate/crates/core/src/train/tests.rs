use super::*;
use crate::adaptor::{AdaptorConfig, Backbone};
use crate::corpus::{generate_synthetic_corpus, split_folds, CorpusConfig, CorpusManifest, Fold};
use crate::decode_eval::DecodeConfig;
use crate::lm::{build_lm, pretrain_lm, LoraConfig, PretrainConfig, PromptTemplate, TinyLm, TinyLmConfig, Vocabulary};
use crate::objective::LossSpec;

struct Setup {
    manifest: CorpusManifest,
    fold: Fold,
    cache: FeatureCache,
    input: InputConfig,
    vocab: Vocabulary,
    template: PromptTemplate,
    lm: TinyLm<f32>,
    adaptor: AdaptorConfig,
}

fn setup() -> Setup {
    let corpus = CorpusConfig { vocab_size: 6, n_utterances: 30, channels: 2, words_per_utterance_mean: 2.0, ..CorpusConfig::default() };
    let manifest = generate_synthetic_corpus(&corpus, 3).unwrap();
    let fold = split_folds(&manifest, (0.6, 0.2, 0.2), 1, 3).unwrap().remove(0);
    let input = InputConfig::default();
    let cache = featurize_corpus(&manifest, &input.frames).unwrap();
    let vocab = Vocabulary::new(&manifest.vocabulary).unwrap();
    let template = PromptTemplate::default();
    let lm_cfg = TinyLmConfig { embed_dim: 16, layers: 1, heads: 2, ff_dim: 32, max_len: 96, head_init_gain: 1.0, ..TinyLmConfig::default() };
    let mut lm = build_lm(&lm_cfg, vocab.size(), template.reserved_tokens().len(), 1).unwrap();
    let text: Vec<String> = manifest.select(&fold.train).iter().map(|u| u.transcript.clone()).collect();
    let pre = PretrainConfig { epochs: 4, extra_transcripts: 200, ..PretrainConfig::default() };
    pretrain_lm(&mut lm, &vocab, &template, &text, &[], &pre, 1).unwrap();
    let adaptor = AdaptorConfig {
        input_dim: input.input_dim(2),
        inner_dim: 16,
        backbone: Backbone::NoneFc,
        backbone_hidden: 8,
        output_dim: 16,
        ..AdaptorConfig::default()
    };
    Setup { manifest, fold, cache, input, vocab, template, lm, adaptor }
}

fn train_cfg(epochs: usize) -> TrainConfig {
    TrainConfig { lr_max: 1e-2, batch_size: 4, max_epochs: epochs, patience: 1000, val_wer_every: 1000, ..TrainConfig::default() }
}

impl Setup {
    fn data(&self) -> FoldData {
        prepare_fold(&self.manifest, &self.fold, &self.input, Some(&self.cache), &self.vocab).unwrap()
    }

    fn system(&self, data: &FoldData, loss: &LossSpec, lora: Option<LoraConfig>) -> System {
        System::new(
            &self.adaptor,
            self.lm.clone(),
            lora,
            loss,
            &DecodeConfig { beam_width: 2, ..DecodeConfig::default() },
            &self.template,
            &self.vocab,
            data.norm.clone(),
            0,
        )
        .unwrap()
    }

    fn experiment<'a>(&'a self, decode: &'a DecodeConfig, train: &'a TrainConfig) -> Experiment<'a> {
        Experiment {
            manifest: &self.manifest,
            lm: &self.lm,
            vocab: &self.vocab,
            template: &self.template,
            input: &self.input,
            cache: Some(&self.cache),
            decode,
            train,
        }
    }
}

#[test]
fn step_count_matches_batches() {
    assert_eq!(steps_per_run(10, 4, 3), 9);
    assert_eq!(steps_per_run(8, 4, 1), 2);
    assert_eq!(steps_per_run(1, 8, 5), 5);
    let s = setup();
    let data = s.data();
    for b in [1, 3, 7, 100] {
        let mut sys = s.system(&data, &LossSpec::default(), None);
        let out = train_run(&mut sys, &data, &TrainConfig { batch_size: b, ..train_cfg(2) }).unwrap();
        assert_eq!(out.steps, 2 * data.train.len().div_ceil(b));
        assert_eq!(out.epochs_run, 2);
    }
}

#[test]
fn training_is_deterministic_and_lowers_loss() {
    let s = setup();
    let data = s.data();
    let run = || {
        let mut sys = s.system(&data, &LossSpec::default(), None);
        let out = train_run(&mut sys, &data, &train_cfg(20)).unwrap();
        (sys, out)
    };
    let (a, oa) = run();
    let (b, ob) = run();
    assert!(a.adaptor.params.values_bit_equal(&b.adaptor.params));
    assert_eq!(oa, ob);
    let train: Vec<f64> = oa.history.iter().filter(|r| r.split == "train").map(|r| r.loss).collect();
    assert!(train.last().unwrap() < &(0.8 * train[0]), "{train:?}");
    assert!(oa.best_val_loss < oa.untrained_val_loss);
    assert!(a.lm.params.values_bit_equal(&s.lm.params));
}

#[test]
fn target_wer_stops_early() {
    let s = setup();
    let data = s.data();
    let mut sys = s.system(&data, &LossSpec::default(), None);
    let cfg = TrainConfig { val_wer_every: 1, target_val_wer: Some(10.0), ..train_cfg(50) };
    let out = train_run(&mut sys, &data, &cfg).unwrap();
    assert_eq!(out.epochs_run, 1);
    assert!(out.history.iter().any(|r| r.wer.is_some()));
}

#[test]
fn lora_trains_adapters_only() {
    let s = setup();
    let data = s.data();
    let lora = LoraConfig { rank: 1, alpha: 2.0, last_layers: 1, targets: vec!["q".into(), "v".into()] };
    let mut sys = s.system(&data, &LossSpec::default(), Some(lora));
    let before = sys.lm.params.clone();
    // Validate on the training split so that a trained epoch is selected.
    let data = FoldData { val: data.train.clone(), ..data };
    let out = train_run(&mut sys, &data, &train_cfg(3)).unwrap();
    assert!(out.best_epoch > 0);
    let mut changed = 0;
    for ((_, p), (_, q)) in before.iter().zip(sys.lm.params.iter()) {
        if p.trainable {
            changed += (p.value != q.value) as usize;
        } else {
            assert_eq!(p.value, q.value, "{}", p.name);
        }
    }
    assert!(changed > 0);
}

#[test]
fn ctc_system_trains() {
    let s = setup();
    let data = s.data();
    let mut sys = s.system(&data, &LossSpec::ctc(), None);
    assert!(sys.ctc.is_some());
    let out = train_run(&mut sys, &data, &train_cfg(3)).unwrap();
    assert!(out.best_val_loss.is_finite());
    assert!(out.best_val_loss <= out.untrained_val_loss);
    let report = evaluate_examples(&sys, &data.test).unwrap();
    assert_eq!(report.records.len(), data.test.len());
}

#[test]
fn checkpoint_reload_reproduces_evaluation() {
    let s = setup();
    let data = s.data();
    for loss in [LossSpec::default(), LossSpec::ctc()] {
        let mut sys = s.system(&data, &loss, None);
        train_run(&mut sys, &data, &train_cfg(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_system(dir.path(), &sys, &serde_json::json!({"epoch": 2})).unwrap();
        let back = load_system(dir.path()).unwrap();
        assert_eq!(back.spec, sys.spec);
        for ((_, a), (_, b)) in sys.groups().iter().zip(back.groups().iter()) {
            assert!(a.values_bit_equal(b));
        }
        let r1 = evaluate_examples(&sys, &data.test).unwrap();
        let r2 = evaluate_examples(&back, &data.test).unwrap();
        assert_eq!(r1, r2);
    }
}

#[test]
fn history_csv_format() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.csv");
    let h = vec![
        EpochRecord { epoch: 0, split: "val".into(), loss: 2.0, wer: None },
        EpochRecord { epoch: 1, split: "val".into(), loss: 1.5, wer: Some(0.25) },
    ];
    write_history_csv(&path, "r1", &h).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, "run_id,epoch,split,loss,wer\nr1,0,val,2.000000,\nr1,1,val,1.500000,0.250000\n");
}

#[test]
fn suite_covers_comparisons() {
    let base = AdaptorConfig::default();
    let suite = default_suite(&base);
    assert!(suite.len() >= 6);
    for v in &suite {
        v.adaptor.validate().unwrap();
        assert_eq!(v.adaptor.downsample_factor(), base.downsample_factor(), "{}", v.name);
    }
    let names: Vec<&str> = suite.iter().map(|v| v.name.as_str()).collect();
    let mut unique = names.clone();
    unique.dedup();
    assert_eq!(unique.len(), names.len());
    assert!(suite.iter().any(|v| v.loss.kind == crate::objective::LossKind::Ctc));
    let raw = default_suite(&AdaptorConfig::raw(8, 64));
    assert!(raw.iter().all(|v| v.adaptor.downsample_factor() == 48));
}

#[test]
fn ablation_records_failures_and_writes_tables() {
    let s = setup();
    let decode = DecodeConfig { beam_width: 1, ..DecodeConfig::default() };
    let train = train_cfg(2);
    let exp = s.experiment(&decode, &train);
    let good = Variant { name: "fc".into(), adaptor: s.adaptor.clone(), loss: LossSpec::default(), lora: None };
    let bad = Variant { name: "wide".into(), adaptor: AdaptorConfig { output_dim: 32, ..s.adaptor.clone() }, ..good.clone() };
    let rows = run_ablation(&exp, &[good, bad], std::slice::from_ref(&s.fold)).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].failure.is_none());
    assert!(rows[0].trainable_params > 0 && rows[0].wer_mean.is_finite());
    assert_eq!(rows[0].wer_std, 0.0);
    assert!(rows[1].failure.as_deref().unwrap().starts_with("ParameterError"), "{:?}", rows[1].failure);
    let dir = tempfile::tempdir().unwrap();
    write_ablation_table(dir.path(), "ablation", &rows).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("fc,") && lines[1].ends_with(",ok"));
    assert!(lines[2].contains("failed: ParameterError"));
    let txt = std::fs::read_to_string(dir.path().join("ablation.txt")).unwrap();
    assert!(txt.contains("failed") && txt.contains('±'));
    assert!(run_ablation(&exp, &[], &[]).is_err());
}

#[test]
fn sweep_clamps_and_validates_budgets() {
    let s = setup();
    let decode = DecodeConfig { beam_width: 1, ..DecodeConfig::default() };
    let train = train_cfg(1);
    let exp = s.experiment(&decode, &train);
    let v = Variant { name: "fc".into(), adaptor: s.adaptor.clone(), loss: LossSpec::default(), lora: None };
    let folds = std::slice::from_ref(&s.fold);
    assert!(data_efficiency_sweep(&exp, &v, &[0.2, 0.1], folds).is_err());
    assert!(data_efficiency_sweep(&exp, &v, &[0.0], folds).is_err());
    let pts = data_efficiency_sweep(&exp, &v, &[0.05, 1000.0], folds).unwrap();
    assert_eq!(pts.len(), 2);
    assert!(pts[0].train_utterances < pts[1].train_utterances);
    assert_eq!(pts[1].train_utterances, s.fold.train.len() as f64);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curve.csv");
    write_curve_csv(&path, &pts).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("minutes,train_minutes,train_utterances,wer_mean,wer_std\n0.05,"));
}
