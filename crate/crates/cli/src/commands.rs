//! One function per subcommand. Each writes under its own directory in the
//! run directory and returns a JSON summary for the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use emg2text::adaptor::{build_adaptor, InputMode};
use emg2text::corpus::{generate_synthetic_corpus, load_corpus, save_corpus, split_folds, CorpusManifest, Fold, MANIFEST_FILE};
use emg2text::decode_eval::{
    evaluate_split, summarize_folds, train_pid_probe, write_metrics_csv, write_predictions, EvalItem, Hypothesis,
    MetricRow, PidItem, SplitReport, Transcriber,
};
use emg2text::lm::{build_lm, load_lm, pretrain_lm, save_lm, TinyLm, Vocabulary};
use emg2text::numerics::Tensor;
use emg2text::signal::{load_features, save_features};
use emg2text::train::{
    data_efficiency_sweep, default_suite, featurize_corpus, load_system, run_ablation, save_system, write_ablation_table,
    write_curve_csv, write_history_csv, Experiment, FeatureCache,
};
use emg2text::{Error, Result};

use crate::config::RunConfig;

pub const CORPUS_DIR: &str = "corpus";
pub const FEATURES_DIR: &str = "features";
pub const LM_DIR: &str = "lm";
pub const TRAIN_DIR: &str = "train";
pub const EVAL_DIR: &str = "eval";
pub const ABLATE_DIR: &str = "ablate";
pub const SWEEP_DIR: &str = "sweep";
pub const PID_DIR: &str = "pid";

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io { path: path.to_path_buf(), source: e }
}

/// Creates an empty output directory. An existing one is replaced only with
/// `force`.
pub fn fresh_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !force {
            return Err(Error::Config(format!("{} already exists; pass --force to overwrite", dir.display())));
        }
        fs::remove_dir_all(dir).map_err(io(dir))?;
    }
    fs::create_dir_all(dir).map_err(io(dir))
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n").map_err(io(path))
}

fn require_corpus(cfg: &RunConfig) -> Result<CorpusManifest> {
    let dir = cfg.run_dir().join(CORPUS_DIR);
    if !dir.join(MANIFEST_FILE).exists() {
        return Err(Error::MissingPrerequisite {
            artifact: format!("corpus at {}", dir.display()),
            command: "emg2text gen".into(),
        });
    }
    load_corpus(&dir)
}

fn folds(cfg: &RunConfig, manifest: &CorpusManifest) -> Result<Vec<Fold>> {
    split_folds(manifest, cfg.split.ratios, cfg.split.folds, cfg.seed_for("split"))
}

/// Features from the `featurize` output when present, otherwise computed in
/// memory. `None` in raw mode.
fn feature_cache(cfg: &RunConfig, manifest: &CorpusManifest) -> Result<Option<FeatureCache>> {
    if cfg.features.mode != InputMode::Features {
        return Ok(None);
    }
    let dir = cfg.run_dir().join(FEATURES_DIR);
    if !dir.exists() {
        return featurize_corpus(manifest, &cfg.features.frames).map(Some);
    }
    let mut cache = FeatureCache::new();
    for u in &manifest.utterances {
        let (f, spec) = load_features(&dir, u.id())?;
        if spec != cfg.features.frames {
            return Err(Error::Config(format!(
                "{} was computed with different frame settings; rerun `emg2text featurize --force`",
                dir.display()
            )));
        }
        cache.insert(u.id().to_string(), f);
    }
    Ok(Some(cache))
}

fn require_lm(cfg: &RunConfig, vocab: &Vocabulary) -> Result<TinyLm<f32>> {
    let dir = cfg.run_dir().join(LM_DIR);
    if !dir.join(emg2text::checkpoint::MANIFEST_FILE).exists() {
        return Err(Error::MissingPrerequisite {
            artifact: format!("pretrained LM checkpoint at {}", dir.display()),
            command: "emg2text pretrain-lm".into(),
        });
    }
    let (lm, v, template) = load_lm(&dir)?;
    if v != *vocab || template != cfg.lm.template || lm.config != cfg.lm.model {
        return Err(Error::Config(format!(
            "{} was built for a different vocabulary, template or lm.model; rerun `emg2text pretrain-lm --force`",
            dir.display()
        )));
    }
    Ok(lm)
}

pub fn gen(cfg: &RunConfig, force: bool) -> Result<Value> {
    let dir = cfg.run_dir().join(CORPUS_DIR);
    fresh_dir(&dir, force)?;
    let manifest = generate_synthetic_corpus(&cfg.corpus, cfg.seed_for("corpus"))?;
    save_corpus(&manifest, &dir)?;
    Ok(json!({
        "utterances": manifest.len(),
        "speakers": manifest.speakers.len(),
        "vocabulary": manifest.vocabulary.len(),
        "minutes": manifest.total_minutes,
    }))
}

pub fn featurize(cfg: &RunConfig, force: bool) -> Result<Value> {
    if cfg.features.mode != InputMode::Features {
        return Err(Error::Config("featurize needs features.mode = \"features\"".into()));
    }
    let manifest = require_corpus(cfg)?;
    let dir = cfg.run_dir().join(FEATURES_DIR);
    fresh_dir(&dir, force)?;
    let cache = featurize_corpus(&manifest, &cfg.features.frames)?;
    for (id, f) in &cache {
        save_features(&dir, id, f, &cfg.features.frames)?;
    }
    let frames: usize = cache.values().map(|f| f.len()).sum();
    Ok(json!({ "utterances": cache.len(), "frames": frames }))
}

pub fn pretrain(cfg: &RunConfig, force: bool) -> Result<Value> {
    let manifest = require_corpus(cfg)?;
    let fold = folds(cfg, &manifest)?.remove(0);
    let dir = cfg.run_dir().join(LM_DIR);
    fresh_dir(&dir, force)?;
    let vocab = Vocabulary::new(&manifest.vocabulary)?;
    let text = |ids: &[String]| manifest.select(ids).iter().map(|u| u.transcript.clone()).collect::<Vec<_>>();
    let template = &cfg.lm.template;
    let mut lm = build_lm::<f32>(&cfg.lm.model, vocab.size(), template.reserved_tokens().len(), cfg.seed_for("lm"))?;
    let report = pretrain_lm(
        &mut lm,
        &vocab,
        template,
        &text(&fold.train),
        &text(&fold.val),
        &cfg.lm.pretrain,
        cfg.seed_for("lm-pretrain"),
    )?;
    let meta = serde_json::to_value(&report)?;
    save_lm(&dir, &lm, &vocab, template, &meta)?;
    Ok(json!({
        "initial_heldout": report.initial_heldout,
        "final_heldout": report.final_heldout,
        "steps": report.steps,
        "parameters": lm.params.count(false),
    }))
}

struct Loaded {
    manifest: CorpusManifest,
    folds: Vec<Fold>,
    cache: Option<FeatureCache>,
    vocab: Vocabulary,
    lm: TinyLm<f32>,
}

fn load_all(cfg: &RunConfig) -> Result<Loaded> {
    let manifest = require_corpus(cfg)?;
    let vocab = Vocabulary::new(&manifest.vocabulary)?;
    let lm = require_lm(cfg, &vocab)?;
    let folds = folds(cfg, &manifest)?;
    let cache = feature_cache(cfg, &manifest)?;
    Ok(Loaded { manifest, folds, cache, vocab, lm })
}

pub fn train(cfg: &RunConfig, force: bool) -> Result<Value> {
    let d = load_all(cfg)?;
    let dir = cfg.run_dir().join(TRAIN_DIR);
    fresh_dir(&dir, force)?;
    let train = cfg.train_config();
    let exp = Experiment {
        manifest: &d.manifest,
        lm: &d.lm,
        vocab: &d.vocab,
        template: &cfg.lm.template,
        input: &cfg.features,
        cache: d.cache.as_ref(),
        decode: &cfg.decode,
        train: &train,
    };
    let variant = cfg.variant();
    let mut rows = Vec::new();
    let mut tests = Vec::new();
    let mut per_fold = Vec::new();
    for (i, fold) in d.folds.iter().enumerate() {
        log::info!("training fold {i}");
        let run = exp.run_fold(&variant, fold)?;
        let o = &run.outcome;
        let meta = json!({
            "fold": i,
            "best_epoch": o.best_epoch,
            "best_val_loss": o.best_val_loss,
            "epochs_run": o.epochs_run,
            "steps": o.steps,
        });
        save_system(&dir.join(format!("fold{i}")), &run.system, &meta)?;
        write_history_csv(&dir.join(format!("history_fold{i}.csv")), &format!("{}/fold{i}", cfg.run_id), &o.history)?;
        write_predictions(&dir.join(format!("predictions_fold{i}_test.jsonl")), &run.test.records)?;
        for (split, r) in [("val", &run.val), ("test", &run.test)] {
            rows.push(MetricRow { fold: i, split: split.into(), wer: r.wer, n_words: r.n_words, n_errors: r.n_errors });
        }
        per_fold.push(json!({
            "fold": i,
            "test_wer": run.test.wer,
            "val_wer": run.val.wer,
            "best_epoch": o.best_epoch,
            "untrained_val_loss": o.untrained_val_loss,
            "best_val_loss": o.best_val_loss,
            "trainable_params": run.system.trainable_params(),
        }));
        tests.push(run.test);
    }
    write_metrics_csv(&dir.join("metrics.csv"), &rows)?;
    let (mean, std) = summarize_folds(&tests);
    let summary = json!({ "test_wer_mean": mean, "test_wer_std": std, "folds": per_fold });
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Reference-free baselines for checking the evaluation path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Baseline {
    /// Returns the reference transcript.
    Oracle,
    /// Returns nothing.
    Silent,
}

impl Transcriber for Baseline {
    fn transcribe(&self, item: &EvalItem) -> Result<Hypothesis> {
        let text = match self {
            Baseline::Oracle => item.reference.clone(),
            Baseline::Silent => String::new(),
        };
        Ok(Hypothesis { text, log_prob: 0.0 })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    fn name(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }

    fn ids(self, fold: &Fold) -> &[String] {
        match self {
            SplitName::Train => &fold.train,
            SplitName::Val => &fold.val,
            SplitName::Test => &fold.test,
        }
    }
}

pub struct EvalArgs {
    pub checkpoint: Option<PathBuf>,
    pub baseline: Option<Baseline>,
    pub split: SplitName,
    pub fold: usize,
}

pub fn eval(cfg: &RunConfig, args: &EvalArgs, force: bool) -> Result<Value> {
    let manifest = require_corpus(cfg)?;
    let all = folds(cfg, &manifest)?;
    let fold = all
        .get(args.fold)
        .ok_or_else(|| Error::Config(format!("fold {} does not exist ({} configured)", args.fold, all.len())))?;
    let ids = args.split.ids(fold);
    let dir = cfg.run_dir().join(EVAL_DIR);
    let (report, source): (SplitReport, String) = match args.baseline {
        Some(b) => {
            let items: Vec<EvalItem> = manifest
                .select(ids)
                .iter()
                .map(|u| EvalItem { utterance_id: u.id().into(), reference: u.transcript.clone(), features: Tensor::zeros(&[1, 1]) })
                .collect();
            fresh_dir(&dir, force)?;
            (evaluate_split(&b, &items)?, format!("baseline:{b:?}").to_lowercase())
        }
        None => {
            let ck = args.checkpoint.clone().unwrap_or_else(|| cfg.run_dir().join(TRAIN_DIR).join(format!("fold{}", args.fold)));
            if !ck.join(emg2text::checkpoint::MANIFEST_FILE).exists() {
                return Err(Error::MissingPrerequisite {
                    artifact: format!("trained checkpoint at {}", ck.display()),
                    command: "emg2text train".into(),
                });
            }
            let system = load_system(&ck)?;
            let cache = feature_cache(cfg, &manifest)?;
            let items = manifest
                .select(ids)
                .iter()
                .map(|u| {
                    Ok(EvalItem {
                        utterance_id: u.id().into(),
                        reference: u.transcript.clone(),
                        features: system.spec.norm.input(u, cache.as_ref())?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            fresh_dir(&dir, force)?;
            (evaluate_split(&system, &items)?, ck.display().to_string())
        }
    };
    let split = args.split.name();
    write_predictions(&dir.join("predictions.jsonl"), &report.records)?;
    let row = MetricRow { fold: args.fold, split: split.into(), wer: report.wer, n_words: report.n_words, n_errors: report.n_errors };
    write_metrics_csv(&dir.join("metrics.csv"), &[row])?;
    Ok(json!({
        "source": source,
        "fold": args.fold,
        "split": split,
        "wer": report.wer,
        "n_words": report.n_words,
        "n_errors": report.n_errors,
    }))
}

pub fn ablate(cfg: &RunConfig, force: bool) -> Result<Value> {
    let d = load_all(cfg)?;
    let dir = cfg.run_dir().join(ABLATE_DIR);
    fresh_dir(&dir, force)?;
    let train = cfg.train_config();
    let exp = Experiment {
        manifest: &d.manifest,
        lm: &d.lm,
        vocab: &d.vocab,
        template: &cfg.lm.template,
        input: &cfg.features,
        cache: d.cache.as_ref(),
        decode: &cfg.decode,
        train: &train,
    };
    let suite = cfg.ablation.variants.clone().unwrap_or_else(|| default_suite(&cfg.adaptor));
    let rows = run_ablation(&exp, &suite, &d.folds)?;
    write_ablation_table(&dir, "ablation", &rows)?;
    let failed = rows.iter().filter(|r| r.failure.is_some()).count();
    Ok(json!({ "variants": rows.len(), "failed": failed, "rows": serde_json::to_value(&rows)? }))
}

pub fn sweep(cfg: &RunConfig, force: bool) -> Result<Value> {
    let d = load_all(cfg)?;
    let dir = cfg.run_dir().join(SWEEP_DIR);
    fresh_dir(&dir, force)?;
    let train = cfg.train_config();
    let exp = Experiment {
        manifest: &d.manifest,
        lm: &d.lm,
        vocab: &d.vocab,
        template: &cfg.lm.template,
        input: &cfg.features,
        cache: d.cache.as_ref(),
        decode: &cfg.decode,
        train: &train,
    };
    let points = data_efficiency_sweep(&exp, &cfg.variant(), &cfg.sweep.minutes, &d.folds)?;
    write_curve_csv(&dir.join("curve.csv"), &points)?;
    Ok(json!({ "points": serde_json::to_value(&points)? }))
}

pub fn pid(cfg: &RunConfig, force: bool) -> Result<Value> {
    let manifest = require_corpus(cfg)?;
    let vocab = Vocabulary::new(&manifest.vocabulary)?;
    let lm = require_lm(cfg, &vocab)?;
    let dir = cfg.run_dir().join(PID_DIR);
    fresh_dir(&dir, force)?;
    let corpus = generate_synthetic_corpus(&cfg.pid.corpus, cfg.seed_for("pid-corpus"))?;
    let cache = match cfg.features.mode {
        InputMode::Features => Some(featurize_corpus(&corpus, &cfg.features.frames)?),
        InputMode::Raw => None,
    };
    // Unsupervised input statistics over the whole pilot corpus.
    let utts: Vec<_> = corpus.utterances.iter().collect();
    let norm = cfg.features.fit(&utts, cache.as_ref())?;
    let speaker_index: BTreeMap<&str, usize> = corpus.speakers.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let items = corpus
        .utterances
        .iter()
        .map(|u| Ok(PidItem { features: norm.input(u, cache.as_ref())?, speaker: speaker_index[u.recording.speaker_id.as_str()] }))
        .collect::<Result<Vec<_>>>()?;
    let adaptor = build_adaptor::<f32>(&cfg.adaptor, cfg.seed_for("pid-adaptor"))?;
    let report = train_pid_probe(&adaptor, &lm, &items, &cfg.pid.probe, cfg.seed_for("pid"))?;
    let v = serde_json::to_value(&report)?;
    write_json(&dir.join("report.json"), &v)?;
    Ok(v)
}
