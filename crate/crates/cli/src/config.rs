//! The run configuration: every module's settings under one file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use emg2text::adaptor::AdaptorConfig;
use emg2text::corpus::CorpusConfig;
use emg2text::decode_eval::{DecodeConfig, PidConfig};
use emg2text::lm::{LoraConfig, PretrainConfig, PromptTemplate, TinyLmConfig};
use emg2text::objective::LossSpec;
use emg2text::rng::derive_seed;
use emg2text::train::{InputConfig, TrainConfig, Variant};
use emg2text::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSection {
    pub model: TinyLmConfig,
    pub pretrain: PretrainConfig,
    pub template: PromptTemplate,
    /// Low-rank adapters on the frozen LM during adaptor training.
    pub lora: Option<LoraConfig>,
}

impl Default for LmSection {
    fn default() -> Self {
        Self {
            model: TinyLmConfig::default(),
            pretrain: PretrainConfig::default(),
            template: PromptTemplate::default(),
            lora: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Train, validation and test proportions.
    pub ratios: (f64, f64, f64),
    pub folds: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { ratios: (0.8, 0.1, 0.1), folds: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Variants to compare; the built-in suite when absent.
    pub variants: Option<Vec<Variant>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Training-time budgets in minutes, ascending.
    pub minutes: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { minutes: vec![3.0, 6.0, 12.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidSection {
    /// The multi-speaker corpus generated for the pilot.
    pub corpus: CorpusConfig,
    pub probe: PidConfig,
}

impl Default for PidSection {
    fn default() -> Self {
        Self { corpus: CorpusConfig { n_utterances: 1000, n_speakers: 4, ..CorpusConfig::default() }, probe: PidConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    /// Outputs go to `<output_dir>/<run_id>/`.
    pub output_dir: PathBuf,
    /// Every component seed derives from this one.
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub features: InputConfig,
    pub split: SplitConfig,
    pub adaptor: AdaptorConfig,
    pub lm: LmSection,
    pub loss: LossSpec,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub ablation: AblationConfig,
    pub sweep: SweepConfig,
    pub pid: PidSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_id: "default".into(),
            output_dir: PathBuf::from("runs"),
            seed: 0,
            corpus: CorpusConfig::default(),
            features: InputConfig::default(),
            split: SplitConfig::default(),
            adaptor: AdaptorConfig::default(),
            lm: LmSection::default(),
            loss: LossSpec::default(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            ablation: AblationConfig::default(),
            sweep: SweepConfig::default(),
            pid: PidSection::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Defaults, then the file, then the flags.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Io { path: p.to_path_buf(), source: e })?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(o) = &overrides.output_dir {
            cfg.output_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad_id = self.run_id.is_empty() || self.run_id.contains(['/', '\\']) || self.run_id.starts_with('.');
        if bad_id {
            return Err(Error::Config(format!("run_id `{}` must be a plain directory name", self.run_id)));
        }
        self.corpus.validate()?;
        self.adaptor.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.decode.validate()?;
        self.lm.model.validate()?;
        if self.adaptor.input_mode != self.features.mode {
            return Err(Error::Config("adaptor.input_mode must equal features.mode".into()));
        }
        let want = self.features.input_dim(self.corpus.channels);
        if self.adaptor.input_dim != want {
            return Err(Error::Config(format!(
                "adaptor.input_dim is {} but {} channels in {:?} mode give {want}",
                self.adaptor.input_dim, self.corpus.channels, self.features.mode
            )));
        }
        if self.adaptor.output_dim != self.lm.model.embed_dim {
            return Err(Error::Config(format!(
                "adaptor.output_dim {} must equal lm.model.embed_dim {}",
                self.adaptor.output_dim, self.lm.model.embed_dim
            )));
        }
        if self.pid.corpus.channels != self.corpus.channels {
            return Err(Error::Config("pid.corpus.channels must equal corpus.channels".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_id)
    }

    /// Seed of one component.
    pub fn seed_for(&self, component: &str) -> u64 {
        derive_seed(self.seed, component)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed_for("train"), ..self.train.clone() }
    }

    /// The adaptor, objective and adapters being trained.
    pub fn variant(&self) -> Variant {
        Variant { name: "main".into(), adaptor: self.adaptor.clone(), loss: self.loss.clone(), lora: self.lm.lora.clone() }
    }
}
