use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Registry;
use crate::finetune::{ClassifierHeadSpec, FineTuneConfig, OneCycleSchedule};
use crate::nn::EncoderConfig;
use crate::normalizer::{EmojiTable, NormalizationConfig};
use crate::pretrain::PretrainConfig;

/// Store root when neither `PHSBENCH_HOME` nor `output_dir` is set.
pub const DEFAULT_HOME: &str = "phsbench_home";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizerSettings {
    pub url_placeholder: String,
    pub user_placeholder: String,
    pub char_limit: usize,
    pub strip_retweet: bool,
    /// Replaces the bundled emoji name table.
    pub emoji_table: Option<PathBuf>,
}

impl Default for NormalizerSettings {
    fn default() -> Self {
        let d = NormalizationConfig::default();
        NormalizerSettings {
            url_placeholder: d.url_placeholder,
            user_placeholder: d.user_placeholder,
            char_limit: d.char_limit,
            strip_retweet: d.strip_retweet,
            emoji_table: None,
        }
    }
}

impl NormalizerSettings {
    pub fn build(&self) -> Result<NormalizationConfig, ConfigError> {
        let emoji_table = match &self.emoji_table {
            Some(p) => {
                Arc::new(EmojiTable::load(p).map_err(|e| ConfigError::Invalid(e.to_string()))?)
            }
            None => EmojiTable::bundled(),
        };
        let cfg = NormalizationConfig {
            url_placeholder: self.url_placeholder.clone(),
            user_placeholder: self.user_placeholder.clone(),
            char_limit: self.char_limit,
            emoji_table,
            strip_retweet: self.strip_retweet,
        };
        cfg.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }
}

/// Shape of a freshly initialised encoder (toy runs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSettings {
    pub hidden: usize,
    pub layers: usize,
    pub heads: Option<usize>,
    pub intermediate: Option<usize>,
    pub max_positions: usize,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        EncoderSettings {
            hidden: 64,
            layers: 2,
            heads: None,
            intermediate: None,
            max_positions: 128,
        }
    }
}

impl EncoderSettings {
    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        let mut c = EncoderConfig::small(vocab_size, self.hidden, self.layers, self.max_positions);
        if let Some(h) = self.heads {
            c.heads = h;
        }
        if let Some(i) = self.intermediate {
            c.intermediate = i;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainSection {
    /// JSONL posts (`id`, `text`, optional `platform`).
    pub corpus_path: Option<PathBuf>,
    pub steps: usize,
    /// WordPiece vocabulary file; built from the corpus when absent.
    pub vocab_path: Option<PathBuf>,
    pub vocab_size: usize,
    pub encoder: EncoderSettings,
    #[serde(flatten)]
    pub objective: PretrainConfig,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            corpus_path: None,
            steps: 100,
            vocab_path: None,
            vocab_size: 2000,
            encoder: EncoderSettings::default(),
            objective: PretrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneSection {
    /// Starting weights and vocabulary.
    pub checkpoint: Option<PathBuf>,
    /// Use the checkpoint of an earlier `pretrain` run in the store.
    pub pretrain_run: Option<String>,
    /// Toy runs only: start from a random encoder with a vocabulary built
    /// from each fold's training texts.
    pub allow_random_init: bool,
    pub encoder: EncoderSettings,
    pub vocab_size: usize,
    pub head: ClassifierHeadSpec,
    /// Registry variant per dataset id (e.g. merged label sets).
    pub variants: BTreeMap<String, String>,
    /// Fail when a data file's row count differs from the registry.
    pub strict_counts: bool,
    /// Keep a classifier checkpoint per fold.
    pub save_models: bool,
    #[serde(flatten)]
    pub training: FineTuneConfig,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        FinetuneSection {
            checkpoint: None,
            pretrain_run: None,
            allow_random_init: false,
            encoder: EncoderSettings::default(),
            vocab_size: 2000,
            head: ClassifierHeadSpec::default(),
            variants: BTreeMap::new(),
            strict_counts: false,
            save_models: false,
            training: FineTuneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSettings {
    pub baseline: Option<String>,
    pub model_order: Option<Vec<String>>,
    pub pin: Vec<String>,
}

/// One experiment: which model, which datasets, and every knob of every stage.
///
/// Relative paths resolve against the config file's directory. The section
/// seeds (`pretrain.seed`, `finetune.seed`) are overwritten with values
/// derived from the master `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model_id: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dataset_ids: Vec<String>,
    /// Registry TOML; the bundled registry is used when absent.
    #[serde(default)]
    pub registry_path: Option<PathBuf>,
    /// Root for the bundled registry's relative data paths.
    #[serde(default)]
    pub data_root: Option<PathBuf>,
    /// Store root, unless `PHSBENCH_HOME` is set.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub normalizer: NormalizerSettings,
    #[serde(default)]
    pub pretrain: PretrainSection,
    #[serde(default)]
    pub finetune: FinetuneSection,
    /// One-cycle policy; `total_steps` is computed per fold.
    #[serde(default)]
    pub schedule: OneCycleSchedule,
    #[serde(default)]
    pub report: ReportSettings,
}

impl ExperimentConfig {
    pub fn new(model_id: impl Into<String>) -> Self {
        ExperimentConfig {
            model_id: model_id.into(),
            seed: 0,
            dataset_ids: Vec::new(),
            registry_path: None,
            data_root: None,
            output_dir: None,
            normalizer: NormalizerSettings::default(),
            pretrain: PretrainSection::default(),
            finetune: FinetuneSection::default(),
            schedule: OneCycleSchedule::default(),
            report: ReportSettings::default(),
        }
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let parse = |reason: String| ConfigError::Parse {
            path: base_dir.to_path_buf(),
            reason,
        };
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| parse(e.to_string()))?;
        // Flattened sections swallow unknown keys, so compare against what
        // the parsed config writes back.
        let input: toml::Table = toml::from_str(text).map_err(|e| parse(e.to_string()))?;
        let known = toml::Table::try_from(&cfg).map_err(|e| parse(e.to_string()))?;
        if let Some(key) = unknown_key(&input, &known, "") {
            return Err(parse(format!("unknown field `{key}`")));
        }
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        ExperimentConfig::from_toml(&text, base).map_err(|e| match e {
            ConfigError::Parse { reason, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.registry_path);
        fix(&mut self.data_root);
        fix(&mut self.output_dir);
        fix(&mut self.normalizer.emoji_table);
        fix(&mut self.pretrain.corpus_path);
        fix(&mut self.pretrain.vocab_path);
        fix(&mut self.pretrain.objective.init_checkpoint);
        fix(&mut self.finetune.checkpoint);
    }

    /// Path overrides from the environment:
    /// `PHSBENCH_REGISTRY`, `PHSBENCH_DATA_ROOT`, `PHSBENCH_CORPUS`, `PHSBENCH_CHECKPOINT`.
    pub fn apply_env(&mut self, env: &dyn Fn(&str) -> Option<String>) {
        if let Some(v) = env("PHSBENCH_REGISTRY") {
            self.registry_path = Some(v.into());
        }
        if let Some(v) = env("PHSBENCH_DATA_ROOT") {
            self.data_root = Some(v.into());
        }
        if let Some(v) = env("PHSBENCH_CORPUS") {
            self.pretrain.corpus_path = Some(v.into());
        }
        if let Some(v) = env("PHSBENCH_CHECKPOINT") {
            self.finetune.checkpoint = Some(v.into());
        }
    }

    /// A copy whose section seeds are derived from the master seed.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.pretrain.objective.seed = derive_seed(self.seed, "pretrain", 0);
        c.finetune.training.seed = derive_seed(self.seed, "finetune", 0);
        c
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.model_id.trim().is_empty() {
            return bad("model_id is empty".into());
        }
        self.normalizer.build()?;
        self.pretrain
            .objective
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("pretrain: {e}")))?;
        self.finetune
            .training
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("finetune: {e}")))?;
        let mut probe = self.schedule.clone();
        probe.total_steps = probe.total_steps.max(1);
        probe
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("schedule: {e}")))?;
        for (name, enc) in [
            ("pretrain", &self.pretrain.encoder),
            ("finetune", &self.finetune.encoder),
        ] {
            enc.encoder_config(16)
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("{name}.encoder: {e}")))?;
        }
        if self.finetune.checkpoint.is_some() && self.finetune.pretrain_run.is_some() {
            return bad("set at most one of finetune.checkpoint and finetune.pretrain_run".into());
        }
        Ok(())
    }

    /// Checks that every dataset id (and requested variant) is in `registry`.
    pub fn check_datasets(&self, registry: &Registry) -> Result<(), ConfigError> {
        for id in &self.dataset_ids {
            let d = registry.lookup(id).map_err(|_| {
                ConfigError::Invalid(format!("dataset `{id}` is not in the registry"))
            })?;
            if let Some(v) = self.finetune.variants.get(id) {
                if d.with_variant(v).is_none() {
                    return Err(ConfigError::Invalid(format!(
                        "dataset `{id}` has no variant `{v}`"
                    )));
                }
            }
        }
        for id in self.finetune.variants.keys() {
            if !self.dataset_ids.contains(id) {
                return Err(ConfigError::Invalid(format!(
                    "variant given for unlisted dataset `{id}`"
                )));
            }
        }
        Ok(())
    }

    /// Fully resolved config as JSON with sorted keys.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&value).expect("json value serializes")
    }

    /// SHA-256 of [`ExperimentConfig::canonical_json`], hex encoded.
    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Store root: `PHSBENCH_HOME`, else `output_dir`, else [`DEFAULT_HOME`].
    pub fn store_root(&self, env: &dyn Fn(&str) -> Option<String>) -> PathBuf {
        env("PHSBENCH_HOME")
            .map(PathBuf::from)
            .or_else(|| self.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_HOME))
    }

    pub fn registry(&self, store_root: &Path) -> Result<Registry, crate::corpus::CorpusError> {
        match &self.registry_path {
            Some(p) => Registry::load(p),
            None => Ok(Registry::bundled(
                &self
                    .data_root
                    .clone()
                    .unwrap_or_else(|| store_root.join("data")),
            )),
        }
    }
}

fn unknown_key(input: &toml::Table, known: &toml::Table, prefix: &str) -> Option<String> {
    for (k, v) in input {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match (v, known.get(k)) {
            (_, None) => return Some(path),
            (toml::Value::Table(a), Some(toml::Value::Table(b))) => {
                if let Some(bad) = unknown_key(a, b, &path) {
                    return Some(bad);
                }
            }
            _ => {}
        }
    }
    None
}

/// Seed for `(label, index)` under a master seed: the first eight bytes of
/// SHA-256 over `"{master}:{label}:{index}"`, little endian.
pub fn derive_seed(master: u64, label: &str, index: usize) -> u64 {
    let digest = Sha256::digest(format!("{master}:{label}:{index}").as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOML: &str = r#"
model_id = "toy"
seed = 7
dataset_ids = ["Covid Category"]
registry_path = "reg.toml"

[pretrain]
corpus_path = "posts.jsonl"
steps = 20
mask_rate = 0.2

[finetune]
allow_random_init = true
epochs = 2

[schedule]
max_lr = 1e-3
"#;

    #[test]
    fn parses_and_resolves() {
        let c = ExperimentConfig::from_toml(TOML, Path::new("/cfg")).unwrap();
        assert_eq!(c.registry_path.as_deref(), Some(Path::new("/cfg/reg.toml")));
        assert_eq!(
            c.pretrain.corpus_path.as_deref(),
            Some(Path::new("/cfg/posts.jsonl"))
        );
        assert_eq!(c.pretrain.objective.mask_rate, 0.2);
        assert_eq!(c.finetune.training.epochs, 2);
        assert_eq!(c.schedule.max_lr, 1e-3);
        assert_eq!(c.schedule.div_factor, 25.0);
        c.validate().unwrap();
    }

    #[test]
    fn hash_ignores_key_order() {
        let reordered = r#"
dataset_ids = ["Covid Category"]
seed = 7
registry_path = "reg.toml"
model_id = "toy"

[schedule]
max_lr = 1e-3

[finetune]
epochs = 2
allow_random_init = true

[pretrain]
mask_rate = 0.2
steps = 20
corpus_path = "posts.jsonl"
"#;
        let a = ExperimentConfig::from_toml(TOML, Path::new("/cfg")).unwrap();
        let b = ExperimentConfig::from_toml(reordered, Path::new("/cfg")).unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        let mut c = a.clone();
        c.seed = 8;
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn env_overrides() {
        let mut c = ExperimentConfig::from_toml(TOML, Path::new("/cfg")).unwrap();
        let env = |k: &str| match k {
            "PHSBENCH_CORPUS" => Some("/elsewhere/p.jsonl".to_string()),
            "PHSBENCH_HOME" => Some("/home/x".to_string()),
            _ => None,
        };
        c.apply_env(&env);
        assert_eq!(
            c.pretrain.corpus_path.as_deref(),
            Some(Path::new("/elsewhere/p.jsonl"))
        );
        assert_eq!(c.store_root(&env), PathBuf::from("/home/x"));
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(
            ExperimentConfig::from_toml("model_id = \"x\"\nbogus = 1\n", Path::new(".")).is_err()
        );
        let nested = format!("{TOML}\n[finetune.head]\nhidden_dims = [8]\n");
        assert!(ExperimentConfig::from_toml(&nested, Path::new("/cfg")).is_ok());
        let typo = TOML.replace("epochs = 2", "epoch = 2");
        let err = ExperimentConfig::from_toml(&typo, Path::new("/cfg")).unwrap_err();
        assert!(err.to_string().contains("finetune.epoch"), "{err}");
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(1, "a", 0), derive_seed(1, "a", 0));
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "a", 1));
        assert_ne!(derive_seed(1, "a", 0), derive_seed(2, "a", 0));
    }
}
