//! Experiment configuration: one TOML file, overridable key by key.
//!
//! Precedence is `--set key=value` > file > built-in default. Relative paths
//! are resolved against the directory holding the config file (or the working
//! directory when no file is given).

use std::path::{Path, PathBuf};

use rumour_stance::encoder::Pooling;
use rumour_stance::eval::SelectionMetric;
use rumour_stance::features::PairText;
use rumour_stance::fusion::FeatureSourceKind;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub selection_metric: SelectionMetric,
    /// Misclassified examples kept per confusion-matrix cell in reports.
    pub exhibits_per_cell: usize,
    pub data: DataConfig,
    pub features: FeaturesConfig,
    pub mlp: MlpConfig,
    pub ensemble: EnsembleConfig,
    pub encoder: EncoderConfig,
    pub cost_weights: CostWeightsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            output_dir: PathBuf::from("runs/default"),
            seeds: vec![1, 2, 3, 4, 5],
            selection_metric: SelectionMetric::MacroF1,
            exhibits_per_cell: 3,
            data: DataConfig::default(),
            features: FeaturesConfig::default(),
            mlp: MlpConfig::default(),
            ensemble: EnsembleConfig::default(),
            encoder: EncoderConfig::default(),
            cost_weights: CostWeightsConfig::default(),
        }
    }
}

/// Canonical JSONL files, one per split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Replace URLs and user mentions with placeholder tokens before use.
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    pub source: FeatureSourceKind,
    pub text: PairText,
    pub min_df: usize,
    pub pca_components: usize,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        FeaturesConfig {
            source: FeatureSourceKind::FrozenMlpHidden,
            text: PairText::FirstAndSecond,
            min_df: 1,
            pca_components: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub hidden_units: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig { learning_rate: 0.02, epochs: 55, hidden_units: 128, batch_size: 32, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub freeze_mlp: bool,
    pub weight_decay: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig { learning_rate: 2e-6, epochs: 6, batch_size: 4, freeze_mlp: true, weight_decay: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    #[default]
    Toy,
    Pretrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Model name for `pretrained` (for example `roberta-large`).
    pub name: Option<String>,
    /// Required for `toy`; for `pretrained` only needed when the name is not known.
    pub dim: Option<usize>,
    pub max_tokens: usize,
    /// Defaults to true for `toy` and false for `pretrained`.
    pub trainable: Option<bool>,
    pub pooling: Pooling,
    /// Embedding cache file. Required for `pretrained`.
    pub cache: Option<PathBuf>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: EncoderKind::Toy,
            name: None,
            dim: Some(64),
            max_tokens: 512,
            trainable: None,
            pooling: Pooling::Pooler,
            cache: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostWeightMode {
    /// Inverse training-class frequency, rescaled to mean 1.
    #[default]
    Auto,
    Explicit,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeightsConfig {
    pub mode: CostWeightMode,
    pub values: Option<Vec<f64>>,
}

/// Parses `key=value`. The value is read as a TOML value and falls back to a
/// plain string, so `seeds=[1,2]`, `mlp.epochs=3` and `encoder.name=roberta-large` all work.
fn parse_override(s: &str) -> Result<(Vec<String>, toml::Value), CliError> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {s:?} is not of the form key=value")))?;
    let key: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if key.iter().any(String::is_empty) {
        return Err(CliError::Config(format!("override {s:?} has an empty key segment")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key, value))
}

fn set_path(table: &mut toml::Table, key: &[String], value: toml::Value) -> Result<(), CliError> {
    let (last, parents) = key.split_last().expect("keys are non-empty");
    let mut cur = table;
    for seg in parents {
        let entry = cur.entry(seg.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("{} is not a section", key.join("."))))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Reads `path` (if any), applies overrides, resolves paths and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let (mut table, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
                let table = text
                    .parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                (table, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (toml::Table::new(), PathBuf::new()),
        };
        for o in overrides {
            let (key, value) = parse_override(o)?;
            set_path(&mut table, &key, value)?;
        }
        let mut cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string().trim().to_string()))?;
        cfg.resolve_paths(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !base.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for p in [&mut self.data.train, &mut self.data.dev, &mut self.data.test, &mut self.encoder.cache]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds must list at least one seed".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.features.pca_components == 0 {
            return bad("features.pca_components must be at least 1".into());
        }
        match self.encoder.kind {
            EncoderKind::Toy if self.encoder.dim.unwrap_or(0) == 0 => {
                return bad("encoder.dim must be a positive integer for the toy encoder".into())
            }
            EncoderKind::Pretrained if self.encoder.name.is_none() => {
                return bad("encoder.name is required for a pretrained encoder".into())
            }
            _ => {}
        }
        if self.cost_weights.mode == CostWeightMode::Explicit {
            match &self.cost_weights.values {
                Some(v) if v.len() == 4 => {}
                Some(v) => return bad(format!("cost_weights.values must have 4 entries, got {}", v.len())),
                None => return bad("cost_weights.mode = \"explicit\" needs cost_weights.values".into()),
            }
        }
        Ok(())
    }

    pub fn encoder_trainable(&self) -> bool {
        self.encoder.trainable.unwrap_or(self.encoder.kind == EncoderKind::Toy)
    }
}
