use std::collections::{BTreeMap, HashMap};
use std::convert::Infallible;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rumour_stance::corpus::from_canonical_jsonl;
use rumour_stance::encoder::{cache_key, prepare_input, AnyEncoder, EmbeddingCache, Encoder, PretrainedAdapter, ToyEncoder};
use rumour_stance::eval::{error_report, Classifier};
use rumour_stance::feature_model::default_cost_weights;
use rumour_stance::features::TfidfConfig;
use rumour_stance::fusion::FusionError;
use rumour_stance::textprep::{build_pairs, normalize_corpus};
use rumour_stance::{Corpus, CostWeights, EvalReport, Label, SequencePair, Split};
use serde::{Deserialize, Serialize};

use crate::config::{CostWeightMode, EncoderKind, ExperimentConfig};
use crate::error::CliError;

pub fn split_path(cfg: &ExperimentConfig, split: Split) -> Result<&Path, CliError> {
    let p = match split {
        Split::Train => &cfg.data.train,
        Split::Dev => &cfg.data.dev,
        Split::Test => &cfg.data.test,
    };
    p.as_deref().ok_or_else(|| CliError::Config(format!("data.{split} is not set in the config")))
}

/// Loads a canonical JSONL split, normalizing texts when configured.
pub fn load_split(cfg: &ExperimentConfig, split: Split) -> Result<Corpus, CliError> {
    let path = split_path(cfg, split)?;
    if !path.is_file() {
        return Err(CliError::Config(format!("{split} split {} does not exist", path.display())));
    }
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let corpus = from_canonical_jsonl(BufReader::new(file))
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if corpus.split != split {
        return Err(CliError::Config(format!(
            "{} holds the {} split, but data.{split} expects {split}",
            path.display(),
            corpus.split
        )));
    }
    Ok(if cfg.data.normalize { normalize_corpus(&corpus) } else { corpus })
}

pub fn pairs_of(corpus: &Corpus) -> Vec<SequencePair> {
    build_pairs(corpus)
}

pub fn is_labeled(corpus: &Corpus) -> bool {
    corpus.posts().all(|(_, p)| p.label.is_some())
}

pub fn cost_weights(cfg: &ExperimentConfig, train: &Corpus) -> Result<CostWeights, CliError> {
    match cfg.cost_weights.mode {
        CostWeightMode::Explicit => {
            let v = cfg.cost_weights.values.clone().unwrap_or_default();
            CostWeights::try_from(v).map_err(|e| CliError::Config(format!("cost_weights.values: {e}")))
        }
        CostWeightMode::Auto => {
            let dist = train.class_distribution().map_err(CliError::input)?;
            default_cost_weights(&dist).map_err(|e| CliError::Config(format!("cannot derive cost weights: {e}")))
        }
    }
}

pub fn tfidf_config(cfg: &ExperimentConfig) -> TfidfConfig {
    TfidfConfig { min_df: cfg.features.min_df, ..Default::default() }
}

pub fn open_cache(cfg: &ExperimentConfig) -> Result<Option<Arc<EmbeddingCache>>, CliError> {
    match &cfg.encoder.cache {
        None => Ok(None),
        Some(p) => EmbeddingCache::open(p).map(|c| Some(Arc::new(c))).map_err(|e| CliError::io(p, e)),
    }
}

/// A fresh encoder as described by the config. Pretrained adapters get the
/// shared cache attached.
pub fn build_encoder(cfg: &ExperimentConfig, cache: Option<&Arc<EmbeddingCache>>) -> Result<AnyEncoder, CliError> {
    let e = &cfg.encoder;
    let trainable = cfg.encoder_trainable();
    match e.kind {
        EncoderKind::Toy => {
            let dim = e.dim.expect("validated");
            Ok(AnyEncoder::Toy(ToyEncoder::new(dim).trainable(trainable).with_max_tokens(e.max_tokens)))
        }
        EncoderKind::Pretrained => {
            let name = e.name.as_deref().expect("validated");
            let mut a = match (e.dim, PretrainedAdapter::named(name)) {
                (Some(d), _) => PretrainedAdapter::new(name, d),
                (None, Some(a)) => a,
                (None, None) => {
                    return Err(CliError::Config(format!("unknown model {name:?}; set encoder.dim explicitly")))
                }
            };
            attach(&mut a, cfg, cache)?;
            a.pooling = e.pooling;
            let b = a.backend_mut();
            b.trainable = trainable;
            b.max_tokens = e.max_tokens;
            Ok(AnyEncoder::Pretrained(a))
        }
    }
}

/// Attaches the configured cache to a pretrained adapter loaded from disk.
pub fn attach_cache(encoder: &mut AnyEncoder, cfg: &ExperimentConfig, cache: Option<&Arc<EmbeddingCache>>) -> Result<(), CliError> {
    if let AnyEncoder::Pretrained(a) = encoder {
        attach(a, cfg, cache)?;
    }
    Ok(())
}

fn attach(a: &mut PretrainedAdapter, cfg: &ExperimentConfig, cache: Option<&Arc<EmbeddingCache>>) -> Result<(), CliError> {
    match cache {
        Some(c) => {
            a.attach_cache(c.clone());
            Ok(())
        }
        None if cfg.encoder.kind == EncoderKind::Pretrained => Err(CliError::Config(
            "pretrained encoders read pooled vectors from encoder.cache; set it to the file written by the export script"
                .into(),
        )),
        None => Ok(()),
    }
}

/// One line of the request file read by the embedding exporter.
#[derive(Debug, Serialize, Deserialize)]
pub struct EmbeddingRequest {
    pub key: String,
    pub cache_id: String,
    pub input: String,
}

pub fn requests_path(cache: &Path) -> PathBuf {
    let mut name = cache.file_name().unwrap_or_default().to_os_string();
    name.push(".requests.jsonl");
    cache.with_file_name(name)
}

/// Pre-trained adapters only serve cached vectors. When some inputs are
/// missing, writes them to the request file next to the cache and fails
/// with instructions instead of failing midway through training.
pub fn ensure_cached(encoder: &AnyEncoder, cache: Option<&Arc<EmbeddingCache>>, pairs: &[&[SequencePair]]) -> Result<(), CliError> {
    let (AnyEncoder::Pretrained(_), Some(cache)) = (encoder, cache) else {
        return Ok(());
    };
    let id = encoder.cache_id();
    let mut missing = BTreeMap::new();
    for pair in pairs.iter().flat_map(|p| p.iter()) {
        let input = prepare_input(encoder, pair);
        let key = cache_key(&id, &input);
        if cache.get(&key).is_none() {
            missing.insert(key, input);
        }
    }
    if missing.is_empty() {
        return Ok(());
    }
    let cache_path = cache.path().expect("file-backed cache");
    let req_path = requests_path(cache_path);
    let mut text = String::new();
    for (key, input) in &missing {
        let line = EmbeddingRequest { key: key.to_string(), cache_id: id.clone(), input: input.clone() };
        text.push_str(&serde_json::to_string(&line).expect("request serializes"));
        text.push('\n');
    }
    std::fs::write(&req_path, text).map_err(|e| CliError::io(&req_path, e))?;
    Err(CliError::Config(format!(
        "{} encoder inputs for {id} are missing from {}; wrote them to {}. \
         Fill the cache with scripts/export_embeddings.py and rerun",
        missing.len(),
        cache_path.display(),
        req_path.display()
    )))
}

pub fn fusion_err(e: FusionError) -> CliError {
    match e {
        FusionError::MissingSubmodel { source_kind, what } => CliError::Config(format!(
            "feature source {source_kind} needs a fitted {what}; run `stance train-mlp` with the same config first"
        )),
        FusionError::Encoder(rumour_stance::encoder::EncoderError::Cache(c)) => CliError::Io {
            path: Default::default(),
            message: c.to_string(),
        },
        other => CliError::Config(other.to_string()),
    }
}

/// One line of `predictions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub predicted: Label,
    pub probs: [f64; 4],
}

pub fn predictions(pairs: &[SequencePair], probs: &[[f64; 4]]) -> Vec<Prediction> {
    pairs
        .iter()
        .zip(probs)
        .map(|(p, pr)| Prediction {
            id: p.post_id.clone(),
            predicted: rumour_stance::feature_model::argmax_label(pr),
            probs: *pr,
        })
        .collect()
}

pub fn predictions_jsonl(preds: &[Prediction]) -> String {
    let mut s = String::new();
    for p in preds {
        s.push_str(&serde_json::to_string(p).expect("prediction serializes"));
        s.push('\n');
    }
    s
}

struct Precomputed(HashMap<String, Label>);

impl Classifier for Precomputed {
    type Error = Infallible;

    fn classify(&self, pair: &SequencePair) -> Result<Label, Infallible> {
        Ok(self.0[&pair.post_id])
    }
}

/// Scores stored predictions against a labeled corpus, with exhibits.
pub fn report_from(corpus: &Corpus, preds: &[Prediction], exhibits_per_cell: usize) -> EvalReport {
    let map = preds.iter().map(|p| (p.id.clone(), p.predicted)).collect();
    match error_report(&Precomputed(map), corpus, exhibits_per_cell) {
        Ok(r) => r,
        Err(never) => match never {},
    }
}
