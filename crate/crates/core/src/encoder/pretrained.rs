use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{cache_key, EmbeddingCache, Encoder, EncoderBackend, EncoderError, Tokenizer, WhitespaceTokenizer};
use crate::textprep::MarkerSet;

/// Pooled vector width of the pre-trained models this crate knows by name.
pub fn known_dim(name: &str) -> Option<usize> {
    match name {
        "roberta-base" | "bert-base-uncased" | "bert-base-cased" | "bert-base" => Some(768),
        "roberta-large" | "bert-large-uncased" | "bert-large-cased" | "bert-large" => Some(1024),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// The model's pooler output (dense + tanh over the start token).
    #[default]
    Pooler,
    /// The raw final hidden state of the start token.
    Cls,
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::Pooler => "pooler",
            Pooling::Cls => "cls",
        }
    }
}

fn markers_for(name: &str) -> MarkerSet {
    if name.starts_with("bert") {
        MarkerSet { start: "[CLS]".into(), end: "[SEP]".into(), sep: "[SEP]".into() }
    } else {
        MarkerSet::default()
    }
}

/// A named pre-trained encoder whose forward pass runs outside this crate.
///
/// Vectors are looked up in an attached [`EmbeddingCache`] filled by an
/// external tool using the same rendered inputs and [`Encoder::cache_id`].
/// Any input missing from the cache is reported as
/// [`EncoderError::BackendUnavailable`]. In-process fine-tuning is not
/// available for this backend.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainedAdapter {
    backend: EncoderBackend,
    markers: MarkerSet,
    pub pooling: Pooling,
    #[serde(skip)]
    cache: Option<Arc<EmbeddingCache>>,
    #[serde(skip)]
    tokenizer: WhitespaceTokenizer,
}

impl PretrainedAdapter {
    /// Adapter for a known model name, `None` for unknown names.
    pub fn named(name: &str) -> Option<Self> {
        known_dim(name).map(|dim| Self::new(name, dim))
    }

    /// Adapter for any model with an explicitly declared width.
    pub fn new(name: &str, dim: usize) -> Self {
        PretrainedAdapter {
            backend: EncoderBackend {
                name: name.to_string(),
                dim,
                max_tokens: super::DEFAULT_MAX_TOKENS,
                trainable: false,
            },
            markers: markers_for(name),
            pooling: Pooling::default(),
            cache: None,
            tokenizer: WhitespaceTokenizer,
        }
    }

    pub fn backend_mut(&mut self) -> &mut EncoderBackend {
        &mut self.backend
    }

    pub fn attach_cache(&mut self, cache: Arc<EmbeddingCache>) {
        self.cache = Some(cache);
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }
}

impl Encoder for PretrainedAdapter {
    fn backend(&self) -> &EncoderBackend {
        &self.backend
    }

    fn markers(&self) -> &MarkerSet {
        &self.markers
    }

    fn tokenizer(&self) -> &dyn Tokenizer {
        &self.tokenizer
    }

    fn cache_id(&self) -> String {
        format!("{}/{}", self.backend.name, self.pooling.as_str())
    }

    fn encode_rendered(&self, rendered: &str) -> Result<Vec<f64>, EncoderError> {
        let unavailable = |reason: &str| EncoderError::BackendUnavailable {
            name: self.backend.name.clone(),
            reason: reason.to_string(),
        };
        let cache = self.cache.as_ref().ok_or_else(|| unavailable("no embedding cache attached"))?;
        let hit = cache
            .get(&cache_key(&self.cache_id(), rendered))
            .ok_or_else(|| unavailable("input not present in the embedding cache"))?;
        Ok(hit.into_iter().map(f64::from).collect())
    }

    fn backward(&mut self, _rendered: &str, _grad_pooled: &[f64]) -> Result<(), EncoderError> {
        if !self.backend.trainable {
            return Err(EncoderError::NotTrainable(self.backend.name.clone()));
        }
        Err(EncoderError::BackendUnavailable {
            name: self.backend.name.clone(),
            reason: "fine-tuning runs outside this crate".into(),
        })
    }
}
