//! Sentence-pair encoders producing one pooled vector per input.
//!
//! An [`Encoder`] turns a rendered pair (see
//! [`render_encoder_input`](crate::textprep::render_encoder_input)) into a
//! vector of width [`EncoderBackend::dim`]. Two implementations ship here:
//!
//! * [`ToyEncoder`]: a deterministic hash-projection encoder. Every
//!   whitespace token seeds a pseudo-random unit vector; the pooled output is
//!   `tanh` of their mean. It needs no weights and can be fine-tuned, which
//!   makes the whole pipeline testable.
//! * [`PretrainedAdapter`]: declares a named pre-trained model (for example
//!   `roberta-large`, width 1024) and serves pooled vectors computed outside
//!   this crate through the [`EmbeddingCache`].
//!
//! Pooled vectors are single precision. [`encode_pair`] and [`batch_encode`]
//! both round through `f32`, so a cache hit is bit-identical to a fresh
//! computation.

mod cache;
mod pretrained;
mod toy;
mod truncate;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textprep::{render_encoder_input, MarkerSet, SequencePair};

pub use cache::{cache_key, CacheError, CacheKey, EmbeddingCache, CACHE_MAGIC, CACHE_VERSION};
pub use pretrained::{known_dim, PretrainedAdapter, Pooling};
pub use toy::{fnv1a64, ToyEncoder};
pub use truncate::{truncate_pair, Tokenizer, WhitespaceTokenizer};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderBackend {
    pub name: String,
    pub dim: usize,
    pub max_tokens: usize,
    pub trainable: bool,
}

pub const DEFAULT_MAX_TOKENS: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledVector {
    pub values: Vec<f32>,
    pub post_id: String,
}

impl PooledVector {
    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|v| f64::from(*v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncoderError {
    #[error("encoder backend {name} is unavailable: {reason}")]
    BackendUnavailable { name: String, reason: String },
    #[error("encoder {0} is frozen")]
    NotTrainable(String),
    #[error("encoder {name} returned width {got}, declared {expected}")]
    WidthMismatch { name: String, expected: usize, got: usize },
    #[error("encoder {0} produced a non-finite value")]
    NonFinite(String),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

/// A sentence-pair encoder.
///
/// Frozen use needs only [`Encoder::encode_rendered`]. Trainable encoders also
/// implement the fine-tuning hook: [`Encoder::backward`] accumulates gradients
/// for one input and [`Encoder::visit_params`] exposes parameters with their
/// gradients to the optimizer.
pub trait Encoder: Send + Sync {
    fn backend(&self) -> &EncoderBackend;

    fn markers(&self) -> &MarkerSet;

    fn tokenizer(&self) -> &dyn Tokenizer;

    /// Identity used in cache keys. Must change whenever the encoder's
    /// parameters change.
    fn cache_id(&self) -> String;

    fn encode_rendered(&self, rendered: &str) -> Result<Vec<f64>, EncoderError>;

    fn backward(&mut self, _rendered: &str, _grad_pooled: &[f64]) -> Result<(), EncoderError> {
        Err(EncoderError::NotTrainable(self.backend().name.clone()))
    }

    /// Calls `f(name, values, grads)` for every trainable parameter block.
    fn visit_params(&mut self, _f: &mut dyn FnMut(&str, &mut [f64], &[f64])) {}

    fn zero_grad(&mut self) {}
}

/// Truncates to the backend budget and renders with the backend markers.
pub fn prepare_input(encoder: &dyn Encoder, pair: &SequencePair) -> String {
    let b = encoder.backend();
    let fitted = truncate_pair(pair, encoder.tokenizer(), b.max_tokens, encoder.markers());
    render_encoder_input(&fitted, encoder.markers())
}

fn check(encoder: &dyn Encoder, v: Vec<f64>) -> Result<Vec<f32>, EncoderError> {
    let b = encoder.backend();
    if v.len() != b.dim {
        return Err(EncoderError::WidthMismatch { name: b.name.clone(), expected: b.dim, got: v.len() });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(EncoderError::NonFinite(b.name.clone()));
    }
    Ok(v.into_iter().map(|x| x as f32).collect())
}

pub fn encode_pair(encoder: &dyn Encoder, pair: &SequencePair) -> Result<PooledVector, EncoderError> {
    let rendered = prepare_input(encoder, pair);
    let values = check(encoder, encoder.encode_rendered(&rendered)?)?;
    Ok(PooledVector { values, post_id: pair.post_id.clone() })
}

/// Encodes `pairs` in order, reading and filling `cache` when given.
pub fn batch_encode(
    encoder: &dyn Encoder,
    pairs: &[SequencePair],
    cache: Option<&EmbeddingCache>,
) -> Result<Vec<PooledVector>, EncoderError> {
    let id = encoder.cache_id();
    let rendered: Vec<String> = pairs.par_iter().map(|p| prepare_input(encoder, p)).collect();
    let keys: Vec<CacheKey> = rendered.iter().map(|r| cache_key(&id, r)).collect();
    let cached: Vec<Option<Vec<f32>>> = match cache {
        Some(c) => keys.iter().map(|k| c.get(k)).collect(),
        None => vec![None; pairs.len()],
    };
    let fresh: Vec<Option<Vec<f32>>> = rendered
        .par_iter()
        .zip(&cached)
        .map(|(r, hit)| match hit {
            Some(_) => Ok(None),
            None => check(encoder, encoder.encode_rendered(r)?).map(Some),
        })
        .collect::<Result<_, EncoderError>>()?;
    let mut out = Vec::with_capacity(pairs.len());
    for (((pair, key), hit), new) in pairs.iter().zip(&keys).zip(cached).zip(fresh) {
        let values = match (hit, new) {
            (Some(v), _) => v,
            (None, Some(v)) => {
                if let Some(c) = cache {
                    c.insert(*key, &v)?;
                }
                v
            }
            (None, None) => unreachable!("every miss is computed"),
        };
        out.push(PooledVector { values, post_id: pair.post_id.clone() });
    }
    if let Some(c) = cache {
        c.flush()?;
    }
    Ok(out)
}

/// Serializable choice of encoder.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnyEncoder {
    Toy(ToyEncoder),
    Pretrained(PretrainedAdapter),
}

impl AnyEncoder {
    pub fn as_dyn(&self) -> &dyn Encoder {
        match self {
            AnyEncoder::Toy(e) => e,
            AnyEncoder::Pretrained(e) => e,
        }
    }

    pub fn as_dyn_mut(&mut self) -> &mut dyn Encoder {
        match self {
            AnyEncoder::Toy(e) => e,
            AnyEncoder::Pretrained(e) => e,
        }
    }
}

impl Encoder for AnyEncoder {
    fn backend(&self) -> &EncoderBackend {
        self.as_dyn().backend()
    }
    fn markers(&self) -> &MarkerSet {
        self.as_dyn().markers()
    }
    fn tokenizer(&self) -> &dyn Tokenizer {
        self.as_dyn().tokenizer()
    }
    fn cache_id(&self) -> String {
        self.as_dyn().cache_id()
    }
    fn encode_rendered(&self, rendered: &str) -> Result<Vec<f64>, EncoderError> {
        self.as_dyn().encode_rendered(rendered)
    }
    fn backward(&mut self, rendered: &str, grad_pooled: &[f64]) -> Result<(), EncoderError> {
        self.as_dyn_mut().backward(rendered, grad_pooled)
    }
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &[f64])) {
        self.as_dyn_mut().visit_params(f)
    }
    fn zero_grad(&mut self) {
        self.as_dyn_mut().zero_grad()
    }
}
