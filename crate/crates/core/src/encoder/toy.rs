use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Encoder, EncoderBackend, EncoderError, Tokenizer, WhitespaceTokenizer, DEFAULT_MAX_TOKENS};
use crate::textprep::MarkerSet;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Hash-projection encoder: pooled = tanh(mean of per-token unit vectors).
///
/// A token's vector is drawn from a ChaCha stream seeded with the FNV-1a hash
/// of the token, so it is the same on every machine. When trainable, touched
/// token vectors become parameters stored in `tuned`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ToyEncoder {
    backend: EncoderBackend,
    markers: MarkerSet,
    tuned: BTreeMap<String, Vec<f64>>,
    #[serde(skip)]
    grads: BTreeMap<String, Vec<f64>>,
    #[serde(skip)]
    calls: AtomicUsize,
    #[serde(skip)]
    tokenizer: WhitespaceTokenizer,
}

impl Clone for ToyEncoder {
    fn clone(&self) -> Self {
        ToyEncoder {
            backend: self.backend.clone(),
            markers: self.markers.clone(),
            tuned: self.tuned.clone(),
            grads: self.grads.clone(),
            calls: AtomicUsize::new(self.calls()),
            tokenizer: WhitespaceTokenizer,
        }
    }
}

impl PartialEq for ToyEncoder {
    fn eq(&self, other: &Self) -> bool {
        self.backend == other.backend && self.markers == other.markers && self.tuned == other.tuned
    }
}

impl ToyEncoder {
    /// Frozen toy encoder of width `dim`.
    pub fn new(dim: usize) -> Self {
        ToyEncoder {
            backend: EncoderBackend { name: "toy".into(), dim, max_tokens: DEFAULT_MAX_TOKENS, trainable: false },
            markers: MarkerSet::default(),
            tuned: BTreeMap::new(),
            grads: BTreeMap::new(),
            calls: AtomicUsize::new(0),
            tokenizer: WhitespaceTokenizer,
        }
    }

    pub fn trainable(mut self, trainable: bool) -> Self {
        self.backend.trainable = trainable;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: usize) -> Self {
        self.backend.max_tokens = max_tokens;
        self
    }

    /// Number of `encode_rendered` invocations so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn tuned_tokens(&self) -> usize {
        self.tuned.len()
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        if let Some(v) = self.tuned.get(token) {
            return v.clone();
        }
        hash_vector(token, self.backend.dim)
    }

    /// Mutable parameter vector for `token`, materialized from its hash vector.
    pub fn token_param_mut(&mut self, token: &str) -> &mut Vec<f64> {
        let dim = self.backend.dim;
        self.tuned.entry(token.to_string()).or_insert_with(|| hash_vector(token, dim))
    }

    pub fn token_grad(&self, token: &str) -> Option<&[f64]> {
        self.grads.get(token).map(Vec::as_slice)
    }

    fn mean_vector<'a>(&self, rendered: &'a str) -> (Vec<&'a str>, Vec<f64>) {
        let tokens: Vec<&str> = rendered.split_whitespace().collect();
        let mut mean = vec![0.0; self.backend.dim];
        for t in &tokens {
            for (m, v) in mean.iter_mut().zip(self.token_vector(t)) {
                *m += v;
            }
        }
        if !tokens.is_empty() {
            let n = tokens.len() as f64;
            mean.iter_mut().for_each(|m| *m /= n);
        }
        (tokens, mean)
    }
}

fn hash_vector(token: &str, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(token.as_bytes()));
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v;
    }
    v.into_iter().map(|x| x / norm).collect()
}

impl Encoder for ToyEncoder {
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
        let base = format!("{}-{}", self.backend.name, self.backend.dim);
        if self.tuned.is_empty() {
            return base;
        }
        let mut bytes = Vec::new();
        for (t, v) in &self.tuned {
            bytes.extend_from_slice(t.as_bytes());
            bytes.push(0);
            for x in v {
                bytes.extend_from_slice(&x.to_bits().to_le_bytes());
            }
        }
        format!("{base}-{:016x}", fnv1a64(&bytes))
    }

    fn encode_rendered(&self, rendered: &str) -> Result<Vec<f64>, EncoderError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let (_, mean) = self.mean_vector(rendered);
        Ok(mean.into_iter().map(f64::tanh).collect())
    }

    fn backward(&mut self, rendered: &str, grad_pooled: &[f64]) -> Result<(), EncoderError> {
        if !self.backend.trainable {
            return Err(EncoderError::NotTrainable(self.backend.name.clone()));
        }
        let (tokens, mean) = self.mean_vector(rendered);
        if tokens.is_empty() {
            return Ok(());
        }
        let n = tokens.len() as f64;
        let dmean: Vec<f64> = grad_pooled
            .iter()
            .zip(&mean)
            .map(|(g, m)| {
                let p = m.tanh();
                g * (1.0 - p * p) / n
            })
            .collect();
        let tokens: Vec<String> = tokens.into_iter().map(str::to_string).collect();
        let dim = self.backend.dim;
        for t in tokens {
            self.token_param_mut(&t);
            let g = self.grads.entry(t).or_insert_with(|| vec![0.0; dim]);
            for (gi, d) in g.iter_mut().zip(&dmean) {
                *gi += d;
            }
        }
        Ok(())
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &[f64])) {
        let zeros = vec![0.0; self.backend.dim];
        for (tok, values) in self.tuned.iter_mut() {
            let g = self.grads.get(tok).map_or(zeros.as_slice(), Vec::as_slice);
            f(&format!("token:{tok}"), values, g);
        }
    }

    fn zero_grad(&mut self) {
        self.grads.clear();
    }
}
