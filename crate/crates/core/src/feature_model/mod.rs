//! Single-hidden-layer perceptron over TF-IDF vectors.
//!
//! `hidden = tanh(x·W1 + b1)` and `probs = softmax(hidden·W2 + b2)`. The hidden
//! activation doubles as the feature vector handed to the fusion head, so it is
//! exposed on its own through [`mlp_hidden`].
//!
//! Training is plain mini-batch SGD on the mean cost-weighted cross-entropy.
//! All randomness (initialization and per-epoch shuffles) comes from one
//! ChaCha stream seeded by [`MlpHyperparams::seed`], and examples are put into
//! a canonical order before shuffling, so a run is a pure function of its
//! inputs and seed.

mod loss;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;
use crate::eval::{confusion_matrix, scores};
use crate::features::{PairText, SparseVec, TfidfModel};
use crate::textprep::SequencePair;

pub use loss::{
    argmax_label, batch_weighted_cross_entropy, default_cost_weights, logits_grad, softmax4,
    weighted_cross_entropy, weighted_cross_entropy_logits, CostWeightError, CostWeights, PROB_FLOOR,
};

pub const DEFAULT_HIDDEN_UNITS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpHyperparams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub hidden_units: usize,
    pub batch_size: usize,
    pub activation: Activation,
    pub seed: u64,
    pub cost_weights: CostWeights,
}

impl Default for MlpHyperparams {
    fn default() -> Self {
        MlpHyperparams {
            learning_rate: 0.02,
            epochs: 55,
            hidden_units: DEFAULT_HIDDEN_UNITS,
            batch_size: 32,
            activation: Activation::Tanh,
            seed: 0,
            cost_weights: CostWeights::uniform(),
        }
    }
}

impl MlpHyperparams {
    pub fn validate(&self) -> Result<(), MlpError> {
        let bad = |m: &str| Err(MlpError::InvalidHyperparams(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.hidden_units == 0 {
            return bad("hidden_units must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MlpError {
    #[error("input has width {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("class {0} has no training examples")]
    MissingClass(Label),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub tfidf: TfidfModel,
    pub text: PairText,
    pub hyperparams: MlpHyperparams,
    pub input_dim: usize,
    pub hidden_units: usize,
    /// input_dim × hidden_units, row-major
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// hidden_units × 4, row-major
    pub w2: Vec<f64>,
    pub b2: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpOutput {
    pub hidden: Vec<f64>,
    pub logits: [f64; 4],
    pub probs: [f64; 4],
}

/// Parameter gradients. Rows of `W1` are stored only where the input was nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub w1_rows: BTreeMap<usize, Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: [f64; 4],
}

impl MlpGrads {
    pub fn zeros(model: &MlpModel) -> Self {
        MlpGrads {
            w1_rows: BTreeMap::new(),
            b1: vec![0.0; model.hidden_units],
            w2: vec![0.0; model.hidden_units * 4],
            b2: [0.0; 4],
        }
    }

    /// Dense `W1` gradient, for checks on small models.
    pub fn w1_dense(&self, input_dim: usize, hidden: usize) -> Vec<f64> {
        let mut out = vec![0.0; input_dim * hidden];
        for (row, g) in &self.w1_rows {
            out[row * hidden..(row + 1) * hidden].copy_from_slice(g);
        }
        out
    }
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-a..=a)).collect()
}

impl MlpModel {
    /// Freshly initialized model: uniform ±sqrt(6/(fan_in+fan_out)) weights, zero biases.
    pub fn init(tfidf: TfidfModel, text: PairText, hp: &MlpHyperparams, rng: &mut ChaCha8Rng) -> Self {
        let d = tfidf.dim();
        let h = hp.hidden_units;
        let w1 = xavier(rng, d, h, d * h);
        let w2 = xavier(rng, h, 4, h * 4);
        MlpModel {
            tfidf,
            text,
            hyperparams: hp.clone(),
            input_dim: d,
            hidden_units: h,
            w1,
            b1: vec![0.0; h],
            w2,
            b2: [0.0; 4],
        }
    }

    /// [`MlpModel::init`] with a fresh ChaCha stream seeded by `hp.seed`.
    pub fn init_seeded(tfidf: TfidfModel, text: PairText, hp: &MlpHyperparams) -> Self {
        Self::init(tfidf, text, hp, &mut ChaCha8Rng::seed_from_u64(hp.seed))
    }

    /// TF-IDF vector of a pair, using the text selection the model was trained with.
    pub fn vectorize(&self, pair: &SequencePair) -> SparseVec {
        self.tfidf.transform(&self.text.text_of(pair))
    }

    pub fn forward(&self, x: &SparseVec) -> Result<MlpOutput, MlpError> {
        let hidden = self.hidden(x)?;
        let mut logits = self.b2;
        for (j, hj) in hidden.iter().enumerate() {
            let row = &self.w2[j * 4..j * 4 + 4];
            for k in 0..4 {
                logits[k] += hj * row[k];
            }
        }
        let probs = softmax4(&logits);
        Ok(MlpOutput { hidden, logits, probs })
    }

    pub fn hidden(&self, x: &SparseVec) -> Result<Vec<f64>, MlpError> {
        if x.dim != self.input_dim {
            return Err(MlpError::DimensionMismatch { expected: self.input_dim, got: x.dim });
        }
        let h = self.hidden_units;
        let mut pre = self.b1.clone();
        for (i, v) in x.iter() {
            let row = &self.w1[i * h..(i + 1) * h];
            for (p, w) in pre.iter_mut().zip(row) {
                *p += v * w;
            }
        }
        Ok(pre.into_iter().map(f64::tanh).collect())
    }

    /// Accumulates `dL/dparams` into `grads` given `dL/dlogits` for one example.
    pub fn backward_from_logits(&self, x: &SparseVec, out: &MlpOutput, dlogits: &[f64; 4], grads: &mut MlpGrads) {
        let h = self.hidden_units;
        for k in 0..4 {
            grads.b2[k] += dlogits[k];
        }
        let mut dpre = vec![0.0; h];
        for j in 0..h {
            let row = &self.w2[j * 4..j * 4 + 4];
            let mut dh = 0.0;
            for k in 0..4 {
                grads.w2[j * 4 + k] += out.hidden[j] * dlogits[k];
                dh += row[k] * dlogits[k];
            }
            dpre[j] = dh * (1.0 - out.hidden[j] * out.hidden[j]);
        }
        self.backward_pre(x, &dpre, grads);
    }

    /// Accumulates gradients given `dL/dprobs`, chaining through the softmax.
    pub fn backward_from_probs(&self, x: &SparseVec, out: &MlpOutput, dprobs: &[f64; 4], grads: &mut MlpGrads) {
        let p = &out.probs;
        let dot: f64 = (0..4).map(|k| p[k] * dprobs[k]).sum();
        let dlogits = [0, 1, 2, 3].map(|k| p[k] * (dprobs[k] - dot));
        self.backward_from_logits(x, out, &dlogits, grads);
    }

    /// Accumulates gradients given `dL/dhidden`.
    pub fn backward_from_hidden(&self, x: &SparseVec, out: &MlpOutput, dhidden: &[f64], grads: &mut MlpGrads) {
        let dpre: Vec<f64> = dhidden.iter().zip(&out.hidden).map(|(d, h)| d * (1.0 - h * h)).collect();
        self.backward_pre(x, &dpre, grads);
    }

    fn backward_pre(&self, x: &SparseVec, dpre: &[f64], grads: &mut MlpGrads) {
        let h = self.hidden_units;
        for (b, d) in grads.b1.iter_mut().zip(dpre) {
            *b += d;
        }
        for (i, v) in x.iter() {
            let row = grads.w1_rows.entry(i).or_insert_with(|| vec![0.0; h]);
            for (g, d) in row.iter_mut().zip(dpre) {
                *g += v * d;
            }
        }
    }

    /// `params -= lr * grads`
    pub fn sgd_step(&mut self, grads: &MlpGrads, lr: f64) {
        let h = self.hidden_units;
        for (row, g) in &grads.w1_rows {
            for (w, gi) in self.w1[row * h..(row + 1) * h].iter_mut().zip(g) {
                *w -= lr * gi;
            }
        }
        for (w, g) in self.b1.iter_mut().zip(&grads.b1) {
            *w -= lr * g;
        }
        for (w, g) in self.w2.iter_mut().zip(&grads.w2) {
            *w -= lr * g;
        }
        for k in 0..4 {
            self.b2[k] -= lr * grads.b2[k];
        }
    }

    pub fn predict(&self, x: &SparseVec) -> Result<Label, MlpError> {
        Ok(argmax_label(&self.forward(x)?.probs))
    }

    /// Stable fingerprint of all parameters (bit patterns, in declaration order).
    pub fn param_checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2) {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Runs the network on one TF-IDF vector.
pub fn mlp_forward(model: &MlpModel, x: &SparseVec) -> Result<MlpOutput, MlpError> {
    model.forward(x)
}

/// Hidden-layer activation, identical to `mlp_forward(model, x)?.hidden`.
pub fn mlp_hidden(model: &MlpModel, x: &SparseVec) -> Result<Vec<f64>, MlpError> {
    model.hidden(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledVector {
    pub id: String,
    pub x: SparseVec,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: Option<f64>,
    pub dev_macro_f1: Option<f64>,
}

pub type TrainTrace = Vec<EpochRecord>;

/// Mean weighted cross-entropy of `model` over `data`.
pub fn mean_loss(model: &MlpModel, data: &[LabeledVector], weights: &CostWeights) -> Result<f64, MlpError> {
    let mut total = 0.0;
    for ex in data {
        let out = model.forward(&ex.x)?;
        total += weighted_cross_entropy_logits(&out.logits, ex.label, weights);
    }
    Ok(total / data.len().max(1) as f64)
}

fn canonical_order(a: &LabeledVector, b: &LabeledVector) -> std::cmp::Ordering {
    a.id.cmp(&b.id)
        .then(a.label.cmp(&b.label))
        .then_with(|| a.x.indices.cmp(&b.x.indices))
        .then_with(|| {
            let ka: Vec<u64> = a.x.values.iter().map(|v| v.to_bits()).collect();
            let kb: Vec<u64> = b.x.values.iter().map(|v| v.to_bits()).collect();
            ka.cmp(&kb)
        })
}

/// Trains a fresh MLP for `hp.epochs` epochs and returns the final-epoch model
/// together with the per-epoch loss and dev macro-F1 trace.
pub fn train_mlp(
    train: &[LabeledVector],
    dev: &[LabeledVector],
    tfidf: TfidfModel,
    text: PairText,
    hp: &MlpHyperparams,
) -> Result<(MlpModel, TrainTrace), MlpError> {
    hp.validate()?;
    if train.is_empty() {
        return Err(MlpError::EmptyTrainSet);
    }
    for l in Label::ALL {
        if !train.iter().any(|e| e.label == l) {
            return Err(MlpError::MissingClass(l));
        }
    }
    let d = tfidf.dim();
    if let Some(bad) = train.iter().chain(dev).find(|e| e.x.dim != d) {
        return Err(MlpError::DimensionMismatch { expected: d, got: bad.x.dim });
    }

    let mut order: Vec<&LabeledVector> = train.iter().collect();
    order.sort_by(|a, b| canonical_order(a, b));

    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut model = MlpModel::init(tfidf, text, hp, &mut rng);
    let mut trace = Vec::with_capacity(hp.epochs);
    for epoch in 1..=hp.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(hp.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let mut grads = MlpGrads::zeros(&model);
            for ex in batch {
                let out = model.forward(&ex.x)?;
                let g = logits_grad(&out.probs, ex.label, &hp.cost_weights).map(|v| v * scale);
                model.backward_from_logits(&ex.x, &out, &g, &mut grads);
            }
            model.sgd_step(&grads, hp.learning_rate);
        }
        let train_loss = mean_loss(&model, train, &hp.cost_weights)?;
        if !train_loss.is_finite() {
            return Err(MlpError::NonFiniteLoss { epoch });
        }
        let (dev_loss, dev_macro_f1) = if dev.is_empty() {
            (None, None)
        } else {
            let preds = dev.iter().map(|e| model.predict(&e.x)).collect::<Result<Vec<_>, _>>()?;
            let golds: Vec<Label> = dev.iter().map(|e| e.label).collect();
            let cm = confusion_matrix(&preds, &golds).expect("dev lists are non-empty and aligned");
            (Some(mean_loss(&model, dev, &hp.cost_weights)?), Some(scores(&cm).macro_f1))
        };
        log::debug!("mlp epoch {epoch}: train loss {train_loss:.5} dev macro-F1 {dev_macro_f1:?}");
        trace.push(EpochRecord { epoch, train_loss, dev_loss, dev_macro_f1 });
    }
    Ok((model, trace))
}

/// TF-IDF vectors of labeled pairs. Unlabeled pairs are skipped.
pub fn vectorize_pairs(tfidf: &TfidfModel, text: PairText, pairs: &[SequencePair]) -> Vec<LabeledVector> {
    pairs
        .iter()
        .filter_map(|p| {
            p.label.map(|label| LabeledVector {
                id: p.post_id.clone(),
                x: tfidf.transform(&text.text_of(p)),
                label,
            })
        })
        .collect()
}
