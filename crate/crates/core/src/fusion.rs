//! Encoder-plus-features ensemble head.
//!
//! The head input is the pooled encoder vector followed by a feature vector
//! from a [`FeatureSource`]; one linear layer and a softmax map it to the four
//! stance probabilities. With [`FeatureSource::FrozenMlpHidden`] the features
//! are the 128 hidden activations of an already-trained MLP, so a 768-wide
//! encoder gives a head input of width 896.
//!
//! Training uses AdamW on the mean cost-weighted cross-entropy. Gradients
//! reach the encoder when its backend is trainable and reach the MLP only for
//! [`FeatureSource::JointMlpOutput`].

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;
use crate::encoder::{batch_encode, encode_pair, prepare_input, AnyEncoder, EmbeddingCache, Encoder, EncoderError};
use crate::eval::{confusion_matrix, scores, Classifier};
use crate::feature_model::{
    argmax_label, logits_grad, softmax4, weighted_cross_entropy_logits, CostWeights, EpochRecord, MlpError,
    MlpGrads, MlpModel, MlpOutput, TrainTrace,
};
use crate::features::{PairText, PcaError, PcaModel, SparseVec, TfidfModel};
use crate::optim::AdamW;
use crate::textprep::SequencePair;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("feature source {source_kind} needs a fitted {what}; train it first")]
    MissingSubmodel { source_kind: FeatureSourceKind, what: &'static str },
    #[error("head expects input width {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid ensemble configuration: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("post {0} has no label")]
    Unlabeled(String),
    #[error("training loss became non-finite at epoch {epoch} (last finite loss {last_finite:?})")]
    NonFiniteLoss { epoch: usize, last_finite: Option<f64> },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Pca(#[from] PcaError),
    #[error("model file: {0}")]
    Serde(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSourceKind {
    None,
    RawTfidf,
    PcaTfidf,
    JointMlpOutput,
    #[default]
    FrozenMlpHidden,
    FrozenMlpOutput,
}

impl FeatureSourceKind {
    pub const ALL: [FeatureSourceKind; 6] = [
        FeatureSourceKind::None,
        FeatureSourceKind::RawTfidf,
        FeatureSourceKind::PcaTfidf,
        FeatureSourceKind::JointMlpOutput,
        FeatureSourceKind::FrozenMlpHidden,
        FeatureSourceKind::FrozenMlpOutput,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSourceKind::None => "none",
            FeatureSourceKind::RawTfidf => "raw_tfidf",
            FeatureSourceKind::PcaTfidf => "pca_tfidf",
            FeatureSourceKind::JointMlpOutput => "joint_mlp_output",
            FeatureSourceKind::FrozenMlpHidden => "frozen_mlp_hidden",
            FeatureSourceKind::FrozenMlpOutput => "frozen_mlp_output",
        }
    }

    pub fn uses_mlp(self) -> bool {
        matches!(
            self,
            FeatureSourceKind::JointMlpOutput | FeatureSourceKind::FrozenMlpHidden | FeatureSourceKind::FrozenMlpOutput
        )
    }
}

impl std::fmt::Display for FeatureSourceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FeatureSourceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FeatureSourceKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown feature source {s:?}"))
    }
}

/// Fitted sub-models available for building a [`FeatureSource`].
#[derive(Debug, Clone, Default)]
pub struct SubModels {
    pub tfidf: Option<(TfidfModel, PairText)>,
    pub pca: Option<PcaModel>,
    pub mlp: Option<MlpModel>,
}

/// Where the head's extra features come from, with the fitted models it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureSource {
    None,
    RawTfidf { tfidf: TfidfModel, text: PairText },
    PcaTfidf { tfidf: TfidfModel, text: PairText, pca: PcaModel },
    /// MLP probabilities; the MLP is trained together with the head.
    JointMlpOutput { mlp: MlpModel },
    /// Hidden activations of a trained MLP that is never updated.
    FrozenMlpHidden { mlp: MlpModel },
    /// Probabilities of a trained MLP that is never updated.
    FrozenMlpOutput { mlp: MlpModel },
}

impl FeatureSource {
    pub fn build(kind: FeatureSourceKind, subs: SubModels) -> Result<Self, FusionError> {
        let need_mlp = |mlp: Option<MlpModel>| mlp.ok_or(FusionError::MissingSubmodel { source_kind: kind, what: "MLP" });
        let need_tfidf = |t: Option<(TfidfModel, PairText)>| {
            t.ok_or(FusionError::MissingSubmodel { source_kind: kind, what: "TF-IDF model" })
        };
        Ok(match kind {
            FeatureSourceKind::None => FeatureSource::None,
            FeatureSourceKind::RawTfidf => {
                let (tfidf, text) = need_tfidf(subs.tfidf)?;
                FeatureSource::RawTfidf { tfidf, text }
            }
            FeatureSourceKind::PcaTfidf => {
                let (tfidf, text) = need_tfidf(subs.tfidf)?;
                let pca = subs.pca.ok_or(FusionError::MissingSubmodel { source_kind: kind, what: "PCA model" })?;
                if pca.dim != tfidf.dim() {
                    return Err(FusionError::DimensionMismatch { expected: tfidf.dim(), got: pca.dim });
                }
                FeatureSource::PcaTfidf { tfidf, text, pca }
            }
            FeatureSourceKind::JointMlpOutput => FeatureSource::JointMlpOutput { mlp: need_mlp(subs.mlp)? },
            FeatureSourceKind::FrozenMlpHidden => FeatureSource::FrozenMlpHidden { mlp: need_mlp(subs.mlp)? },
            FeatureSourceKind::FrozenMlpOutput => FeatureSource::FrozenMlpOutput { mlp: need_mlp(subs.mlp)? },
        })
    }

    pub fn kind(&self) -> FeatureSourceKind {
        match self {
            FeatureSource::None => FeatureSourceKind::None,
            FeatureSource::RawTfidf { .. } => FeatureSourceKind::RawTfidf,
            FeatureSource::PcaTfidf { .. } => FeatureSourceKind::PcaTfidf,
            FeatureSource::JointMlpOutput { .. } => FeatureSourceKind::JointMlpOutput,
            FeatureSource::FrozenMlpHidden { .. } => FeatureSourceKind::FrozenMlpHidden,
            FeatureSource::FrozenMlpOutput { .. } => FeatureSourceKind::FrozenMlpOutput,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            FeatureSource::None => 0,
            FeatureSource::RawTfidf { tfidf, .. } => tfidf.dim(),
            FeatureSource::PcaTfidf { pca, .. } => pca.k,
            FeatureSource::JointMlpOutput { .. } | FeatureSource::FrozenMlpOutput { .. } => 4,
            FeatureSource::FrozenMlpHidden { mlp } => mlp.hidden_units,
        }
    }

    pub fn mlp(&self) -> Option<&MlpModel> {
        match self {
            FeatureSource::JointMlpOutput { mlp }
            | FeatureSource::FrozenMlpHidden { mlp }
            | FeatureSource::FrozenMlpOutput { mlp } => Some(mlp),
            _ => None,
        }
    }

    pub fn feature_vector(&self, pair: &SequencePair) -> Result<Vec<f64>, FusionError> {
        Ok(match self {
            FeatureSource::None => Vec::new(),
            FeatureSource::RawTfidf { tfidf, text } => tfidf.transform(&text.text_of(pair)).to_dense(),
            FeatureSource::PcaTfidf { tfidf, text, pca } => pca.transform_sparse(&tfidf.transform(&text.text_of(pair)))?,
            FeatureSource::FrozenMlpHidden { mlp } => mlp.hidden(&mlp.vectorize(pair))?,
            FeatureSource::JointMlpOutput { mlp } | FeatureSource::FrozenMlpOutput { mlp } => {
                mlp.forward(&mlp.vectorize(pair))?.probs.to_vec()
            }
        })
    }
}

/// Feature vector of `pair` under `source`.
pub fn feature_vector(source: &FeatureSource, pair: &SequencePair) -> Result<Vec<f64>, FusionError> {
    source.feature_vector(pair)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleHyperparams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub cost_weights: CostWeights,
    pub freeze_mlp: bool,
    pub weight_decay: f64,
}

impl Default for EnsembleHyperparams {
    fn default() -> Self {
        EnsembleHyperparams {
            epochs: 6,
            learning_rate: 2e-6,
            batch_size: 4,
            seed: 0,
            cost_weights: CostWeights::uniform(),
            freeze_mlp: true,
            weight_decay: 0.01,
        }
    }
}

impl EnsembleHyperparams {
    pub fn validate(&self) -> Result<(), FusionError> {
        let bad = |m: &str| Err(FusionError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        Ok(())
    }
}

/// Width metadata stored next to a serialized model and checked on load.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionManifest {
    pub encoder_name: String,
    pub encoder_dim: usize,
    pub feature_source: FeatureSourceKind,
    pub feature_dim: usize,
    pub input_width: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionModel {
    pub encoder: AnyEncoder,
    pub source: FeatureSource,
    /// input_width × 4, row-major
    pub w: Vec<f64>,
    pub b: [f64; 4],
    pub input_width: usize,
    pub hyperparams: EnsembleHyperparams,
}

/// Head output for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub input: Vec<f64>,
    pub logits: [f64; 4],
    pub probs: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub w: Vec<f64>,
    pub b: [f64; 4],
}

impl FusionModel {
    /// Head initialized uniformly in ±sqrt(6/(width+4)) from `seed`, zero bias.
    pub fn new(encoder: AnyEncoder, source: FeatureSource, hyperparams: EnsembleHyperparams) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(hyperparams.seed);
        Self::with_rng(encoder, source, hyperparams, &mut rng)
    }

    fn with_rng(encoder: AnyEncoder, source: FeatureSource, hyperparams: EnsembleHyperparams, rng: &mut ChaCha8Rng) -> Self {
        let input_width = encoder.backend().dim + source.feature_dim();
        let a = (6.0 / (input_width + 4) as f64).sqrt();
        let w = (0..input_width * 4).map(|_| rng.random_range(-a..=a)).collect();
        FusionModel { encoder, source, w, b: [0.0; 4], input_width, hyperparams }
    }

    pub fn encoder_dim(&self) -> usize {
        self.encoder.backend().dim
    }

    /// Fails if the encoder or feature widths no longer add up to the head width.
    pub fn check_width(&self) -> Result<(), FusionError> {
        let got = self.encoder_dim() + self.source.feature_dim();
        if got != self.input_width || self.w.len() != self.input_width * 4 {
            return Err(FusionError::DimensionMismatch { expected: self.input_width, got });
        }
        Ok(())
    }

    pub fn manifest(&self) -> FusionManifest {
        FusionManifest {
            encoder_name: self.encoder.backend().name.clone(),
            encoder_dim: self.encoder_dim(),
            feature_source: self.source.kind(),
            feature_dim: self.source.feature_dim(),
            input_width: self.input_width,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("fusion model serializes")
    }

    /// Parses a model and checks it against its manifest.
    pub fn from_json(s: &str, manifest: &FusionManifest) -> Result<Self, FusionError> {
        let model: FusionModel = serde_json::from_str(s)?;
        model.check_width()?;
        let actual = model.manifest();
        if &actual != manifest {
            return Err(FusionError::DimensionMismatch { expected: manifest.input_width, got: actual.input_width });
        }
        Ok(model)
    }

    /// Linear layer and softmax over an already assembled encoder and feature vector.
    pub fn head(&self, enc: &[f64], feat: &[f64]) -> Result<HeadOutput, FusionError> {
        let got = enc.len() + feat.len();
        if got != self.input_width || enc.len() != self.encoder_dim() {
            return Err(FusionError::DimensionMismatch { expected: self.input_width, got });
        }
        let mut input = Vec::with_capacity(got);
        input.extend_from_slice(enc);
        input.extend_from_slice(feat);
        let mut logits = self.b;
        for (i, z) in input.iter().enumerate() {
            let row = &self.w[i * 4..i * 4 + 4];
            for k in 0..4 {
                logits[k] += z * row[k];
            }
        }
        Ok(HeadOutput { probs: softmax4(&logits), logits, input })
    }

    /// Accumulates head gradients for `dL/dlogits` and returns `dL/dinput`.
    pub fn head_backward(&self, out: &HeadOutput, dlogits: &[f64; 4], grads: &mut HeadGrads) -> Vec<f64> {
        for k in 0..4 {
            grads.b[k] += dlogits[k];
        }
        out.input
            .iter()
            .enumerate()
            .map(|(i, z)| {
                let row = &self.w[i * 4..i * 4 + 4];
                let mut dz = 0.0;
                for k in 0..4 {
                    grads.w[i * 4 + k] += z * dlogits[k];
                    dz += row[k] * dlogits[k];
                }
                dz
            })
            .collect()
    }

    pub fn zero_head_grads(&self) -> HeadGrads {
        HeadGrads { w: vec![0.0; self.w.len()], b: [0.0; 4] }
    }

    /// `softmax([encoder ⊕ features]·W + b)` for one pair.
    pub fn forward(&self, pair: &SequencePair) -> Result<[f64; 4], FusionError> {
        self.check_width()?;
        let enc = encode_pair(&self.encoder, pair)?.to_f64();
        let feat = self.source.feature_vector(pair)?;
        Ok(self.head(&enc, &feat)?.probs)
    }

    pub fn predict(&self, pair: &SequencePair) -> Result<Label, FusionError> {
        Ok(argmax_label(&self.forward(pair)?))
    }

    /// Probabilities for many pairs, encoding through `cache` when given.
    pub fn forward_all(&self, pairs: &[SequencePair], cache: Option<&EmbeddingCache>) -> Result<Vec<[f64; 4]>, FusionError> {
        self.check_width()?;
        let encoded = batch_encode(&self.encoder, pairs, cache)?;
        pairs
            .iter()
            .zip(encoded)
            .map(|(p, e)| Ok(self.head(&e.to_f64(), &self.source.feature_vector(p)?)?.probs))
            .collect()
    }

    pub fn predict_all(&self, pairs: &[SequencePair], cache: Option<&EmbeddingCache>) -> Result<Vec<Label>, FusionError> {
        Ok(self.forward_all(pairs, cache)?.iter().map(argmax_label).collect())
    }
}

/// Probabilities of `model` on `pair`.
pub fn fusion_forward(model: &FusionModel, pair: &SequencePair) -> Result<[f64; 4], FusionError> {
    model.forward(pair)
}

/// Highest-probability label; ties go to the lowest label index.
pub fn predict(model: &FusionModel, pair: &SequencePair) -> Result<Label, FusionError> {
    model.predict(pair)
}

impl Classifier for FusionModel {
    type Error = FusionError;

    fn classify(&self, pair: &SequencePair) -> Result<Label, FusionError> {
        self.predict(pair)
    }
}

impl Classifier for MlpModel {
    type Error = MlpError;

    fn classify(&self, pair: &SequencePair) -> Result<Label, MlpError> {
        self.predict(&self.vectorize(pair))
    }
}

/// One training example with everything that stays fixed during training.
struct Prepared {
    id: String,
    label: Label,
    rendered: String,
    /// Encoder output when the encoder is frozen.
    enc: Option<Vec<f64>>,
    /// Features when they do not depend on trained parameters.
    feat: Option<Vec<f64>>,
    /// TF-IDF input of the jointly trained MLP.
    x: Option<SparseVec>,
}

fn prepare(model: &FusionModel, pairs: &[SequencePair], cache: Option<&EmbeddingCache>) -> Result<Vec<Prepared>, FusionError> {
    let trainable = model.encoder.backend().trainable;
    let encoded = if trainable { None } else { Some(batch_encode(&model.encoder, pairs, cache)?) };
    let mut out = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let label = p.label.ok_or_else(|| FusionError::Unlabeled(p.post_id.clone()))?;
        let (feat, x) = match &model.source {
            FeatureSource::JointMlpOutput { mlp } => (None, Some(mlp.vectorize(p))),
            s => (Some(s.feature_vector(p)?), None),
        };
        out.push(Prepared {
            id: p.post_id.clone(),
            label,
            rendered: prepare_input(&model.encoder, p),
            enc: encoded.as_ref().map(|e| e[i].to_f64()),
            feat,
            x,
        });
    }
    Ok(out)
}

/// Forward state kept for the backward pass.
struct Pass {
    head: HeadOutput,
    mlp_out: Option<MlpOutput>,
}

fn run_example(model: &FusionModel, ex: &Prepared) -> Result<Pass, FusionError> {
    let enc = match &ex.enc {
        Some(e) => e.clone(),
        None => {
            let v = model.encoder.encode_rendered(&ex.rendered)?;
            let b = model.encoder.backend();
            if v.len() != b.dim {
                return Err(EncoderError::WidthMismatch { name: b.name.clone(), expected: b.dim, got: v.len() }.into());
            }
            v
        }
    };
    let (feat, mlp_out) = match (&ex.feat, &model.source, &ex.x) {
        (Some(f), _, _) => (f.clone(), None),
        (None, FeatureSource::JointMlpOutput { mlp }, Some(x)) => {
            let o = mlp.forward(x)?;
            (o.probs.to_vec(), Some(o))
        }
        _ => unreachable!("prepared features match the source"),
    };
    Ok(Pass { head: model.head(&enc, &feat)?, mlp_out })
}

/// Loss of one example and its gradients. Head and MLP gradients go to the
/// returned structs; encoder gradients accumulate inside the encoder.
fn example_backward(
    model: &mut FusionModel,
    ex: &Prepared,
    weights: &CostWeights,
    scale: f64,
    head_grads: &mut HeadGrads,
    mlp_grads: &mut Option<MlpGrads>,
) -> Result<f64, FusionError> {
    let pass = run_example(model, ex)?;
    let loss = weighted_cross_entropy_logits(&pass.head.logits, ex.label, weights);
    let dlogits = logits_grad(&pass.head.probs, ex.label, weights).map(|g| g * scale);
    let dz = model.head_backward(&pass.head, &dlogits, head_grads);
    let d = model.encoder_dim();
    if model.encoder.backend().trainable {
        model.encoder.backward(&ex.rendered, &dz[..d])?;
    }
    if let (FeatureSource::JointMlpOutput { mlp }, Some(out), Some(x), Some(g)) =
        (&model.source, &pass.mlp_out, &ex.x, mlp_grads.as_mut())
    {
        let dprobs: [f64; 4] = dz[d..].try_into().expect("mlp output has four entries");
        mlp.backward_from_probs(x, out, &dprobs, g);
    }
    Ok(loss)
}

/// Mean weighted loss and gradients of a labeled batch, for gradient checks.
/// Encoder gradients are left inside the encoder (read them through
/// [`Encoder::visit_params`]).
pub fn batch_loss_and_grads(
    model: &mut FusionModel,
    pairs: &[SequencePair],
    weights: &CostWeights,
) -> Result<(f64, HeadGrads, Option<MlpGrads>), FusionError> {
    let prepared = prepare(model, pairs, None)?;
    let mut head = model.zero_head_grads();
    let mut mlp = model.source.mlp().filter(|_| model.source.kind() == FeatureSourceKind::JointMlpOutput).map(MlpGrads::zeros);
    model.encoder.zero_grad();
    let scale = 1.0 / prepared.len().max(1) as f64;
    let mut total = 0.0;
    for ex in &prepared {
        total += example_backward(model, ex, weights, scale, &mut head, &mut mlp)?;
    }
    Ok((total * scale, head, mlp))
}

/// Mean weighted loss of the model over labeled pairs (full precision path).
pub fn batch_loss(model: &FusionModel, pairs: &[SequencePair], weights: &CostWeights) -> Result<f64, FusionError> {
    let prepared = prepare(model, pairs, None)?;
    mean_prepared_loss(model, &prepared, weights)
}

fn mean_prepared_loss(model: &FusionModel, data: &[Prepared], weights: &CostWeights) -> Result<f64, FusionError> {
    let mut total = 0.0;
    for ex in data {
        total += weighted_cross_entropy_logits(&run_example(model, ex)?.head.logits, ex.label, weights);
    }
    Ok(total / data.len().max(1) as f64)
}

fn apply_step(model: &mut FusionModel, opt: &mut AdamW, head: &HeadGrads, mlp_grads: Option<&MlpGrads>) {
    opt.begin_step();
    opt.update("head.w", &mut model.w, &head.w, true);
    opt.update("head.b", &mut model.b, &head.b, false);
    if model.encoder.backend().trainable {
        model.encoder.visit_params(&mut |name, values, grads| opt.update(&format!("encoder.{name}"), values, grads, true));
    }
    if let (FeatureSource::JointMlpOutput { mlp }, Some(g)) = (&mut model.source, mlp_grads) {
        let w1 = g.w1_dense(mlp.input_dim, mlp.hidden_units);
        opt.update("mlp.w1", &mut mlp.w1, &w1, true);
        opt.update("mlp.b1", &mut mlp.b1, &g.b1, false);
        opt.update("mlp.w2", &mut mlp.w2, &g.w2, true);
        opt.update("mlp.b2", &mut mlp.b2, &g.b2, false);
    }
}

/// Trains the head (and, where applicable, the encoder and joint MLP) for
/// `hp.epochs` epochs and returns the final model with its per-epoch trace.
///
/// Frozen encoders are run once through `cache`; a trainable encoder is
/// re-run at full precision on every step. Frozen MLP sources must be paired
/// with `freeze_mlp = true` and the joint source with `freeze_mlp = false`.
pub fn train_ensemble(
    train: &[SequencePair],
    dev: &[SequencePair],
    encoder: AnyEncoder,
    source: FeatureSource,
    hp: &EnsembleHyperparams,
    cache: Option<&EmbeddingCache>,
) -> Result<(FusionModel, TrainTrace), FusionError> {
    hp.validate()?;
    match (source.kind(), hp.freeze_mlp) {
        (FeatureSourceKind::JointMlpOutput, true) => {
            return Err(FusionError::InvalidConfig("joint_mlp_output trains the MLP; set freeze_mlp = false".into()))
        }
        (FeatureSourceKind::FrozenMlpHidden | FeatureSourceKind::FrozenMlpOutput, false) => {
            return Err(FusionError::InvalidConfig(format!("{} requires freeze_mlp = true", source.kind())))
        }
        _ => {}
    }
    if train.is_empty() {
        return Err(FusionError::EmptyTrainSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut model = FusionModel::with_rng(encoder, source, hp.clone(), &mut rng);
    model.check_width()?;

    let mut train_set = prepare(&model, train, cache)?;
    train_set.sort_by(|a, b| a.id.cmp(&b.id).then(a.label.cmp(&b.label)).then_with(|| a.rendered.cmp(&b.rendered)));
    let dev_set = prepare(&model, dev, cache)?;

    let mut opt = AdamW::new(hp.learning_rate, hp.weight_decay);
    let joint = model.source.kind() == FeatureSourceKind::JointMlpOutput;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut trace: TrainTrace = Vec::with_capacity(hp.epochs);
    let mut last_finite = None;
    for epoch in 1..=hp.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(hp.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let mut head = model.zero_head_grads();
            let mut mlp = if joint { model.source.mlp().map(MlpGrads::zeros) } else { None };
            model.encoder.zero_grad();
            for &i in batch {
                example_backward(&mut model, &train_set[i], &hp.cost_weights, scale, &mut head, &mut mlp)?;
            }
            apply_step(&mut model, &mut opt, &head, mlp.as_ref());
        }
        let train_loss = mean_prepared_loss(&model, &train_set, &hp.cost_weights)?;
        if !train_loss.is_finite() {
            return Err(FusionError::NonFiniteLoss { epoch, last_finite });
        }
        last_finite = Some(train_loss);
        let (dev_loss, dev_macro_f1) = if dev_set.is_empty() {
            (None, None)
        } else {
            let mut preds = Vec::with_capacity(dev_set.len());
            let mut total = 0.0;
            for ex in &dev_set {
                let out = run_example(&model, ex)?.head;
                total += weighted_cross_entropy_logits(&out.logits, ex.label, &hp.cost_weights);
                preds.push(argmax_label(&out.probs));
            }
            let golds: Vec<Label> = dev_set.iter().map(|e| e.label).collect();
            let cm = confusion_matrix(&preds, &golds).expect("dev lists are non-empty and aligned");
            (Some(total / dev_set.len() as f64), Some(scores(&cm).macro_f1))
        };
        log::debug!("ensemble epoch {epoch}: train loss {train_loss:.5} dev macro-F1 {dev_macro_f1:?}");
        trace.push(EpochRecord { epoch, train_loss, dev_loss, dev_macro_f1 });
    }
    model.encoder.zero_grad();
    Ok((model, trace))
}
