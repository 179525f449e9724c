//! Stance classification for social-media conversation threads, built from a
//! TF-IDF feature MLP fused with a pre-trained sentence-pair encoder.
//!
//! The pipeline, module by module:
//!
//! 1. [`corpus`]: threads of posts, the canonical JSONL format and the
//!    RumourEval 2019 loader.
//! 2. [`textprep`]: URL/mention normalization and (opinion, target) pairs.
//! 3. [`features`]: TF-IDF vectors and PCA.
//! 4. [`feature_model`]: the 128-unit tanh MLP and the cost-weighted loss.
//! 5. [`encoder`]: pooled sentence-pair encoders, truncation and the embedding cache.
//! 6. [`fusion`]: encoder ⊕ feature vector → linear → softmax, and its trainer.
//! 7. [`eval`]: confusion matrices, F1, seed selection, error reports.
//!
//! The guide in `book/` walks through each stage; its code blocks are compiled
//! as doc-tests of this crate.

pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod feature_model;
pub mod features;
pub mod fusion;
mod optim;
pub mod textprep;

pub use corpus::{Corpus, Label, Platform, Post, Split, Thread};
pub use eval::{EvalReport, ConfusionMatrix};
pub use fusion::{EnsembleHyperparams, FeatureSource, FeatureSourceKind, FusionModel};
pub use feature_model::{CostWeights, MlpHyperparams, MlpModel};

pub use textprep::{MarkerSet, SequencePair};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/threads.md")]
    mod threads {}
    #[doc = include_str!("../../../book/src/tfidf-pca.md")]
    mod tfidf_pca {}
    #[doc = include_str!("../../../book/src/feature-mlp.md")]
    mod feature_mlp {}
    #[doc = include_str!("../../../book/src/encoders.md")]
    mod encoders {}
    #[doc = include_str!("../../../book/src/fusion.md")]
    mod fusion {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
}
