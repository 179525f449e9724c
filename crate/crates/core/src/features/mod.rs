//! Count-based features: TF-IDF vectors and their PCA reduction.

mod pca;
mod sparse;
mod tfidf;

use serde::{Deserialize, Serialize};

use crate::textprep::SequencePair;

pub use pca::{fit_pca_dense, fit_pca_sparse, reduce_pca, PcaError, PcaModel, PcaOptions, PcaSolver};
pub use sparse::SparseVec;
pub use tfidf::{fit_tfidf, tokenize, transform_tfidf, TfidfConfig, TfidfError, TfidfModel};

/// Which part of a [`SequencePair`] the count features see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairText {
    /// `first + " " + second`
    #[default]
    FirstAndSecond,
    FirstOnly,
}

impl PairText {
    pub fn text_of(self, pair: &SequencePair) -> String {
        match self {
            PairText::FirstOnly => pair.first.clone(),
            PairText::FirstAndSecond if pair.second.is_empty() => pair.first.clone(),
            PairText::FirstAndSecond => format!("{} {}", pair.first, pair.second),
        }
    }
}
