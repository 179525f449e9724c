use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::SparseVec;
use crate::textprep::{MENTION_TOKEN, URL_TOKEN};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TfidfConfig {
    pub lowercase: bool,
    /// Regex for ordinary tokens. The placeholder tokens are always kept whole.
    pub token_pattern: String,
    /// Terms occurring in fewer documents are left out of the vocabulary.
    pub min_df: usize,
}

impl Default for TfidfConfig {
    fn default() -> Self {
        TfidfConfig { lowercase: true, token_pattern: r"\w+".into(), min_df: 1 }
    }
}

impl TfidfConfig {
    fn compile(&self) -> Regex {
        let pat = format!(
            "{}|{}|(?:{})",
            regex::escape(URL_TOKEN),
            regex::escape(MENTION_TOKEN),
            self.token_pattern
        );
        Regex::new(&pat).expect("token pattern validated at fit time")
    }
}

#[derive(Debug, Error)]
pub enum TfidfError {
    #[error("cannot fit TF-IDF on an empty document list")]
    EmptyCorpus,
    #[error("invalid token pattern: {0}")]
    BadPattern(#[from] regex::Error),
}

/// Fitted vocabulary and smoothed inverse document frequencies.
///
/// Column `i` corresponds to `terms[i]`; terms are sorted, so the column order
/// depends only on the vocabulary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TfidfModel {
    pub config: TfidfConfig,
    pub terms: Vec<String>,
    pub idf: Vec<f64>,
    pub num_docs: usize,
    #[serde(skip)]
    lookup: OnceLock<HashMap<String, u32>>,
    #[serde(skip)]
    token_re: OnceLock<Regex>,
}

impl PartialEq for TfidfModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.terms == other.terms
            && self.idf == other.idf
            && self.num_docs == other.num_docs
    }
}

impl TfidfModel {
    pub fn dim(&self) -> usize {
        self.terms.len()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.lookup
            .get_or_init(|| self.terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect())
            .get(term)
            .map(|&i| i as usize)
    }

    pub fn tokenize(&self, doc: &str) -> Vec<String> {
        let re = self.token_re.get_or_init(|| self.config.compile());
        tokenize_with(re, self.config.lowercase, doc)
    }

    pub fn transform(&self, doc: &str) -> SparseVec {
        let mut tf: BTreeMap<usize, f64> = BTreeMap::new();
        for tok in self.tokenize(doc) {
            if let Some(i) = self.index_of(&tok) {
                *tf.entry(i).or_insert(0.0) += 1.0;
            }
        }
        let mut entries: Vec<(u32, f64)> = tf.into_iter().map(|(i, c)| (i as u32, c * self.idf[i])).collect();
        let norm = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for e in &mut entries {
                e.1 /= norm;
            }
        }
        SparseVec::from_entries(self.dim(), entries)
    }
}

fn tokenize_with(re: &Regex, lowercase: bool, doc: &str) -> Vec<String> {
    re.find_iter(doc)
        .map(|m| {
            let t = m.as_str();
            if !lowercase || t == URL_TOKEN || t == MENTION_TOKEN {
                t.to_string()
            } else {
                t.to_lowercase()
            }
        })
        .collect()
}

/// Tokenizes with `config` (same rules as a fitted model).
pub fn tokenize(config: &TfidfConfig, doc: &str) -> Vec<String> {
    tokenize_with(&config.compile(), config.lowercase, doc)
}

/// Fits vocabulary and `idf(t) = ln((1 + N) / (1 + df(t))) + 1`.
pub fn fit_tfidf<S: AsRef<str>>(docs: &[S], config: &TfidfConfig) -> Result<TfidfModel, TfidfError> {
    if docs.is_empty() {
        return Err(TfidfError::EmptyCorpus);
    }
    let re = {
        let pat = format!("(?:{})", config.token_pattern);
        Regex::new(&pat)?;
        config.compile()
    };
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in docs {
        let mut toks = tokenize_with(&re, config.lowercase, doc.as_ref());
        toks.sort_unstable();
        toks.dedup();
        for t in toks {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    let n = docs.len() as f64;
    let (terms, idf): (Vec<String>, Vec<f64>) = df
        .into_iter()
        .filter(|(_, d)| *d >= config.min_df.max(1))
        .map(|(t, d)| (t, ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0))
        .unzip();
    let model = TfidfModel {
        config: config.clone(),
        terms,
        idf,
        num_docs: docs.len(),
        lookup: OnceLock::new(),
        token_re: OnceLock::new(),
    };
    let _ = model.token_re.set(re);
    Ok(model)
}

/// L2-normalized tf·idf vector of `doc`; zero when no token is in the vocabulary.
pub fn transform_tfidf(model: &TfidfModel, doc: &str) -> SparseVec {
    model.transform(doc)
}
