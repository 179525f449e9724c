//! Text normalization and construction of encoder input pairs.
//!
//! Every post becomes one [`SequencePair`]: the *first* sequence holds the
//! opinion being classified and the *second* holds its target.
//!
//! | post kind     | first                          | second        |
//! |---------------|--------------------------------|---------------|
//! | source        | source text                    | empty         |
//! | direct reply  | reply text                     | source text   |
//! | nested reply  | reply text + " " + parent text | source text   |

use regex::{NoExpand, Regex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Label, Post, Thread};

pub const URL_TOKEN: &str = "$URL$";
pub const MENTION_TOKEN: &str = "$MENTION$";

pub const DEFAULT_URL_PATTERN: &str = r"(?i)(?:\b[a-z][a-z0-9+.\-]*://\S+|\bwww\.\S+|\bt\.co/\S+)";
pub const DEFAULT_MENTION_PATTERN: &str = r"@\w+";

/// Replaces URLs and @-mentions with placeholder tokens.
#[derive(Debug, Clone)]
pub struct Normalizer {
    url: Regex,
    mention: Regex,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self::new(DEFAULT_URL_PATTERN, DEFAULT_MENTION_PATTERN).expect("default patterns compile")
    }
}

impl Normalizer {
    pub fn new(url_pattern: &str, mention_pattern: &str) -> Result<Self, regex::Error> {
        Ok(Normalizer { url: Regex::new(url_pattern)?, mention: Regex::new(mention_pattern)? })
    }

    pub fn normalize(&self, text: &str) -> String {
        // URLs first: a mention-like "@x" inside a URL belongs to the URL.
        let s = self.url.replace_all(text, NoExpand(URL_TOKEN));
        let s = self.mention.replace_all(&s, NoExpand(MENTION_TOKEN));
        s.split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

/// [`Normalizer::normalize`] with the default patterns.
pub fn normalize_text(text: &str) -> String {
    thread_local! {
        static DEFAULT: Normalizer = Normalizer::default();
    }
    DEFAULT.with(|n| n.normalize(text))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequencePair {
    pub first: String,
    pub second: String,
    pub post_id: String,
    pub label: Option<Label>,
}

/// Special tokens wrapped around the two sequences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerSet {
    pub start: String,
    pub end: String,
    pub sep: String,
}

impl Default for MarkerSet {
    fn default() -> Self {
        MarkerSet { start: "<s>".into(), end: "</s>".into(), sep: "</s></s>".into() }
    }
}

impl MarkerSet {
    /// The separator as it appears in rendered text: its end tags split by a space.
    fn sep_rendered(&self) -> String {
        if !self.end.is_empty() && self.sep == self.end.repeat(2) {
            format!("{} {}", self.end, self.end)
        } else {
            self.sep.clone()
        }
    }

    /// Whitespace-delimited marker tokens contributed by one rendering.
    pub fn token_overhead(&self) -> usize {
        self.start.split_whitespace().count()
            + self.sep_rendered().split_whitespace().count()
            + self.end.split_whitespace().count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PairError {
    #[error("post {post_id} is not part of thread {thread_id}")]
    PostNotInThread { post_id: String, thread_id: String },
}

/// Builds the (opinion, target) pair for `post`. Texts are used as stored; run
/// [`normalize_text`] over the corpus first.
pub fn build_training_example(post: &Post, thread: &Thread) -> Result<SequencePair, PairError> {
    let not_in_thread = || PairError::PostNotInThread {
        post_id: post.id.clone(),
        thread_id: thread.id().to_string(),
    };
    let member = thread.get(&post.id).ok_or_else(not_in_thread)?;
    if member != post {
        return Err(not_in_thread());
    }
    let (first, second) = match thread.parent_of(post) {
        None => (post.text.clone(), String::new()),
        Some(parent) if parent.is_source() => (post.text.clone(), thread.source.text.clone()),
        Some(parent) => (join_nonempty(&post.text, &parent.text), thread.source.text.clone()),
    };
    Ok(SequencePair { first, second, post_id: post.id.clone(), label: post.label })
}

fn join_nonempty(a: &str, b: &str) -> String {
    match (a.is_empty(), b.is_empty()) {
        (_, true) => a.to_string(),
        (true, false) => b.to_string(),
        (false, false) => format!("{a} {b}"),
    }
}

/// One pair per post, in corpus order.
pub fn build_pairs(corpus: &Corpus) -> Vec<SequencePair> {
    corpus
        .posts()
        .map(|(t, p)| build_training_example(p, t).expect("corpus posts belong to their thread"))
        .collect()
}

/// Applies the default normalizer to every post text.
pub fn normalize_corpus(corpus: &Corpus) -> Corpus {
    let n = Normalizer::default();
    let mut out = corpus.clone();
    for t in &mut out.threads {
        t.source.text = n.normalize(&t.source.text);
        for r in &mut t.replies {
            r.text = n.normalize(&r.text);
        }
    }
    out
}

/// `start first sep second end`, single-spaced. An empty second sequence leaves
/// the separator directly followed by the end marker.
pub fn render_encoder_input(pair: &SequencePair, markers: &MarkerSet) -> String {
    let sep = markers.sep_rendered();
    let mut parts: Vec<&str> = vec![&markers.start];
    if !pair.first.is_empty() {
        parts.push(&pair.first);
    }
    parts.push(&sep);
    if !pair.second.is_empty() {
        parts.push(&pair.second);
    }
    parts.push(&markers.end);
    parts.join(" ")
}
