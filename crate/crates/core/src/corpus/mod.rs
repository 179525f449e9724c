//! Conversation threads and the datasets built from them.
//!
//! A [`Thread`] is a source post plus a tree of replies linked through
//! `parent_id`. A [`Corpus`] is an ordered list of threads belonging to one
//! split. Constructors validate the tree invariants, so every `Corpus` value in
//! circulation is well formed.

mod jsonl;
mod rumoureval;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use jsonl::{from_canonical_jsonl, to_canonical_jsonl, JsonlError};
pub use rumoureval::{load_rumoureval_dir, LoadError};

/// Stance of a post toward the rumour in its thread.
///
/// The discriminants are the canonical class indices. They define the axes of
/// every confusion matrix and the column order of every weight vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Support = 0,
    Deny = 1,
    Query = 2,
    Comment = 3,
}

impl Label {
    pub const COUNT: usize = 4;
    pub const ALL: [Label; 4] = [Label::Support, Label::Deny, Label::Query, Label::Comment];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Support => "support",
            Label::Deny => "deny",
            Label::Query => "query",
            Label::Comment => "comment",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Label::Support => "Support",
            Label::Deny => "Deny",
            Label::Query => "Query",
            Label::Comment => "Comment",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown label {0:?}")]
pub struct UnknownLabel(pub String);

impl FromStr for Label {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "support" => Ok(Label::Support),
            "deny" => Ok(Label::Deny),
            "query" => Ok(Label::Query),
            "comment" => Ok(Label::Comment),
            other => Err(UnknownLabel(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Twitter,
    Reddit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    /// Train and dev posts must all carry a label; test posts may not.
    pub fn is_labeled(self) -> bool {
        !matches!(self, Split::Test)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub text: String,
    pub parent_id: Option<String>,
    pub platform: Platform,
    pub label: Option<Label>,
}

impl Post {
    pub fn is_source(&self) -> bool {
        self.parent_id.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thread {
    pub source: Post,
    pub replies: Vec<Post>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InvariantViolation {
    #[error("source post {0} has a parent")]
    SourceHasParent(String),
    #[error("reply {0} has no parent")]
    ReplyWithoutParent(String),
    #[error("reply {post_id} points at missing parent {parent_id}")]
    OrphanReply { post_id: String, parent_id: String },
    #[error("reply {0} is not reachable from the source post")]
    Cycle(String),
    #[error("duplicate post id {0}")]
    DuplicateId(String),
    #[error("post {0} has no label in a labeled split")]
    UnlabeledPost(String),
}

impl Thread {
    /// Builds a thread and checks that the replies form a tree rooted at `source`.
    pub fn new(source: Post, replies: Vec<Post>) -> Result<Self, InvariantViolation> {
        let thread = Thread { source, replies };
        thread.validate()?;
        Ok(thread)
    }

    /// The thread id is the id of its source post.
    pub fn id(&self) -> &str {
        &self.source.id
    }

    pub fn posts(&self) -> impl Iterator<Item = &Post> {
        std::iter::once(&self.source).chain(self.replies.iter())
    }

    pub fn len(&self) -> usize {
        1 + self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, id: &str) -> Option<&Post> {
        self.posts().find(|p| p.id == id)
    }

    pub fn parent_of(&self, post: &Post) -> Option<&Post> {
        post.parent_id.as_deref().and_then(|pid| self.get(pid))
    }

    /// Number of parent links between `post` and the source post.
    pub fn depth_of(&self, post: &Post) -> Option<usize> {
        let mut depth = 0;
        let mut cur = post;
        while let Some(pid) = cur.parent_id.as_deref() {
            cur = self.get(pid)?;
            depth += 1;
            if depth > self.len() {
                return None;
            }
        }
        (cur.id == self.source.id).then_some(depth)
    }

    pub fn validate(&self) -> Result<(), InvariantViolation> {
        if self.source.parent_id.is_some() {
            return Err(InvariantViolation::SourceHasParent(self.source.id.clone()));
        }
        let mut ids = HashSet::with_capacity(self.len());
        for p in self.posts() {
            if !ids.insert(p.id.as_str()) {
                return Err(InvariantViolation::DuplicateId(p.id.clone()));
            }
        }
        let mut children: HashMap<&str, Vec<&str>> = HashMap::new();
        for r in &self.replies {
            let Some(pid) = r.parent_id.as_deref() else {
                return Err(InvariantViolation::ReplyWithoutParent(r.id.clone()));
            };
            if !ids.contains(pid) {
                return Err(InvariantViolation::OrphanReply {
                    post_id: r.id.clone(),
                    parent_id: pid.to_string(),
                });
            }
            children.entry(pid).or_default().push(&r.id);
        }
        // Every post must be reachable from the source; anything left over sits on a cycle.
        let mut seen = HashSet::with_capacity(self.len());
        let mut stack = vec![self.source.id.as_str()];
        while let Some(id) = stack.pop() {
            if seen.insert(id) {
                if let Some(kids) = children.get(id) {
                    stack.extend(kids.iter().copied());
                }
            }
        }
        if let Some(r) = self.replies.iter().find(|r| !seen.contains(r.id.as_str())) {
            return Err(InvariantViolation::Cycle(r.id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub threads: Vec<Thread>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("post {0} has no label")]
    UnlabeledPost(String),
    #[error("corpus has no posts")]
    Empty,
}

impl Corpus {
    /// Builds a corpus, re-validating every thread and the cross-thread id
    /// uniqueness. Labeled splits reject unlabeled posts.
    pub fn new(threads: Vec<Thread>, split: Split) -> Result<Self, InvariantViolation> {
        let mut ids = HashSet::new();
        for t in &threads {
            t.validate()?;
            for p in t.posts() {
                if !ids.insert(p.id.as_str()) {
                    return Err(InvariantViolation::DuplicateId(p.id.clone()));
                }
                if split.is_labeled() && p.label.is_none() {
                    return Err(InvariantViolation::UnlabeledPost(p.id.clone()));
                }
            }
        }
        Ok(Corpus { threads, split })
    }

    pub fn posts(&self) -> impl Iterator<Item = (&Thread, &Post)> {
        self.threads.iter().flat_map(|t| t.posts().map(move |p| (t, p)))
    }

    pub fn num_posts(&self) -> usize {
        self.threads.iter().map(Thread::len).sum()
    }

    /// Fraction of posts (sources and replies) carrying each label, indexed by
    /// [`Label::index`].
    pub fn class_distribution(&self) -> Result<[f64; 4], DistributionError> {
        let counts = self.class_counts()?;
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(DistributionError::Empty);
        }
        Ok(counts.map(|c| c as f64 / total as f64))
    }

    pub fn class_counts(&self) -> Result<[usize; 4], DistributionError> {
        let mut counts = [0usize; 4];
        for (_, p) in self.posts() {
            let label = p
                .label
                .ok_or_else(|| DistributionError::UnlabeledPost(p.id.clone()))?;
            counts[label.index()] += 1;
        }
        Ok(counts)
    }
}

/// See [`Corpus::class_distribution`].
pub fn class_distribution(corpus: &Corpus) -> Result<[f64; 4], DistributionError> {
    corpus.class_distribution()
}
