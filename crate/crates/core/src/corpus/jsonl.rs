//! Canonical JSONL interchange format.
//!
//! One post per line, keys always emitted in the order
//! `id, text, parent_id, platform, label, thread_id, split`. Threads are
//! written in corpus order, each as its source post followed by its replies.

use std::io::{BufRead, Write};

use indexmap_lite::OrderedThreads;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Corpus, InvariantViolation, Label, Platform, Post, Split, Thread};

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Invariant(#[from] InvariantViolation),
    #[error("stream contains no posts")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize)]
struct LineOut<'a> {
    id: &'a str,
    text: &'a str,
    parent_id: Option<&'a str>,
    platform: Platform,
    label: Option<Label>,
    thread_id: &'a str,
    split: Split,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LineIn {
    id: String,
    text: String,
    parent_id: Option<String>,
    platform: Platform,
    label: Option<Label>,
    thread_id: String,
    split: Split,
}

pub fn to_canonical_jsonl<W: Write>(corpus: &Corpus, mut out: W) -> Result<(), JsonlError> {
    for thread in &corpus.threads {
        for post in thread.posts() {
            let line = LineOut {
                id: &post.id,
                text: &post.text,
                parent_id: post.parent_id.as_deref(),
                platform: post.platform,
                label: post.label,
                thread_id: thread.id(),
                split: corpus.split,
            };
            serde_json::to_writer(&mut out, &line).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn from_canonical_jsonl<R: BufRead>(input: R) -> Result<Corpus, JsonlError> {
    let mut split: Option<Split> = None;
    let mut threads = OrderedThreads::default();
    for (i, line) in input.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LineIn = serde_json::from_str(&line).map_err(|e| JsonlError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        match split {
            None => split = Some(rec.split),
            Some(s) if s != rec.split => {
                return Err(JsonlError::Parse {
                    line: lineno,
                    message: format!("split {} differs from earlier split {}", rec.split, s),
                })
            }
            Some(_) => {}
        }
        let is_source = rec.parent_id.is_none();
        if is_source && rec.id != rec.thread_id {
            return Err(JsonlError::Parse {
                line: lineno,
                message: format!("source post {} does not match thread_id {}", rec.id, rec.thread_id),
            });
        }
        let post = Post {
            id: rec.id,
            text: rec.text,
            parent_id: rec.parent_id,
            platform: rec.platform,
            label: rec.label,
        };
        let entry = threads.entry(rec.thread_id);
        if is_source {
            if entry.0.is_some() {
                return Err(InvariantViolation::DuplicateId(post.id).into());
            }
            entry.0 = Some(post);
        } else {
            entry.1.push(post);
        }
    }
    let split = split.ok_or(JsonlError::Empty)?;
    let mut out = Vec::new();
    for (thread_id, (source, replies)) in threads.into_iter() {
        let source = source.ok_or_else(|| JsonlError::Parse {
            line: 0,
            message: format!("thread {thread_id} has no source post"),
        })?;
        out.push(Thread::new(source, replies)?);
    }
    Ok(Corpus::new(out, split)?)
}

mod indexmap_lite {
    use std::collections::HashMap;

    use crate::corpus::Post;

    /// Threads keyed by id, iterated in first-appearance order.
    #[derive(Default)]
    pub(super) struct OrderedThreads {
        index: HashMap<String, usize>,
        items: Vec<(String, (Option<Post>, Vec<Post>))>,
    }

    impl OrderedThreads {
        pub(super) fn entry(&mut self, key: String) -> &mut (Option<Post>, Vec<Post>) {
            let idx = match self.index.get(&key) {
                Some(&i) => i,
                None => {
                    self.items.push((key.clone(), (None, Vec::new())));
                    self.index.insert(key, self.items.len() - 1);
                    self.items.len() - 1
                }
            };
            &mut self.items[idx].1
        }

        pub(super) fn into_iter(self) -> impl Iterator<Item = (String, (Option<Post>, Vec<Post>))> {
            self.items.into_iter()
        }
    }
}
