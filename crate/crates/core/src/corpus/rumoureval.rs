//! One-way converter from the RumourEval 2019 on-disk layout.
//!
//! The layout is a tree of thread directories, each holding
//! `source-tweet/<id>.json`, `replies/<id>.json` and usually a
//! `structure.json`, plus per-split key files mapping post ids to labels:
//!
//! ```text
//! <root>/
//!   train-key.json            {"subtaskaenglish": {"<post id>": "support", ...}, ...}
//!   dev-key.json
//!   twitter-english/<event>/<thread id>/source-tweet/<id>.json
//!   twitter-english/<event>/<thread id>/replies/<id>.json
//!   reddit-training-data/<thread id>/source-tweet/<id>.json
//!   ...
//! ```
//!
//! The test split reads `final-eval-key.json` (or `test-key.json`) when
//! present and otherwise loads every thread unlabeled.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::Value;
use thiserror::Error;
use walkdir::WalkDir;

use super::{Corpus, InvariantViolation, Label, Platform, Post, Split, Thread};

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("no label file ({expected}) found under {root}")]
    MissingLabelFile { expected: String, root: PathBuf },
    #[error("reply {post_id} refers to parent {parent_id}, which has no post file")]
    OrphanReply { post_id: String, parent_id: String },
    #[error("malformed post file {path}: {message}")]
    MalformedPostFile { path: PathBuf, message: String },
    #[error("malformed label file {path}: {message}")]
    MalformedLabelFile { path: PathBuf, message: String },
    #[error("post {post_id} has no entry in the label file")]
    MissingLabel { post_id: String },
    #[error(transparent)]
    Invariant(#[from] InvariantViolation),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn key_file_names(split: Split) -> &'static [&'static str] {
    match split {
        Split::Train => &["train-key.json"],
        Split::Dev => &["dev-key.json"],
        Split::Test => &["final-eval-key.json", "test-key.json"],
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LoadError + '_ {
    move |source| LoadError::Io { path: path.to_path_buf(), source }
}

/// Loads one split of a RumourEval 2019 directory into a validated [`Corpus`].
pub fn load_rumoureval_dir(root: &Path, split: Split) -> Result<Corpus, LoadError> {
    if !root.is_dir() {
        return Err(LoadError::Io {
            path: root.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        });
    }
    let mut key_path = None;
    let mut thread_dirs = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| LoadError::Io {
            path: e.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf()),
            source: e.into(),
        })?;
        let name = entry.file_name().to_string_lossy();
        if entry.file_type().is_file() && key_path.is_none() && key_file_names(split).contains(&name.as_ref()) {
            key_path = Some(entry.path().to_path_buf());
        }
        if entry.file_type().is_dir() && name == "source-tweet" {
            if let Some(parent) = entry.path().parent() {
                thread_dirs.push(parent.to_path_buf());
            }
        }
    }

    let labels = match (&key_path, split.is_labeled()) {
        (Some(p), _) => Some(read_key_file(p)?),
        (None, true) => {
            return Err(LoadError::MissingLabelFile {
                expected: key_file_names(split).join(" or "),
                root: root.to_path_buf(),
            })
        }
        (None, false) => None,
    };

    let loaded: Vec<Option<Thread>> = thread_dirs
        .par_iter()
        .map(|dir| load_thread(dir, labels.as_ref(), split))
        .collect::<Result<_, _>>()?;
    let threads: Vec<Thread> = loaded.into_iter().flatten().collect();
    Ok(Corpus::new(threads, split)?)
}

fn read_key_file(path: &Path) -> Result<HashMap<String, Label>, LoadError> {
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    let malformed = |message: String| LoadError::MalformedLabelFile { path: path.to_path_buf(), message };
    let v: Value = serde_json::from_str(&raw).map_err(|e| malformed(e.to_string()))?;
    // Official key files nest the stance labels under "subtaskaenglish"; a flat map is also accepted.
    let map = v
        .get("subtaskaenglish")
        .unwrap_or(&v)
        .as_object()
        .ok_or_else(|| malformed("expected a JSON object".into()))?;
    map.iter()
        .map(|(id, label)| {
            let s = label
                .as_str()
                .ok_or_else(|| malformed(format!("label for {id} is not a string")))?;
            let label = s.to_ascii_lowercase().parse::<Label>().map_err(|e| malformed(e.to_string()))?;
            Ok((id.clone(), label))
        })
        .collect()
}

struct RawPost {
    id: String,
    text: String,
    parent_id: Option<String>,
    platform: Platform,
}

fn load_thread(
    dir: &Path,
    labels: Option<&HashMap<String, Label>>,
    split: Split,
) -> Result<Option<Thread>, LoadError> {
    let source_files = json_files(&dir.join("source-tweet"))?;
    let source_path = match source_files.as_slice() {
        [one] => one,
        _ => {
            return Err(LoadError::MalformedPostFile {
                path: dir.join("source-tweet"),
                message: format!("expected exactly one source post file, found {}", source_files.len()),
            })
        }
    };
    let source = read_post(source_path, true)?;
    if let Some(labels) = labels {
        // Threads not listed in this split's key belong to another split.
        if !labels.contains_key(&source.id) {
            return Ok(None);
        }
    }

    let structure = read_structure(&dir.join("structure.json"))?;
    let mut replies = Vec::new();
    let replies_dir = dir.join("replies");
    if replies_dir.is_dir() {
        for path in json_files(&replies_dir)? {
            let mut raw = read_post(&path, false)?;
            if raw.parent_id.is_none() {
                raw.parent_id = structure.get(&raw.id).cloned();
            }
            replies.push(raw);
        }
    }

    let known: std::collections::HashSet<&str> =
        std::iter::once(source.id.as_str()).chain(replies.iter().map(|r| r.id.as_str())).collect();
    for r in &replies {
        match r.parent_id.as_deref() {
            Some(pid) if known.contains(pid) => {}
            Some(pid) => {
                return Err(LoadError::OrphanReply { post_id: r.id.clone(), parent_id: pid.to_string() })
            }
            None => {
                return Err(LoadError::OrphanReply { post_id: r.id.clone(), parent_id: String::new() })
            }
        }
    }

    let label_for = |id: &str| -> Result<Option<Label>, LoadError> {
        match labels.and_then(|l| l.get(id)) {
            Some(l) => Ok(Some(*l)),
            None if split.is_labeled() => Err(LoadError::MissingLabel { post_id: id.to_string() }),
            None => Ok(None),
        }
    };
    let to_post = |raw: RawPost, parent: Option<String>| -> Result<Post, LoadError> {
        Ok(Post {
            label: label_for(&raw.id)?,
            id: raw.id,
            text: raw.text,
            parent_id: parent,
            platform: raw.platform,
        })
    };
    let source = to_post(source, None)?;
    let replies = replies
        .into_iter()
        .map(|r| {
            let parent = r.parent_id.clone();
            to_post(r, parent)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Some(Thread::new(source, replies)?))
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>, LoadError> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().is_some_and(|e| e == "json") {
            files.push(path);
        }
    }
    // numeric ids: shorter first, then lexicographic
    files.sort_by(|a, b| {
        let (a, b) = (a.file_stem().unwrap_or_default(), b.file_stem().unwrap_or_default());
        a.len().cmp(&b.len()).then_with(|| a.cmp(b))
    });
    Ok(files)
}

fn read_post(path: &Path, is_source: bool) -> Result<RawPost, LoadError> {
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    let malformed = |message: &str| LoadError::MalformedPostFile {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    let v: Value = serde_json::from_str(&raw).map_err(|e| LoadError::MalformedPostFile {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned());

    if let Some(data) = reddit_payload(&v) {
        let id = data
            .get("id")
            .and_then(Value::as_str)
            .map(str::to_string)
            .or(stem)
            .ok_or_else(|| malformed("reddit post without id"))?;
        let text = if is_source {
            let title = data.get("title").and_then(Value::as_str).unwrap_or("");
            let body = data.get("selftext").and_then(Value::as_str).unwrap_or("");
            if body.is_empty() { title.to_string() } else { format!("{title} {body}") }
        } else {
            // deleted comments keep an empty body
            data.get("body").and_then(Value::as_str).unwrap_or("").to_string()
        };
        let parent_id = if is_source {
            None
        } else {
            data.get("parent_id")
                .and_then(Value::as_str)
                .map(|p| p.split_once('_').map_or(p, |(_, rest)| rest).to_string())
        };
        return Ok(RawPost { id, text, parent_id, platform: Platform::Reddit });
    }

    let obj = v.as_object().ok_or_else(|| malformed("expected a JSON object"))?;
    let id = obj
        .get("id_str")
        .and_then(Value::as_str)
        .map(str::to_string)
        .or_else(|| obj.get("id").and_then(Value::as_u64).map(|n| n.to_string()))
        .or(stem)
        .ok_or_else(|| malformed("tweet without id"))?;
    let text = obj
        .get("full_text")
        .or_else(|| obj.get("text"))
        .and_then(Value::as_str)
        .ok_or_else(|| malformed("tweet without text"))?
        .to_string();
    let parent_id = if is_source {
        None
    } else {
        obj.get("in_reply_to_status_id_str")
            .and_then(Value::as_str)
            .map(str::to_string)
            .or_else(|| obj.get("in_reply_to_status_id").and_then(Value::as_u64).map(|n| n.to_string()))
    };
    Ok(RawPost { id, text, parent_id, platform: Platform::Twitter })
}

fn reddit_payload(v: &Value) -> Option<&serde_json::Map<String, Value>> {
    let data = v.get("data")?;
    if let Some(children) = data.get("children").and_then(Value::as_array) {
        return children.first()?.get("data")?.as_object();
    }
    data.as_object()
}

/// Flattens `structure.json` (nested `{id: {child: {...}}}`) into child → parent.
fn read_structure(path: &Path) -> Result<HashMap<String, String>, LoadError> {
    let mut parents = HashMap::new();
    if !path.is_file() {
        return Ok(parents);
    }
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    let v: Value = serde_json::from_str(&raw).map_err(|e| LoadError::MalformedPostFile {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    fn walk(node: &Value, parent: Option<&str>, out: &mut HashMap<String, String>) {
        if let Some(obj) = node.as_object() {
            for (id, child) in obj {
                if let Some(p) = parent {
                    out.insert(id.clone(), p.to_string());
                }
                walk(child, Some(id), out);
            }
        }
    }
    walk(&v, None, &mut parents);
    Ok(parents)
}
