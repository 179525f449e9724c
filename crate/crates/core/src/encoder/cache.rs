use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use sha2::{Digest, Sha256};
use thiserror::Error;

/// File header: 8 magic bytes followed by a little-endian `u32` version.
pub const CACHE_MAGIC: &[u8; 8] = b"STEMBC01";
pub const CACHE_VERSION: u32 = 1;

const HEADER_LEN: usize = 12;
// A record claiming more values than this is treated as garbage.
const MAX_DIM: u32 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey(pub [u8; 32]);

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

/// `sha256(cache_id || 0x00 || rendered)`.
pub fn cache_key(cache_id: &str, rendered: &str) -> CacheKey {
    let mut h = Sha256::new();
    h.update(cache_id.as_bytes());
    h.update([0u8]);
    h.update(rendered.as_bytes());
    CacheKey(h.finalize().into())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CacheError {
    #[error("{path}: not an embedding cache (bad header)")]
    BadHeader { path: PathBuf },
    #[error("{path}: cache version {found} is not supported (expected {CACHE_VERSION})")]
    UnsupportedVersion { path: PathBuf, found: u32 },
    #[error("cache I/O error on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

fn io_err(path: &Path, e: std::io::Error) -> CacheError {
    CacheError::Io { path: path.to_path_buf(), message: e.to_string() }
}

fn checksum(key: &CacheKey, dim: u32, values: &[u8]) -> u64 {
    let mut h = Sha256::new();
    h.update(key.0);
    h.update(dim.to_le_bytes());
    h.update(values);
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

fn encode_record(key: &CacheKey, values: &[f32]) -> Vec<u8> {
    let dim = values.len() as u32;
    let mut body = Vec::with_capacity(values.len() * 4);
    for v in values {
        body.extend_from_slice(&v.to_le_bytes());
    }
    let mut rec = Vec::with_capacity(32 + 4 + body.len() + 8);
    rec.extend_from_slice(&key.0);
    rec.extend_from_slice(&dim.to_le_bytes());
    rec.extend_from_slice(&body);
    rec.extend_from_slice(&checksum(key, dim, &body).to_le_bytes());
    rec
}

fn header() -> Vec<u8> {
    let mut h = CACHE_MAGIC.to_vec();
    h.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    h
}

/// Parses records after the header. Returns the entries and the number of
/// damaged records. A record with a bad checksum is skipped; a record whose
/// length field is unusable ends parsing, since later boundaries are unknown.
fn parse_records(mut buf: &[u8]) -> (Vec<(CacheKey, Vec<f32>)>, usize) {
    let mut out = Vec::new();
    let mut corrupt = 0;
    while !buf.is_empty() {
        if buf.len() < 36 {
            corrupt += 1;
            break;
        }
        let key = CacheKey(buf[..32].try_into().expect("32 bytes"));
        let dim = u32::from_le_bytes(buf[32..36].try_into().expect("4 bytes"));
        let body_len = dim as usize * 4;
        if dim > MAX_DIM || buf.len() < 36 + body_len + 8 {
            corrupt += 1;
            break;
        }
        let body = &buf[36..36 + body_len];
        let stored = u64::from_le_bytes(buf[36 + body_len..44 + body_len].try_into().expect("8 bytes"));
        if stored == checksum(&key, dim, body) {
            let values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            out.push((key, values));
        } else {
            corrupt += 1;
        }
        buf = &buf[44 + body_len..];
    }
    (out, corrupt)
}

/// Append-only store of pooled vectors keyed by [`cache_key`].
///
/// Reads are concurrent; appends go through a single writer. Damaged records
/// found on open are dropped with a warning and the file is rewritten without
/// them, so deleting or corrupting the file never changes results, only speed.
#[derive(Debug)]
pub struct EmbeddingCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<CacheKey, Vec<f32>>>,
    writer: Mutex<Option<BufWriter<File>>>,
    corrupt: usize,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        EmbeddingCache { path: None, entries: RwLock::new(HashMap::new()), writer: Mutex::new(None), corrupt: 0 }
    }

    /// Opens `path`, creating it if absent.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CacheError> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        let mut corrupt = 0;
        if path.exists() {
            let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
            if bytes.len() < HEADER_LEN || &bytes[..8] != CACHE_MAGIC {
                return Err(CacheError::BadHeader { path });
            }
            let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
            if version != CACHE_VERSION {
                return Err(CacheError::UnsupportedVersion { path, found: version });
            }
            let (records, bad) = parse_records(&bytes[HEADER_LEN..]);
            corrupt = bad;
            for (k, v) in records {
                entries.entry(k).or_insert(v);
            }
            if corrupt > 0 {
                log::warn!("{}: dropped {corrupt} damaged cache record(s)", path.display());
                rewrite(&path, &entries)?;
            }
        } else {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            }
            fs::write(&path, header()).map_err(|e| io_err(&path, e))?;
        }
        let file = OpenOptions::new().append(true).open(&path).map_err(|e| io_err(&path, e))?;
        Ok(EmbeddingCache {
            path: Some(path),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(BufWriter::new(file))),
            corrupt,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Damaged records dropped when the file was opened.
    pub fn corrupt_records(&self) -> usize {
        self.corrupt
    }

    pub fn get(&self, key: &CacheKey) -> Option<Vec<f32>> {
        self.entries.read().expect("cache lock poisoned").get(key).cloned()
    }

    /// Stores `values` under `key`. Existing keys are left untouched.
    pub fn insert(&self, key: CacheKey, values: &[f32]) -> Result<(), CacheError> {
        let mut writer = self.writer.lock().expect("cache lock poisoned");
        let mut entries = self.entries.write().expect("cache lock poisoned");
        if entries.contains_key(&key) {
            return Ok(());
        }
        if let (Some(w), Some(path)) = (writer.as_mut(), &self.path) {
            w.write_all(&encode_record(&key, values)).map_err(|e| io_err(path, e))?;
        }
        entries.insert(key, values.to_vec());
        Ok(())
    }

    pub fn flush(&self) -> Result<(), CacheError> {
        let mut writer = self.writer.lock().expect("cache lock poisoned");
        if let (Some(w), Some(path)) = (writer.as_mut(), &self.path) {
            w.flush().map_err(|e| io_err(path, e))?;
        }
        Ok(())
    }
}

impl Drop for EmbeddingCache {
    fn drop(&mut self) {
        if let Err(e) = self.flush() {
            log::warn!("{e}");
        }
    }
}

fn rewrite(path: &Path, entries: &HashMap<CacheKey, Vec<f32>>) -> Result<(), CacheError> {
    let mut keys: Vec<&CacheKey> = entries.keys().collect();
    keys.sort();
    let mut bytes = header();
    for k in keys {
        bytes.extend_from_slice(&encode_record(k, &entries[k]));
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_layout() {
        let k = cache_key("toy-8", "<s> a </s>");
        let mut h = Sha256::new();
        h.update(b"toy-8\0<s> a </s>");
        assert_eq!(k.0, <[u8; 32]>::from(h.finalize()));
        assert_ne!(k, cache_key("toy-8x", "<s> a </s>"));
    }

    #[test]
    fn persists_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.cache");
        let k = cache_key("m", "x");
        {
            let c = EmbeddingCache::open(&path).unwrap();
            c.insert(k, &[1.5, -0.25]).unwrap();
            c.insert(k, &[9.0, 9.0]).unwrap();
            c.flush().unwrap();
        }
        let c = EmbeddingCache::open(&path).unwrap();
        assert_eq!(c.get(&k), Some(vec![1.5, -0.25]));
        assert_eq!(c.len(), 1);
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], CACHE_MAGIC);
        assert_eq!(bytes.len(), HEADER_LEN + 32 + 4 + 8 + 8);
    }

    #[test]
    fn damaged_record_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.cache");
        let (a, b) = (cache_key("m", "a"), cache_key("m", "b"));
        {
            let c = EmbeddingCache::open(&path).unwrap();
            c.insert(a, &[1.0]).unwrap();
            c.insert(b, &[2.0]).unwrap();
        }
        let mut bytes = fs::read(&path).unwrap();
        // flip a value byte inside the first record
        bytes[HEADER_LEN + 36] ^= 0xff;
        fs::write(&path, &bytes).unwrap();
        let c = EmbeddingCache::open(&path).unwrap();
        assert_eq!(c.corrupt_records(), 1);
        assert_eq!(c.get(&a), None);
        assert_eq!(c.get(&b), Some(vec![2.0]));
        drop(c);
        assert_eq!(EmbeddingCache::open(&path).unwrap().corrupt_records(), 0);
    }

    #[test]
    fn truncated_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.cache");
        {
            let c = EmbeddingCache::open(&path).unwrap();
            c.insert(cache_key("m", "a"), &[1.0, 2.0]).unwrap();
        }
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let c = EmbeddingCache::open(&path).unwrap();
        assert_eq!((c.len(), c.corrupt_records()), (0, 1));
    }

    #[test]
    fn rejects_foreign_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x");
        fs::write(&path, b"hello world, not a cache").unwrap();
        assert!(matches!(EmbeddingCache::open(&path), Err(CacheError::BadHeader { .. })));
    }
}
