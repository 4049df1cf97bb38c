use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Content-addressed embedding store: one `<key>.emb` file per vector.
///
/// File layout: `u32` LE dimension, then `dim` little-endian `f32` values.
/// Writes go to a temporary file in the same directory and are renamed into
/// place, so readers never observe a partial entry.
#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    root: PathBuf,
}

impl EmbeddingCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_path(&self, key: &str) -> Result<PathBuf> {
        if key.len() != 64 || !key.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(Error::invalid(format!("not a content key: {key:?}")));
        }
        Ok(self.root.join(format!("{key}.emb")))
    }

    pub fn get(&self, key: &str) -> Result<Option<Vec<f32>>> {
        let path = self.entry_path(key)?;
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(path, e)),
        };
        decode(&bytes)
            .map(Some)
            .map_err(|message| Error::CorruptCache {
                key: key.to_owned(),
                message,
            })
    }

    pub fn put(&self, key: &str, vector: &[f32]) -> Result<()> {
        let path = self.entry_path(key)?;
        let tmp = self.root.join(format!(
            ".{key}.{}.{}.tmp",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        fs::write(&tmp, encode(vector)).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| {
            let _ = fs::remove_file(&tmp);
            Error::io(&path, e)
        })
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entry_path(key).map(|p| p.is_file()).unwrap_or(false)
    }
}

pub(crate) fn encode(vector: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + vector.len() * 4);
    out.extend_from_slice(&(vector.len() as u32).to_le_bytes());
    for v in vector {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn decode(bytes: &[u8]) -> std::result::Result<Vec<f32>, String> {
    let header: [u8; 4] = bytes
        .get(..4)
        .and_then(|h| h.try_into().ok())
        .ok_or("shorter than the dimension header")?;
    let dim = u32::from_le_bytes(header) as usize;
    let body = &bytes[4..];
    if body.len() != dim * 4 {
        return Err(format!("header says {dim} values, body holds {} bytes", body.len()));
    }
    Ok(body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
        .collect())
}
