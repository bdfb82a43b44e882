//! Content-addressed store of layer outputs.
//!
//! A key hashes the operation name, its settings and the bytes of every
//! input file. The value is a copy of the operation's output directory.

use std::fs::{self, File};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheMeta {
    pub version: String,
    pub operation: String,
    /// Seconds since the Unix epoch.
    pub created: u64,
    pub files: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Cache {
    dir: PathBuf,
}

fn hash_file(h: &mut Sha256, path: &Path) -> Result<()> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(())
}

/// Regular files below `dir`, as sorted relative paths.
fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![PathBuf::new()];
    while let Some(rel) = stack.pop() {
        let abs = dir.join(&rel);
        for entry in fs::read_dir(&abs).map_err(|e| Error::io(&abs, e))? {
            let entry = entry.map_err(|e| Error::io(&abs, e))?;
            let ty = entry.file_type().map_err(|e| Error::io(entry.path(), e))?;
            let name = rel.join(entry.file_name());
            if ty.is_dir() {
                stack.push(name);
            } else if ty.is_file() {
                out.push(name);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Hash of an operation, its settings and the content of its inputs.
///
/// Directory inputs contribute every file they contain, with its relative name.
pub fn cache_key(operation: &str, settings: &serde_json::Value, inputs: &[&Path]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(VERSION.as_bytes());
    h.update([0]);
    h.update(operation.as_bytes());
    h.update([0]);
    h.update(settings.to_string().as_bytes());
    for input in inputs {
        h.update([1]);
        if input.is_dir() {
            for rel in list_files(input)? {
                h.update(rel.to_string_lossy().as_bytes());
                h.update([0]);
                hash_file(&mut h, &input.join(&rel))?;
                h.update([2]);
            }
        } else {
            hash_file(&mut h, input)?;
        }
    }
    Ok(hex::encode(h.finalize()))
}

fn copy_tree(from: &Path, to: &Path) -> Result<Vec<String>> {
    let files = list_files(from)?;
    for rel in &files {
        let dst = to.join(rel);
        if let Some(parent) = dst.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::copy(from.join(rel), &dst).map_err(|e| Error::io(&dst, e))?;
    }
    Ok(files.iter().map(|p| p.to_string_lossy().into_owned()).collect())
}

fn reset_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

impl Cache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Cache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry(&self, key: &str) -> PathBuf {
        self.dir.join(key)
    }

    fn with_lock<T>(&self, op: impl FnOnce() -> Result<T>) -> Result<T> {
        let path = self.dir.join(".lock");
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        file.lock().map_err(|e| Error::io(&path, e))?;
        let out = op();
        file.unlock().map_err(|e| Error::io(&path, e))?;
        out
    }

    pub fn meta(&self, key: &str) -> Option<CacheMeta> {
        let text = fs::read_to_string(self.entry(key).join("meta.json")).ok()?;
        serde_json::from_str(&text).ok()
    }

    /// Replaces `output_dir` with the stored outputs of `key`. False on a miss.
    pub fn restore(&self, key: &str, output_dir: &Path) -> Result<bool> {
        self.with_lock(|| {
            let entry = self.entry(key);
            if self.meta(key).is_none() {
                return Ok(false);
            }
            reset_dir(output_dir)?;
            copy_tree(&entry.join("files"), output_dir)?;
            Ok(true)
        })
    }

    /// Stores a copy of `output_dir` under `key`.
    pub fn store(&self, key: &str, operation: &str, output_dir: &Path) -> Result<()> {
        self.with_lock(|| {
            let tmp = self.dir.join(format!("{key}.tmp{}", std::process::id()));
            reset_dir(&tmp)?;
            let files = copy_tree(output_dir, &tmp.join("files"))?;
            let meta = CacheMeta {
                version: VERSION.to_string(),
                operation: operation.to_string(),
                created: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map_or(0, |d| d.as_secs()),
                files,
            };
            let meta_path = tmp.join("meta.json");
            let text = serde_json::to_string_pretty(&meta).expect("serializable metadata");
            fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;
            let entry = self.entry(key);
            if entry.exists() {
                fs::remove_dir_all(&entry).map_err(|e| Error::io(&entry, e))?;
            }
            fs::rename(&tmp, &entry).map_err(|e| Error::io(&entry, e))
        })
    }
}

/// Empties `dir` before an operation writes fresh outputs into it.
pub fn prepare_output(dir: &Path) -> Result<()> {
    reset_dir(dir)
}
