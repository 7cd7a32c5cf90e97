//! Content hashing and write-then-rename output handling.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use wfa_extract::CountMatrices;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

pub fn sha256_file(path: &Path) -> Result<FileRecord> {
    let data = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(FileRecord {
        path: path.to_owned(),
        sha256: hex::encode(Sha256::digest(&data)),
        bytes: data.len() as u64,
    })
}

/// Digest of the integer transition counts a model was built from, so two
/// models can be checked for a shared upstream without the counts on disk.
pub fn counts_digest(counts: &CountMatrices) -> String {
    let mut h = Sha256::new();
    h.update((counts.n_states() as u64).to_le_bytes());
    for (token, cells) in counts.iter() {
        h.update((token.as_str().len() as u64).to_le_bytes());
        h.update(token.as_str().as_bytes());
        for c in cells {
            h.update(c.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Files written during one command. Each is written to a temporary sibling
/// and renamed into place; `discard` removes everything written so far.
#[derive(Debug, Default)]
pub struct Outputs {
    written: Vec<PathBuf>,
}

impl Outputs {
    pub fn write_with<F>(&mut self, path: &Path, f: F) -> Result<()>
    where
        F: FnOnce(&mut io::BufWriter<fs::File>) -> Result<()>,
    {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let tmp = tmp_path(path);
        let result = (|| {
            let file = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
            let mut w = io::BufWriter::new(file);
            f(&mut w)?;
            w.flush()?;
            Ok(())
        })();
        if let Err(e) = result {
            let _ = fs::remove_file(&tmp);
            return Err(e);
        }
        fs::rename(&tmp, path).with_context(|| format!("moving output into {}", path.display()))?;
        self.written.push(path.to_owned());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, path: &Path, value: &T) -> Result<()> {
        self.write_with(path, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn discard(&mut self) {
        for p in self.written.drain(..) {
            if let Err(e) = fs::remove_file(&p) {
                log::warn!("could not remove partial output {}: {e}", p.display());
            }
        }
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}
