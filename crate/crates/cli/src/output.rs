//! Output directory handling: atomic writes, a run log, and the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

pub const LOG_FILE: &str = "run.log";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub base_seed: u64,
    pub path_seeds: Vec<u64>,
    pub files: Vec<String>,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
}

/// Tracks every file written during one run so a failed run can be undone.
pub struct OutputDir {
    root: PathBuf,
    hash: String,
    files: Vec<String>,
    timings: BTreeMap<String, f64>,
    log: fs::File,
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

impl OutputDir {
    pub fn create(root: &Path, hash: &str) -> std::io::Result<Self> {
        fs::create_dir_all(root)?;
        let log = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(root.join(LOG_FILE))?;
        Ok(Self {
            root: root.to_path_buf(),
            hash: hash.to_string(),
            files: Vec::new(),
            timings: BTreeMap::new(),
            log,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn log(&mut self, msg: &str) {
        let _ = writeln!(self.log, "{msg}");
    }

    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        let start = Instant::now();
        let out = f(self);
        let secs = start.elapsed().as_secs_f64();
        *self.timings.entry(phase.to_string()).or_default() += secs;
        self.log(&format!("{phase}: {secs:.3}s"));
        out
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> std::io::Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        write_atomic(&path, bytes)?;
        if !self.files.iter().any(|f| f == rel) {
            self.files.push(rel.to_string());
        }
        Ok(())
    }

    /// CSV with a leading comment block carrying the config hash.
    pub fn write_csv(
        &mut self,
        rel: &str,
        body: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) -> std::io::Result<()> {
        let mut buf = format!("# config_hash: {}\n", self.hash).into_bytes();
        body(&mut buf)?;
        self.write(rel, &buf)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> std::io::Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(std::io::Error::other)?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    /// Writes the manifest last; it lists every other file of the run.
    pub fn finish(
        mut self,
        command: &str,
        base_seed: u64,
        path_seeds: Vec<u64>,
    ) -> std::io::Result<()> {
        let mut files = self.files.clone();
        files.push(LOG_FILE.to_string());
        let manifest = Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_hash: self.hash.clone(),
            base_seed,
            path_seeds,
            files,
            timings: std::mem::take(&mut self.timings),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(std::io::Error::other)?;
        bytes.push(b'\n');
        write_atomic(&self.root.join(MANIFEST_FILE), &bytes)
    }

    /// Removes the files written so far; the log stays.
    pub fn abandon(mut self, reason: &str) {
        self.log(&format!("failed: {reason}"));
        for f in &self.files {
            let path = self.root.join(f);
            let _ = fs::remove_file(&path);
            // Only empty directories go.
            let mut dir = path.parent();
            while let Some(d) = dir.filter(|d| *d != self.root) {
                if fs::remove_dir(d).is_err() {
                    break;
                }
                dir = d.parent();
            }
        }
        let _ = fs::remove_file(self.root.join(MANIFEST_FILE));
    }
}
