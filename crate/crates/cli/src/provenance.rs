//! Run directories and their `run-manifest.json`: config hash, seed and
//! content hashes of every input read and output written.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::failure::{CmdResult, OutputContext};

pub const RUN_MANIFEST: &str = "run-manifest.json";

/// Git-style blob hash (`blob <len>\0<bytes>`), computed with SHA-256.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    tool_version: &'a str,
    config_sha256: &'a str,
    seed: u64,
    inputs: &'a BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

/// Output directory of one command invocation.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    command: &'static str,
    inputs: BTreeMap<String, String>,
    written: Vec<PathBuf>,
}

impl RunDir {
    pub fn create(root: &Path, command: &'static str) -> CmdResult<Self> {
        std::fs::create_dir_all(root).output("output directory")?;
        Ok(Self {
            root: root.to_path_buf(),
            command,
            inputs: BTreeMap::new(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Hashes an input file. Missing files are a data error.
    pub fn input(&mut self, path: &Path) -> CmdResult {
        let bytes = std::fs::read(path)
            .map_err(|e| anyhow::anyhow!("cannot read input {}: {e}", path.display()))?;
        self.inputs.insert(path.display().to_string(), blob_hash(&bytes));
        Ok(())
    }

    /// Absolute location for output `rel`, registered for hashing; parent
    /// directories are created.
    pub fn output(&mut self, rel: impl AsRef<Path>) -> CmdResult<PathBuf> {
        let rel = rel.as_ref().to_path_buf();
        let path = self.root.join(&rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).output(&parent.display().to_string())?;
        }
        self.written.push(rel);
        Ok(path)
    }

    /// Registers a file some library call already wrote under the root.
    pub fn register(&mut self, rel: impl AsRef<Path>) {
        self.written.push(rel.as_ref().to_path_buf());
    }

    pub fn write(&mut self, rel: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> CmdResult {
        let path = self.output(rel)?;
        std::fs::write(&path, contents).output(&path.display().to_string())
    }

    pub fn finish(self, config_hash: &str, seed: u64) -> CmdResult {
        let mut outputs = BTreeMap::new();
        for rel in &self.written {
            let bytes = std::fs::read(self.root.join(rel)).output(&rel.display().to_string())?;
            outputs.insert(rel.display().to_string(), blob_hash(&bytes));
        }
        let manifest = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION"),
            config_sha256: config_hash,
            seed,
            inputs: &self.inputs,
            outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("run manifest serializes");
        text.push('\n');
        std::fs::write(self.root.join(RUN_MANIFEST), text).output(RUN_MANIFEST)
    }
}

/// Path of `target` relative to directory `base`, both taken relative to
/// the working directory when not absolute.
pub fn relative_to(target: &Path, base: &Path) -> std::io::Result<PathBuf> {
    let t = std::path::absolute(target)?;
    let b = std::path::absolute(base)?;
    let tc: Vec<_> = t.components().collect();
    let bc: Vec<_> = b.components().collect();
    let common = tc.iter().zip(&bc).take_while(|(x, y)| x == y).count();
    let mut out = PathBuf::new();
    for _ in common..bc.len() {
        out.push("..");
    }
    for c in &tc[common..] {
        out.push(c);
    }
    Ok(out)
}
