use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

impl FileDigest {
    fn of(path: String, data: &[u8]) -> Self {
        FileDigest { path, bytes: data.len() as u64, sha256: sha256_hex(data) }
    }
}

/// Everything needed to re-run a command and check its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

pub(crate) fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(io_err(path))
}

/// An output directory that tracks what was written to it.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    inputs: BTreeMap<String, FileDigest>,
    outputs: BTreeMap<String, FileDigest>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        Ok(OutputDir { root: root.to_path_buf(), inputs: BTreeMap::new(), outputs: BTreeMap::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn record_input(&mut self, label: impl Into<String>, data: &[u8]) {
        let label = label.into();
        self.inputs.insert(label.clone(), FileDigest::of(label, data));
    }

    /// Writes `rel` under the root, creating parent directories.
    pub fn write(&mut self, rel: &str, data: impl AsRef<[u8]>) -> Result<(), CliError> {
        let data = data.as_ref();
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::write(&path, data).map_err(io_err(&path))?;
        self.outputs.insert(rel.to_string(), FileDigest::of(rel.to_string(), data));
        Ok(())
    }

    /// Adds files already on disk below the root (written by nested
    /// commands) to the output list, in sorted order.
    pub fn adopt_tree(&mut self) -> Result<(), CliError> {
        for entry in walkdir::WalkDir::new(&self.root).sort_by_file_name() {
            let entry = entry.map_err(|e| CliError::Io { path: self.root.clone(), source: e.into() })?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = relative(&self.root, entry.path());
            if rel == MANIFEST_FILE {
                continue;
            }
            let data = read(entry.path())?;
            self.outputs.insert(rel.clone(), FileDigest::of(rel, &data));
        }
        Ok(())
    }

    pub fn finish(self, command: &str, seed: u64, config: Value) -> Result<Manifest, CliError> {
        let manifest = Manifest {
            tool: "afdo".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config,
            inputs: self.inputs.into_values().collect(),
            outputs: self.outputs.into_values().collect(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        text.push('\n');
        let path = self.root.join(MANIFEST_FILE);
        fs::write(&path, text).map_err(io_err(&path))?;
        Ok(manifest)
    }
}

/// Forward-slash path of `path` relative to `root`.
pub(crate) fn relative(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect::<Vec<_>>().join("/")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_outputs_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        out.write("b.csv", "x\n").unwrap();
        out.write("a/c.csv", "y\n").unwrap();
        out.record_input("in.tsv", b"z");
        let m = out.finish("test", 42, Value::Null).unwrap();
        let paths: Vec<&str> = m.outputs.iter().map(|f| f.path.as_str()).collect();
        assert_eq!(paths, ["a/c.csv", "b.csv"]);
        assert_eq!(m.outputs[1].sha256, sha256_hex(b"x\n"));
        let on_disk: Manifest = serde_json::from_slice(&fs::read(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(on_disk, m);
    }

    #[test]
    fn adopted_tree_skips_the_manifest() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("s")).unwrap();
        fs::write(dir.path().join("s/x.txt"), "1").unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "{}").unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        out.adopt_tree().unwrap();
        let m = out.finish("t", 1, Value::Null).unwrap();
        assert_eq!(m.outputs.len(), 1);
        assert_eq!(m.outputs[0].path, "s/x.txt");
    }
}
