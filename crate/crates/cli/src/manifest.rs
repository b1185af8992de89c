//! Run manifests: what ran, with which config, and digests of what it read
//! and wrote. No timestamps, so identical runs give identical manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use histyle_core::hierarchy::{BUNDLE_FORMAT, BUNDLE_VERSION};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{hex, RunConfig};
use crate::CliError;

pub const MANIFEST_FORMAT: &str = "histyle-run";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub format: &'static str,
    pub version: u32,
    pub command: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub seeds: BTreeMap<&'static str, u64>,
    pub versions: BTreeMap<&'static str, String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Command-specific resolved settings and summary numbers.
    pub details: serde_json::Value,
}

/// Collects inputs and outputs while a command runs.
#[derive(Debug)]
pub struct Run {
    pub command: String,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    details: serde_json::Map<String, serde_json::Value>,
}

impl Run {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            details: serde_json::Map::new(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("detail serializes");
        self.details.insert(key.into(), v);
    }

    fn build(self, cfg: &RunConfig) -> Result<RunManifest, CliError> {
        let seeds = BTreeMap::from([
            ("run", cfg.seed),
            ("corpus", cfg.corpus.seed),
            ("annotation", cfg.annotation.loop_config.seed),
        ]);
        let versions = BTreeMap::from([
            ("histyle", env!("CARGO_PKG_VERSION").to_string()),
            ("model_bundle", format!("{BUNDLE_FORMAT}/{BUNDLE_VERSION}")),
            ("run_manifest", format!("{MANIFEST_FORMAT}/{MANIFEST_VERSION}")),
        ]);
        Ok(RunManifest {
            format: MANIFEST_FORMAT,
            version: MANIFEST_VERSION,
            command: self.command,
            config: cfg.clone(),
            config_hash: cfg.hash(),
            seeds,
            versions,
            inputs: digest_all(&self.inputs)?,
            outputs: digest_all(&self.outputs)?,
            details: serde_json::Value::Object(self.details),
        })
    }

    /// Write `run-<command>.json` into the output directory.
    pub fn finish(self, cfg: &RunConfig) -> Result<PathBuf, CliError> {
        let path = cfg.out(&format!("run-{}.json", self.command));
        let manifest = self.build(cfg)?;
        let mut text = serde_json::to_string_pretty(&manifest).map_err(histyle_core::Error::from)?;
        text.push('\n');
        std::fs::create_dir_all(&cfg.paths.out_dir).map_err(|e| CliError::io(&cfg.paths.out_dir, e))?;
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

/// Files are digested directly; directories contribute every file below
/// them in sorted order.
fn digest_all(paths: &[PathBuf]) -> Result<Vec<FileDigest>, CliError> {
    let mut files = Vec::new();
    for p in paths {
        collect_files(p, &mut files)?;
    }
    files
        .into_iter()
        .map(|path| {
            let data = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
            Ok(FileDigest {
                sha256: hex(&Sha256::digest(&data)),
                bytes: data.len() as u64,
                path,
            })
        })
        .collect()
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| CliError::io(path, e))?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::io(path, e))?;
        entries.sort();
        for e in entries {
            collect_files(&e, out)?;
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directories_expand_sorted() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("b")).unwrap();
        std::fs::write(dir.path().join("b/z"), "1").unwrap();
        std::fs::write(dir.path().join("a"), "abc").unwrap();
        let d = digest_all(&[dir.path().to_path_buf()]).unwrap();
        assert_eq!(d.len(), 2);
        assert!(d[0].path.ends_with("a"));
        assert_eq!(d[0].sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(d[1].bytes, 1);
    }
}
