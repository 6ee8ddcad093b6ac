use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

/// What a command ran with and what it produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    /// Command-specific arguments besides the configuration.
    pub args: BTreeMap<String, String>,
    pub config: ExperimentConfig,
    pub threads: Option<usize>,
    /// Content hash of every input, keyed by path.
    pub inputs: BTreeMap<String, String>,
    /// Hash over `inputs`, git-tree style.
    pub input_hash: String,
    pub outputs: BTreeMap<String, String>,
    /// Parameter hashes of the networks the command loaded or trained.
    pub components: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| CliError::io(dir, err)))
        .collect::<CliResult<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// SHA-256 of a file, or of the sorted `(relative path, file hash)` list of
/// a directory.
pub fn hash_path(path: &Path) -> CliResult<String> {
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, &mut files)?;
        let mut h = Sha256::new();
        for f in files {
            let rel = f.strip_prefix(path).unwrap_or(&f);
            h.update(rel.to_string_lossy().as_bytes());
            h.update([0]);
            h.update(hash_path(&f)?.as_bytes());
            h.update([b'\n']);
        }
        Ok(hex(&h.finalize()))
    } else {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok(hex(&Sha256::digest(&bytes)))
    }
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    root: PathBuf,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: &ExperimentConfig, threads: Option<usize>) -> Self {
        Self {
            root: config.output_dir.clone(),
            manifest: RunManifest {
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                command: command.to_string(),
                args: BTreeMap::new(),
                config: config.clone(),
                threads,
                inputs: BTreeMap::new(),
                input_hash: String::new(),
                outputs: BTreeMap::new(),
                components: BTreeMap::new(),
                started_unix: now_unix(),
                finished_unix: 0,
            },
        }
    }

    fn key(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .to_string_lossy()
            .into_owned()
    }

    pub fn arg(&mut self, key: &str, value: impl ToString) {
        self.manifest.args.insert(key.to_string(), value.to_string());
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let h = hash_path(path)?;
        self.manifest.inputs.insert(self.key(path), h);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> CliResult<()> {
        let h = hash_path(path)?;
        self.manifest.outputs.insert(self.key(path), h);
        Ok(())
    }

    pub fn component(&mut self, name: &str, hash: String) {
        self.manifest.components.insert(name.to_string(), hash);
    }

    /// Writes `<output_dir>/manifests/<command>.json`.
    pub fn finish(mut self) -> CliResult<RunManifest> {
        let mut h = Sha256::new();
        for (k, v) in &self.manifest.inputs {
            h.update(k.as_bytes());
            h.update([0]);
            h.update(v.as_bytes());
            h.update([b'\n']);
        }
        self.manifest.input_hash = hex(&h.finalize());
        self.manifest.finished_unix = now_unix();
        let dir = self.root.join("manifests");
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let path = dir.join(format!("{}.json", self.manifest.command));
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|e| CliError::Failed(e.to_string()))?;
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(self.manifest)
    }
}

pub fn read_manifest(path: &Path) -> CliResult<RunManifest> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
