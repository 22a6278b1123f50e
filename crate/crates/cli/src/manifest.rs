//! Per-command run manifests: config hash, seeds and the files produced.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use emg2text::{Error, Result};

use crate::config::RunConfig;

pub const MANIFEST_DIR: &str = "manifests";

/// Components whose seeds derive from the run seed.
pub const COMPONENTS: &[&str] = &["corpus", "split", "lm", "lm-pretrain", "train", "pid-corpus", "pid-adaptor", "pid"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub component_seeds: Vec<(String, u64)>,
    pub config: RunConfig,
    pub summary: Value,
    pub files: Vec<FileEntry>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<FileEntry>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            walk(root, &path, out)?;
        } else {
            let data = fs::read(&path).map_err(|err| Error::Io { path: path.clone(), source: err })?;
            let rel = path.strip_prefix(root).unwrap_or(&path);
            out.push(FileEntry {
                path: rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"),
                bytes: data.len() as u64,
                sha256: hex::encode(Sha256::digest(&data)),
            });
        }
    }
    Ok(())
}

/// Writes `manifests/<command>.json` listing every file under `outputs`.
pub fn write_manifest(cfg: &RunConfig, command: &str, outputs: &str, summary: Value, started: u64) -> Result<RunManifest> {
    let run_dir = cfg.run_dir();
    let mut files = Vec::new();
    let out_dir = run_dir.join(outputs);
    if out_dir.exists() {
        walk(&run_dir, &out_dir, &mut files)?;
    }
    let manifest = RunManifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        run_id: cfg.run_id.clone(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        component_seeds: COMPONENTS.iter().map(|c| (c.to_string(), cfg.seed_for(c))).collect(),
        config: cfg.clone(),
        summary,
        files,
        started_unix: started,
        finished_unix: unix_now(),
    };
    let dir = run_dir.join(MANIFEST_DIR);
    fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    let path = dir.join(format!("{command}.json"));
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::Io { path, source: e })?;
    Ok(manifest)
}
