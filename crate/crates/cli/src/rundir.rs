//! Run directory layout and per-command manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const SUBDIRS: [&str; 9] = ["config", "manifests", "layouts", "checkpoints", "labels", "trees", "recipes", "metrics", "svg"];

pub const CONFIG: &str = "config/config.json";
pub const CLIPS: &str = "layouts/clips";
pub const CHECKPOINT: &str = "checkpoints/policy.json";
pub const REWARD_TRACE: &str = "checkpoints/reward_trace.csv";
pub const MOVEMENTS: &str = "checkpoints/movements.json";
pub const POOL: &str = "labels/pool.json";
pub const LABELS: &str = "labels/records";
pub const PROVENANCE: &str = "labels/provenance.jsonl";
pub const TREE_POOL: &str = "trees/pool.json";
pub const TREE_REPORT: &str = "trees/report.json";
pub const RULES: &str = "recipes/rules.jsonl";
pub const SCRIPT: &str = "recipes/recipe.txt";
pub const REPORT: &str = "metrics/report.csv";

pub fn tree_path(kind: opcrecipe::geometry::PointKind) -> String {
    format!("trees/{}.json", kind.as_str().to_lowercase())
}

pub fn importance_path(kind: opcrecipe::geometry::PointKind) -> String {
    format!("trees/importance_{}.csv", kind.as_str().to_lowercase())
}

pub fn metrics_path(variant: crate::config::Variant) -> String {
    format!("metrics/{}.csv", variant.as_str())
}

pub fn masks_dir(variant: crate::config::Variant) -> String {
    format!("layouts/mask_{}", variant.as_str().replace('+', "_"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// A run directory plus the manifest of the command writing into it.
pub struct RunDir {
    pub root: PathBuf,
    manifest: Manifest,
}

impl RunDir {
    pub fn open(root: &Path, command: &str, cfg: &RunConfig) -> Result<Self, CliError> {
        for d in SUBDIRS {
            fs::create_dir_all(root.join(d))?;
        }
        let versions = BTreeMap::from([
            ("opcrecipe".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("manifest".to_string(), "1".to_string()),
        ]);
        Ok(Self {
            root: root.to_path_buf(),
            manifest: Manifest {
                command: command.into(),
                config_hash: cfg.hash(),
                seed: cfg.seed,
                versions,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
            },
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Reads an input artifact, naming the command that produces it when absent.
    pub fn read(&mut self, rel: &str, producer: &'static str) -> Result<Vec<u8>, CliError> {
        let p = self.path(rel);
        let bytes = fs::read(&p).map_err(|_| CliError::Missing { path: p, producer })?;
        self.manifest.inputs.insert(rel.into(), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn read_string(&mut self, rel: &str, producer: &'static str) -> Result<String, CliError> {
        String::from_utf8(self.read(rel, producer)?).map_err(|e| CliError::Runtime(format!("{rel}: {e}")))
    }

    /// Files of a directory artifact in name order, as (relative path, text).
    pub fn read_dir(&mut self, rel: &str, ext: &str, producer: &'static str) -> Result<Vec<(String, String)>, CliError> {
        let dir = self.path(rel);
        let mut names: Vec<String> = match fs::read_dir(&dir) {
            Ok(it) => it
                .filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .filter(|n| n.ends_with(ext))
                .collect(),
            Err(_) => Vec::new(),
        };
        if names.is_empty() {
            return Err(CliError::Missing { path: dir, producer });
        }
        names.sort();
        names
            .into_iter()
            .map(|n| {
                let r = format!("{rel}/{n}");
                let text = self.read_string(&r, producer)?;
                Ok((r, text))
            })
            .collect()
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&p, bytes)?;
        self.manifest.outputs.insert(rel.into(), sha256_hex(bytes));
        Ok(())
    }

    /// Empties a directory artifact before it is rewritten.
    pub fn reset_dir(&self, rel: &str) -> Result<(), CliError> {
        let p = self.path(rel);
        if p.exists() {
            fs::remove_dir_all(&p)?;
        }
        fs::create_dir_all(&p)?;
        Ok(())
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Writes `manifests/<command>.json` and returns the manifest.
    pub fn finish(self) -> Result<Manifest, CliError> {
        let text = serde_json::to_string_pretty(&self.manifest)?;
        let name = self.manifest.command.replace('+', "_");
        fs::write(self.root.join(format!("manifests/{name}.json")), text + "\n")?;
        Ok(self.manifest)
    }
}
