use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputEntry {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// One per run. Only `wall_clock_seconds` varies between identical invocations.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<String>,
    pub seed: Option<u64>,
    pub version: String,
    pub arguments: BTreeMap<String, String>,
    pub exit_code: i32,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<OutputEntry>,
}

/// A run directory that records the hash of everything written into it.
pub struct RunDir {
    root: PathBuf,
    started: Instant,
    outputs: Vec<OutputEntry>,
}

impl RunDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        for sub in ["solution", "reports", "plots"] {
            let p = root.join(sub);
            std::fs::create_dir_all(&p).map_err(|source| CliError::Io {
                path: p.display().to_string(),
                source,
            })?;
        }
        Ok(Self {
            root: root.to_path_buf(),
            started: Instant::now(),
            outputs: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, contents: &str) -> CliResult<()> {
        let p = self.root.join(rel);
        std::fs::write(&p, contents).map_err(|source| CliError::Io {
            path: p.display().to_string(),
            source,
        })?;
        self.outputs.retain(|o| o.path != rel);
        self.outputs.push(OutputEntry {
            path: rel.to_string(),
            sha256: sha256_hex(contents.as_bytes()),
            bytes: contents.len(),
        });
        Ok(())
    }

    /// Writes `manifest.json` with outputs in path order.
    pub fn finish(
        mut self,
        command: &str,
        config: Option<&Path>,
        seed: Option<u64>,
        arguments: BTreeMap<String, String>,
        exit_code: i32,
    ) -> CliResult<RunManifest> {
        self.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = RunManifest {
            command: command.to_string(),
            config: config.map(|p| p.display().to_string()),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            arguments,
            exit_code,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            outputs: self.outputs,
        };
        let p = self.root.join("manifest.json");
        std::fs::write(&p, tilq::io::to_json_pretty(&manifest)).map_err(|source| CliError::Io {
            path: p.display().to_string(),
            source,
        })?;
        Ok(manifest)
    }
}
