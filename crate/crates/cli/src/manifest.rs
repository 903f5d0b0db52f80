use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

/// Record of one command invocation, enough to replay it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: BTreeMap<String, String>,
    pub config_hash: Option<String>,
    pub dataset: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub checkpoint: Option<PathBuf>,
    pub reports: Vec<PathBuf>,
    /// Stage name -> seconds.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            args: std::env::args().collect(),
            ..Self::default()
        }
    }

    /// Writes to a sibling temp file, then renames over `path`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&tmp, text).with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, path).with_context(|| format!("moving manifest to {}", path.display()))?;
        Ok(())
    }
}
