//! Output directory handling and the run manifest.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance record written once per output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub seed: u64,
    pub out_dir: String,
    pub version: String,
    /// RFC 3339 UTC time of the run; the only non-deterministic field.
    pub timestamp: String,
    pub overrides: Vec<String>,
    pub outputs: Vec<String>,
    /// Fully resolved configuration.
    pub config: serde_json::Value,
}

/// Collects output files for one run.
pub struct OutDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root)
            .map_err(|e| CliError::Failure(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    /// Registers `name` and returns its full path.
    pub fn path(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.root.join(name)
    }

    pub fn writer(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        Ok(BufWriter::new(File::create(self.path(name))?))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(self.path(name), text)?;
        Ok(())
    }

    pub fn finish(self, mut manifest: RunManifest) -> Result<(), CliError> {
        manifest.outputs = self.files;
        manifest.outputs.sort();
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(self.root.join(MANIFEST_FILE), text)?;
        Ok(())
    }
}
