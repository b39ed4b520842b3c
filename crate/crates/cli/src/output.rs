//! Artifacts are written once each, atomically (temporary file in the same
//! directory, then rename), and recorded in the run manifest.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// File names relative to the output directory, in write order. The
    /// manifest itself comes last.
    pub artifacts: Vec<String>,
    /// `None` in a dry-run plan.
    pub wall_time_s: Option<f64>,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: &str, seed: u64) -> Self {
        Self {
            command: command.into(),
            config_hash: config_hash.into(),
            seed,
            artifacts: Vec::new(),
            wall_time_s: None,
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

pub struct Output {
    dir: PathBuf,
    manifest: RunManifest,
    start: Instant,
}

impl Output {
    pub fn create(dir: &Path, manifest: RunManifest) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), manifest, start: Instant::now() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Write `name` through `fill`, replacing any previous file atomically.
    pub fn write_with(
        &mut self,
        name: &str,
        fill: impl FnOnce(&mut dyn Write) -> crfwi_core::Result<()>,
    ) -> CliResult<()> {
        let path = self.dir.join(name);
        let tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| CliError::io(&self.dir, e))?;
        {
            let mut w = BufWriter::new(tmp.as_file());
            fill(&mut w)?;
            w.flush().map_err(|e| CliError::io(&path, e))?;
        }
        tmp.persist(&path).map_err(|e| CliError::io(&path, e.error))?;
        self.record(name);
        Ok(())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> CliResult<()> {
        self.write_with(name, |w| Ok(w.write_all(text.as_bytes())?))
    }

    /// Add a file that was produced elsewhere in the directory.
    pub fn record(&mut self, name: &str) {
        self.manifest.artifacts.retain(|a| a != name);
        self.manifest.artifacts.push(name.to_string());
    }

    /// A temporary path with the given extension for writers that need a
    /// path, moved to `name` by [`Output::persist_path`].
    pub fn temp_path(&self, extension: &str) -> CliResult<tempfile::TempPath> {
        tempfile::Builder::new()
            .suffix(&format!(".{extension}"))
            .tempfile_in(&self.dir)
            .map(|f| f.into_temp_path())
            .map_err(|e| CliError::io(&self.dir, e))
    }

    pub fn persist_path(&mut self, tmp: tempfile::TempPath, name: &str) -> CliResult<()> {
        let path = self.dir.join(name);
        tmp.persist(&path).map_err(|e| CliError::io(&path, e.error))?;
        self.record(name);
        Ok(())
    }

    /// Write the manifest last and return it.
    pub fn finish(mut self) -> CliResult<RunManifest> {
        self.manifest.wall_time_s = Some(self.start.elapsed().as_secs_f64());
        self.record(MANIFEST_NAME);
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serialises");
        let path = self.dir.join(MANIFEST_NAME);
        let tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| CliError::io(&self.dir, e))?;
        std::fs::write(tmp.path(), json + "\n").map_err(|e| CliError::io(&path, e))?;
        tmp.persist(&path).map_err(|e| CliError::io(&path, e.error))?;
        Ok(self.manifest)
    }
}
