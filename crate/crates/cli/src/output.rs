//! Output directory handling: files written through [`OutputDir`] are
//! removed again unless the run commits, so a failed run leaves nothing
//! half-written behind.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cli::Cli;
use crate::error::{Classify, CliResult};

pub const MANIFEST_FILE: &str = "run_manifest.json";

pub struct OutputDir {
    root: PathBuf,
    created_root: bool,
    written: Vec<PathBuf>,
    committed: bool,
}

impl OutputDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        let created_root = !root.exists();
        fs::create_dir_all(root).input_with(|| format!("creating output directory {}", root.display()))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            created_root,
            written: Vec::new(),
            committed: false,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Records a file or directory written by someone else under the root.
    pub fn track(&mut self, name: &str) -> PathBuf {
        let p = self.path(name);
        self.written.push(p.clone());
        p
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> CliResult<PathBuf> {
        let p = self.track(name);
        fs::write(&p, contents).input_with(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> CliResult<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).input()?;
        text.push('\n');
        self.write(name, text)
    }

    /// Keeps what was written so far even though the run fails.
    pub fn keep(&mut self) {
        self.committed = true;
    }

    /// Writes the run manifest and keeps every output.
    pub fn commit(mut self, cli: &Cli) -> CliResult<()> {
        self.write_json(MANIFEST_FILE, &RunManifest::new(cli)?)?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        if self.created_root {
            let _ = fs::remove_dir_all(&self.root);
            return;
        }
        for p in self.written.iter().rev() {
            if p.is_dir() {
                let _ = fs::remove_dir_all(p);
            } else {
                let _ = fs::remove_file(p);
            }
        }
    }
}

/// Provenance of one run. The timestamp lives only here, so every other
/// output is byte-identical across reruns with the same config and seed.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub finished_at: String,
}

impl RunManifest {
    pub fn new(cli: &Cli) -> CliResult<Self> {
        let config = serde_json::to_value(cli).input()?;
        let canonical = serde_json::to_string(&config).input()?;
        Ok(RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: cli.command.name(),
            seed: cli.global.seed,
            config_sha256: hex::encode(Sha256::digest(canonical.as_bytes())),
            config,
            finished_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
        })
    }
}
