//! Staged, all-or-nothing output writing and provenance sidecars.
//!
//! Files are written into a hidden temp directory inside the output
//! directory and renamed into place only once the whole command succeeds.
//! Dropping an uncommitted [`Staging`] removes everything it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use eos_edit_core::{Error, Provenance, Result};
use serde::Serialize;
use tempfile::TempDir;

use crate::config::RunConfig;

pub struct Staging {
    out_dir: PathBuf,
    tmp: TempDir,
    files: Vec<String>,
}

impl Staging {
    pub fn new(out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir)?;
        let tmp = tempfile::Builder::new()
            .prefix(".eos-edit-")
            .tempdir_in(out_dir)?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            tmp,
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        if self.files.iter().any(|f| f == name) {
            return Err(Error::Input(format!("output {name} written twice")));
        }
        fs::write(self.tmp.path().join(name), bytes)?;
        self.files.push(name.to_owned());
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Io(e.into()))?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn write_csv<R: Serialize>(&mut self, name: &str, rows: &[R]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in rows {
            w.serialize(row).map_err(csv_error)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        self.write(name, &bytes)
    }

    /// Renames every staged file into the output directory, in write order.
    pub fn commit(self) -> Result<Vec<PathBuf>> {
        let mut done = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let dest = self.out_dir.join(name);
            if let Err(e) = fs::rename(self.tmp.path().join(name), &dest) {
                for path in &done {
                    let _ = fs::remove_file(path);
                }
                return Err(e.into());
            }
            done.push(dest);
        }
        Ok(done)
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// One prompt as given and as the tokenizer saw it.
#[derive(Debug, Clone, Serialize)]
pub struct PromptRecord {
    pub role: String,
    pub text: String,
    pub normalized: String,
    pub token_ids: Vec<u32>,
    pub eos_index: usize,
}

/// Sidecar written next to every artifact as `<artifact>.provenance.json`.
#[derive(Debug, Serialize)]
pub struct Sidecar<'a> {
    pub artifact: &'a str,
    pub tool: &'static str,
    pub command: &'a [String],
    pub config: &'a RunConfig,
    pub config_digest: String,
    pub encoder_config_digest: Option<String>,
    pub prompts: &'a [PromptRecord],
    pub generations: &'a [Provenance],
    pub details: serde_json::Value,
}

pub fn sidecar_name(artifact: &str) -> String {
    format!("{artifact}.provenance.json")
}
