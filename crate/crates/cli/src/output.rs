//! Table writing and run manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{io, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Collects the files a command writes so the manifest can list them.
pub struct OutDir {
    dir: PathBuf,
    format: Format,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(dir: PathBuf, format: Format) -> CliResult<Self> {
        std::fs::create_dir_all(&dir).map_err(io(format!("creating {}", dir.display())))?;
        Ok(OutDir {
            dir,
            format,
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes `rows` as `<stem>.csv` or `<stem>.json` and returns the file name.
    pub fn table<T: Serialize>(&mut self, stem: &str, rows: &[T]) -> CliResult<String> {
        let name = format!("{stem}.{}", self.format.extension());
        self.raw(&name, &render(rows, self.format)?)?;
        Ok(name)
    }

    pub fn raw(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(io(format!("writing {}", path.display())))?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// Writes `manifest.json`. No timestamps, so reruns are byte-identical.
    pub fn finish(mut self, command: &str, seed: u64, inputs: BTreeMap<String, String>) -> CliResult<()> {
        self.written.sort();
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            inputs,
            outputs: &self.written,
        };
        let mut text = serde_json::to_vec_pretty(&manifest)?;
        text.push(b'\n');
        let path = self.path("manifest.json");
        std::fs::write(&path, text).map_err(io(format!("writing {}", path.display())))?;
        Ok(())
    }
}

pub fn render<T: Serialize>(rows: &[T], format: Format) -> CliResult<Vec<u8>> {
    Ok(match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                w.serialize(r)?;
            }
            w.into_inner().map_err(|e| io("buffering CSV")(e.into_error()))?
        }
        Format::Json => {
            let mut v = serde_json::to_vec_pretty(rows)?;
            v.push(b'\n');
            v
        }
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    seed: u64,
    /// Input name to SHA-256 of its bytes.
    inputs: BTreeMap<String, String>,
    outputs: &'a [String],
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(io(format!("reading {}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// File-name-safe version of a hospital id.
pub fn safe_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}
