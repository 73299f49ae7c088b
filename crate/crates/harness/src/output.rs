//! Self-describing output files and the run manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, ExperimentConfig};
use crate::error::{HarnessError, Result};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    pub kind: String,
    /// Seconds since the Unix epoch.
    pub started: f64,
    pub finished: f64,
    /// Configuration with every default filled in.
    pub config: ExperimentConfig,
    pub files: Vec<FileEntry>,
    pub warnings: Vec<String>,
    /// `false` when the run stopped early; the files listed are what was written.
    pub complete: bool,
    pub error: Option<String>,
}

/// A column name with its unit.
pub type Column<'a> = (&'a str, &'a str);

pub struct OutputDir {
    root: PathBuf,
    kind: String,
    config_hash: String,
    files: Vec<FileEntry>,
}

/// Shortest round-trip representation; identical inputs give identical bytes.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:e}")
    }
}

impl OutputDir {
    pub fn create(root: &Path, config: &ExperimentConfig) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(HarnessError::io(root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            kind: config.kind().name().to_string(),
            config_hash: config.hash_hex(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(name);
        std::fs::write(&path, bytes).map_err(HarnessError::io(path.display()))?;
        self.files.push(FileEntry {
            name: name.to_string(),
            sha256: hex(&Sha256::digest(bytes)),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    /// Comma-separated table with `#` metadata lines: title, config hash, version,
    /// column units and any extra `meta` lines.
    pub fn write_table(&mut self, name: &str, title: &str, columns: &[Column], meta: &[String], rows: &[Vec<f64>]) -> Result<()> {
        let mut s = String::new();
        s += &format!("# tnt {}: {title}\n", self.kind);
        s += &format!("# config_hash: {}\n", self.config_hash);
        s += &format!("# code_version: {CODE_VERSION}\n");
        let units: Vec<String> = columns.iter().map(|(c, u)| format!("{c} [{u}]")).collect();
        s += &format!("# units: {}\n", units.join(", "));
        for m in meta {
            s += &format!("# {m}\n");
        }
        let names: Vec<&str> = columns.iter().map(|c| c.0).collect();
        s += &names.join(",");
        s.push('\n');
        for row in rows {
            debug_assert_eq!(row.len(), columns.len());
            let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
            s += &cells.join(",");
            s.push('\n');
        }
        self.write_bytes(name, s.as_bytes())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("report serialises");
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }

    /// Write the manifest; always the last file of a run.
    pub fn finish(
        self,
        config: &ExperimentConfig,
        started: f64,
        warnings: Vec<String>,
        error: Option<String>,
    ) -> Result<RunManifest> {
        let manifest = RunManifest {
            config_hash: self.config_hash,
            code_version: CODE_VERSION.to_string(),
            kind: self.kind,
            started,
            finished: unix_now(),
            config: config.clone(),
            files: self.files,
            warnings,
            complete: error.is_none(),
            error,
        };
        let path = self.root.join(MANIFEST_NAME);
        let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serialises");
        bytes.push(b'\n');
        std::fs::write(&path, bytes).map_err(HarnessError::io(path.display()))?;
        Ok(manifest)
    }
}

pub fn unix_now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// Parsed table: column names and rows, `#` lines skipped.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path).map_err(HarnessError::io(path.display()))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| HarnessError::Config(format!("{}: empty table", path.display())))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| HarnessError::Config(format!("{}: data row {}: {e}", path.display(), i + 1)))?;
        if row.len() != header.len() {
            return Err(HarnessError::Config(format!(
                "{}: data row {} has {} cells, expected {}",
                path.display(),
                i + 1,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok((header, rows))
}
