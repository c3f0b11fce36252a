//! Deterministic artifact emission: CSV files, binary field snapshots, and a
//! manifest carrying the config hash and the hash of every artifact, so that
//! byte-identical reruns are checkable from the manifest alone.

use crate::config::{DerivedQuantities, ExperimentConfig};
use anyhow::Context;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

pub struct ArtifactWriter {
    dir: PathBuf,
    hashes: BTreeMap<String, FileRecord>,
}

#[derive(serde::Serialize)]
pub struct FileRecord {
    pub sha256: String,
    pub bytes: usize,
}

#[derive(serde::Serialize)]
struct Manifest<'a> {
    code_version: &'a str,
    config_hash: String,
    config: &'a ExperimentConfig,
    derived: &'a DerivedQuantities,
    artifacts: &'a BTreeMap<String, FileRecord>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl ArtifactWriter {
    pub fn new(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hashes: BTreeMap::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.hashes.insert(
            name.to_string(),
            FileRecord {
                sha256: hex(&Sha256::digest(bytes)),
                bytes: bytes.len(),
            },
        );
        Ok(())
    }

    /// Finish the run: write `manifest.json` with the config echo, derived
    /// quantities and per-artifact hashes.
    pub fn finalize(
        &mut self,
        config: &ExperimentConfig,
        derived: &DerivedQuantities,
    ) -> anyhow::Result<()> {
        let config_hash = hex(&Sha256::digest(
            serde_json::to_string(config)?.as_bytes(),
        ));
        let manifest = Manifest {
            code_version: env!("CARGO_PKG_VERSION"),
            config_hash,
            config,
            derived,
            artifacts: &self.hashes,
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(self.dir.join("manifest.json"), text)?;
        Ok(())
    }
}

/// CSV column writer with deterministic shortest-round-trip float formatting,
/// comma delimiter, LF line endings.
pub struct Csv {
    buf: String,
}

impl Csv {
    pub fn new(header: &str) -> Self {
        let mut buf = String::new();
        buf.push_str(header);
        buf.push('\n');
        Self { buf }
    }

    pub fn row(&mut self, fields: &[CsvField]) {
        let mut first = true;
        for f in fields {
            if !first {
                self.buf.push(',');
            }
            first = false;
            match f {
                CsvField::Int(v) => self.buf.push_str(&v.to_string()),
                CsvField::Float(v) => self.buf.push_str(&v.to_string()),
                CsvField::Str(s) => self.buf.push_str(s),
            }
        }
        self.buf.push('\n');
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf.into_bytes()
    }
}

pub enum CsvField<'a> {
    Int(i64),
    Float(f64),
    Str(&'a str),
}

pub fn field_csv(field: &pointnls_core::WaveField) -> Vec<u8> {
    let mut csv = Csv::new("x,re,im");
    for (x, v) in field.grid().points().zip(field.values()) {
        csv.row(&[
            CsvField::Float(x),
            CsvField::Float(v.re),
            CsvField::Float(v.im),
        ]);
    }
    csv.into_bytes()
}
