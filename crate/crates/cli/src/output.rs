//! Output directory handling and run metadata.

use std::fs;
use std::io::Write;
use std::path::{Component, Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const TOOL: &str = "symplectic-ml";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Identifies a run: rerunning with the same seed and configuration
/// reproduces every output file.
#[derive(Debug, Clone, Serialize)]
pub struct RunMeta {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config: serde_json::Value,
}

impl RunMeta {
    pub fn new<C: Serialize>(command: &str, seed: u64, config: &C) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        let config_sha256 = hex::encode(Sha256::digest(serde_json::to_vec(&config)?));
        Ok(Self {
            tool: TOOL,
            version: VERSION,
            command: command.to_string(),
            seed,
            config_sha256,
            config,
        })
    }

    /// `#`-prefixed lines placed above every CSV table.
    pub fn csv_header(&self) -> String {
        format!(
            "# {} {}\n# command: {}\n# seed: {}\n# config_sha256: {}\n",
            self.tool, self.version, self.command, self.seed, self.config_sha256
        )
    }
}

/// The only directory a command writes into.
#[derive(Debug, Clone)]
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(Self { root: root.to_path_buf() })
    }

    /// Path of a plain file name inside the directory.
    pub fn path(&self, name: &str) -> Result<PathBuf> {
        let p = Path::new(name);
        let mut parts = p.components();
        match (parts.next(), parts.next()) {
            (Some(Component::Normal(_)), None) => Ok(self.root.join(p)),
            _ => bail!("output name '{name}' must be a plain file name"),
        }
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name)?;
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    /// A CSV file with the metadata header followed by whatever `body` writes.
    pub fn write_csv<F>(&self, name: &str, meta: &RunMeta, body: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut buf = meta.csv_header().into_bytes();
        body(&mut buf)?;
        self.write_bytes(name, &buf)
    }

    pub fn write_metadata(&self, meta: &RunMeta) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(meta)?;
        text.push('\n');
        self.write_bytes("metadata.json", text.as_bytes())
    }
}

/// Serialize `rows` as CSV with a header row.
pub fn csv_rows<W: Write, T: Serialize>(out: W, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_escaping_names() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutDir::create(dir.path()).unwrap();
        assert!(out.path("a.csv").is_ok());
        for bad in ["../a.csv", "sub/a.csv", "/etc/passwd", "..", ""] {
            assert!(out.path(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn hash_depends_on_config_only() {
        let a = RunMeta::new("x", 1, &serde_json::json!({"a": 1, "b": 2})).unwrap();
        let b = RunMeta::new("x", 2, &serde_json::json!({"b": 2, "a": 1})).unwrap();
        let c = RunMeta::new("x", 1, &serde_json::json!({"a": 1, "b": 3})).unwrap();
        assert_eq!(a.config_sha256, b.config_sha256);
        assert_ne!(a.config_sha256, c.config_sha256);
        assert!(a.csv_header().starts_with("# symplectic-ml "));
    }
}
