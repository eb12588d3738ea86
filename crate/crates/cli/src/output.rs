//! Output directory writer. Only meta.json carries a timestamp.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::json;

use crate::error::CliError;

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    /// The directory itself is created on first write, so rejected configs leave nothing behind.
    pub fn new(root: &Path) -> Self {
        OutDir { root: root.to_path_buf() }
    }

    fn write(&self, name: &str, text: &str) -> Result<(), CliError> {
        fs::create_dir_all(&self.root).map_err(|e| CliError::Io(format!("cannot create {}: {e}", self.root.display())))?;
        let path = self.root.join(name);
        fs::write(&path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        self.write(name, &text)
    }

    pub fn text(&self, name: &str, text: &str) -> Result<(), CliError> {
        self.write(name, text)
    }

    pub fn matrix(&self, name: &str, m: &DMatrix<f64>) -> Result<(), CliError> {
        self.write(name, &bpca_core::io::matrix_to_csv(m))
    }

    /// Rows of equal length as headerless CSV.
    pub fn rows(&self, name: &str, rows: &[Vec<f64>]) -> Result<(), CliError> {
        let m = if rows.is_empty() {
            DMatrix::zeros(0, 0)
        } else {
            DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
        };
        self.matrix(name, &m)
    }

    pub fn write_meta(&self, command: &str, config: &serde_json::Value) -> Result<(), CliError> {
        let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
        self.json(
            "meta.json",
            &json!({
                "command": command,
                "version": env!("CARGO_PKG_VERSION"),
                "config": config,
                "created_unix_ms": created,
            }),
        )
    }
}
