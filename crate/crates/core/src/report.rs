//! Artifact output: matrices as CSV, reports as JSON, plot data as CSV.
//!
//! Outputs are byte-for-byte reproducible: no timestamps, sorted JSON keys
//! and fixed number formatting.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{sig_digits, PseudometricMatrix, AXIOM_TOL};

/// Name of the lock file guarding an output directory.
pub const LOCK_FILE: &str = ".bisimetric.lock";

/// Exclusive use of an output directory for one run; released on drop.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    lock: PathBuf,
}

impl OutputDir {
    /// Creates `root` if needed and takes its lock.
    pub fn acquire(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::Io(format!("cannot create {}: {e}", root.display())))?;
        let lock = root.join(LOCK_FILE);
        let mut f = OpenOptions::new().write(true).create_new(true).open(&lock).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                Error::InvalidConfig(format!(
                    "output directory {} is in use by another run (remove {} if that run is gone)",
                    root.display(),
                    lock.display()
                ))
            } else {
                Error::Io(format!("cannot lock {}: {e}", root.display()))
            }
        })?;
        writeln!(f, "{}", std::process::id())?;
        Ok(Self { root: root.to_path_buf(), lock })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes a matrix after checking the pseudometric axioms.
    pub fn matrix_csv(&self, name: &str, labels: &[String], m: &PseudometricMatrix) -> Result<PathBuf> {
        m.validate(AXIOM_TOL)?;
        let path = self.path(name);
        let mut w = BufWriter::new(File::create(&path)?);
        m.write_csv(labels, &mut w)?;
        w.flush()?;
        Ok(path)
    }

    /// Writes pretty-printed JSON with a trailing newline.
    pub fn json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, to_json_string(value)?)?;
        Ok(path)
    }

    /// Writes rows of already formatted cells under `header`.
    pub fn csv_rows(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Io(e.to_string()))?;
        w.write_record(header).map_err(|e| Error::Io(e.to_string()))?;
        for row in rows {
            w.write_record(row).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(path)
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

/// Deterministic pretty JSON.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::Io(format!("json: {e}")))?;
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| Error::Io(format!("json: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// Number formatting used in every CSV cell.
pub fn cell(v: f64) -> String {
    sig_digits(v, 12)
}
