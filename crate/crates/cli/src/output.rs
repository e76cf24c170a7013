//! CSV files and the run manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

/// A float at 17 significant digits; empty when absent.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// One cell of a CSV row.
pub enum Cell {
    F(f64),
    O(Option<f64>),
    S(String),
    U(u64),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) => num(*x),
            Cell::O(x) => opt(*x),
            Cell::S(s) => s.clone(),
            Cell::U(u) => u.to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config: &'a RunConfig,
    versions: Versions,
    threads: usize,
    wall_time_s: f64,
    files: &'a [FileEntry],
}

#[derive(Debug, Serialize)]
struct Versions {
    #[serde(rename = "pwl-fhn")]
    library: &'static str,
    #[serde(rename = "pwl-fhn-cli")]
    cli: &'static str,
}

/// Output directory that keeps track of what it wrote.
pub struct OutDir {
    dir: PathBuf,
    files: Vec<FileEntry>,
    started: Instant,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.files.push(FileEntry {
            path: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: format!("{:x}", Sha256::digest(bytes)),
        });
        Ok(())
    }

    /// Writes a CSV with a header row and LF line endings.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<Cell>>) -> Result<(), CliError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let io = |e: csv::Error| CliError::Io(format!("{name}: {e}"));
        w.write_record(header).map_err(io)?;
        for row in rows {
            w.write_record(row.iter().map(Cell::render)).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(format!("{name}: {e}")))?;
        self.put(name, &bytes)
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish(self, command: &str, config: &RunConfig) -> Result<(), CliError> {
        let m = Manifest {
            command,
            config,
            versions: Versions {
                library: pwl_fhn::VERSION,
                cli: env!("CARGO_PKG_VERSION"),
            },
            threads: rayon::current_num_threads(),
            wall_time_s: self.started.elapsed().as_secs_f64(),
            files: &self.files,
        };
        let mut text = serde_json::to_string_pretty(&m).expect("manifest serialises");
        text.push('\n');
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(0.028).parse::<f64>().unwrap(), 0.028);
        assert_eq!(num(-2.0), "-2.0000000000000000e0");
        assert_eq!(opt(None), "");
    }
}
