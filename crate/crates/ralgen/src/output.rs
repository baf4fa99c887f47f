//! Output directory: lock, atomic artifacts, CSV and key-value summaries.

use std::fmt::Display;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ralgen_core::checkpoint::write_atomic;

const LOCK: &str = ".ralgen.lock";

/// Exclusive handle on an output directory; the lock file is removed on
/// drop.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    search: Vec<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
#[error("missing checkpoint `{name}` (searched {searched})")]
pub struct MissingCheckpoint {
    pub name: String,
    pub searched: String,
}

impl OutputDir {
    pub fn lock(root: &Path, input: Option<PathBuf>) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let lock = root.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                bail!("output directory {} is locked by another run (remove {} if stale)", root.display(), lock.display())
            }
            Err(e) => return Err(e).with_context(|| format!("locking {}", root.display())),
        }
        let mut search = vec![root.to_path_buf()];
        search.extend(input);
        Ok(Self { root: root.to_path_buf(), search })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// First existing `name` in the output directory, then the input one.
    pub fn find(&self, name: &str) -> Result<PathBuf> {
        self.search.iter().map(|d| d.join(name)).find(|p| p.is_file()).ok_or_else(|| {
            let searched = self.search.iter().map(|d| d.display().to_string()).collect::<Vec<_>>().join(", ");
            MissingCheckpoint { name: name.to_string(), searched }.into()
        })
    }

    pub fn exists(&self, name: &str) -> bool {
        self.find(name).is_ok()
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.path(name), bytes).with_context(|| format!("writing {name}"))
    }

    pub fn write_csv(&self, name: &str, csv: &Csv) -> Result<()> {
        self.write(name, csv.text.as_bytes())
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.root.join(LOCK));
    }
}

/// CSV text with a header row. Floats use Rust's shortest round-trip form.
#[derive(Clone, Debug)]
pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self { text: format!("{}\n", header.join(",")), columns: header.len() }
    }

    pub fn row(&mut self, cells: &[&dyn Display]) {
        assert_eq!(cells.len(), self.columns, "csv row width");
        let line: Vec<String> = cells.iter().map(|c| c.to_string()).collect();
        self.text.push_str(&line.join(","));
        self.text.push('\n');
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

/// Ordered `key = value` lines.
#[derive(Clone, Debug, Default)]
pub struct Summary {
    lines: Vec<(String, String)>,
}

impl Summary {
    pub fn put(&mut self, key: &str, value: impl Display) {
        self.lines.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.lines.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn text(&self) -> String {
        self.lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let a = OutputDir::lock(dir.path(), None).unwrap();
        assert!(OutputDir::lock(dir.path(), None).is_err());
        drop(a);
        let b = OutputDir::lock(dir.path(), None).unwrap();
        b.write("x.txt", b"1").unwrap();
        assert_eq!(fs::read(b.path("x.txt")).unwrap(), b"1");
    }

    #[test]
    fn checkpoints_fall_back_to_input_dir() {
        let out = tempfile::tempdir().unwrap();
        let input = tempfile::tempdir().unwrap();
        fs::write(input.path().join("a.ckpt"), b"in").unwrap();
        let dir = OutputDir::lock(out.path(), Some(input.path().to_path_buf())).unwrap();
        assert_eq!(dir.find("a.ckpt").unwrap(), input.path().join("a.ckpt"));
        dir.write("a.ckpt", b"out").unwrap();
        assert_eq!(dir.find("a.ckpt").unwrap(), out.path().join("a.ckpt"));
        let err = dir.find("b.ckpt").unwrap_err();
        assert!(err.downcast_ref::<MissingCheckpoint>().is_some());
    }

    #[test]
    fn csv_layout() {
        let mut c = Csv::new(&["step", "nll_nats"]);
        c.row(&[&0, &0.5]);
        c.row(&[&1, &1e-7]);
        assert_eq!(c.text(), "step,nll_nats\n0,0.5\n1,0.0000001\n");
    }
}
