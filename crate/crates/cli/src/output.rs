//! Staged output files. Nothing is written until the command finishes;
//! files then go to `<name>.partial` and are renamed only on success, so
//! an interrupted or failed run never leaves an unsuffixed file behind.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

pub struct Output {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Output {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf(), files: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into()));
    }

    /// Stages a file produced by a writer callback.
    pub fn add_with<F>(&mut self, name: impl Into<String>, f: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.add(name, buf);
        Ok(())
    }

    fn write_all(&self, finalize: bool) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        let mut written = Vec::new();
        for (name, bytes) in &self.files {
            let partial = self.dir.join(format!("{name}.partial"));
            if let Some(parent) = partial.parent() {
                std::fs::create_dir_all(parent)?;
            }
            let mut f = std::fs::File::create(&partial).with_context(|| format!("creating {}", partial.display()))?;
            f.write_all(bytes)?;
            f.sync_all()?;
            written.push(partial);
        }
        if finalize {
            for (name, _) in &self.files {
                let target = self.dir.join(name);
                std::fs::rename(self.dir.join(format!("{name}.partial")), &target)?;
            }
            return Ok(self.files.iter().map(|(n, _)| self.dir.join(n)).collect());
        }
        Ok(written)
    }

    /// Writes every staged file under its final name.
    pub fn commit(&self) -> Result<Vec<PathBuf>> {
        self.write_all(true)
    }

    /// Writes every staged file with a `.partial` suffix.
    pub fn commit_partial(&self) -> Result<Vec<PathBuf>> {
        self.write_all(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_and_final_names() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Output::new(dir.path());
        out.add("a.csv", "x\n");
        out.add("sub/b.csv", "y\n");
        out.commit_partial().unwrap();
        assert!(dir.path().join("a.csv.partial").exists());
        assert!(dir.path().join("sub/b.csv.partial").exists());
        assert!(!dir.path().join("a.csv").exists());
        out.commit().unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("a.csv")).unwrap(), "x\n");
        assert!(!dir.path().join("a.csv.partial").exists());
    }
}
