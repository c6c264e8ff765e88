//! Output directory bookkeeping and run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::Settings;
use crate::Failure;

pub const MANIFEST: &str = "manifest.txt";

/// Files written by one command, removed again if the command fails.
pub struct Outputs {
    dir: PathBuf,
    created_dir: bool,
    written: Vec<String>,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self, Failure> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir)
            .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Registers `name` and returns its path.
    pub fn path(&mut self, name: &str) -> PathBuf {
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        self.dir.join(name)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<(), Failure> {
        let p = self.path(name);
        fs::write(&p, text).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", p.display())))
    }

    pub fn names(&self) -> &[String] {
        &self.written
    }

    /// Writes the manifest: command, version, config source, resolved
    /// settings and the artifact list. Thread count is deliberately absent.
    pub fn write_manifest(&mut self, command: &str, settings: &Settings) -> Result<(), Failure> {
        let mut text = format!("command={command}\nversion={}\n", env!("CARGO_PKG_VERSION"));
        if let Some(src) = settings.source() {
            text.push_str(&format!("config={}\n", src.display()));
        }
        for (k, v) in settings.resolved() {
            text.push_str(&format!("param.{k}={v}\n"));
        }
        for name in &self.written {
            text.push_str(&format!("artifact={name}\n"));
        }
        self.write_text(MANIFEST, &text)
    }

    /// Removes every registered file, and the directory if this run made it.
    pub fn discard(self) {
        for name in &self.written {
            let _ = fs::remove_file(self.dir.join(name));
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}
