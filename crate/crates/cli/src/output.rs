use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.txt";

/// An output directory that remembers what was written to it.
#[derive(Debug)]
pub struct OutDir {
    root: PathBuf,
    written: Vec<(String, String)>,
}

impl OutDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.written.retain(|(n, _)| n != name);
        self.written.push((name.to_owned(), hex::encode(Sha256::digest(bytes))));
        Ok(())
    }

    /// Writes `manifest.txt`: one `sha256  name` line per artifact, sorted by name.
    pub fn finish(mut self) -> CliResult<()> {
        self.written.sort();
        let mut s = String::new();
        for (name, hash) in &self.written {
            let _ = writeln!(s, "{hash}  {name}");
        }
        let path = self.path(MANIFEST);
        std::fs::write(&path, s).map_err(|e| CliError::io(&path, e))
    }
}

/// Worker cap from `SVLB_THREADS` (default 1).
pub fn threads() -> CliResult<usize> {
    match std::env::var("SVLB_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Config(format!(
                "SVLB_THREADS must be a positive integer, got `{v}`"
            ))),
        },
    }
}
