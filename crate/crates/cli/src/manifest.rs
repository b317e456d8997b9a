use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dualpt_core::io::write_json;
use dualpt_core::{Error, Result};

/// Everything needed to repeat a run: the arguments it was invoked with and
/// the configuration they resolved to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name; `dualpt replay` re-runs them.
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub created: String,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            argv: std::env::args().skip(1).collect(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed,
            created: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    pub fn inputs(mut self, paths: &[&Path]) -> Self {
        self.inputs = paths.iter().map(|p| p.to_path_buf()).collect();
        self
    }

    pub fn outputs(mut self, paths: &[&Path]) -> Self {
        self.outputs = paths.iter().map(|p| p.to_path_buf()).collect();
        self
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// `dir/stem.manifest.json` for an output file `dir/stem.ext`.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let stem = output
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    output.with_file_name(format!("{stem}.manifest.json"))
}

/// Exclusive claim on an output directory, released on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(".dualpt.lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::InvalidConfig(format!(
                    "{} is locked by another run; remove the lock file if stale",
                    path.display()
                )))
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn for_file(output: &Path) -> Result<Self> {
        let dir = output
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        Self::acquire(dir)
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
