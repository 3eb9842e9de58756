use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::Failure;

/// Written before any computation; every output is a function of `command`, `config` and
/// `seed`.
#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub inputs: Vec<PathBuf>,
    pub version: String,
    pub started_unix: u64,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config_path: Option<&Path>,
        config: &impl Serialize,
        seed: u64,
        out: &Path,
    ) -> Self {
        RunManifest {
            command: command.into(),
            config_path: config_path.map(Path::to_path_buf),
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            seed,
            out_dir: out.to_path_buf(),
            inputs: Vec::new(),
            version: env!("CARGO_PKG_VERSION").into(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }

    pub fn with_input(mut self, path: &Path) -> Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    pub fn write(&self) -> Result<(), Failure> {
        std::fs::create_dir_all(&self.out_dir).map_err(|e| Failure::Io(e.to_string()))?;
        stringfit::io::write_json(&self.out_dir.join("manifest.json"), self)?;
        Ok(())
    }
}
