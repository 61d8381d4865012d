use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ensemble_logreg::io::{file_digest, read_json, write_json};
use ensemble_logreg::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::args::Command;

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub seed: u64,
    /// The full command with every default filled in.
    pub config: Command,
    /// SHA-256 of each input file, keyed by the path as given.
    pub input_digests: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &Command, inputs: &[PathBuf], outputs: &[String]) -> Result<Self> {
        let mut input_digests = BTreeMap::new();
        for path in inputs {
            input_digests.insert(path.display().to_string(), file_digest(path)?);
        }
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: command.name().to_string(),
            seed: command.common().seed,
            config: command.clone(),
            input_digests,
            outputs: outputs.to_vec(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(FILE_NAME), self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Fails if any recorded input changed since the original run.
    pub fn check_inputs(&self) -> Result<()> {
        for (path, digest) in &self.input_digests {
            let now = file_digest(Path::new(path))?;
            if &now != digest {
                return Err(Error::Format {
                    path: path.into(),
                    message: format!("input changed since the recorded run (sha256 {now}, recorded {digest})"),
                });
            }
        }
        Ok(())
    }
}
