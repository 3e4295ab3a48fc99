//! Run manifests: enough to reproduce a report tree.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::SimConfig;
use crate::error::Result;
use crate::formats::write_file;
use crate::report::write_json;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Manifest {
    /// SHA-256 of `config.toml` as written next to the manifest.
    pub config_sha256: String,
    pub geocal_version: &'static str,
    pub core_version: &'static str,
    pub mode: crate::config::Mode,
    pub seeds: Vec<u64>,
    #[serde(skip)]
    config_toml: String,
}

impl Manifest {
    /// The output directory is left out of the recorded config so the same
    /// experiment hashes identically wherever it is written.
    pub fn new(cfg: &SimConfig) -> Self {
        let mut canonical = cfg.clone();
        canonical.output_dir = ".".into();
        let config_toml = canonical.to_toml();
        let digest = Sha256::digest(config_toml.as_bytes());
        Self {
            config_sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
            geocal_version: env!("CARGO_PKG_VERSION"),
            core_version: geocal_core::VERSION,
            mode: cfg.mode,
            seeds: cfg.seeds.clone(),
            config_toml,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join("config.toml"), self.config_toml.as_bytes())?;
        write_json(&dir.join("manifest.json"), self)
    }
}
