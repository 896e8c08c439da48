//! Synthetic data, CSV ingestion, experiment configuration and manifests.

mod config;
mod data;

pub use config::ExperimentConfig;
pub use data::{
    dataset_to_csv, draw_labels, generate_synthetic, ingest_csv, ingest_csv_str, ingest_csv_str_with_meta, ingest_csv_with_meta,
    IngestMeta, Ingested, RowFilter,
};

use std::path::Path;

use serde::Serialize;

use crate::error::Result;

pub const FORMAT_VERSION: u32 = 1;

/// Reproducibility record written next to every artifact set.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest<C: Serialize> {
    pub format_version: u32,
    pub tool: String,
    pub command: String,
    /// Fully resolved settings, seeds included.
    pub config: C,
    pub artifacts: Vec<String>,
}

impl<C: Serialize> Manifest<C> {
    pub fn new(command: &str, config: C, artifacts: Vec<String>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            tool: format!("pmgp {}", env!("CARGO_PKG_VERSION")),
            command: command.to_string(),
            config,
            artifacts,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
