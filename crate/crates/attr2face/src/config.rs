//! TOML training configuration, one-to-one command-line overrides, and the
//! configuration hash recorded in checkpoints.

use std::path::Path;

use attr2face_core::config::{Dataset, TrainConfig};
use sha2::{Digest, Sha256};

use crate::error::{io_err, Error, Result};

fn to_table(cfg: &TrainConfig) -> Result<toml::Table> {
    let value = toml::Table::try_from(cfg).map_err(|e| Error::Config(e.to_string()))?;
    Ok(value)
}

fn dataset_of(table: &toml::Table) -> Result<Option<Dataset>> {
    match table.get("dataset") {
        None => Ok(None),
        Some(v) => v.clone().try_into().map(Some).map_err(|e: toml::de::Error| Error::Config(format!("dataset: {e}"))),
    }
}

/// Resolves a configuration: per-dataset defaults (the `dataset` key of
/// the overrides, else of the file, else `celeba`, or the smoke profile
/// when `smoke` is set), then the file's keys, then the overrides.
/// Unknown keys are rejected.
pub fn resolve(file: Option<&Path>, overrides: &toml::Table, smoke: bool) -> Result<TrainConfig> {
    let file_table = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            text.parse::<toml::Table>().map_err(|e| Error::Format { path: path.to_path_buf(), message: e.to_string() })?
        }
        None => toml::Table::new(),
    };
    let dataset = match dataset_of(overrides)? {
        Some(d) => Some(d),
        None => dataset_of(&file_table)?,
    };
    let base = match (smoke, dataset) {
        (true, Some(d)) => TrainConfig { dataset: d, ..TrainConfig::smoke() },
        (true, None) => TrainConfig::smoke(),
        (false, d) => TrainConfig::for_dataset(d.unwrap_or(Dataset::Celeba)),
    };
    let mut table = to_table(&base)?;
    for (k, v) in file_table.into_iter().chain(overrides.clone()) {
        if !table.contains_key(&k) {
            return Err(Error::Config(format!("unknown configuration key `{k}`")));
        }
        table.insert(k, v);
    }
    let cfg: TrainConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// The configuration as a TOML document.
pub fn to_toml(cfg: &TrainConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))
}

/// SHA-256 of the canonical JSON encoding (fields in declaration order).
pub fn config_hash(cfg: &TrainConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("configuration serializes");
    hex::encode(Sha256::digest(&json))
}
