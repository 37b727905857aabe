//! `gen-data`: writes the biased synthetic set as CSV with a matching schema.

use std::path::Path;

use nncon::data::{self, Group, Label};
use serde::{Deserialize, Serialize};

use crate::config::{self, DataConfig, DataSource, GenDataConfig};
use crate::error::{CliError, CliResult};

pub const DATA_FILE: &str = "data.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub rows: usize,
    pub dim: usize,
    pub fingerprint: String,
    pub norm_scale: f64,
    pub positives_a: usize,
    pub positives_ac: usize,
    pub rows_a: usize,
    pub rows_ac: usize,
    pub generator: GenDataConfig,
}

/// Writes `data.csv`, `dataset.json` and `data_config.json`; the last is a
/// `data` block that can be pasted into a training config.
pub fn gen_data(cfg: &GenDataConfig, out: &Path) -> CliResult<DatasetSummary> {
    DataConfig {
        train_fraction: cfg.train_fraction,
        ..DataConfig::synthetic(cfg.n, cfg.d, cfg.bias_gap, cfg.seed)
    }
    .validate()?;
    let ds = data::generate_biased_synthetic(cfg.n, cfg.d, cfg.bias_gap, cfg.seed)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    data::write_csv(&ds, out.join(DATA_FILE))?;
    let count = |g: Group, pos: bool| {
        (0..ds.len())
            .filter(|&i| ds.group(i) == Some(g) && (!pos || ds.label(i) == Label::Pos))
            .count()
    };
    let summary = DatasetSummary {
        rows: ds.len(),
        dim: ds.dim(),
        fingerprint: ds.fingerprint(),
        norm_scale: ds.norm_scale(),
        positives_a: count(Group::A, true),
        positives_ac: count(Group::Ac, true),
        rows_a: count(Group::A, false),
        rows_ac: count(Group::Ac, false),
        generator: cfg.clone(),
    };
    config::write_json(&out.join("dataset.json"), &summary)?;
    let snippet = DataConfig {
        source: DataSource::Csv {
            path: DATA_FILE.into(),
            schema: data::written_schema(&ds),
        },
        train_fraction: cfg.train_fraction,
        split_seed: cfg.seed,
    };
    config::write_json(&out.join("data_config.json"), &snippet)?;
    Ok(summary)
}
