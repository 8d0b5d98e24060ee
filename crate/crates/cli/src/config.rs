//! Run configuration: one TOML document, every key overridable with
//! `--set dotted.key=value`.

use std::fs;
use std::path::{Path, PathBuf};

use dclust_core::data::{load_csv, load_idx, load_labels, make_blobs, BlobSpec, Dataset, LabelColumn};
use dclust_core::model::ArchSpec;
use dclust_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Where the data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Csv {
        path: PathBuf,
        /// Separate one-column label file.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        labels: Option<PathBuf>,
        /// Label column inside the feature file (index or header name).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label_column: Option<LabelColumn>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<usize>,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<usize>,
    },
    Blobs {
        k: usize,
        per_cluster: usize,
        dim: usize,
        separation: f64,
        sigma: f64,
        seed: u64,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Blobs {
            k: 5,
            per_cluster: 400,
            dim: 50,
            separation: 8.0,
            sigma: 1.0,
            seed: 1,
        }
    }
}

impl DataSource {
    pub fn load(&self) -> CliResult<Dataset> {
        let (ds, limit) = match self {
            DataSource::Csv {
                path,
                labels,
                label_column,
                limit,
            } => {
                if labels.is_some() && label_column.is_some() {
                    return Err(CliError::Usage(
                        "give either data.labels or data.label_column, not both".into(),
                    ));
                }
                let mut ds = load_csv(path, label_column.as_ref())?;
                if let Some(lp) = labels {
                    ds = ds.with_labels(load_labels(lp)?)?;
                }
                (ds, *limit)
            }
            DataSource::Idx { images, labels, limit } => (load_idx(images, labels)?, *limit),
            &DataSource::Blobs {
                k,
                per_cluster,
                dim,
                separation,
                sigma,
                seed,
            } => (
                make_blobs(&BlobSpec {
                    k,
                    per_cluster,
                    dim,
                    separation,
                    sigma,
                    seed,
                })?,
                None,
            ),
        };
        if ds.is_empty() {
            return Err(CliError::Data("dataset has no rows".into()));
        }
        Ok(match limit {
            Some(n) if n < ds.len() => ds.head(n),
            _ => ds,
        })
    }
}

/// Mirror-image dense autoencoder; the input width comes from the data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub latent: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![256],
            latent: 60,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn arch(&self, input: usize) -> ArchSpec {
        ArchSpec::symmetric(input, &self.hidden, self.latent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    /// Checkpoint read by `cluster` and `export-embedding`, and by `pretrain`
    /// when resuming.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub data: DataSource,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("dclust-out"),
            checkpoint: None,
            data: DataSource::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads an optional TOML file, applies `key=value` overrides, validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::try_from(RunConfig::default())
                .map_err(|e| CliError::Usage(e.to_string()))?,
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.train.validate()?;
        if self.model.latent == 0 || self.model.hidden.contains(&0) {
            return Err(CliError::Usage("model layer widths must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Usage(e.message().to_string()))
    }
}

/// `a.b.c=value`; the value is read as a TOML literal, else as a bare string.
fn apply_override(table: &mut toml::Table, spec: &str) -> CliResult<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {spec:?} is not key=value")))?;
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("bad override key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("override {key:?}: {p} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
