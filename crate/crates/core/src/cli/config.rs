use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::ArchConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset tree with one `<sub_dataset>/{images,masks}` folder per sub-dataset.
    pub root: Option<PathBuf>,
    /// Sub-dataset held out of the source splits and added to the target pool.
    pub excluded_sub_dataset: Option<String>,
    /// Extra target tree (every sub-dataset under it joins the target pool).
    pub target_root: Option<PathBuf>,
    /// Split manifest; defaults to `<output_dir>/split.csv`.
    pub manifest: Option<PathBuf>,
    /// `[height, width]` after resizing.
    pub input_size: [usize; 2],
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: None,
            excluded_sub_dataset: None,
            target_root: None,
            manifest: None,
            input_size: [256, 256],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub output_dir: Option<PathBuf>,
    /// Defaults to `<output_dir>/checkpoints`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Defaults to `<output_dir>/metrics.jsonl`.
    pub log_path: Option<PathBuf>,
}

/// Everything a command needs besides its own flags. Stored as TOML with
/// `[data]`, `[train]`, `[model]` and `[io]` sections.
///
/// Precedence, highest first: command-line flags (`ADAPTSEG_DATA_ROOT`
/// counts as `--root`), the `--config` file, built-in defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    pub model: ArchConfig,
    pub io: IoConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.io.output_dir.clone().unwrap_or_else(|| PathBuf::from("runs"))
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.io
            .checkpoint_dir
            .clone()
            .unwrap_or_else(|| self.output_dir().join("checkpoints"))
    }

    pub fn log_path(&self) -> PathBuf {
        self.io
            .log_path
            .clone()
            .unwrap_or_else(|| self.output_dir().join("metrics.jsonl"))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.data
            .manifest
            .clone()
            .unwrap_or_else(|| self.output_dir().join("split.csv"))
    }

    pub fn input_size(&self) -> (usize, usize) {
        (self.data.input_size[0], self.data.input_size[1])
    }

    pub fn root(&self) -> Result<&Path> {
        self.data
            .root
            .as_deref()
            .ok_or_else(|| Error::usage("no data root; pass --root, set ADAPTSEG_DATA_ROOT or data.root"))
    }

    /// Model shape with the input size taken from `[data]`.
    pub fn arch(&self) -> ArchConfig {
        let (h, w) = self.input_size();
        self.model.clone().with_input_size(h, w)
    }

    /// Keeps the λ schedule as long as step 2 and checks both sections.
    pub fn finalize(mut self) -> Result<Self> {
        self.train.lambda_schedule.total_epochs = self.train.step2_total_epochs;
        self.train.validate()?;
        self.arch().validate()?;
        Ok(self)
    }
}
