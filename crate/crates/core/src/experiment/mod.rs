//! Experiment configuration files and end-to-end runs.
//!
//! A config is a TOML document:
//!
//! ```toml
//! [dataset]
//! source = "synthetic"        # synthetic | directory | manifest
//! path = "data/cvc"           # directory with images/ and masks/, or a manifest CSV
//! seed = 0                    # crop placement and split seed
//! stratified = true
//! input_size = [64, 64]       # optional; overrides crop output and synthetic size
//! [dataset.ratios]            # train / val / test fractions
//! [dataset.crops]             # crop generation, see `data::CropConfig`
//! [dataset.synthetic]         # generator settings, see `data::synthetic::SyntheticConfig`
//!
//! [augment]                   # used by models whose spec sets `augment = true`
//! [train]                     # max_epochs, patience, batch_size, seed, optimizer, ...
//!
//! [[models]]
//! name = "M1-4"
//! preset = "M1-4"             # optional; defaults to `name` when `spec` is absent
//! seed_offset = 1             # added to train.seed for this model
//! backbone_weights = "vgg.pnw" # optional pretrained backbone for VGG models
//! [models.spec]               # optional explicit `zoo::ModelSpec`
//! ```
//!
//! Relative paths are resolved against the config file's directory. The
//! model input shape always follows the dataset's sample shape.

mod run;

pub use run::{
    collect_runs, evaluate_weights, load_dataset, report_runs, run_grid, run_model, write_evaluation, CollectedRun,
    RunRecord, RunResult, TestEval,
};

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::data::synthetic::SyntheticConfig;
use crate::data::{CropConfig, SplitRatios};
use crate::error::{config_err, Error, Result};
use crate::train::TrainConfig;
use crate::zoo::{table1, table1_spec, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    #[default]
    Synthetic,
    /// `images/` and `masks/` under `path`, cropped and split on load.
    Directory,
    /// A manifest written by `prepare`.
    Manifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DataSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub seed: u64,
    pub stratified: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_size: Option<(usize, usize)>,
    pub ratios: SplitRatios,
    pub crops: CropConfig,
    pub synthetic: SyntheticConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            path: None,
            seed: 0,
            stratified: true,
            input_size: None,
            ratios: SplitRatios::default(),
            crops: CropConfig::default(),
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl DatasetConfig {
    /// Points the config at `arg`: `-` keeps it as is, a file is read as a
    /// manifest, a directory holding `manifest.csv` uses that manifest and
    /// any other directory is read as `images/` + `masks/`.
    pub fn with_location(&self, arg: &str) -> Self {
        let mut out = self.clone();
        if arg == "-" {
            return out;
        }
        let path = PathBuf::from(arg);
        if path.is_dir() && path.join("manifest.csv").is_file() {
            out.source = DataSource::Manifest;
            out.path = Some(path.join("manifest.csv"));
        } else if path.is_dir() {
            out.source = DataSource::Directory;
            out.path = Some(path);
        } else {
            out.source = DataSource::Manifest;
            out.path = Some(path);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.source != DataSource::Synthetic && self.path.is_none() {
            return Err(config_err!("dataset source `{:?}` needs a `path`", self.source));
        }
        if let Some((h, w)) = self.input_size {
            if h == 0 || w == 0 {
                return Err(config_err!("input_size has a zero extent"));
            }
        }
        self.ratios.validate()?;
        self.crops.validate()?;
        self.synthetic.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default)]
    pub seed_offset: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backbone_weights: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ModelSpec>,
}

impl ModelEntry {
    pub fn new(name: &str, spec: ModelSpec) -> Self {
        Self {
            name: name.to_string(),
            preset: None,
            seed_offset: 0,
            backbone_weights: None,
            spec: Some(spec),
        }
    }

    /// The explicit spec, or the named preset (`preset`, else `name`).
    pub fn resolve_spec(&self) -> Result<ModelSpec> {
        if let Some(spec) = &self.spec {
            return Ok(spec.clone());
        }
        let key = self.preset.as_deref().unwrap_or(&self.name);
        table1_spec(key).ok_or_else(|| {
            config_err!(
                "model `{}` has no [models.spec] table and `{key}` is not a known preset",
                self.name
            )
        })
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub input_size: Option<(usize, usize)>,
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
    pub models: Vec<ModelEntry>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            augment: AugmentConfig::default(),
            train: TrainConfig::default(),
            models: Vec::new(),
        }
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err!("{}", e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates `path`, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text)
            .map_err(|e| config_err!("{}: {}", path.display(), e.message().trim_end()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = &mut cfg.dataset.path {
            resolve(p);
        }
        for m in &mut cfg.models {
            if let Some(p) = &mut m.backbone_weights {
                resolve(p);
            }
        }
        cfg.validate()
            .map_err(|e| config_err!("{}: {}", path.display(), e.to_string().trim_start_matches("config error: ")))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err!("cannot serialise config: {e}"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(config_err!("no [[models]] entries"));
        }
        let mut seen = HashSet::new();
        for m in &self.models {
            if !valid_name(&m.name) {
                return Err(config_err!(
                    "model name `{}` must use only letters, digits, `-`, `_` and `.`",
                    m.name
                ));
            }
            if !seen.insert(m.name.as_str()) {
                return Err(config_err!("model `{}` is listed twice", m.name));
            }
            m.resolve_spec()?
                .validate()
                .map_err(|e| config_err!("model `{}`: {e}", m.name))?;
        }
        self.dataset.validate()?;
        self.augment.validate()?;
        self.train.validate()
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.train.seed = seed;
        }
        if let Some(size) = o.input_size {
            self.dataset.input_size = Some(size);
        }
        if let Some(b) = o.batch_size {
            self.train.batch_size = b;
        }
    }

    pub fn model(&self, name: &str) -> Result<&ModelEntry> {
        self.models.iter().find(|m| m.name == name).ok_or_else(|| {
            let names: Vec<&str> = self.models.iter().map(|m| m.name.as_str()).collect();
            config_err!("no model `{name}` in the config (have: {})", names.join(", "))
        })
    }

    /// The same experiment restricted to one model, with its spec spelled out.
    pub fn single(&self, name: &str) -> Result<Self> {
        let entry = self.model(name)?;
        let mut entry = entry.clone();
        entry.spec = Some(entry.resolve_spec()?);
        entry.preset = None;
        Ok(Self {
            models: vec![entry],
            ..self.clone()
        })
    }

    /// Every named grid model on a directory of image/mask pairs.
    pub fn grid(data_root: &Path) -> Self {
        let models = table1()
            .into_iter()
            .map(|e| ModelEntry {
                name: e.name.to_string(),
                preset: Some(e.name.to_string()),
                // M1-3 and M1-4 share a spec; the offset makes them distinct runs.
                seed_offset: u64::from(e.name == "M1-4"),
                backbone_weights: None,
                spec: None,
            })
            .collect();
        Self {
            dataset: DatasetConfig {
                source: DataSource::Directory,
                path: Some(data_root.to_path_buf()),
                ..DatasetConfig::default()
            },
            models,
            ..Self::default()
        }
    }

    /// The seeded synthetic smoke experiment: M1-4 and M2-3 on 400 blob
    /// images, patience 20, at most 200 epochs, with narrowed layer widths
    /// so it fits a CPU budget.
    pub fn smoke() -> Self {
        let narrow = |name: &str| {
            let spec = table1_spec(name).expect("grid model");
            ModelEntry::new(
                name,
                ModelSpec {
                    base_width: SMOKE_BASE_WIDTH,
                    head_width: SMOKE_HEAD_WIDTH,
                    ..spec
                },
            )
        };
        Self {
            dataset: DatasetConfig {
                synthetic: smoke_synthetic(),
                ..DatasetConfig::default()
            },
            train: TrainConfig {
                max_epochs: 200,
                patience: 20,
                ..TrainConfig::default()
            },
            models: vec![narrow("M1-4"), narrow("M2-3")],
            ..Self::default()
        }
    }
}

pub const SMOKE_BASE_WIDTH: usize = 8;
pub const SMOKE_HEAD_WIDTH: usize = 64;

/// Generator settings of the smoke dataset.
pub fn smoke_synthetic() -> SyntheticConfig {
    // Faint decoys on half the negatives keep the task from saturating.
    SyntheticConfig {
        count: 400,
        contrast: (0.22, 0.5),
        decoy_rate: 0.5,
        decoy_contrast: (0.05, 0.17),
        ..SyntheticConfig::default()
    }
}
