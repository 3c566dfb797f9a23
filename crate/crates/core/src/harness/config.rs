//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::{
    load_cifar10, load_cifar100, load_mnist_idx, normalize, subsample, synth_blobs, BlobSpec, CifarLabel,
    DatasetSplit, NormalizeMode,
};
use crate::probe::{default_l2_grid, OptSettings};
use crate::{Accumulation, ArchitectureSpec, Error, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// `cifar10`, `cifar100`, `mnist` or `blobs`.
    pub name: String,
    /// Directory holding the files; falls back to the CLI / environment
    /// data directory.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub cifar100_labels: CifarLabel,
    /// Required when `name` is `blobs`.
    #[serde(default)]
    pub blobs: Option<BlobSpec>,
    #[serde(default)]
    pub train_per_class: Option<usize>,
    #[serde(default)]
    pub test_per_class: Option<usize>,
    #[serde(default)]
    pub subsample_seed: u64,
    #[serde(default)]
    pub normalize: NormalizeMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSettings {
    pub l2_grid: Vec<f64>,
    pub opt: OptSettings,
    /// Fraction of the training examples held out for choosing `l2`.
    pub validation_fraction: f64,
    pub standardize: bool,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings { l2_grid: default_l2_grid(), opt: OptSettings::default(), validation_fraction: 0.1, standardize: false }
    }
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub dataset: DatasetSpec,
    pub architectures: Vec<ArchitectureSpec>,
    pub n_grid: Vec<usize>,
    pub base_seed: u64,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default)]
    pub probe: ProbeSettings,
    /// Also probe the flattened inputs directly.
    #[serde(default)]
    pub raw_baseline: bool,
    /// Off by default so that reports are reproducible byte for byte.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default)]
    pub accumulation: Accumulation,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!("unsupported config version {}", self.version)));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.architectures.is_empty() && !self.raw_baseline {
            return Err(Error::Config("nothing to run: no architectures and no raw baseline".into()));
        }
        if !self.architectures.is_empty() && self.n_grid.is_empty() {
            return Err(Error::Config("n_grid is empty".into()));
        }
        if self.n_grid.contains(&0) {
            return Err(Error::Config("n_grid entries must be positive".into()));
        }
        for arch in &self.architectures {
            arch.validate().map_err(|e| Error::Config(format!("architecture {}: {e}", arch.id())))?;
            if arch.output_dim != 1 {
                return Err(Error::Config(format!("architecture {} must have a scalar head", arch.id())));
            }
        }
        let p = &self.probe;
        if p.l2_grid.is_empty() || p.l2_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::Config("l2_grid must be non-empty and nonnegative".into()));
        }
        if !(0.0..1.0).contains(&p.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        if p.l2_grid.len() > 1 && p.validation_fraction == 0.0 {
            return Err(Error::Config("tuning l2 needs a positive validation_fraction".into()));
        }
        p.opt.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        match self.dataset.name.as_str() {
            "cifar10" | "cifar100" | "mnist" => {}
            "blobs" if self.dataset.blobs.is_some() => {}
            "blobs" => return Err(Error::Config("dataset `blobs` needs a `blobs` section".into())),
            other => return Err(Error::Config(format!("unknown dataset `{other}`"))),
        }
        Ok(())
    }
}

/// Train and test splits after subsampling and normalization.
pub fn load_dataset(spec: &DatasetSpec, data_dir: Option<&Path>) -> Result<(DatasetSplit, DatasetSplit)> {
    let dir = || -> Result<PathBuf> {
        spec.dir
            .clone()
            .or_else(|| data_dir.map(Path::to_path_buf))
            .ok_or_else(|| Error::Config(format!("no data directory given for `{}`", spec.name)))
    };
    let (mut train, mut test) = match spec.name.as_str() {
        "cifar10" => load_cifar10(&dir()?)?,
        "cifar100" => load_cifar100(&dir()?, spec.cifar100_labels)?,
        "mnist" => load_mnist_idx(&dir()?)?,
        "blobs" => synth_blobs(spec.blobs.as_ref().ok_or_else(|| Error::Config("missing blobs section".into()))?)?,
        other => return Err(Error::Config(format!("unknown dataset `{other}`"))),
    };
    if let Some(k) = spec.train_per_class {
        train = subsample(&train, k, spec.subsample_seed)?;
    }
    if let Some(k) = spec.test_per_class {
        test = subsample(&test, k, spec.subsample_seed.wrapping_add(1))?;
    }
    let (train, test, _) = normalize(&train, &test, spec.normalize)?;
    Ok((train, test))
}
