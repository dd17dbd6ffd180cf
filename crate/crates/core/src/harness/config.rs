use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DEFAULT_TRUNK_WIDTHS;
use crate::taskdata::{
    derive_tasks, group_labels, load_csv, random_balanced_grouping, split, synth_gaussian,
    FineDataset, MultiTaskDataset, TaskSpec,
};
use crate::trainer::TrainConfig;
use crate::weighting::{Scheme, UncertaintyVariant, WeightingConfig};

/// One row of the comparison matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Stl,
    Equal,
    AdaptiveRatio,
    Dwa,
    UncertaintyKendall,
    UncertaintyRevised,
}

impl SchemeName {
    pub const ALL: [SchemeName; 6] = [
        SchemeName::Stl,
        SchemeName::Equal,
        SchemeName::AdaptiveRatio,
        SchemeName::Dwa,
        SchemeName::UncertaintyKendall,
        SchemeName::UncertaintyRevised,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeName::Stl => "stl",
            SchemeName::Equal => "equal",
            SchemeName::AdaptiveRatio => "adaptive_ratio",
            SchemeName::Dwa => "dwa",
            SchemeName::UncertaintyKendall => "uncertainty_kendall",
            SchemeName::UncertaintyRevised => "uncertainty_revised",
        }
    }

    /// Weighting for this row, keeping temperature and granularity from `base`.
    /// `None` for STL.
    pub fn weighting(self, base: &WeightingConfig) -> Option<WeightingConfig> {
        let with = |scheme, variant| WeightingConfig {
            scheme,
            uncertainty_variant: variant,
            ..base.clone()
        };
        let v = base.uncertainty_variant;
        match self {
            SchemeName::Stl => None,
            SchemeName::Equal => Some(with(Scheme::Equal, v)),
            SchemeName::AdaptiveRatio => Some(with(Scheme::AdaptiveRatio, v)),
            SchemeName::Dwa => Some(with(Scheme::Dwa, v)),
            SchemeName::UncertaintyKendall => {
                Some(with(Scheme::Uncertainty, UncertaintyVariant::Kendall))
            }
            SchemeName::UncertaintyRevised => {
                Some(with(Scheme::Uncertainty, UncertaintyVariant::Revised))
            }
        }
    }
}

impl fmt::Display for SchemeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic {
        seed: u64,
        fine: usize,
        per_class: usize,
        dim: usize,
        spread: f64,
    },
    Csv {
        path: PathBuf,
    },
}

fn default_train_frac() -> f64 {
    0.75
}

fn default_trunk() -> Vec<usize> {
    DEFAULT_TRUNK_WIDTHS.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    /// Coarse class count of each task.
    pub groupings: Vec<usize>,
    /// Seeded random balanced grouping instead of contiguous blocks.
    #[serde(default)]
    pub random_grouping_seed: Option<u64>,
    #[serde(default = "default_train_frac")]
    pub train_frac: f64,
    #[serde(default)]
    pub split_seed: u64,
}

/// Whole experiment description, read from one JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default = "default_trunk")]
    pub trunk_widths: Vec<usize>,
    /// Template for every run; `weighting.scheme` and `seed` are overridden
    /// per matrix cell.
    #[serde(default)]
    pub train: TrainConfig,
    pub schemes: Vec<SchemeName>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::config("at least one scheme is required"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if self.dataset.groupings.is_empty() {
            return Err(Error::config("at least one task grouping is required"));
        }
        if self.trunk_widths.contains(&0) {
            return Err(Error::config("trunk widths must be >= 1"));
        }
        self.train.validate()
    }

    pub fn load_fine(&self) -> Result<FineDataset> {
        match &self.dataset.source {
            DatasetSource::Synthetic {
                seed,
                fine,
                per_class,
                dim,
                spread,
            } => synth_gaussian(*seed, *fine, *per_class, *dim, *spread),
            DatasetSource::Csv { path } => load_csv(path),
        }
    }

    /// Builds tasks from the groupings and splits into (train, test).
    pub fn build_data(&self) -> Result<(MultiTaskDataset, MultiTaskDataset)> {
        let fine = self.load_fine()?;
        let specs = self
            .dataset
            .groupings
            .iter()
            .enumerate()
            .map(|(k, &c)| match self.dataset.random_grouping_seed {
                Some(seed) => random_balanced_grouping(fine.n_fine, c, seed.wrapping_add(k as u64)),
                None => group_labels(fine.n_fine, c),
            })
            .collect::<Result<Vec<TaskSpec>>>()?;
        let mt = derive_tasks(&fine, &specs)?;
        split(&mt, self.dataset.train_frac, self.dataset.split_seed)
    }
}
