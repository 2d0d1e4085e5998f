//! Run configuration file: search space, training, search and data settings.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{CtrDataset, SplitSpec, TsvSchema};
use crate::error::{NasError, Result};
use crate::evolution::EvoConfig;
use crate::rank_eval::RankingSpec;
use crate::search_space::{Genotype, SupernetConfig};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Preset used when `space` is absent.
    pub preset: String,
    pub space: Option<SupernetConfig>,
    pub train: TrainConfig,
    /// Settings for standalone training; defaults to `train`.
    pub scratch: Option<TrainConfig>,
    pub evo: EvoConfig,
    pub rank: RankingSpec,
    pub split: SplitSpec,
    pub schema: TsvSchema,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: "nasrec_full".into(),
            space: None,
            train: TrainConfig::default(),
            scratch: None,
            evo: EvoConfig::default(),
            rank: RankingSpec::default(),
            split: SplitSpec::default(),
            schema: TsvSchema::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| NasError::InvalidConfig(format!("{}: {e}", path.display())))
    }

    /// The search space with raw-feature shapes taken from `data` when given.
    pub fn space_for(&self, data: Option<&CtrDataset>) -> Result<SupernetConfig> {
        let mut cfg = match &self.space {
            Some(s) => s.clone(),
            None => SupernetConfig::preset(&self.preset)?,
        };
        if let Some(ds) = data {
            cfg.num_dense_features = ds.num_dense;
            cfg.vocab_sizes = ds.vocab_sizes.clone();
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn scratch_config(&self) -> TrainConfig {
        self.scratch.clone().unwrap_or_else(|| self.train.clone())
    }
}

/// Parses `full`, inline JSON, or a path to a JSON file.
pub fn parse_genotype(arg: &str, cfg: &SupernetConfig) -> Result<Genotype> {
    let g = if arg == "full" {
        Genotype::full(cfg)
    } else if arg.trim_start().starts_with('{') {
        Genotype::from_json(arg)?
    } else {
        Genotype::from_json(&fs::read_to_string(arg)?)?
    };
    g.ensure_valid(cfg)?;
    Ok(g)
}
