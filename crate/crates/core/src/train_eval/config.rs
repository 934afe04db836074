//! Training configuration and model selection.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cross_domain::MapperConfig;
use crate::error::{Error, Result};
use crate::graph::{Ablation, MetaPathSet, DEFAULT_META_PATHS};
use crate::optim::AdamConfig;
use crate::source_model::SourceConfig;
use crate::tahin::TahinConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Hcdir,
    Bpr,
    Gru4rec,
    EmcdrBpr,
    EmcdrGru,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Bpr,
        ModelKind::Gru4rec,
        ModelKind::EmcdrBpr,
        ModelKind::EmcdrGru,
        ModelKind::Hcdir,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Hcdir => "hcdir",
            ModelKind::Bpr => "bpr",
            ModelKind::Gru4rec => "gru4rec",
            ModelKind::EmcdrBpr => "emcdr-bpr",
            ModelKind::EmcdrGru => "emcdr-gru",
        }
    }

    /// Whether the model transfers knowledge from the source domain.
    pub fn is_cross_domain(self) -> bool {
        !matches!(self, ModelKind::Bpr | ModelKind::Gru4rec)
    }

    /// Whether the model reads the heterogeneous graph beyond purchases.
    pub fn uses_graph_structure(self) -> bool {
        self == ModelKind::Hcdir
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub tahin: TahinConfig,
    pub source: SourceConfig,
    pub mapper: MapperConfig,
    pub adam: AdamConfig,
    /// Positive pairs (or users, for sequence models) per step.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before a stage stops.
    pub patience: usize,
    pub negatives: usize,
    pub seed: u64,
    pub meta_paths: Vec<String>,
    pub ablation: Ablation,
    /// NDCG truncation depth; `None` ranks the full item list.
    pub ndcg_cutoff: Option<usize>,
    /// Learning rate of the mapping stage; `None` uses `adam.lr`.
    pub mapper_lr: Option<f64>,
    /// Adam learning rate of the BPR and GRU4REC baselines.
    pub baseline_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tahin: TahinConfig::default(),
            source: SourceConfig::default(),
            mapper: MapperConfig::default(),
            adam: AdamConfig::default(),
            batch_size: 32,
            max_epochs: 100,
            patience: 5,
            negatives: 4,
            seed: 0,
            meta_paths: DEFAULT_META_PATHS.iter().map(|s| s.to_string()).collect(),
            ablation: Ablation::Full,
            ndcg_cutoff: None,
            mapper_lr: None,
            baseline_lr: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.negatives == 0 {
            return Err(Error::Config("batch size and negatives must be positive".into()));
        }
        if !(self.adam.lr > 0.0) || !(self.baseline_lr > 0.0) || self.mapper_lr.is_some_and(|lr| !(lr > 0.0)) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.ndcg_cutoff == Some(0) {
            return Err(Error::Config("ndcg cutoff must be at least 1".into()));
        }
        for name in &self.meta_paths {
            if !DEFAULT_META_PATHS.contains(&name.as_str()) {
                return Err(Error::Config(format!(
                    "meta-path {name} is not one of {}",
                    DEFAULT_META_PATHS.join(", ")
                )));
            }
        }
        self.meta_path_set().map(|_| ())
    }

    pub fn meta_path_set(&self) -> Result<MetaPathSet> {
        MetaPathSet::parse_list(&self.meta_paths)
    }

    pub fn baseline_adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.baseline_lr,
            ..self.adam
        }
    }

    pub fn mapper_adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.mapper_lr.unwrap_or(self.adam.lr),
            ..self.adam
        }
    }
}
