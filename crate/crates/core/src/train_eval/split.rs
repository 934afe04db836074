//! User-level train/validation/test split of the overlapping users.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, Relation};
use crate::rng;

/// Minimum number of overlapping users a split accepts.
pub const MIN_OVERLAP_USERS: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
    /// Share of training overlap users whose target data is kept.
    pub eta: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.6,
            valid: 0.2,
            test: 0.2,
            eta: 1.0,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!(
                "split ratios {parts:?} must lie in [0, 1] and sum to 1"
            )));
        }
        if self.test <= 0.0 || self.train <= 0.0 {
            return Err(Error::Contract("train and test ratios must be positive".into()));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::Contract(format!("eta {} must lie in (0, 1]", self.eta)));
        }
        Ok(())
    }
}

/// Which users play which role. All lists hold dense user ids, ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub spec: SplitSpec,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
    /// Training users whose target interactions and mapping pairs are kept.
    pub retained: Vec<usize>,
}

/// Shuffles the overlapping users with the split seed and cuts them into
/// train, validation and test. The retained users are a prefix of a
/// second seeded order over the training users, so a larger `eta` keeps a
/// superset.
pub fn split_dataset(ds: &Dataset, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let mut users = ds.overlap_users();
    if users.len() < MIN_OVERLAP_USERS {
        return Err(Error::Contract(format!(
            "{} overlapping users; at least {MIN_OVERLAP_USERS} are required",
            users.len()
        )));
    }
    let n = users.len();
    users.shuffle(&mut rng::substream(spec.seed, "split.users"));
    let n_test = (spec.test * n as f64).round() as usize;
    let n_valid = (spec.valid * n as f64).round() as usize;
    let (test, rest) = users.split_at(n_test);
    let (valid, train) = rest.split_at(n_valid);
    let mut train = train.to_vec();
    train.sort_unstable();
    let mut order = train.clone();
    order.shuffle(&mut rng::substream(spec.seed, "split.eta"));
    let keep = ((spec.eta * train.len() as f64).round() as usize).clamp(1, train.len());
    let mut retained = order[..keep].to_vec();
    retained.sort_unstable();
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    Ok(Split {
        spec: *spec,
        train,
        valid: sorted(valid),
        test: sorted(test),
        retained,
    })
}

impl Split {
    /// Users whose target interactions must not reach training.
    pub fn withheld(&self) -> BTreeSet<usize> {
        let kept: BTreeSet<usize> = self.retained.iter().copied().collect();
        self.test
            .iter()
            .chain(&self.valid)
            .chain(self.train.iter().filter(|u| !kept.contains(u)))
            .copied()
            .collect()
    }

    /// Target graph with every withheld user's purchases removed.
    pub fn training_graph(&self, ds: &Dataset) -> Result<HeteroGraph> {
        let withheld = self.withheld();
        ds.training_graph(|u| !withheld.contains(&u))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }
}

/// Purchase edges of `users` present in `graph`; empty when nothing leaked.
pub fn leaked_edges(graph: &HeteroGraph, ds: &Dataset, users: &[usize]) -> Vec<(usize, usize)> {
    let targets = ds.target_items();
    let mut out = Vec::new();
    for &u in users {
        for &i in graph.successors(Relation::Purchase, u) {
            if targets[u].binary_search(&i).is_ok() {
                out.push((u, i));
            }
        }
    }
    out
}
