//! Epoch bookkeeping shared by every training loop.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::{filter_purchases, Dataset};
use crate::error::Result;
use crate::graph::{HeteroGraph, NodeType, Relation};
use crate::tensor::{dot, sigmoid, Mat};
use crate::train_eval::metrics::{summarize, MetricSummary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: String,
    pub epoch: usize,
    pub loss: f64,
    pub val_ndcg: f64,
}

/// Tracks the best validation score and decides when to stop.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records the score of `epoch`; returns whether it is a new best.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        if score > self.best {
            self.best = score;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    /// True once `patience` epochs in a row failed to improve. With
    /// patience 0 training stops after the first epoch.
    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience || self.patience == 0
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Distinct purchased items per user in `g`, ascending.
pub fn positives_by_user(g: &HeteroGraph) -> Vec<Vec<usize>> {
    (0..g.count(NodeType::User))
        .map(|u| {
            let s: BTreeSet<usize> = g.successors(Relation::Purchase, u).iter().copied().collect();
            s.into_iter().collect()
        })
        .collect()
}

/// Distinct `(user, item)` purchase pairs of `g` in id order.
pub fn purchase_pairs(g: &HeteroGraph) -> Vec<(usize, usize)> {
    positives_by_user(g)
        .into_iter()
        .enumerate()
        .flat_map(|(u, items)| items.into_iter().map(move |i| (u, i)))
        .collect()
}

/// `sigmoid(u . v)` for every row of `users` against every row of `items`.
pub fn score_matrix(users: &Mat, items: &Mat) -> Mat {
    let mut out = Mat::zeros(users.rows(), items.rows());
    for r in 0..users.rows() {
        let u = users.row(r);
        for (c, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = sigmoid(dot(u, items.row(c)));
        }
    }
    out
}

/// Item ids of `scores` by descending score, ties by ascending id.
pub fn rank_row(scores: &[f64]) -> Vec<usize> {
    crate::cross_domain::rank_scores(scores).into_iter().map(|(i, _)| i).collect()
}

/// Metrics of score rows against the relevant sets, row `r` belonging to
/// the user whose relevant items are `relevant[r]`.
pub fn evaluate_scores(scores: &Mat, relevant: &[BTreeSet<usize>], cutoff: Option<usize>) -> Result<MetricSummary> {
    let ranked: Vec<Vec<usize>> = (0..scores.rows()).map(|r| rank_row(scores.row(r))).collect();
    summarize(ranked.iter().map(Vec::as_slice).zip(relevant), cutoff)
}

/// Leave-last-out validation data over the warm users of a training graph.
#[derive(Clone, Debug)]
pub struct Holdout {
    /// The training graph without the held-out purchases.
    pub graph: HeteroGraph,
    pub users: Vec<usize>,
    /// Held-out item of each entry of `users`, as a one-item set.
    pub relevant: Vec<BTreeSet<usize>>,
    /// Purchases of each entry of `users` that remain in `graph`.
    pub known: Vec<Vec<usize>>,
}

impl Holdout {
    /// Holds out the most recent purchase of every user with at least two
    /// distinct items in `graph`.
    pub fn last_purchases(ds: &Dataset, graph: &HeteroGraph) -> Result<Self> {
        let positives = positives_by_user(graph);
        let mut last: Vec<Option<usize>> = vec![None; positives.len()];
        for e in &ds.purchases {
            if positives[e.user].len() >= 2 && positives[e.user].binary_search(&e.target).is_ok() {
                last[e.user] = Some(e.target);
            }
        }
        let held: BTreeSet<(usize, usize)> = last
            .iter()
            .enumerate()
            .filter_map(|(u, i)| i.map(|i| (u, i)))
            .collect();
        let graph = filter_purchases(graph, |u, i| !held.contains(&(u, i)))?;
        let users: Vec<usize> = held.iter().map(|&(u, _)| u).collect();
        let relevant = held.iter().map(|&(_, i)| BTreeSet::from([i])).collect();
        let known = users
            .iter()
            .map(|&u| positives[u].iter().copied().filter(|&i| !held.contains(&(u, i))).collect())
            .collect();
        Ok(Self {
            graph,
            users,
            relevant,
            known,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// NDCG of the held-out items under `sigmoid(u . v)`, with every item a
    /// user still has in the graph ranked last.
    pub fn ndcg(&self, users: &Mat, items: &Mat, cutoff: Option<usize>) -> Result<f64> {
        let mut scores = score_matrix(&users.gather_rows(&self.users), items);
        for (r, known) in self.known.iter().enumerate() {
            for &i in known {
                scores.set(r, i, f64::NEG_INFINITY);
            }
        }
        Ok(evaluate_scores(&scores, &self.relevant, cutoff)?.ndcg)
    }
}
