//! Cold-user evaluation output: the metrics line and ranked lists.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::NodeType;
use crate::tensor::Mat;
use crate::train_eval::metrics::{summarize, MetricSummary};
use crate::train_eval::model::TrainedModel;
use crate::train_eval::pipeline::relevant_sets;
use crate::train_eval::stage::rank_row;

/// One evaluated run, serialised as a single JSON object per line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    pub eta: f64,
    pub model: String,
    pub ndcg: f64,
    pub rec1: f64,
    pub rec3: f64,
    pub rec5: f64,
    pub seed: u64,
    pub wall_sec: f64,
}

impl MetricsRecord {
    pub fn new(eta: f64, model: &str, m: &MetricSummary, seed: u64, wall_sec: f64) -> Self {
        Self {
            eta,
            model: model.to_string(),
            ndcg: m.ndcg,
            rec1: m.rec1,
            rec3: m.rec3,
            rec5: m.rec5,
            seed,
            wall_sec,
        }
    }

    pub fn to_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Appends the record as one line to `path`.
    pub fn append(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        writeln!(f, "{}", self.to_line()?).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub summary: MetricSummary,
    pub users: Vec<usize>,
    pub scores: Mat,
    /// Full item ranking per user.
    pub rankings: Vec<Vec<usize>>,
}

/// Scores `users` as cold users and ranks every target item for each.
pub fn evaluate_cold(model: &TrainedModel, ds: &Dataset, users: &[usize], cutoff: Option<usize>) -> Result<Evaluation> {
    let scores = model.cold_scores(ds, users)?;
    let rankings: Vec<Vec<usize>> = (0..scores.rows()).map(|r| rank_row(scores.row(r))).collect();
    let relevant = relevant_sets(ds, users);
    let summary = summarize(rankings.iter().map(Vec::as_slice).zip(&relevant), cutoff)?;
    Ok(Evaluation {
        summary,
        users: users.to_vec(),
        scores,
        rankings,
    })
}

/// `user_id  rank  item_id  score` for every user and item, ranks from 1,
/// scores with nine decimals.
pub fn write_recommendations(path: &Path, ds: &Dataset, ev: &Evaluation) -> Result<()> {
    let users = &ds.maps[NodeType::User.index()];
    let items = &ds.maps[NodeType::Item.index()];
    let mut rows = Vec::with_capacity(ev.rankings.iter().map(Vec::len).sum());
    for (r, (&u, ranked)) in ev.users.iter().zip(&ev.rankings).enumerate() {
        for (k, &i) in ranked.iter().enumerate() {
            rows.push(vec![
                users.external(u).to_string(),
                (k + 1).to_string(),
                items.external(i).to_string(),
                format!("{:.9}", ev.scores.get(r, i)),
            ]);
        }
    }
    crate::tsv::write(path, &["user_id", "rank", "item_id", "score"], rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_line_has_exactly_the_documented_keys_in_order() {
        let m = MetricSummary {
            ndcg: 0.5,
            rec1: 0.1,
            rec3: 0.2,
            rec5: 0.3,
            users: 4,
        };
        let line = MetricsRecord::new(0.1, "hcdir", &m, 7, 1.5).to_line().unwrap();
        assert_eq!(
            line,
            r#"{"eta":0.1,"model":"hcdir","ndcg":0.5,"rec1":0.1,"rec3":0.2,"rec5":0.3,"seed":7,"wall_sec":1.5}"#
        );
        let back: MetricsRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back.seed, 7);
    }

    #[test]
    fn append_adds_one_line_per_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        let m = MetricSummary::default();
        MetricsRecord::new(0.1, "bpr", &m, 0, 0.0).append(&path).unwrap();
        MetricsRecord::new(0.2, "bpr", &m, 0, 0.0).append(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
    }
}
