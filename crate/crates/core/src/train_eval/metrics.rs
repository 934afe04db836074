//! Full-list ranking metrics with binary relevance.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

fn check_relevant(relevant: &BTreeSet<usize>) -> Result<()> {
    if relevant.is_empty() {
        return Err(Error::Contract("ranking metric with an empty relevant set".into()));
    }
    Ok(())
}

/// DCG of the hits in `ranked` (rank `i`, 1-based, contributes
/// `1 / log2(i + 1)`), normalised by the ideal DCG. `cutoff` truncates
/// both lists; `None` evaluates the full list.
pub fn ndcg_at(ranked: &[usize], relevant: &BTreeSet<usize>, cutoff: Option<usize>) -> Result<f64> {
    check_relevant(relevant)?;
    let n = cutoff.unwrap_or(ranked.len()).min(ranked.len());
    let gain = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = ranked[..n]
        .iter()
        .enumerate()
        .filter(|(_, it)| relevant.contains(it))
        .map(|(i, _)| gain(i))
        .sum();
    let ideal: f64 = (0..relevant.len().min(n)).map(gain).sum();
    Ok(if ideal > 0.0 { dcg / ideal } else { 0.0 })
}

pub fn ndcg(ranked: &[usize], relevant: &BTreeSet<usize>) -> Result<f64> {
    ndcg_at(ranked, relevant, None)
}

/// `|relevant ∩ top-n| / |relevant|`.
pub fn recall_at_n(ranked: &[usize], relevant: &BTreeSet<usize>, n: usize) -> Result<f64> {
    check_relevant(relevant)?;
    if n == 0 {
        return Err(Error::Contract("recall cutoff must be at least 1".into()));
    }
    let hits = ranked.iter().take(n).filter(|it| relevant.contains(it)).count();
    Ok(hits as f64 / relevant.len() as f64)
}

/// Mean metrics over evaluated users.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub ndcg: f64,
    pub rec1: f64,
    pub rec3: f64,
    pub rec5: f64,
    pub users: usize,
}

/// Averages the metrics of `(ranking, relevant set)` pairs in order.
pub fn summarize<'a>(cases: impl IntoIterator<Item = (&'a [usize], &'a BTreeSet<usize>)>, cutoff: Option<usize>) -> Result<MetricSummary> {
    let mut s = MetricSummary::default();
    for (ranked, rel) in cases {
        s.ndcg += ndcg_at(ranked, rel, cutoff)?;
        s.rec1 += recall_at_n(ranked, rel, 1)?;
        s.rec3 += recall_at_n(ranked, rel, 3)?;
        s.rec5 += recall_at_n(ranked, rel, 5)?;
        s.users += 1;
    }
    if s.users == 0 {
        return Err(Error::Contract("no users to evaluate".into()));
    }
    let n = s.users as f64;
    s.ndcg /= n;
    s.rec1 /= n;
    s.rec3 /= n;
    s.rec5 /= n;
    Ok(s)
}

/// Mean NDCG of uniformly shuffled rankings over `n_items`, averaged over
/// `shuffles` draws per relevant set.
pub fn random_ndcg(relevant_sets: &[BTreeSet<usize>], n_items: usize, shuffles: usize, seed: u64) -> Result<f64> {
    if relevant_sets.is_empty() || shuffles == 0 {
        return Err(Error::Contract("random baseline needs users and shuffles".into()));
    }
    let mut r = rng::substream(seed, "random-ranking");
    let mut order: Vec<usize> = (0..n_items).collect();
    let mut total = 0.0;
    for _ in 0..shuffles {
        for rel in relevant_sets {
            order.shuffle(&mut r);
            total += ndcg(&order, rel)?;
        }
    }
    Ok(total / (shuffles * relevant_sets.len()) as f64)
}
