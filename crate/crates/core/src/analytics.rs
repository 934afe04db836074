//! Observational statistics over purchase and consultation logs.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::dataset::{Dataset, Event};
use crate::error::{Error, Result};

/// Earliest purchase time per user, `None` for users who never bought.
pub fn first_purchase_times(purchases: &[Event], n_users: usize) -> Vec<Option<i64>> {
    let mut out: Vec<Option<i64>> = vec![None; n_users];
    for e in purchases {
        let slot = &mut out[e.user];
        *slot = Some(slot.map_or(e.ts, |t| t.min(e.ts)));
    }
    out
}

/// Fraction of `group` whose first purchase falls in `[start, end)`.
pub fn group_buy_ratio(group: &[usize], first_purchase: &[Option<i64>], start: i64, end: i64) -> Result<f64> {
    if group.is_empty() {
        return Err(Error::Contract("group-buy-ratio of an empty group".into()));
    }
    let buyers = group
        .iter()
        .filter(|&&u| first_purchase[u].is_some_and(|t| t >= start && t < end))
        .count();
    Ok(buyers as f64 / group.len() as f64)
}

/// Agents ordered by descending consultation count, ties by ascending id.
/// Agents never consulted rank last.
pub fn agents_by_frequency(n_agents: usize, consults: &[Event]) -> Vec<usize> {
    let mut freq = vec![0usize; n_agents];
    for e in consults {
        freq[e.target] += 1;
    }
    let mut order: Vec<usize> = (0..n_agents).collect();
    order.sort_by(|&a, &b| freq[b].cmp(&freq[a]).then(a.cmp(&b)));
    order
}

/// Agents whose frequency rank `r` (0-based) satisfies
/// `floor(lo * n) <= r < floor(hi * n)`, i.e. the percentile band `(lo, hi]`.
pub fn agent_band(n_agents: usize, consults: &[Event], lo: f64, hi: f64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
        return Err(Error::Contract(format!("invalid percentile band ({lo}, {hi}]")));
    }
    let order = agents_by_frequency(n_agents, consults);
    let a = (lo * n_agents as f64).floor() as usize;
    let b = (hi * n_agents as f64).floor() as usize;
    Ok(order[a..b].to_vec())
}

/// Default attribution window for [`ask_buy_ratio`]: thirty days.
pub const ATTRIBUTION_WINDOW: i64 = 30 * 24 * 3600;

/// Share of users who consulted an agent in the band `(lo, hi]` and made a
/// purchase after one of those consultations, no later than `window`
/// seconds after it (`None`: any time after).
pub fn ask_buy_ratio(
    n_agents: usize,
    consults: &[Event],
    purchases: &[Event],
    lo: f64,
    hi: f64,
    window: Option<i64>,
) -> Result<f64> {
    let (buyers, consulters) = ask_buy_counts(n_agents, consults, purchases, lo, hi, window)?;
    Ok(buyers as f64 / consulters as f64)
}

/// `(buyers, consulters)` behind [`ask_buy_ratio`].
pub fn ask_buy_counts(
    n_agents: usize,
    consults: &[Event],
    purchases: &[Event],
    lo: f64,
    hi: f64,
    window: Option<i64>,
) -> Result<(usize, usize)> {
    let band = agent_band(n_agents, consults, lo, hi)?;
    let mut in_band = vec![false; n_agents];
    for &a in &band {
        in_band[a] = true;
    }
    let mut times: BTreeMap<usize, Vec<i64>> = BTreeMap::new();
    for e in consults.iter().filter(|e| in_band[e.target]) {
        times.entry(e.user).or_default().push(e.ts);
    }
    if times.is_empty() {
        return Err(Error::Contract(format!("no consultations in band ({lo}, {hi}]")));
    }
    let mut bought: BTreeMap<usize, Vec<i64>> = BTreeMap::new();
    for e in purchases {
        bought.entry(e.user).or_default().push(e.ts);
    }
    for v in bought.values_mut() {
        v.sort_unstable();
    }
    let limit = window.unwrap_or(i64::MAX);
    let buyers = times
        .iter()
        .filter(|(u, ts)| {
            let Some(p) = bought.get(u) else { return false };
            ts.iter().any(|&t| {
                let k = p.partition_point(|&x| x <= t);
                k < p.len() && p[k] - t <= limit
            })
        })
        .count();
    Ok((buyers, times.len()))
}

/// Calibration statistics of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Calibration {
    /// Ask-buy ratio of the most consulted 5% of agents.
    pub ask_buy_top5: f64,
    /// Ask-buy ratio of the agents ranked in the (10%, 15%] band.
    pub ask_buy_top15: f64,
    pub band_ratio: f64,
    /// Per month, group-buy ratio of returning customers (any source
    /// history) and of new customers.
    pub group_buy: Vec<(f64, f64)>,
}

impl Calibration {
    pub fn returning_lead_every_month(&self) -> bool {
        self.group_buy.iter().all(|&(r, n)| r > n)
    }
}

/// Ask-buy bands with a thirty-day window and monthly group-buy ratios
/// over every month that holds an event.
pub fn calibration(ds: &Dataset, month: i64) -> Result<Calibration> {
    let n_agents = ds.graph.count(crate::graph::NodeType::Agent);
    let w = Some(ATTRIBUTION_WINDOW);
    let top5 = ask_buy_ratio(n_agents, &ds.consults, &ds.purchases, 0.0, 0.05, w)?;
    let top15 = ask_buy_ratio(n_agents, &ds.consults, &ds.purchases, 0.10, 0.15, w)?;
    if top15 == 0.0 {
        return Err(Error::Numeric("no purchases after consultations in the (10%, 15%] band".into()));
    }
    let first = first_purchase_times(&ds.purchases, ds.n_users());
    let (returning, new): (Vec<usize>, Vec<usize>) = (0..ds.n_users()).partition(|&u| !ds.source_seqs[u].is_empty());
    let last = ds.purchases.iter().chain(&ds.consults).map(|e| e.ts).max().unwrap_or(0);
    let group_buy = (0..=last / month)
        .map(|m| {
            let (s, e) = (m * month, (m + 1) * month);
            Ok((group_buy_ratio(&returning, &first, s, e)?, group_buy_ratio(&new, &first, s, e)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Calibration {
        ask_buy_top5: top5,
        ask_buy_top15: top15,
        band_ratio: top5 / top15,
        group_buy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(ts: i64, user: usize, target: usize) -> Event {
        Event { ts, user, target }
    }

    #[test]
    fn group_buy_examples() {
        let group: Vec<usize> = (0..100).collect();
        let mut first = vec![None; 100];
        for slot in first.iter_mut().take(5) {
            *slot = Some(15);
        }
        first[7] = Some(40);
        assert_eq!(group_buy_ratio(&group, &first, 10, 20).unwrap(), 0.05);
        assert_eq!(group_buy_ratio(&group, &first, 20, 30).unwrap(), 0.0);
        assert!(group_buy_ratio(&[], &first, 0, 1).is_err());
    }

    #[test]
    fn first_purchase_is_minimum() {
        let p = [ev(5, 0, 1), ev(3, 0, 2), ev(9, 2, 0)];
        assert_eq!(first_purchase_times(&p, 3), vec![Some(3), None, Some(9)]);
    }

    #[test]
    fn ask_buy_all_and_none() {
        // Agent 0 is consulted most, then 1.
        let consults = [ev(1, 0, 0), ev(2, 1, 0), ev(3, 2, 1)];
        let all = [ev(5, 0, 0), ev(6, 1, 3)];
        assert_eq!(ask_buy_ratio(2, &consults, &all, 0.0, 0.5, None).unwrap(), 1.0);
        // A purchase before the consultation does not count.
        let before = [ev(0, 0, 0), ev(1, 1, 0)];
        assert_eq!(ask_buy_ratio(2, &consults, &before, 0.0, 0.5, None).unwrap(), 0.0);
        assert_eq!(ask_buy_counts(2, &consults, &all, 0.5, 1.0, None).unwrap(), (0, 1));
    }

    #[test]
    fn attribution_window_bounds_the_delay() {
        let consults = [ev(10, 0, 0), ev(100, 0, 0), ev(10, 1, 0)];
        let purchases = [ev(125, 0, 3), ev(50, 1, 2)];
        // User 0 buys 25s after the second consultation, user 1 buys 40s after.
        assert_eq!(ask_buy_counts(1, &consults, &purchases, 0.0, 1.0, Some(30)).unwrap(), (1, 2));
        assert_eq!(ask_buy_counts(1, &consults, &purchases, 0.0, 1.0, Some(40)).unwrap(), (2, 2));
        assert_eq!(ask_buy_counts(1, &consults, &purchases, 0.0, 1.0, Some(20)).unwrap(), (0, 2));
        assert_eq!(ask_buy_counts(1, &consults, &purchases, 0.0, 1.0, None).unwrap(), (2, 2));
    }

    #[test]
    fn bands_partition_by_frequency_rank() {
        let consults: Vec<Event> = (0..20)
            .flat_map(|a| (0..(20 - a)).map(move |k| ev(k as i64, a * 100 + k, a)))
            .collect();
        assert_eq!(agents_by_frequency(20, &consults)[..3], [0, 1, 2]);
        assert_eq!(agent_band(20, &consults, 0.0, 0.05).unwrap(), vec![0]);
        assert_eq!(agent_band(20, &consults, 0.10, 0.15).unwrap(), vec![2]);
        assert!(agent_band(20, &consults, 0.2, 0.1).is_err());
        assert!(ask_buy_ratio(20, &[], &[], 0.0, 0.5, None).is_err());
    }
}
