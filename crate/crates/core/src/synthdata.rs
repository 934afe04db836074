//! Synthetic two-domain data with planted shared user latents.
//!
//! Users carry a latent `z_u` shared by both domains. Source items have
//! latents and keyword descriptions drawn from latent-correlated pools;
//! target items are bundles of properties whose latents they average. Each
//! user has one agent; consulting a high-quality agent raises the purchase
//! probability in that month.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::dataset::{self, Dataset, CONSULT_FILE, DESCRIPTIONS_FILE, SOURCE_FILE};
use crate::error::{Error, Result};
use crate::graph::{NodeType, Relation};
use crate::rng::{self, Rng};
use crate::tensor::{dot, sigmoid};
use crate::tsv;

/// Seconds per simulated month.
pub const MONTH: i64 = 30 * 24 * 3600;

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

const PROPERTY_CATALOG: [(&str, &[&str]); 6] = [
    ("price", &["budget", "economy", "standard", "plus", "premium", "luxury"]),
    ("assurance", &["basic", "enhanced", "comprehensive", "critical", "full", "supreme"]),
    ("character", &["savings", "protection", "dividend", "investment", "universal", "term"]),
    ("coverage", &["1m", "6m", "1y", "5y", "20y", "lifetime"]),
    ("type", &["accident", "health", "medical", "life", "travel", "property"]),
    ("age", &["child", "youth", "adult", "senior", "any"]),
];

const STEMS: [&str; 16] = [
    "vita", "herb", "ocea", "sola", "terra", "luma", "nova", "zen", "flora", "aqua", "pyro", "silva", "astra",
    "bio", "cora", "mira",
];
const SUFFIXES: [&str; 5] = ["lin", "rix", "mon", "tal", "sen"];
const FILLERS: [&str; 8] = ["daily", "premium", "pack", "natural", "family", "care", "classic", "value"];
const NOUNS: [&str; 8] = ["tea", "lotion", "tablets", "powder", "set", "drops", "capsules", "kit"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub users: usize,
    pub source_items: usize,
    pub target_items: usize,
    pub agents: usize,
    pub properties: usize,
    pub latent_dim: usize,
    pub user_feature_dim: usize,
    pub user_feature_noise: f64,
    /// Inverse temperature of target item choice over `z_u . l_i`.
    pub preference_strength: f64,
    /// Inverse temperature of source item choice.
    pub source_preference_strength: f64,
    /// Scales both the agent-latent term and the consultation boost.
    pub agent_effect: f64,
    /// Scales the property-derived part of item latents.
    pub property_effect: f64,
    /// Standard deviation of the item-specific latent component.
    pub item_noise: f64,
    /// Inverse temperature of user-to-agent assignment by latent match.
    pub agent_affinity: f64,
    /// Log-scale deviation of agent quality.
    pub quality_sigma: f64,
    /// Monthly consultation probability at mean agent quality.
    pub consult_rate: f64,
    /// Logit change per unit quality above `quality_reference` in a month
    /// with a consultation.
    pub quality_boost: f64,
    /// Quality at which a consultation leaves the purchase logit unchanged.
    pub quality_reference: f64,
    /// Logit boost for users with source-domain history.
    pub returning_trust: f64,
    /// Share of users without any source-domain history.
    pub new_customer_fraction: f64,
    /// Expected purchases per month of a new customer who does not
    /// consult; sets the logit bias.
    pub background_purchase_rate: f64,
    /// Mean source sequence length of returning users.
    pub mean_source_length: f64,
    pub months: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            users: 2000,
            source_items: 300,
            target_items: 42,
            agents: 200,
            properties: 35,
            latent_dim: 4,
            user_feature_dim: 16,
            user_feature_noise: 0.1,
            preference_strength: 3.0,
            source_preference_strength: 1.0,
            agent_effect: 1.0,
            property_effect: 1.0,
            item_noise: 0.3,
            agent_affinity: 0.5,
            quality_sigma: 0.75,
            consult_rate: 0.25,
            quality_boost: 1.5,
            quality_reference: 2.5,
            returning_trust: 1.2,
            new_customer_fraction: 0.2,
            background_purchase_rate: 0.03,
            mean_source_length: 10.0,
            months: 6,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.users == 0 || self.source_items == 0 || self.agents == 0 || self.latent_dim == 0 {
            return bad("users, source items, agents and latent dim must be positive");
        }
        if self.target_items < 2 || self.target_items > self.users {
            return bad("target items must be at least 2 and at most the user count");
        }
        if self.properties < 2 {
            return bad("at least 2 properties are required");
        }
        if self.months == 0 {
            return bad("at least one month must be simulated");
        }
        for (name, r) in [
            ("consult_rate", self.consult_rate),
            ("background_purchase_rate", self.background_purchase_rate),
        ] {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {r}")));
            }
        }
        if !(0.0..1.0).contains(&self.new_customer_fraction) {
            return bad("new_customer_fraction must lie in [0, 1)");
        }
        if !(self.mean_source_length >= 1.0) {
            return Err(Error::Config(format!(
                "mean_source_length {} gives fewer than one source interaction per user",
                self.mean_source_length
            )));
        }
        let nonneg = [
            self.user_feature_noise,
            self.preference_strength,
            self.source_preference_strength,
            self.agent_effect,
            self.property_effect,
            self.item_noise,
            self.agent_affinity,
            self.quality_sigma,
            self.quality_boost,
            self.quality_reference,
            self.returning_trust,
        ];
        if nonneg.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return bad("strengths and noise levels must be finite and non-negative");
        }
        Ok(())
    }
}

/// Everything the generator drew; read only by tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: GenConfig,
    pub bias: f64,
    pub user_latents: Vec<Vec<f64>>,
    pub user_agent: Vec<usize>,
    pub new_customer: Vec<bool>,
    pub agent_latents: Vec<Vec<f64>>,
    pub agent_quality: Vec<f64>,
    pub consult_prob: Vec<f64>,
    pub item_latents: Vec<Vec<f64>>,
    pub item_properties: Vec<Vec<usize>>,
    pub property_names: Vec<String>,
    pub property_latents: Vec<Vec<f64>>,
    pub source_item_latents: Vec<Vec<f64>>,
    /// Per user, log-sum-exp of the item preferences.
    pub preference_norm: Vec<f64>,
}

impl GroundTruth {
    /// Unnormalised preference of `u` for `i`.
    pub fn preference(&self, u: usize, i: usize, with_agent: bool) -> f64 {
        let c = &self.config;
        let l = &self.item_latents[i];
        let mut x = c.preference_strength * dot(&self.user_latents[u], l);
        if with_agent {
            x += c.agent_effect * dot(&self.agent_latents[self.user_agent[u]], l);
        }
        x
    }

    fn norm_of(&self, u: usize) -> f64 {
        let prefs: Vec<f64> = (0..self.item_latents.len()).map(|i| self.preference(u, i, true)).collect();
        log_sum_exp(&prefs)
    }

    fn logit(&self, u: usize, i: usize, consulted: bool, with_agent: bool) -> f64 {
        let c = &self.config;
        let mut x = self.preference(u, i, true) - self.preference_norm[u] + self.bias;
        if !self.new_customer[u] {
            x += c.returning_trust;
        }
        if with_agent {
            if consulted {
                let q = self.agent_quality[self.user_agent[u]];
                x += c.agent_effect * c.quality_boost * (q - c.quality_reference);
            }
        } else {
            x += self.preference(u, i, false) - self.preference(u, i, true);
        }
        x
    }

    /// Planted monthly probability that `u` buys `i`. With `with_agent`
    /// false the agent's latent term and consultation boost are removed.
    pub fn purchase_probability(&self, u: usize, i: usize, consulted: bool, with_agent: bool) -> f64 {
        sigmoid(self.logit(u, i, consulted, with_agent))
    }

    /// Monthly probability averaged over whether a consultation happens.
    pub fn expected_purchase_probability(&self, u: usize, i: usize, with_agent: bool) -> f64 {
        let c = self.consult_prob[self.user_agent[u]];
        c * self.purchase_probability(u, i, true, with_agent)
            + (1.0 - c) * self.purchase_probability(u, i, false, with_agent)
    }
}

fn normal_vec(rng: &mut Rng, k: usize, sd: f64) -> Vec<f64> {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    (0..k).map(|_| sd * n.sample(rng)).collect()
}

fn property_names(n: usize) -> Vec<String> {
    let catalog: Vec<String> = PROPERTY_CATALOG
        .iter()
        .flat_map(|(cat, vals)| vals.iter().map(move |v| format!("{cat}_{v}")))
        .collect();
    (0..n)
        .map(|j| {
            let base = &catalog[j % catalog.len()];
            match j / catalog.len() {
                0 => base.clone(),
                r => format!("{base}_{r}"),
            }
        })
        .collect()
}

fn keyword(dim: usize, positive: bool, j: usize) -> String {
    let stem = STEMS[(2 * dim + usize::from(!positive)) % STEMS.len()];
    let round = (2 * dim + usize::from(!positive)) / STEMS.len();
    let suffix = SUFFIXES[j % SUFFIXES.len()];
    if round == 0 {
        format!("{stem}{suffix}")
    } else {
        format!("{stem}{suffix}{round}")
    }
}

/// Template description: a filler, two pool keywords for each of the
/// three strongest latent coordinates, and a product noun.
fn describe_item(latent: &[f64], rng: &mut Rng) -> String {
    let mut dims: Vec<usize> = (0..latent.len()).collect();
    dims.sort_by(|&a, &b| latent[b].abs().total_cmp(&latent[a].abs()).then(a.cmp(&b)));
    let mut words = vec![FILLERS[rng.gen_range(0..FILLERS.len())].to_string()];
    for &d in dims.iter().take(3) {
        for _ in 0..2 {
            words.push(keyword(d, latent[d] >= 0.0, rng.gen_range(0..SUFFIXES.len())));
        }
    }
    words.push(NOUNS[rng.gen_range(0..NOUNS.len())].to_string());
    words.join(" ")
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax_weights(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    logits.iter().map(|x| (x - m).exp()).collect()
}

/// Bias giving `rate` expected purchases per month to a new customer
/// without consultation, averaged over users.
fn solve_bias(gt: &GroundTruth, rate: f64) -> f64 {
    let (n_u, n_i) = (gt.user_latents.len(), gt.item_latents.len());
    let centred: Vec<Vec<f64>> = (0..n_u)
        .map(|u| (0..n_i).map(|i| gt.preference(u, i, true) - gt.preference_norm[u]).collect())
        .collect();
    let expected = |b: f64| {
        centred.iter().flatten().map(|x| sigmoid(x + b)).sum::<f64>() / n_u as f64
    };
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if expected(mid) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Simulated data in memory, before writing.
struct Simulation {
    truth: GroundTruth,
    user_features: Vec<Vec<f64>>,
    agent_features: Vec<Vec<f64>>,
    descriptions: Vec<String>,
    source: Vec<(usize, usize, i64)>,
    purchases: Vec<(usize, usize, i64)>,
    consults: Vec<(usize, usize, i64)>,
}

fn simulate(cfg: &GenConfig) -> Result<Simulation> {
    cfg.validate()?;
    let k = cfg.latent_dim;
    let scale = 1.0 / (k as f64).sqrt();

    let mut r = rng::substream(cfg.seed, "synth.latents");
    let user_latents: Vec<Vec<f64>> = (0..cfg.users).map(|_| normal_vec(&mut r, k, 1.0)).collect();
    let property_latents: Vec<Vec<f64>> = (0..cfg.properties).map(|_| normal_vec(&mut r, k, 1.0)).collect();
    let mut item_properties = Vec::with_capacity(cfg.target_items);
    let mut item_latents = Vec::with_capacity(cfg.target_items);
    for _ in 0..cfg.target_items {
        let size = r.gen_range(2..=6).min(cfg.properties);
        let mut props = sample(&mut r, cfg.properties, size).into_vec();
        props.sort_unstable();
        let noise = normal_vec(&mut r, k, cfg.item_noise);
        let latent: Vec<f64> = (0..k)
            .map(|d| {
                let mean = props.iter().map(|&p| property_latents[p][d]).sum::<f64>() / props.len() as f64;
                cfg.property_effect * mean + noise[d]
            })
            .collect();
        item_properties.push(props);
        item_latents.push(latent);
    }
    let source_item_latents: Vec<Vec<f64>> = (0..cfg.source_items).map(|_| normal_vec(&mut r, k, 1.0)).collect();
    let agent_latents: Vec<Vec<f64>> = (0..cfg.agents).map(|_| normal_vec(&mut r, k, 1.0)).collect();
    let quality_dist = LogNormal::new(0.0, cfg.quality_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let agent_quality: Vec<f64> = (0..cfg.agents).map(|_| quality_dist.sample(&mut r)).collect();
    let mean_quality = (cfg.quality_sigma * cfg.quality_sigma / 2.0).exp();
    let consult_prob: Vec<f64> = agent_quality
        .iter()
        .map(|q| (cfg.consult_rate * q / mean_quality).min(0.95))
        .collect();

    let mut r = rng::substream(cfg.seed, "synth.users");
    let n_new = (cfg.new_customer_fraction * cfg.users as f64).round() as usize;
    let mut new_customer = vec![false; cfg.users];
    for u in sample(&mut r, cfg.users, n_new) {
        new_customer[u] = true;
    }
    let mut user_agent = Vec::with_capacity(cfg.users);
    for z in &user_latents {
        // Better agents are routed proportionally more customers.
        let logits: Vec<f64> = agent_latents
            .iter()
            .zip(&agent_quality)
            .map(|(a, q)| cfg.agent_affinity * dot(z, a) * scale + 0.5 * q.ln())
            .collect();
        let w = WeightedIndex::new(softmax_weights(&logits)).map_err(|e| Error::Numeric(e.to_string()))?;
        user_agent.push(w.sample(&mut r));
    }
    let feature_map: Vec<Vec<f64>> = (0..k).map(|_| normal_vec(&mut r, cfg.user_feature_dim, scale)).collect();
    let user_features: Vec<Vec<f64>> = user_latents
        .iter()
        .map(|z| {
            let noise = normal_vec(&mut r, cfg.user_feature_dim, cfg.user_feature_noise);
            (0..cfg.user_feature_dim)
                .map(|f| (0..k).map(|d| z[d] * feature_map[d][f]).sum::<f64>() + noise[f])
                .collect()
        })
        .collect();
    let agent_features: Vec<Vec<f64>> = agent_latents
        .iter()
        .zip(&agent_quality)
        .map(|(a, q)| {
            let mut f: Vec<f64> = a.iter().map(|x| x + 0.1 * r.gen_range(-1.0..1.0)).collect();
            f.push(q.ln());
            f
        })
        .collect();

    let mut truth = GroundTruth {
        config: cfg.clone(),
        bias: 0.0,
        user_latents,
        user_agent,
        new_customer,
        agent_latents,
        agent_quality,
        consult_prob,
        item_latents,
        item_properties,
        property_names: property_names(cfg.properties),
        property_latents,
        source_item_latents,
        preference_norm: Vec::new(),
    };
    truth.preference_norm = (0..cfg.users).map(|u| truth.norm_of(u)).collect();
    truth.bias = solve_bias(&truth, cfg.background_purchase_rate);

    let mut r = rng::substream(cfg.seed, "synth.descriptions");
    let descriptions = truth
        .source_item_latents
        .iter()
        .map(|l| describe_item(l, &mut r))
        .collect();

    let mut r = rng::substream(cfg.seed, "synth.source");
    let horizon = cfg.months as i64 * MONTH;
    let extra = Poisson::new(cfg.mean_source_length - 1.0).ok();
    let mut source = Vec::new();
    for u in 0..cfg.users {
        if truth.new_customer[u] {
            continue;
        }
        let z = &truth.user_latents[u];
        let logits: Vec<f64> = truth
            .source_item_latents
            .iter()
            .map(|s| cfg.source_preference_strength * dot(z, s))
            .collect();
        let w = WeightedIndex::new(softmax_weights(&logits)).map_err(|e| Error::Numeric(e.to_string()))?;
        let len = 1 + extra.as_ref().map_or(0, |p| p.sample(&mut r) as usize);
        for _ in 0..len {
            source.push((u, w.sample(&mut r), r.gen_range(0..horizon)));
        }
    }

    let mut r = rng::substream(cfg.seed, "synth.target");
    let mut purchases = Vec::new();
    let mut consults = Vec::new();
    for u in 0..cfg.users {
        let agent = truth.user_agent[u];
        let mut owned = vec![false; cfg.target_items];
        for m in 0..cfg.months as i64 {
            let start = m * MONTH;
            let consulted = r.gen_bool(truth.consult_prob[agent]);
            let consult_ts = consulted.then(|| start + r.gen_range(0..MONTH / 2));
            if let Some(ts) = consult_ts {
                consults.push((u, agent, ts));
            }
            for (i, own) in owned.iter_mut().enumerate() {
                let p = truth.purchase_probability(u, i, consulted, true);
                if *own || !r.gen_bool(p) {
                    continue;
                }
                *own = true;
                let ts = match consult_ts {
                    Some(c) => r.gen_range(c + 1..start + MONTH),
                    None => start + r.gen_range(0..MONTH),
                };
                purchases.push((u, i, ts));
            }
        }
    }

    Ok(Simulation {
        truth,
        user_features,
        agent_features,
        descriptions,
        source,
        purchases,
        consults,
    })
}

fn fmt_features(f: &[f64]) -> String {
    f.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(",")
}

pub fn user_id(u: usize) -> String {
    format!("u{u}")
}

pub fn agent_id(a: usize) -> String {
    format!("a{a}")
}

pub fn item_id(i: usize) -> String {
    format!("i{i}")
}

pub fn source_item_id(j: usize) -> String {
    format!("s{j}")
}

/// Writes a dataset directory and its ground truth. Output bytes depend
/// only on `cfg`.
pub fn generate(cfg: &GenConfig, out: &Path) -> Result<GroundTruth> {
    let sim = simulate(cfg)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    tsv::write(
        &out.join("nodes_user.tsv"),
        &["id", "features"],
        sim.user_features
            .iter()
            .enumerate()
            .map(|(u, f)| vec![user_id(u), fmt_features(f)]),
    )?;
    tsv::write(
        &out.join("nodes_agent.tsv"),
        &["id", "features"],
        sim.agent_features
            .iter()
            .enumerate()
            .map(|(a, f)| vec![agent_id(a), fmt_features(f)]),
    )?;
    tsv::write(&out.join("nodes_item.tsv"), &["id"], (0..cfg.target_items).map(|i| vec![item_id(i)]))?;
    tsv::write(
        &out.join("nodes_property.tsv"),
        &["id"],
        sim.truth.property_names.iter().map(|p| vec![p.clone()]),
    )?;

    let mut purchases = sim.purchases.clone();
    purchases.sort_by_key(|&(u, i, ts)| (ts, u, i));
    tsv::write(
        &out.join("purchase.tsv"),
        &["src_id", "dst_id", "timestamp"],
        purchases.iter().map(|&(u, i, ts)| vec![user_id(u), item_id(i), ts.to_string()]),
    )?;
    tsv::write(
        &out.join("served_by.tsv"),
        &["src_id", "dst_id"],
        sim.truth
            .user_agent
            .iter()
            .enumerate()
            .map(|(u, &a)| vec![user_id(u), agent_id(a)]),
    )?;
    tsv::write(
        &out.join("possess.tsv"),
        &["src_id", "dst_id"],
        sim.truth.item_properties.iter().enumerate().flat_map(|(i, ps)| {
            ps.iter()
                .map(|&p| vec![item_id(i), sim.truth.property_names[p].clone()])
                .collect::<Vec<_>>()
        }),
    )?;
    let mut consults = sim.consults.clone();
    consults.sort_by_key(|&(u, a, ts)| (ts, u, a));
    tsv::write(
        &out.join(CONSULT_FILE),
        &["user_id", "agent_id", "timestamp"],
        consults.iter().map(|&(u, a, ts)| vec![user_id(u), agent_id(a), ts.to_string()]),
    )?;
    tsv::write(
        &out.join(DESCRIPTIONS_FILE),
        &["item_id", "text"],
        sim.descriptions
            .iter()
            .enumerate()
            .map(|(j, d)| vec![source_item_id(j), d.clone()]),
    )?;
    let mut source = sim.source.clone();
    source.sort_by_key(|&(u, j, ts)| (u, ts, j));
    tsv::write(
        &out.join(SOURCE_FILE),
        &["user_id", "item_id", "timestamp"],
        source
            .iter()
            .map(|&(u, j, ts)| vec![user_id(u), source_item_id(j), ts.to_string()]),
    )?;

    let path = out.join(GROUND_TRUTH_FILE);
    let json = serde_json::to_string(&sim.truth)?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(sim.truth)
}

pub fn load_ground_truth(dir: &Path) -> Result<GroundTruth> {
    let path = dir.join(GROUND_TRUTH_FILE);
    let raw = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&raw)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub node_counts: BTreeMap<String, usize>,
    pub relation_edges: BTreeMap<String, usize>,
    pub source_items: usize,
    pub purchase_events: usize,
    pub consult_events: usize,
    pub source_events: usize,
    /// Distinct user-item purchase pairs over `users * items`.
    pub target_sparsity: f64,
    pub overlap_users: usize,
    /// Mean source sequence length over users with any source history.
    pub mean_source_length: f64,
    pub content_hash: String,
}

/// Counts and sparsity of a dataset directory. Missing files are all
/// named in the error.
pub fn describe(dir: &Path) -> Result<DatasetReport> {
    let missing = dataset::missing_files(dir);
    if !missing.is_empty() {
        return Err(Error::MissingFile(dir.join(missing.join(", "))));
    }
    let d = Dataset::load(dir)?;
    let node_counts = NodeType::ALL
        .iter()
        .map(|t| (t.name().to_string(), d.graph.count(*t)))
        .collect();
    let relation_edges = Relation::ALL
        .iter()
        .map(|r| (r.name().to_string(), d.graph.n_edges(*r)))
        .collect();
    let pairs = d.graph.n_edges(Relation::Purchase);
    let active: Vec<usize> = d.source_seqs.iter().map(Vec::len).filter(|&n| n > 0).collect();
    Ok(DatasetReport {
        node_counts,
        relation_edges,
        source_items: d.n_source_items(),
        purchase_events: d.purchases.len(),
        consult_events: d.consults.len(),
        source_events: active.iter().sum(),
        target_sparsity: pairs as f64 / (d.n_users() * d.n_items()).max(1) as f64,
        overlap_users: d.overlap_users().len(),
        mean_source_length: if active.is_empty() {
            0.0
        } else {
            active.iter().sum::<usize>() as f64 / active.len() as f64
        },
        content_hash: d.content_hash,
    })
}
