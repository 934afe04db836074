//! Self-checks run by `hcdir verify`: finite-difference gradient checks,
//! brute-force oracles for meta-paths, metrics and losses, and attention
//! normalisation on random graphs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};

use crate::autograd::Tape;
use crate::cross_domain::{Mapper, NORM_EPS};
use crate::error::{Error, Result};
use crate::gradcheck;
use crate::graph::{build_graph, metapath_neighbors, HeteroGraph, MetaPath, MetaPathSet, NodeRef, NodeType, RawEdges, Relation};
use crate::rng::{self, Rng};
use crate::source_model::SourceModel;
use crate::tahin::{self, TahinConfig, TahinContext, TahinModel, PROB_EPS};
use crate::tensor::Mat;
use crate::train_eval::metrics::{ndcg, recall_at_n};

/// Largest accepted relative gradient error.
pub const GRAD_TOL: f64 = 1e-4;
/// Largest accepted deviation of an attention distribution's sum from 1.
pub const ATTENTION_TOL: f64 = 1e-6;
pub const METRIC_TOL: f64 = 1e-9;
pub const LOSS_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Gradcheck,
    Oracles,
    Invariants,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::Gradcheck, Suite::Oracles, Suite::Invariants];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Gradcheck => "gradcheck",
            Suite::Oracles => "oracles",
            Suite::Invariants => "invariants",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown suite `{s}` (gradcheck, oracles, invariants)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn line(name: &str, passed: bool, detail: String) -> CheckLine {
    CheckLine {
        name: name.to_string(),
        passed,
        detail,
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<CheckLine>> {
    match suite {
        Suite::Gradcheck => gradcheck_suite(seed),
        Suite::Oracles => oracle_suite(seed),
        Suite::Invariants => invariant_suite(seed),
    }
}

/// Random graph with every node type present and about `nodes` nodes in
/// total. Users and items carry random features when `features` is set.
pub fn random_graph(rng: &mut Rng, nodes: usize, features: bool) -> Result<HeteroGraph> {
    let nodes = nodes.max(8);
    let n_users = (nodes * 5 / 10).max(2);
    let n_agents = (nodes / 10).max(1);
    let n_items = (nodes * 3 / 10).max(2);
    let n_props = nodes.saturating_sub(n_users + n_agents + n_items).max(1);
    let density = rng.gen_range(0.05..0.35);
    let mut purchases = Vec::new();
    let mut served = Vec::new();
    let mut possess = Vec::new();
    for u in 0..n_users {
        for i in 0..n_items {
            if rng.gen_bool(density) {
                purchases.push((NodeRef::user(u), NodeRef::item(i)));
            }
        }
        if rng.gen_bool(0.8) {
            served.push((NodeRef::user(u), NodeRef::agent(rng.gen_range(0..n_agents))));
        }
    }
    for i in 0..n_items {
        for p in 0..n_props {
            if rng.gen_bool(0.3) {
                possess.push((NodeRef::item(i), NodeRef::property(p)));
            }
        }
    }
    let feats = |n: usize, d: usize, rng: &mut Rng| Some(Mat::uniform(n, d, 1.0, rng));
    let features = if features {
        [feats(n_users, 3, rng), None, feats(n_items, 2, rng), None]
    } else {
        Default::default()
    };
    build_graph(
        [n_users, n_agents, n_items, n_props],
        &[
            RawEdges::new(Relation::Purchase.name(), purchases),
            RawEdges::new(Relation::ServedBy.name(), served),
            RawEdges::new(Relation::Possess.name(), possess),
        ],
        features,
    )
}

/// Walk-count enumeration by explicit depth-first search over one-hop
/// neighbours, excluding the start node from the result.
pub fn dfs_metapath_neighbors(g: &HeteroGraph, e: NodeRef, path: &MetaPath) -> Result<BTreeMap<NodeRef, u64>> {
    fn go(g: &HeteroGraph, at: NodeRef, rels: &[Relation], out: &mut BTreeMap<NodeRef, u64>) -> Result<()> {
        let Some((&rel, rest)) = rels.split_first() else {
            *out.entry(at).or_default() += 1;
            return Ok(());
        };
        for n in g.one_hop_neighbors(at, Some(rel))? {
            go(g, n, rest, out)?;
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    go(g, e, path.relations(), &mut out)?;
    out.remove(&e);
    Ok(out)
}

/// NDCG from the definition: DCG of the binary gain vector over the ideal
/// DCG of the same gains sorted in decreasing order.
pub fn brute_ndcg(ranked: &[usize], relevant: &BTreeSet<usize>) -> f64 {
    let gains: Vec<f64> = ranked.iter().map(|i| if relevant.contains(i) { 1.0 } else { 0.0 }).collect();
    let dcg = |g: &[f64]| -> f64 { g.iter().enumerate().map(|(k, x)| x / ((k + 2) as f64).log2()).sum() };
    let mut ideal = gains.clone();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let i = dcg(&ideal);
    if i == 0.0 {
        0.0
    } else {
        dcg(&gains) / i
    }
}

pub fn brute_recall(ranked: &[usize], relevant: &BTreeSet<usize>, n: usize) -> f64 {
    let top: BTreeSet<usize> = ranked.iter().take(n).copied().collect();
    top.intersection(relevant).count() as f64 / relevant.len() as f64
}

fn small_tahin() -> TahinConfig {
    TahinConfig {
        dim: 8,
        heads: 2,
        rounds: 1,
    }
}

fn report_line(name: &str, r: &gradcheck::GradReport) -> CheckLine {
    let worst = r.worst().map(|t| t.name.clone()).unwrap_or_default();
    line(
        name,
        r.max_rel_err() < GRAD_TOL,
        format!(
            "{} tensors, max rel err {:.2e} (worst {worst}, tol {GRAD_TOL:.0e})",
            r.tensors.len(),
            r.max_rel_err()
        ),
    )
}

/// Gradient checks of the graph encoder, the source GRU and the mapper on
/// instances of at most 30 nodes, in float64.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<CheckLine>> {
    let mut rng = rng::substream(seed, "verify.gradcheck");
    let mut out = Vec::new();

    let g = random_graph(&mut rng, 24, true)?;
    let ctx = TahinContext::new(g.clone(), MetaPathSet::default().filtered_for(&g))?;
    let model = TahinModel::new(small_tahin(), &ctx, &mut rng)?;
    let n_items = g.count(NodeType::Item);
    let triples: Vec<(usize, usize, f64)> = (0..8)
        .map(|k| (rng.gen_range(0..g.count(NodeType::User)), rng.gen_range(0..n_items), (k % 2) as f64))
        .collect();
    let r = gradcheck::check(model.params(), 1e-5, 12, |p, tape| {
        let mut m = model.clone();
        *m.params_mut() = p.clone();
        m.batch_loss(tape, &ctx, &triples)
    })?;
    out.push(report_line("graph encoder", &r));

    let vectors = Mat::uniform(6, 5, 1.0, &mut rng);
    let src = SourceModel::new(4, vectors, &mut rng)?;
    let seqs: Vec<Vec<usize>> = (0..4)
        .map(|_| (0..rng.gen_range(1..5)).map(|_| rng.gen_range(0..6)).collect())
        .collect();
    let refs: Vec<&[usize]> = seqs.iter().map(Vec::as_slice).collect();
    let triples: Vec<(usize, usize, f64)> = (0..8).map(|k| (k % 4, rng.gen_range(0..6), (k % 2) as f64)).collect();
    let r = gradcheck::check(src.params(), 1e-5, 30, |p, tape| {
        let mut m = src.clone();
        *m.params_mut() = p.clone();
        m.batch_loss(tape, &refs, &triples)
    })?;
    out.push(report_line("source GRU", &r));

    let mapper = Mapper::new(4, &[6], 3, &mut rng)?;
    let s = Mat::uniform(5, 4, 1.0, &mut rng);
    let t = Mat::uniform(5, 3, 1.0, &mut rng);
    let r = gradcheck::check(mapper.params(), 1e-5, 40, |p, tape| {
        let mut m = mapper.clone();
        *m.params_mut() = p.clone();
        m.loss(tape, &s, &t, false)
    })?;
    out.push(report_line("mapper", &r));
    Ok(out)
}

fn scalar_score(u: &[f64], v: &[f64]) -> f64 {
    let z: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    1.0 / (1.0 + (-z).exp())
}

fn scalar_bce(pairs: &[(f64, f64)]) -> f64 {
    pairs
        .iter()
        .map(|&(p, y)| {
            let p = p.max(PROB_EPS).min(1.0 - PROB_EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum()
}

/// `tanh` MLP written out entry by entry from the named mapper tensors.
fn scalar_mapper(m: &Mapper, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    let mut l = 0;
    while let (Some(w), Some(b)) = (
        m.params().by_name(&format!("mapper.{l}.w")),
        m.params().by_name(&format!("mapper.{l}.b")),
    ) {
        let mut next = vec![0.0; w.rows()];
        for (o, slot) in next.iter_mut().enumerate() {
            let mut acc = b.get(0, o);
            for (k, x) in h.iter().enumerate() {
                acc += w.get(o, k) * x;
            }
            *slot = acc;
        }
        l += 1;
        let last = m.params().by_name(&format!("mapper.{l}.w")).is_none();
        if !last {
            for v in &mut next {
                *v = v.tanh();
            }
        }
        h = next;
    }
    h
}

/// Meta-path enumeration against DFS on 100 random graphs, metrics against
/// definitions on 1000 random rankings, and the losses and score against
/// scalar transcriptions.
pub fn oracle_suite(seed: u64) -> Result<Vec<CheckLine>> {
    let mut rng = rng::substream(seed, "verify.oracles");
    let mut out = Vec::new();

    let mut mismatches = 0usize;
    let mut starts = 0usize;
    for _ in 0..100 {
        let n = rng.gen_range(8..=50);
        let g = random_graph(&mut rng, n, false)?;
        for p in MetaPathSet::default().paths() {
            for id in 0..g.count(p.head()) {
                let e = NodeRef::new(p.head(), id);
                let got: BTreeMap<NodeRef, u64> = metapath_neighbors(&g, e, p)?.into_iter().collect();
                starts += 1;
                if got != dfs_metapath_neighbors(&g, e, p)? {
                    mismatches += 1;
                }
            }
        }
    }
    out.push(line(
        "meta-path neighbours vs DFS",
        mismatches == 0,
        format!("{mismatches} mismatches over {starts} start nodes in 100 graphs"),
    ));

    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=20);
        let mut ranked: Vec<usize> = (0..n).collect();
        ranked.shuffle(&mut rng);
        let k = rng.gen_range(1..=n);
        let relevant: BTreeSet<usize> = ranked.choose_multiple(&mut rng, k).copied().collect();
        worst = worst.max((ndcg(&ranked, &relevant)? - brute_ndcg(&ranked, &relevant)).abs());
        for cut in [1, 3, 5] {
            worst = worst.max((recall_at_n(&ranked, &relevant, cut)? - brute_recall(&ranked, &relevant, cut)).abs());
        }
    }
    out.push(line(
        "NDCG and Rec@N vs definitions",
        worst <= METRIC_TOL,
        format!("max abs diff {worst:.1e} over 1000 rankings (tol {METRIC_TOL:.0e})"),
    ));

    // Score and L_T on rows of a trained-shape encoder output.
    let g = random_graph(&mut rng, 30, true)?;
    let ctx = TahinContext::new(g.clone(), MetaPathSet::default().filtered_for(&g))?;
    let model = TahinModel::new(small_tahin(), &ctx, &mut rng)?;
    let emb = model.encode_all(&ctx)?;
    let users = emb.table(NodeType::User).expect("users present");
    let items = emb.table(NodeType::Item).expect("items present");
    // Semantic weights average over the batch, so the batch covers every
    // user and item to match the full-graph encoding.
    let n = users.rows().max(items.rows());
    let triples: Vec<(usize, usize, f64)> = (0..n)
        .map(|k| (k % users.rows(), k % items.rows(), f64::from(rng.gen_bool(0.5))))
        .collect();
    let mut score_err = 0.0f64;
    for &(u, i, _) in &triples {
        score_err = score_err.max((tahin::score(users.row(u), items.row(i))? - scalar_score(users.row(u), items.row(i))).abs());
    }
    let expect = scalar_bce(
        &triples
            .iter()
            .map(|&(u, i, y)| (scalar_score(users.row(u), items.row(i)), y))
            .collect::<Vec<_>>(),
    );
    let mut tape = Tape::new();
    let l = model.batch_loss(&mut tape, &ctx, &triples)?;
    let lt_err = (tape.value(l).item() - expect).abs();
    out.push(line(
        "score vs scalar sigmoid",
        score_err <= LOSS_TOL,
        format!("max abs diff {score_err:.1e} (tol {LOSS_TOL:.0e})"),
    ));
    out.push(line(
        "L_T vs scalar cross-entropy",
        lt_err <= LOSS_TOL,
        format!("abs diff {lt_err:.1e} (tol {LOSS_TOL:.0e})"),
    ));

    let mapper = Mapper::new(5, &[7], 4, &mut rng)?;
    let s = Mat::uniform(6, 5, 1.0, &mut rng);
    let t = Mat::uniform(6, 4, 1.0, &mut rng);
    let expect: f64 = (0..6)
        .map(|r| {
            let y = scalar_mapper(&mapper, s.row(r));
            let sq: f64 = y.iter().zip(t.row(r)).map(|(a, b)| (a - b) * (a - b)).sum();
            (sq + NORM_EPS).sqrt()
        })
        .sum();
    let mut tape = Tape::new();
    let l = mapper.loss(&mut tape, &s, &t, false)?;
    let lc_err = (tape.value(l).item() - expect).abs();
    out.push(line(
        "L_cross vs scalar transcription",
        lc_err <= LOSS_TOL,
        format!("abs diff {lc_err:.1e} (tol {LOSS_TOL:.0e})"),
    ));
    Ok(out)
}

/// Every relational, node-level and semantic attention distribution on 50
/// random graphs of at most 200 nodes with random parameters.
pub fn invariant_suite(seed: u64) -> Result<Vec<CheckLine>> {
    let mut rng = rng::substream(seed, "verify.invariants");
    let mut worst_sum = 0.0f64;
    let mut negative = 0usize;
    let mut dists = 0usize;
    for _ in 0..50 {
        let n = rng.gen_range(10..=200);
        let features = rng.gen_bool(0.5);
        let g = random_graph(&mut rng, n, features)?;
        let ctx = TahinContext::new(g.clone(), MetaPathSet::default().filtered_for(&g))?;
        let mut model_rng = Rng::seed_from_u64(rng.gen());
        let model = TahinModel::new(small_tahin(), &ctx, &mut model_rng)?;
        let trace = model.attention_trace(&ctx)?;
        let mut check = |ws: &mut dyn Iterator<Item = f64>| {
            let v: Vec<f64> = ws.collect();
            if v.is_empty() {
                return;
            }
            dists += 1;
            negative += v.iter().filter(|&&x| x < 0.0).count();
            worst_sum = worst_sum.max((v.iter().sum::<f64>() - 1.0).abs());
        };
        for t in NodeType::ALL {
            let Some(tt) = trace.get(t) else { continue };
            for a in &tt.alpha {
                check(&mut a.iter().map(|x| x.1));
            }
            for per_node in tt.beta.values() {
                for b in per_node {
                    check(&mut b.iter().map(|x| x.1));
                }
            }
            check(&mut tt.gamma.iter().map(|x| x.1));
        }
    }
    Ok(vec![line(
        "attention distributions",
        worst_sum <= ATTENTION_TOL && negative == 0,
        format!(
            "{dists} distributions on 50 graphs: max |sum - 1| {worst_sum:.1e}, {negative} negative weights (tol {ATTENTION_TOL:.0e})"
        ),
    )])
}
