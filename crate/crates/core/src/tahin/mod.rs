//! Target-domain encoder over the insurance heterogeneous graph.
//!
//! Each node embedding is refreshed from three attention levels:
//!
//! * relational attention over one-hop neighbours, scored with a
//!   per-relation network on `(h_e, P_r h_w)` and aggregated over the raw
//!   neighbour embeddings;
//! * node-level attention over de-duplicated meta-path neighbours, one
//!   network per meta-path;
//! * semantic attention that weighs the meta-paths of a node type with one
//!   global weight per path.
//!
//! The three results are merged by
//! `h = ReLU(W2 [h0, W1 [h1, h2] + b1] + b2)`.
//!
//! All attention networks are single-layer multi-head additive scorers:
//! each head maps both arguments to `S / H` dimensions, scores their
//! concatenation with a head vector under LeakyReLU(0.2), and the neighbour
//! logit is the mean over heads.

mod forward;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use self::forward::{AttentionTrace, Embeddings, TypeTrace};
use crate::autograd::{ParamId, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, MetaPath, MetaPathIndex, MetaPathSet, NodeRef, NodeType, Relation};
use crate::tensor::{dot, sigmoid, Mat};

/// Probability clamp used by the cross-entropy losses.
pub const PROB_EPS: f64 = 1e-7;

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TahinConfig {
    /// Embedding width `S`.
    pub dim: usize,
    pub heads: usize,
    /// Number of aggregation rounds.
    pub rounds: usize,
}

impl Default for TahinConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            heads: 8,
            rounds: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct AttIds {
    pub wl: ParamId,
    pub wr: ParamId,
    pub a: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct SemIds {
    pub q: ParamId,
    pub w: ParamId,
    pub b: ParamId,
}

/// A graph prepared for encoding: the meta-path set validated against it
/// and every meta-path neighbour set pre-computed.
#[derive(Clone, Debug)]
pub struct TahinContext {
    graph: HeteroGraph,
    paths: MetaPathSet,
    index: Vec<MetaPathIndex>,
}

impl TahinContext {
    pub fn new(graph: HeteroGraph, paths: MetaPathSet) -> Result<Self> {
        paths.validate_for(&graph)?;
        let index = paths
            .paths()
            .iter()
            .map(|p| MetaPathIndex::build(&graph, p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            graph,
            paths,
            index,
        })
    }

    pub fn graph(&self) -> &HeteroGraph {
        &self.graph
    }

    pub fn paths(&self) -> &MetaPathSet {
        &self.paths
    }

    pub(crate) fn index(&self, i: usize) -> &MetaPathIndex {
        &self.index[i]
    }

    fn path_position(&self, name: &str) -> Option<usize> {
        self.paths.paths().iter().position(|p| p.name() == name)
    }
}

/// All learnable tensors of the target encoder.
#[derive(Clone, Debug)]
pub struct TahinModel {
    cfg: TahinConfig,
    params: ParamSet,
    pub(crate) h0: [Option<ParamId>; 4],
    pub(crate) proj: [Option<ParamId>; 6],
    pub(crate) rel_att: [Option<AttIds>; 6],
    pub(crate) path_att: BTreeMap<String, AttIds>,
    pub(crate) sem: [Option<SemIds>; 4],
    pub(crate) w1: ParamId,
    pub(crate) b1: ParamId,
    pub(crate) w2: ParamId,
    pub(crate) b2: ParamId,
}

fn att_params<R: Rng + ?Sized>(
    params: &mut ParamSet,
    prefix: &str,
    cfg: &TahinConfig,
    rng: &mut R,
) -> AttIds {
    let s = cfg.dim;
    let d = s / cfg.heads;
    AttIds {
        wl: params.insert(format!("{prefix}.wl"), Mat::glorot(s, s, rng)),
        wr: params.insert(format!("{prefix}.wr"), Mat::glorot(s, s, rng)),
        a: params.insert(format!("{prefix}.a"), Mat::glorot(cfg.heads, 2 * d, rng)),
    }
}

impl TahinModel {
    /// Allocates parameters for every node type, relation and meta-path
    /// present in `ctx`. Base embeddings come from node features through a
    /// fixed random projection when the graph carries them, otherwise from
    /// `U(-1/sqrt(S), 1/sqrt(S))`.
    pub fn new<R: Rng + ?Sized>(cfg: TahinConfig, ctx: &TahinContext, rng: &mut R) -> Result<Self> {
        if cfg.dim == 0 || cfg.heads == 0 || cfg.dim % cfg.heads != 0 {
            return Err(Error::Config(format!(
                "embedding width {} must be a positive multiple of the head count {}",
                cfg.dim, cfg.heads
            )));
        }
        if cfg.rounds == 0 {
            return Err(Error::Config("at least one aggregation round is required".into()));
        }
        let g = ctx.graph();
        let s = cfg.dim;
        let mut params = ParamSet::new();

        let mut h0 = [None; 4];
        for t in NodeType::ALL {
            if !g.is_enabled(t) {
                continue;
            }
            let n = g.count(t);
            let init = match g.features(t) {
                Some(f) => {
                    let proj = Mat::glorot(f.cols(), s, rng);
                    f.matmul(&proj)
                }
                None => Mat::uniform(n, s, 1.0 / (s as f64).sqrt(), rng),
            };
            h0[t.index()] = Some(params.insert(format!("h0.{}", t.name()), init));
        }

        let mut proj = [None; 6];
        let mut rel_att = [None; 6];
        for rel in Relation::ALL {
            if !(g.is_enabled(rel.src_type()) && g.is_enabled(rel.dst_type())) {
                continue;
            }
            proj[rel.index()] =
                Some(params.insert(format!("proj.{}", rel.name()), Mat::glorot(s, s, rng)));
            rel_att[rel.index()] =
                Some(att_params(&mut params, &format!("rel_att.{}", rel.name()), &cfg, rng));
        }

        let mut path_att = BTreeMap::new();
        for p in ctx.paths().paths() {
            let ids = att_params(&mut params, &format!("path_att.{}", p.name()), &cfg, rng);
            path_att.insert(p.name().to_string(), ids);
        }

        let mut sem = [None; 4];
        for t in NodeType::ALL {
            if ctx.paths().for_type(t).next().is_none() {
                continue;
            }
            let prefix = format!("sem.{}", t.name());
            sem[t.index()] = Some(SemIds {
                q: params.insert(format!("{prefix}.q"), Mat::glorot(1, s, rng)),
                w: params.insert(format!("{prefix}.w"), Mat::glorot(s, s, rng)),
                b: params.insert(format!("{prefix}.b"), Mat::zeros(1, s)),
            });
        }

        let w1 = params.insert("update.w1", Mat::glorot(s, 2 * s, rng));
        let b1 = params.insert("update.b1", Mat::zeros(1, s));
        let w2 = params.insert("update.w2", Mat::glorot(s, 2 * s, rng));
        let b2 = params.insert("update.b2", Mat::filled(1, s, 0.01));

        Ok(Self {
            cfg,
            params,
            h0,
            proj,
            rel_att,
            path_att,
            sem,
            w1,
            b1,
            w2,
            b2,
        })
    }

    /// Rebuilds a model around an existing parameter set, e.g. from a
    /// checkpoint. Every expected tensor must be present with the right
    /// shape.
    pub fn from_params(cfg: TahinConfig, ctx: &TahinContext, params: ParamSet) -> Result<Self> {
        let mut rng = crate::rng::substream(0, "shape-template");
        let template = Self::new(cfg, ctx, &mut rng)?;
        for (_, name, m) in template.params.iter() {
            match params.by_name(name) {
                Some(p) if p.shape() == m.shape() => {}
                Some(p) => {
                    return Err(Error::Integrity(format!(
                        "tensor {name}: shape {:?}, expected {:?}",
                        p.shape(),
                        m.shape()
                    )))
                }
                None => return Err(Error::Integrity(format!("missing tensor {name}"))),
            }
        }
        let mut model = template;
        // Same insertion order as the template, so the ids stay aligned.
        let mut aligned = ParamSet::new();
        for (_, name, _) in model.params.iter() {
            aligned.insert(name, params.by_name(name).expect("checked").clone());
        }
        model.params = aligned;
        Ok(model)
    }

    pub fn config(&self) -> &TahinConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        for (_, name, m) in self.params.iter() {
            if !m.is_finite() {
                return Err(Error::Numeric(format!("non-finite values in {name}")));
            }
        }
        Ok(())
    }

    /// Current base embedding of one node.
    pub fn base_embedding(&self, n: NodeRef) -> Result<&[f64]> {
        let id = self.h0[n.node_type.index()]
            .ok_or_else(|| Error::Contract(format!("no base embeddings for {}", n.node_type)))?;
        let table = self.params.get(id);
        if n.id >= table.rows() {
            return Err(Error::Bounds(format!("{n} has no base embedding")));
        }
        Ok(table.row(n.id))
    }

    /// Relational attention over the one-hop neighbours of `e`. Returns
    /// `h1_e` and the attention weights; an isolated node gets a zero vector
    /// and no weights.
    pub fn relational_aggregate(
        &self,
        ctx: &TahinContext,
        e: NodeRef,
    ) -> Result<(Vec<f64>, Vec<(NodeRef, f64)>)> {
        self.check_finite()?;
        if !ctx.graph().contains(e) {
            return Err(Error::Bounds(format!("{e} not in graph")));
        }
        let mut tape = Tape::new();
        let base = self.base_vars(&mut tape, ctx.graph());
        let agg = self.aggregate(&mut tape, ctx, &base, e.node_type, &[e.id], true);
        let h1 = tape.value(agg.h1).row(0).to_vec();
        Ok((h1, agg.trace_alpha(&tape).remove(0)))
    }

    /// Node-level attention of `e` over its neighbours on meta-path `path`.
    /// Returns `h^rho_e`, the weights, and whether the neighbour set was
    /// non-empty.
    pub fn node_attention_aggregate(
        &self,
        ctx: &TahinContext,
        e: NodeRef,
        path: &MetaPath,
    ) -> Result<(Vec<f64>, Vec<(NodeRef, f64)>, bool)> {
        self.check_finite()?;
        if path.head() != e.node_type || path.tail() != e.node_type {
            return Err(Error::Contract(format!(
                "meta-path {path} does not start and end at {}",
                e.node_type
            )));
        }
        let pos = ctx
            .path_position(path.name())
            .ok_or_else(|| Error::Config(format!("meta-path {path} is not configured")))?;
        if !ctx.graph().contains(e) {
            return Err(Error::Bounds(format!("{e} not in graph")));
        }
        let mut tape = Tape::new();
        let base = self.base_vars(&mut tape, ctx.graph());
        let agg = self.aggregate(&mut tape, ctx, &base, e.node_type, &[e.id], true);
        let pa = agg
            .paths
            .iter()
            .find(|p| p.path == pos)
            .expect("configured path aggregated");
        let h = tape.value(pa.h).row(0).to_vec();
        let weights = pa.trace_weights(&tape).remove(0);
        Ok((h, weights, pa.present[0]))
    }

    /// Semantic attention for one node type. `per_path` holds, for each
    /// meta-path, the node-level embeddings of every node of the type and a
    /// presence flag per node. Path importance is averaged over all nodes of
    /// the type and normalised over the paths present for at least one node;
    /// the weights are shared by all nodes of the type.
    pub fn semantic_fuse(
        &self,
        node_type: NodeType,
        per_path: &[(String, Mat, Vec<bool>)],
    ) -> Result<(Mat, Vec<(String, f64)>)> {
        self.check_finite()?;
        let n = per_path.first().map_or(0, |(_, m, _)| m.rows());
        let s = self.cfg.dim;
        let Some(sem) = self.sem[node_type.index()] else {
            return Ok((Mat::zeros(n, s), Vec::new()));
        };
        let mut tape = Tape::new();
        let inputs: Vec<(Var, Vec<bool>)> = per_path
            .iter()
            .map(|(_, m, present)| (tape.constant(m.clone()), present.clone()))
            .collect();
        let (h2, gamma) = self.semantic(&mut tape, sem, &inputs, n);
        let names: Vec<String> = per_path
            .iter()
            .zip(&inputs)
            .filter(|(_, (_, pr))| pr.iter().any(|&x| x))
            .map(|((name, _, _), _)| name.clone())
            .collect();
        let gamma = match gamma {
            Some(g) => names
                .into_iter()
                .zip(tape.value(g).data().iter().copied())
                .collect(),
            None => Vec::new(),
        };
        Ok((tape.value(h2).clone(), gamma))
    }

    /// `ReLU(W2 [h0, W1 [h1, h2] + b1] + b2)` for a single node.
    pub fn update_node(&self, h0: &[f64], h1: &[f64], h2: &[f64]) -> Result<Vec<f64>> {
        let s = self.cfg.dim;
        if h0.len() != s || h1.len() != s || h2.len() != s {
            return Err(Error::Contract(format!("update inputs must have width {s}")));
        }
        let mut tape = Tape::new();
        let h0 = tape.constant(Mat::row_vector(h0));
        let h1 = tape.constant(Mat::row_vector(h1));
        let h2 = tape.constant(Mat::row_vector(h2));
        let out = self.update(&mut tape, h0, h1, h2);
        Ok(tape.value(out).row(0).to_vec())
    }
}

/// `sigmoid(u . v)`.
pub fn score(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Contract(format!(
            "score of vectors with widths {} and {}",
            u.len(),
            v.len()
        )));
    }
    Ok(sigmoid(dot(u, v)))
}

/// Summed binary cross-entropy over `(u, v, y)` triples with the
/// probability clamped to `[1e-7, 1 - 1e-7]`.
pub fn target_loss(batch: &[(&[f64], &[f64], f64)]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Contract("loss over an empty batch".into()));
    }
    let mut total = 0.0;
    for &(u, v, y) in batch {
        let p = score(u, v)?.clamp(PROB_EPS, 1.0 - PROB_EPS);
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(total)
}
