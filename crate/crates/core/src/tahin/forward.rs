//! Batched forward pass of the target encoder.
//!
//! A round is computed for an explicit set of query nodes per type, so a
//! training step only touches the neighbourhoods of its batch. Semantic
//! path weights are averaged over the query nodes of the round, which for a
//! full-graph pass means every node of the type.

use std::collections::{BTreeMap, HashMap};

use super::{AttIds, SemIds, TahinContext, TahinModel, LEAKY_SLOPE, PROB_EPS};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{NodeRef, NodeType, Relation};
use crate::tensor::Mat;

/// Rows encoded per tape when embedding a whole graph.
const CHUNK: usize = if cfg!(test) { 7 } else { 2048 };

/// Final embeddings of every node, one table per enabled node type.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Embeddings {
    tables: [Option<Mat>; 4],
}

impl Embeddings {
    pub fn new(tables: [Option<Mat>; 4]) -> Self {
        Self { tables }
    }

    pub fn table(&self, t: NodeType) -> Option<&Mat> {
        self.tables[t.index()].as_ref()
    }

    pub fn row(&self, n: NodeRef) -> Option<&[f64]> {
        self.table(n.node_type)
            .filter(|m| n.id < m.rows())
            .map(|m| m.row(n.id))
    }

    pub fn tables(&self) -> &[Option<Mat>; 4] {
        &self.tables
    }
}

/// Attention weights of one node type from a full-graph pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TypeTrace {
    /// Relational weights per node.
    pub alpha: Vec<Vec<(NodeRef, f64)>>,
    /// Node-level weights per meta-path, per node.
    pub beta: BTreeMap<String, Vec<Vec<(NodeRef, f64)>>>,
    /// Semantic weight per meta-path present anywhere in the type.
    pub gamma: Vec<(String, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttentionTrace {
    types: [Option<TypeTrace>; 4],
}

impl AttentionTrace {
    pub fn get(&self, t: NodeType) -> Option<&TypeTrace> {
        self.types[t.index()].as_ref()
    }
}

pub(crate) struct PairTrace {
    weights: Var,
    seg: Vec<usize>,
    nbr: Vec<NodeRef>,
}

impl PairTrace {
    fn per_node(&self, tape: &Tape, n: usize) -> Vec<Vec<(NodeRef, f64)>> {
        let mut out = vec![Vec::new(); n];
        let w = tape.value(self.weights);
        for (p, (&s, &nb)) in self.seg.iter().zip(&self.nbr).enumerate() {
            out[s].push((nb, w.get(p, 0)));
        }
        out
    }
}

pub(crate) struct PathAgg {
    pub path: usize,
    pub h: Var,
    pub present: Vec<bool>,
    trace: Option<PairTrace>,
    n: usize,
}

impl PathAgg {
    pub fn trace_weights(&self, tape: &Tape) -> Vec<Vec<(NodeRef, f64)>> {
        match &self.trace {
            Some(t) => t.per_node(tape, self.n),
            None => vec![Vec::new(); self.n],
        }
    }
}

pub(crate) struct TypeAgg {
    pub h1: Var,
    pub paths: Vec<PathAgg>,
    alpha: Option<PairTrace>,
    n: usize,
}

impl TypeAgg {
    pub fn trace_alpha(&self, tape: &Tape) -> Vec<Vec<(NodeRef, f64)>> {
        match &self.alpha {
            Some(t) => t.per_node(tape, self.n),
            None => vec![Vec::new(); self.n],
        }
    }
}

/// Local re-indexing of the neighbours touched by one batch.
#[derive(Default)]
struct LocalIds {
    map: HashMap<usize, usize>,
    ids: Vec<usize>,
}

impl LocalIds {
    fn local(&mut self, id: usize) -> usize {
        *self.map.entry(id).or_insert_with(|| {
            self.ids.push(id);
            self.ids.len() - 1
        })
    }
}

type Tables = [Option<Var>; 4];

impl TahinModel {
    /// Checks that every node type, relation and meta-path of `ctx` has
    /// parameters of the right shape.
    pub fn check_compatible(&self, ctx: &TahinContext) -> Result<()> {
        let g = ctx.graph();
        for t in NodeType::ALL {
            if !g.is_enabled(t) {
                continue;
            }
            let id = self.h0[t.index()]
                .ok_or_else(|| Error::Contract(format!("model has no {t} embeddings")))?;
            let rows = self.params().get(id).rows();
            if rows != g.count(t) {
                return Err(Error::Contract(format!(
                    "model has {rows} {t} embeddings, graph has {}",
                    g.count(t)
                )));
            }
        }
        for p in ctx.paths().paths() {
            if !self.path_att.contains_key(p.name()) {
                return Err(Error::Contract(format!("model has no attention for meta-path {p}")));
            }
            if self.sem[p.head().index()].is_none() {
                return Err(Error::Contract(format!("model has no semantic attention for {}", p.head())));
            }
        }
        Ok(())
    }

    pub(crate) fn base_vars(&self, tape: &mut Tape, g: &crate::graph::HeteroGraph) -> Tables {
        let mut out = [None; 4];
        for t in NodeType::ALL {
            if let (true, Some(id)) = (g.is_enabled(t), self.h0[t.index()]) {
                out[t.index()] = Some(tape.param(self.params(), id));
            }
        }
        out
    }

    fn att_side(&self, tape: &mut Tape, att: AttIds, x: Var, left: bool) -> Var {
        let w = tape.param(self.params(), if left { att.wl } else { att.wr });
        let a = tape.param(self.params(), att.a);
        let xw = tape.matmul_bt(x, w);
        let blk = tape.head_block(a, left);
        tape.matmul(xw, blk)
    }

    fn zeros(&self, tape: &mut Tape, n: usize) -> Var {
        tape.constant(Mat::zeros(n, self.config().dim))
    }

    /// Relational and node-level aggregation for the query nodes `q` of
    /// type `t`.
    pub(crate) fn aggregate(
        &self,
        tape: &mut Tape,
        ctx: &TahinContext,
        base: &Tables,
        t: NodeType,
        q: &[usize],
        trace: bool,
    ) -> TypeAgg {
        let g = ctx.graph();
        let n = q.len();
        let bt = base[t.index()].expect("query type has base embeddings");
        let bq = tape.gather_rows(bt, q);

        let mut logits = Vec::new();
        let mut values = Vec::new();
        let mut seg = Vec::new();
        let mut idx = Vec::new();
        let mut nbr = Vec::new();
        let mut offset = 0;
        for rel in Relation::outgoing(t) {
            let dt = rel.dst_type();
            let (Some(att), Some(proj), Some(bd)) = (
                self.rel_att[rel.index()],
                self.proj[rel.index()],
                base[dt.index()].filter(|_| g.is_enabled(dt)),
            ) else {
                continue;
            };
            let mut local = LocalIds::default();
            let (mut e_idx, mut w_idx) = (Vec::new(), Vec::new());
            for (qi, &id) in q.iter().enumerate() {
                for &w in g.successors(rel, id) {
                    e_idx.push(qi);
                    w_idx.push(local.local(w));
                }
            }
            if e_idx.is_empty() {
                continue;
            }
            let x = tape.gather_rows(bd, &local.ids);
            let p = tape.param(self.params(), proj);
            let px = tape.matmul_bt(x, p);
            let left = self.att_side(tape, att, bq, true);
            let right = self.att_side(tape, att, px, false);
            logits.push(tape.pair_logits(left, right, &e_idx, &w_idx, LEAKY_SLOPE));
            values.push(x);
            if trace {
                nbr.extend(w_idx.iter().map(|&w| NodeRef::new(dt, local.ids[w])));
            }
            seg.extend(e_idx);
            idx.extend(w_idx.into_iter().map(|w| w + offset));
            offset += local.ids.len();
        }
        let (h1, alpha) = if logits.is_empty() {
            (self.zeros(tape, n), None)
        } else {
            let l = tape.concat_rows(&logits);
            let v = tape.concat_rows(&values);
            let a = tape.segment_softmax(l, &seg);
            let s = tape.segment_weighted_sum(a, v, &idx, &seg, n);
            let alpha = trace.then(|| PairTrace {
                weights: a,
                seg,
                nbr,
            });
            (tape.tanh(s), alpha)
        };

        let mut paths = Vec::new();
        for (pi, path) in ctx.paths().paths().iter().enumerate() {
            if path.head() != t {
                continue;
            }
            let att = self.path_att[path.name()];
            let index = ctx.index(pi);
            let mut local = LocalIds::default();
            let (mut e_idx, mut w_idx) = (Vec::new(), Vec::new());
            let mut present = vec![false; n];
            for (qi, &id) in q.iter().enumerate() {
                let nb = index.neighbors(id);
                present[qi] = !nb.is_empty();
                for &w in nb {
                    e_idx.push(qi);
                    w_idx.push(local.local(w));
                }
            }
            if e_idx.is_empty() {
                let h = self.zeros(tape, n);
                paths.push(PathAgg {
                    path: pi,
                    h,
                    present,
                    trace: None,
                    n,
                });
                continue;
            }
            let x = tape.gather_rows(bt, &local.ids);
            let left = self.att_side(tape, att, bq, true);
            let right = self.att_side(tape, att, x, false);
            let l = tape.pair_logits(left, right, &e_idx, &w_idx, LEAKY_SLOPE);
            let b = tape.segment_softmax(l, &e_idx);
            let s = tape.segment_weighted_sum(b, x, &w_idx, &e_idx, n);
            let h = tape.tanh(s);
            let trace = trace.then(|| PairTrace {
                weights: b,
                nbr: w_idx.iter().map(|&w| NodeRef::new(t, local.ids[w])).collect(),
                seg: e_idx,
            });
            paths.push(PathAgg {
                path: pi,
                h,
                present,
                trace,
                n,
            });
        }
        TypeAgg {
            h1,
            paths,
            alpha,
            n,
        }
    }

    /// Semantic fusion of per-path embeddings (`n x S` each). Returns the
    /// fused embeddings and the path weights of the paths present in at
    /// least one row, in input order.
    pub(crate) fn semantic(
        &self,
        tape: &mut Tape,
        sem: SemIds,
        inputs: &[(Var, Vec<bool>)],
        n: usize,
    ) -> (Var, Option<Var>) {
        let live: Vec<&(Var, Vec<bool>)> = inputs.iter().filter(|(_, p)| p.iter().any(|&x| x)).collect();
        if live.is_empty() {
            return (self.zeros(tape, n), None);
        }
        let w = tape.param(self.params(), sem.w);
        let b = tape.param(self.params(), sem.b);
        let q = tape.param(self.params(), sem.q);
        let scores: Vec<Var> = live
            .iter()
            .map(|(h, _)| {
                let z = tape.linear(*h, w, b);
                let z = tape.tanh(z);
                let s = tape.matmul_bt(z, q);
                tape.mean_rows(s)
            })
            .collect();
        let stacked = tape.concat_rows(&scores);
        let gamma = tape.segment_softmax(stacked, &vec![0; live.len()]);
        let mut acc: Option<Var> = None;
        for (j, (h, _)) in live.iter().enumerate() {
            let gj = tape.gather_rows(gamma, &[j]);
            let term = tape.mul(*h, gj);
            acc = Some(match acc {
                Some(a) => tape.add(a, term),
                None => term,
            });
        }
        (acc.expect("at least one live path"), Some(gamma))
    }

    pub(crate) fn update(&self, tape: &mut Tape, h0: Var, h1: Var, h2: Var) -> Var {
        let w1 = tape.param(self.params(), self.w1);
        let b1 = tape.param(self.params(), self.b1);
        let w2 = tape.param(self.params(), self.w2);
        let b2 = tape.param(self.params(), self.b2);
        let x = tape.concat_cols(&[h1, h2]);
        let inner = tape.linear(x, w1, b1);
        let y = tape.concat_cols(&[h0, inner]);
        let out = tape.linear(y, w2, b2);
        tape.relu(out)
    }

    fn fuse_type(&self, tape: &mut Tape, t: NodeType, base_q: Var, agg: &TypeAgg) -> (Var, Option<Var>) {
        let n = agg.n;
        let (h2, gamma) = match self.sem[t.index()] {
            Some(sem) => {
                let inputs: Vec<(Var, Vec<bool>)> =
                    agg.paths.iter().map(|p| (p.h, p.present.clone())).collect();
                self.semantic(tape, sem, &inputs, n)
            }
            None => (self.zeros(tape, n), None),
        };
        (self.update(tape, base_q, agg.h1, h2), gamma)
    }

    /// One aggregation round for the given query nodes.
    fn round(
        &self,
        tape: &mut Tape,
        ctx: &TahinContext,
        base: &Tables,
        query: &[Vec<usize>; 4],
        trace: bool,
    ) -> (Tables, AttentionTrace) {
        let mut out = [None; 4];
        let mut traces = AttentionTrace::default();
        for t in NodeType::ALL {
            let q = &query[t.index()];
            let Some(bt) = base[t.index()] else { continue };
            if q.is_empty() {
                continue;
            }
            let agg = self.aggregate(tape, ctx, base, t, q, trace);
            let bq = tape.gather_rows(bt, q);
            let (h, gamma) = self.fuse_type(tape, t, bq, &agg);
            out[t.index()] = Some(h);
            if trace {
                let mut tt = TypeTrace {
                    alpha: agg.trace_alpha(tape),
                    ..Default::default()
                };
                let mut live = Vec::new();
                for p in &agg.paths {
                    let name = ctx.paths().paths()[p.path].name().to_string();
                    if p.present.iter().any(|&x| x) {
                        live.push(name.clone());
                    }
                    tt.beta.insert(name, p.trace_weights(tape));
                }
                if let Some(gv) = gamma {
                    tt.gamma = live.into_iter().zip(tape.value(gv).data().iter().copied()).collect();
                }
                traces.types[t.index()] = Some(tt);
            }
        }
        (out, traces)
    }

    fn all_nodes(ctx: &TahinContext) -> [Vec<usize>; 4] {
        NodeType::ALL.map(|t| (0..ctx.graph().count(t)).collect())
    }

    /// Final embeddings of the query nodes on `tape`. Rounds before the last
    /// are computed for the whole graph.
    pub fn forward(
        &self,
        tape: &mut Tape,
        ctx: &TahinContext,
        query: &[Vec<usize>; 4],
    ) -> Result<Tables> {
        self.check_compatible(ctx)?;
        let mut base = self.base_vars(tape, ctx.graph());
        let all = Self::all_nodes(ctx);
        for _ in 1..self.config().rounds {
            base = self.round(tape, ctx, &base, &all, false).0;
        }
        Ok(self.round(tape, ctx, &base, query, false).0)
    }

    /// Summed clamped cross-entropy of `(user, item, label)` triples under
    /// the current parameters, recorded on `tape`.
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        ctx: &TahinContext,
        triples: &[(usize, usize, f64)],
    ) -> Result<Var> {
        if triples.is_empty() {
            return Err(Error::Contract("loss over an empty batch".into()));
        }
        let mut users = LocalIds::default();
        let mut items = LocalIds::default();
        let mut upos = Vec::with_capacity(triples.len());
        let mut ipos = Vec::with_capacity(triples.len());
        for &(u, i, _) in triples {
            if u >= ctx.graph().count(NodeType::User) || i >= ctx.graph().count(NodeType::Item) {
                return Err(Error::Bounds(format!("pair (U{u}, I{i}) outside the graph")));
            }
            upos.push(users.local(u));
            ipos.push(items.local(i));
        }
        let mut query: [Vec<usize>; 4] = Default::default();
        query[NodeType::User.index()] = users.ids;
        query[NodeType::Item.index()] = items.ids;
        let out = self.forward(tape, ctx, &query)?;
        let u = out[NodeType::User.index()].expect("users encoded");
        let v = out[NodeType::Item.index()].expect("items encoded");
        let ub = tape.gather_rows(u, &upos);
        let vb = tape.gather_rows(v, &ipos);
        let logits = tape.row_dot(ub, vb);
        let labels: Vec<f64> = triples.iter().map(|t| t.2).collect();
        Ok(tape.bce_sum(logits, &labels, PROB_EPS))
    }

    /// Embeds every node of the graph without recording gradients.
    /// Aggregation runs in chunks of rows; the result equals a single
    /// full-graph pass exactly.
    pub fn encode_all(&self, ctx: &TahinContext) -> Result<Embeddings> {
        self.check_compatible(ctx)?;
        self.check_finite()?;
        let g = ctx.graph();
        let s = self.config().dim;
        let mut tables: [Option<Mat>; 4] = Default::default();
        for t in NodeType::ALL {
            if let (true, Some(id)) = (g.is_enabled(t), self.h0[t.index()]) {
                tables[t.index()] = Some(self.params().get(id).clone());
            }
        }
        for _ in 0..self.config().rounds {
            let mut next: [Option<Mat>; 4] = Default::default();
            for t in NodeType::ALL {
                let Some(bt) = tables[t.index()].as_ref() else { continue };
                let n = bt.rows();
                let n_paths = ctx.paths().for_type(t).count();
                let mut h1 = Mat::zeros(n, s);
                let mut hp = vec![Mat::zeros(n, s); n_paths];
                let mut present = vec![vec![false; n]; n_paths];
                for start in (0..n).step_by(CHUNK) {
                    let q: Vec<usize> = (start..(start + CHUNK).min(n)).collect();
                    let mut tape = Tape::new();
                    let base = tables.clone().map(|m| m.map(|m| tape.constant(m)));
                    let agg = self.aggregate(&mut tape, ctx, &base, t, &q, false);
                    copy_rows(&mut h1, tape.value(agg.h1), start);
                    for (j, p) in agg.paths.iter().enumerate() {
                        copy_rows(&mut hp[j], tape.value(p.h), start);
                        present[j][start..start + q.len()].copy_from_slice(&p.present);
                    }
                }
                let mut tape = Tape::new();
                let h1 = tape.constant(h1);
                let h2 = match self.sem[t.index()] {
                    Some(sem) => {
                        let inputs: Vec<(Var, Vec<bool>)> = hp
                            .into_iter()
                            .zip(present)
                            .map(|(m, p)| (tape.constant(m), p))
                            .collect();
                        self.semantic(&mut tape, sem, &inputs, n).0
                    }
                    None => self.zeros(&mut tape, n),
                };
                let h0 = tape.constant(bt.clone());
                let out = self.update(&mut tape, h0, h1, h2);
                next[t.index()] = Some(tape.value(out).clone());
            }
            tables = next;
        }
        Ok(Embeddings::new(tables))
    }

    /// Attention weights of the last round from one full-graph pass.
    /// Intended for inspection of small graphs.
    pub fn attention_trace(&self, ctx: &TahinContext) -> Result<AttentionTrace> {
        self.check_compatible(ctx)?;
        self.check_finite()?;
        let mut tape = Tape::new();
        let mut base = self.base_vars(&mut tape, ctx.graph());
        let all = Self::all_nodes(ctx);
        for _ in 1..self.config().rounds {
            base = self.round(&mut tape, ctx, &base, &all, false).0;
        }
        Ok(self.round(&mut tape, ctx, &base, &all, true).1)
    }
}

fn copy_rows(dst: &mut Mat, src: &Mat, start: usize) {
    for r in 0..src.rows() {
        dst.row_mut(start + r).copy_from_slice(src.row(r));
    }
}
