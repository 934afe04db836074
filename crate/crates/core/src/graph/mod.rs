//! Typed heterogeneous graph over users, agents, items and properties.
//!
//! The schema is fixed: four node types and six directed relations, three of
//! which are the exact reverses of the other three. A [`HeteroGraph`] is
//! immutable once built; ablations produce new graphs.

mod io;
mod metapath;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use self::io::{load_graph_dir, write_relation_tsv, IdMap, IdMaps};
pub use self::metapath::{metapath_neighbors, MetaPath, MetaPathIndex, MetaPathSet, DEFAULT_META_PATHS};
use crate::error::{Error, Result};
use crate::tensor::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeType {
    User,
    Agent,
    Item,
    Property,
}

impl NodeType {
    pub const ALL: [NodeType; 4] = [
        NodeType::User,
        NodeType::Agent,
        NodeType::Item,
        NodeType::Property,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> char {
        match self {
            NodeType::User => 'U',
            NodeType::Agent => 'A',
            NodeType::Item => 'I',
            NodeType::Property => 'P',
        }
    }

    pub fn from_symbol(c: char) -> Option<Self> {
        match c {
            'U' => Some(NodeType::User),
            'A' => Some(NodeType::Agent),
            'I' => Some(NodeType::Item),
            'P' => Some(NodeType::Property),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NodeType::User => "user",
            NodeType::Agent => "agent",
            NodeType::Item => "item",
            NodeType::Property => "property",
        }
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A node identified by its type and dense per-type index. Ordering is by
/// `(type, id)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeRef {
    pub node_type: NodeType,
    pub id: usize,
}

impl NodeRef {
    pub const fn new(node_type: NodeType, id: usize) -> Self {
        Self { node_type, id }
    }

    pub const fn user(id: usize) -> Self {
        Self::new(NodeType::User, id)
    }

    pub const fn agent(id: usize) -> Self {
        Self::new(NodeType::Agent, id)
    }

    pub const fn item(id: usize) -> Self {
        Self::new(NodeType::Item, id)
    }

    pub const fn property(id: usize) -> Self {
        Self::new(NodeType::Property, id)
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.node_type.symbol(), self.id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Purchase,
    PurchasedBy,
    ServedBy,
    Serve,
    Possess,
    PossessedBy,
}

impl Relation {
    pub const ALL: [Relation; 6] = [
        Relation::Purchase,
        Relation::PurchasedBy,
        Relation::ServedBy,
        Relation::Serve,
        Relation::Possess,
        Relation::PossessedBy,
    ];

    pub const FORWARD: [Relation; 3] = [Relation::Purchase, Relation::ServedBy, Relation::Possess];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Relation::Purchase => "purchase",
            Relation::PurchasedBy => "purchased_by",
            Relation::ServedBy => "served_by",
            Relation::Serve => "serve",
            Relation::Possess => "possess",
            Relation::PossessedBy => "possessed_by",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == name)
            .ok_or_else(|| Error::Schema(format!("unknown relation `{name}`")))
    }

    pub fn src_type(self) -> NodeType {
        match self {
            Relation::Purchase | Relation::ServedBy => NodeType::User,
            Relation::PurchasedBy | Relation::Possess => NodeType::Item,
            Relation::Serve => NodeType::Agent,
            Relation::PossessedBy => NodeType::Property,
        }
    }

    pub fn dst_type(self) -> NodeType {
        self.reverse().src_type()
    }

    pub fn reverse(self) -> Relation {
        match self {
            Relation::Purchase => Relation::PurchasedBy,
            Relation::PurchasedBy => Relation::Purchase,
            Relation::ServedBy => Relation::Serve,
            Relation::Serve => Relation::ServedBy,
            Relation::Possess => Relation::PossessedBy,
            Relation::PossessedBy => Relation::Possess,
        }
    }

    pub fn is_forward(self) -> bool {
        Self::FORWARD.contains(&self)
    }

    /// The relation leading from `src` to `dst`, if the schema has one.
    pub fn between(src: NodeType, dst: NodeType) -> Option<Relation> {
        Self::ALL
            .into_iter()
            .find(|r| r.src_type() == src && r.dst_type() == dst)
    }

    /// Relations whose source type is `t`, in schema order.
    pub fn outgoing(t: NodeType) -> impl Iterator<Item = Relation> {
        Self::ALL.into_iter().filter(move |r| r.src_type() == t)
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Compressed adjacency for one relation, indexed by source id.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub(crate) struct Adjacency {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Adjacency {
    fn from_sorted_pairs(n_src: usize, pairs: &BTreeSet<(usize, usize)>) -> Self {
        let mut offsets = vec![0; n_src + 1];
        for &(s, _) in pairs {
            offsets[s + 1] += 1;
        }
        for i in 0..n_src {
            offsets[i + 1] += offsets[i];
        }
        let targets = pairs.iter().map(|&(_, d)| d).collect();
        Self { offsets, targets }
    }

    #[inline]
    fn successors(&self, src: usize) -> &[usize] {
        &self.targets[self.offsets[src]..self.offsets[src + 1]]
    }

    fn n_edges(&self) -> usize {
        self.targets.len()
    }
}

/// Edges of one relation as supplied to [`build_graph`].
#[derive(Clone, Debug, Default)]
pub struct RawEdges {
    pub relation: String,
    pub edges: Vec<(NodeRef, NodeRef)>,
}

impl RawEdges {
    pub fn new(relation: impl Into<String>, edges: Vec<(NodeRef, NodeRef)>) -> Self {
        Self {
            relation: relation.into(),
            edges,
        }
    }
}

/// Node count per type, indexed by [`NodeType::index`].
pub type NodeCounts = [usize; 4];

#[derive(Clone, Debug, PartialEq)]
pub struct HeteroGraph {
    counts: NodeCounts,
    enabled: [bool; 4],
    adj: [Adjacency; 6],
    features: [Option<Mat>; 4],
}

/// Builds and validates a graph. Reverse relations are derived from forward
/// lists (and vice versa); when both directions are supplied they must match
/// edge for edge. Duplicate edges collapse.
pub fn build_graph(
    counts: NodeCounts,
    edge_lists: &[RawEdges],
    features: [Option<Mat>; 4],
) -> Result<HeteroGraph> {
    let mut given: [Option<BTreeSet<(usize, usize)>>; 6] = Default::default();
    for list in edge_lists {
        let rel = Relation::from_name(&list.relation)?;
        let set = given[rel.index()].get_or_insert_with(BTreeSet::new);
        for &(src, dst) in &list.edges {
            if src.node_type != rel.src_type() || dst.node_type != rel.dst_type() {
                return Err(Error::Schema(format!(
                    "edge {src} -> {dst} does not fit relation {rel} ({} -> {})",
                    rel.src_type(),
                    rel.dst_type()
                )));
            }
            for n in [src, dst] {
                if n.id >= counts[n.node_type.index()] {
                    return Err(Error::Bounds(format!(
                        "edge {src} -> {dst} of {rel}: {n} out of range ({} {} nodes)",
                        counts[n.node_type.index()],
                        n.node_type
                    )));
                }
            }
            set.insert((src.id, dst.id));
        }
    }

    let mut pairs: [BTreeSet<(usize, usize)>; 6] = Default::default();
    for rel in Relation::FORWARD {
        let rev = rel.reverse();
        let fwd_set = given[rel.index()].take();
        let rev_set = given[rev.index()]
            .take()
            .map(|s| s.into_iter().map(|(a, b)| (b, a)).collect::<BTreeSet<_>>());
        let merged = match (fwd_set, rev_set) {
            (Some(f), Some(r)) => {
                if f != r {
                    let diff = f.symmetric_difference(&r).next().copied().unwrap_or_default();
                    return Err(Error::Schema(format!(
                        "{rel} and {rev} disagree, e.g. on {}{} -> {}{}",
                        rel.src_type().symbol(),
                        diff.0,
                        rel.dst_type().symbol(),
                        diff.1
                    )));
                }
                f
            }
            (Some(f), None) => f,
            (None, Some(r)) => r,
            (None, None) => BTreeSet::new(),
        };
        pairs[rev.index()] = merged.iter().map(|&(a, b)| (b, a)).collect();
        pairs[rel.index()] = merged;
    }

    for (t, f) in NodeType::ALL.iter().zip(&features) {
        if let Some(f) = f {
            if f.rows() != counts[t.index()] {
                return Err(Error::Schema(format!(
                    "{t} features have {} rows for {} nodes",
                    f.rows(),
                    counts[t.index()]
                )));
            }
        }
    }

    let adj = Relation::ALL.map(|rel| {
        Adjacency::from_sorted_pairs(counts[rel.src_type().index()], &pairs[rel.index()])
    });
    Ok(HeteroGraph {
        counts,
        enabled: [true; 4],
        adj,
        features,
    })
}

impl HeteroGraph {
    pub fn count(&self, t: NodeType) -> usize {
        self.counts[t.index()]
    }

    pub fn counts(&self) -> NodeCounts {
        self.counts
    }

    /// `false` once an ablation has removed the type.
    pub fn is_enabled(&self, t: NodeType) -> bool {
        self.enabled[t.index()]
    }

    pub fn contains(&self, n: NodeRef) -> bool {
        n.id < self.count(n.node_type)
    }

    pub fn features(&self, t: NodeType) -> Option<&Mat> {
        self.features[t.index()].as_ref()
    }

    pub fn n_edges(&self, rel: Relation) -> usize {
        self.adj[rel.index()].n_edges()
    }

    /// Successor ids of `src` under `rel` (ascending).
    #[inline]
    pub fn successors(&self, rel: Relation, src: usize) -> &[usize] {
        self.adj[rel.index()].successors(src)
    }

    pub fn edges(&self, rel: Relation) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.count(rel.src_type());
        (0..n).flat_map(move |s| self.successors(rel, s).iter().map(move |&d| (s, d)))
    }

    pub fn degree(&self, n: NodeRef) -> usize {
        Relation::outgoing(n.node_type)
            .map(|r| self.successors(r, n.id).len())
            .sum()
    }

    fn check_node(&self, e: NodeRef) -> Result<()> {
        if self.contains(e) {
            Ok(())
        } else {
            Err(Error::Bounds(format!(
                "{e} not in graph ({} {} nodes)",
                self.count(e.node_type),
                e.node_type
            )))
        }
    }

    /// One-hop neighbours of `e`, optionally restricted to one relation, in
    /// ascending `(type, id)` order.
    pub fn one_hop_neighbors(&self, e: NodeRef, rel: Option<Relation>) -> Result<Vec<NodeRef>> {
        self.check_node(e)?;
        match rel {
            Some(r) => {
                if r.src_type() != e.node_type {
                    return Err(Error::Contract(format!(
                        "relation {r} starts at {}, not at {e}",
                        r.src_type()
                    )));
                }
                Ok(self
                    .successors(r, e.id)
                    .iter()
                    .map(|&d| NodeRef::new(r.dst_type(), d))
                    .collect())
            }
            None => {
                let mut out: Vec<NodeRef> = Relation::outgoing(e.node_type)
                    .flat_map(|r| {
                        self.successors(r, e.id)
                            .iter()
                            .map(move |&d| NodeRef::new(r.dst_type(), d))
                    })
                    .collect();
                out.sort_unstable();
                Ok(out)
            }
        }
    }

    /// Returns the graph with the ablated node types (and every relation
    /// touching them) removed.
    pub fn apply_ablation(&self, mode: Ablation) -> HeteroGraph {
        let mut g = self.clone();
        for t in mode.removed_types() {
            g.counts[t.index()] = 0;
            g.enabled[t.index()] = false;
            g.features[t.index()] = None;
        }
        for rel in Relation::ALL {
            let n_src = g.counts[rel.src_type().index()];
            if !g.enabled[rel.src_type().index()] || !g.enabled[rel.dst_type().index()] {
                g.adj[rel.index()] = Adjacency {
                    offsets: vec![0; n_src + 1],
                    targets: Vec::new(),
                };
            }
        }
        g
    }

    /// Checks every schema invariant; used by tests and after ingestion.
    pub fn validate(&self) -> Result<()> {
        for rel in Relation::FORWARD {
            let fwd: BTreeSet<(usize, usize)> = self.edges(rel).collect();
            let rev: BTreeSet<(usize, usize)> =
                self.edges(rel.reverse()).map(|(a, b)| (b, a)).collect();
            if fwd != rev {
                return Err(Error::Schema(format!("{rel} is not mirrored by {}", rel.reverse())));
            }
            for (s, d) in fwd {
                if s >= self.count(rel.src_type()) || d >= self.count(rel.dst_type()) {
                    return Err(Error::Bounds(format!("dangling edge in {rel}")));
                }
            }
        }
        Ok(())
    }
}

/// Data ablations of the heterogeneous graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    NoAgent,
    NoProperty,
    InteractionsOnly,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::NoAgent,
        Ablation::NoProperty,
        Ablation::InteractionsOnly,
    ];

    pub fn removed_types(self) -> &'static [NodeType] {
        match self {
            Ablation::Full => &[],
            Ablation::NoAgent => &[NodeType::Agent],
            Ablation::NoProperty => &[NodeType::Property],
            Ablation::InteractionsOnly => &[NodeType::Agent, NodeType::Property],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoAgent => "no_agent",
            Ablation::NoProperty => "no_property",
            Ablation::InteractionsOnly => "interactions_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation `{s}`")))
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> HeteroGraph {
        build_graph(
            [2, 1, 2, 1],
            &[
                RawEdges::new("purchase", vec![(NodeRef::user(0), NodeRef::item(0))]),
                RawEdges::new("served_by", vec![(NodeRef::user(0), NodeRef::agent(0))]),
                RawEdges::new("possess", vec![(NodeRef::item(0), NodeRef::property(0))]),
            ],
            Default::default(),
        )
        .unwrap()
    }

    #[test]
    fn reverse_relation_is_materialised() {
        let g = tiny();
        assert_eq!(g.edges(Relation::PurchasedBy).collect::<Vec<_>>(), vec![(0, 0)]);
        assert_eq!(
            g.one_hop_neighbors(NodeRef::item(0), Some(Relation::PurchasedBy)).unwrap(),
            vec![NodeRef::user(0)]
        );
        g.validate().unwrap();
    }

    #[test]
    fn unknown_relation_is_a_schema_error() {
        let err = build_graph(
            [1, 1, 1, 1],
            &[RawEdges::new("recommends", vec![])],
            Default::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn mistyped_edge_names_the_edge() {
        let err = build_graph(
            [1, 1, 1, 1],
            &[RawEdges::new("purchase", vec![(NodeRef::user(0), NodeRef::agent(0))])],
            Default::default(),
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Schema(_)));
        assert!(msg.contains("U0 -> A0"), "{msg}");
    }

    #[test]
    fn dangling_id_is_a_bounds_error() {
        let err = build_graph(
            [1, 1, 1, 1],
            &[RawEdges::new("purchase", vec![(NodeRef::user(0), NodeRef::item(3))])],
            Default::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Bounds(_)));
    }

    #[test]
    fn inconsistent_reverse_lists_are_rejected() {
        let err = build_graph(
            [2, 1, 1, 1],
            &[
                RawEdges::new("purchase", vec![(NodeRef::user(0), NodeRef::item(0))]),
                RawEdges::new("purchased_by", vec![(NodeRef::item(0), NodeRef::user(1))]),
            ],
            Default::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
        // consistent pair is fine
        build_graph(
            [2, 1, 1, 1],
            &[
                RawEdges::new("purchase", vec![(NodeRef::user(1), NodeRef::item(0))]),
                RawEdges::new("purchased_by", vec![(NodeRef::item(0), NodeRef::user(1))]),
            ],
            Default::default(),
        )
        .unwrap();
    }

    #[test]
    fn one_hop_union_and_isolated() {
        let g = tiny();
        assert_eq!(
            g.one_hop_neighbors(NodeRef::user(0), None).unwrap(),
            vec![NodeRef::agent(0), NodeRef::item(0)]
        );
        assert!(g.one_hop_neighbors(NodeRef::user(1), None).unwrap().is_empty());
        assert!(matches!(
            g.one_hop_neighbors(NodeRef::user(5), None),
            Err(Error::Bounds(_))
        ));
    }

    #[test]
    fn ablation_removes_types_and_relations() {
        let g = tiny();
        assert_eq!(g.apply_ablation(Ablation::Full), g);
        let na = g.apply_ablation(Ablation::NoAgent);
        assert_eq!(na.count(NodeType::Agent), 0);
        assert_eq!(na.n_edges(Relation::ServedBy), 0);
        assert_eq!(na.n_edges(Relation::Serve), 0);
        assert_eq!(na.n_edges(Relation::Purchase), 1);
        assert_eq!(na.n_edges(Relation::Possess), 1);
        na.validate().unwrap();
        assert_eq!(na.apply_ablation(Ablation::NoAgent), na);
        let io = g.apply_ablation(Ablation::InteractionsOnly);
        assert_eq!(io.n_edges(Relation::Possess), 0);
        assert_eq!(io.n_edges(Relation::Purchase), 1);
    }
}
