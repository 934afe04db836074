use std::fmt;

use super::{HeteroGraph, NodeRef, NodeType, Relation};
use crate::error::{Error, Result};

/// An ordered node-type sequence describing a composite relation, e.g.
/// `I-U-I`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MetaPath {
    types: Vec<NodeType>,
    relations: Vec<Relation>,
    name: String,
}

impl MetaPath {
    /// Parses a symbol string such as `"UIPIU"`.
    pub fn parse(name: &str) -> Result<Self> {
        let types = name
            .chars()
            .filter(|c| !matches!(c, '-' | ' '))
            .map(|c| {
                NodeType::from_symbol(c)
                    .ok_or_else(|| Error::Config(format!("meta-path `{name}`: unknown symbol `{c}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_types(types)
    }

    pub fn from_types(types: Vec<NodeType>) -> Result<Self> {
        let name: String = types.iter().map(|t| t.symbol()).collect();
        if types.len() < 2 {
            return Err(Error::Config(format!("meta-path `{name}` needs at least two nodes")));
        }
        let relations = types
            .windows(2)
            .map(|w| {
                Relation::between(w[0], w[1]).ok_or_else(|| {
                    Error::Config(format!("meta-path `{name}`: no relation {} -> {}", w[0], w[1]))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            types,
            relations,
            name,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn types(&self) -> &[NodeType] {
        &self.types
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn head(&self) -> NodeType {
        self.types[0]
    }

    pub fn tail(&self) -> NodeType {
        self.types[self.types.len() - 1]
    }

    pub fn uses(&self, t: NodeType) -> bool {
        self.types.contains(&t)
    }

    fn check_enabled(&self, g: &HeteroGraph) -> Result<()> {
        match self.types.iter().find(|t| !g.is_enabled(**t)) {
            Some(t) => Err(Error::Config(format!(
                "meta-path {} uses {t} nodes, which this graph does not have",
                self.name
            ))),
            None => Ok(()),
        }
    }
}

impl fmt::Display for MetaPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// The ten meta-paths used by the full model, grouped by head type.
pub const DEFAULT_META_PATHS: [&str; 10] = [
    "UIU", "UAU", "UIPIU", "IUI", "IPI", "IUAUI", "AUA", "AUIUA", "PIP", "PIUIP",
];

/// A configured set of meta-paths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetaPathSet(Vec<MetaPath>);

impl Default for MetaPathSet {
    fn default() -> Self {
        Self::parse_list(DEFAULT_META_PATHS).expect("default meta-paths are valid")
    }
}

impl MetaPathSet {
    pub fn new(paths: Vec<MetaPath>) -> Self {
        Self(paths)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn parse_list<S: AsRef<str>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut out: Vec<MetaPath> = Vec::new();
        for n in names {
            let p = MetaPath::parse(n.as_ref())?;
            if out.contains(&p) {
                return Err(Error::Config(format!("meta-path {p} listed twice")));
            }
            out.push(p);
        }
        Ok(Self(out))
    }

    pub fn paths(&self) -> &[MetaPath] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.0.iter().map(|p| p.name.clone()).collect()
    }

    /// Paths whose head type is `t`, in configured order.
    pub fn for_type(&self, t: NodeType) -> impl Iterator<Item = &MetaPath> {
        self.0.iter().filter(move |p| p.head() == t)
    }

    /// Drops every path that references a type the graph no longer has.
    pub fn filtered_for(&self, g: &HeteroGraph) -> Self {
        Self(
            self.0
                .iter()
                .filter(|p| p.check_enabled(g).is_ok())
                .cloned()
                .collect(),
        )
    }

    /// Errors on the first path that cannot be used with `g`, or that does
    /// not start and end at the same node type.
    pub fn validate_for(&self, g: &HeteroGraph) -> Result<()> {
        for p in &self.0 {
            p.check_enabled(g)?;
            if p.head() != p.tail() {
                return Err(Error::Config(format!(
                    "meta-path {p} must start and end at the same node type"
                )));
            }
        }
        Ok(())
    }
}

/// Endpoints of all walks from `e` realising `path`, with walk counts.
///
/// Walks may revisit nodes; `e` itself is excluded from the result. Output
/// is ordered by id.
pub fn metapath_neighbors(
    g: &HeteroGraph,
    e: NodeRef,
    path: &MetaPath,
) -> Result<Vec<(NodeRef, u64)>> {
    if e.node_type != path.head() {
        return Err(Error::Contract(format!(
            "{e} cannot start meta-path {path} (head type {})",
            path.head()
        )));
    }
    path.check_enabled(g)?;
    g.check_node(e)?;
    let tail = path.tail();
    Ok(walk_counts(g, e.id, path)
        .into_iter()
        .filter(|&(id, _)| !(tail == e.node_type && id == e.id))
        .map(|(id, c)| (NodeRef::new(tail, id), c))
        .collect())
}

/// Sparse walk counts `(tail id, count)` sorted by id.
fn walk_counts(g: &HeteroGraph, start: usize, path: &MetaPath) -> Vec<(usize, u64)> {
    let mut frontier: Vec<(usize, u64)> = vec![(start, 1)];
    let mut acc: Vec<u64> = Vec::new();
    let mut touched: Vec<usize> = Vec::new();
    for &rel in path.relations() {
        let n_dst = g.count(rel.dst_type());
        acc.clear();
        acc.resize(n_dst, 0);
        touched.clear();
        for &(src, c) in &frontier {
            for &d in g.successors(rel, src) {
                if acc[d] == 0 {
                    touched.push(d);
                }
                acc[d] += c;
            }
        }
        touched.sort_unstable();
        frontier = touched.iter().map(|&d| (d, acc[d])).collect();
        if frontier.is_empty() {
            break;
        }
    }
    frontier
}

/// De-duplicated meta-path neighbour sets for every node of the path's head
/// type, stored compressed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetaPathIndex {
    path: MetaPath,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl MetaPathIndex {
    pub fn build(g: &HeteroGraph, path: &MetaPath) -> Result<Self> {
        path.check_enabled(g)?;
        let head = path.head();
        let tail = path.tail();
        let n = g.count(head);
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        let mut neighbors = Vec::new();
        for id in 0..n {
            neighbors.extend(
                walk_counts(g, id, path)
                    .into_iter()
                    .map(|(d, _)| d)
                    .filter(|&d| !(head == tail && d == id)),
            );
            offsets.push(neighbors.len());
        }
        Ok(Self {
            path: path.clone(),
            offsets,
            neighbors,
        })
    }

    pub fn path(&self) -> &MetaPath {
        &self.path
    }

    #[inline]
    pub fn neighbors(&self, id: usize) -> &[usize] {
        &self.neighbors[self.offsets[id]..self.offsets[id + 1]]
    }

    pub fn n_pairs(&self) -> usize {
        self.neighbors.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, Ablation, RawEdges};

    /// Users U0, U1; items I0..I2; properties P0..P2; agent A0.
    /// I2-U1-I1 holds, so I2 is an I-U-I neighbour of I1.
    fn figure_like() -> HeteroGraph {
        build_graph(
            [2, 1, 3, 3],
            &[
                RawEdges::new(
                    "purchase",
                    vec![
                        (NodeRef::user(0), NodeRef::item(0)),
                        (NodeRef::user(0), NodeRef::item(1)),
                        (NodeRef::user(1), NodeRef::item(1)),
                        (NodeRef::user(1), NodeRef::item(2)),
                    ],
                ),
                RawEdges::new(
                    "served_by",
                    vec![
                        (NodeRef::user(0), NodeRef::agent(0)),
                        (NodeRef::user(1), NodeRef::agent(0)),
                    ],
                ),
                RawEdges::new(
                    "possess",
                    vec![
                        (NodeRef::item(0), NodeRef::property(0)),
                        (NodeRef::item(1), NodeRef::property(1)),
                        (NodeRef::item(2), NodeRef::property(1)),
                        (NodeRef::item(2), NodeRef::property(2)),
                    ],
                ),
            ],
            Default::default(),
        )
        .unwrap()
    }

    #[test]
    fn parse_rejects_impossible_paths() {
        assert!(MetaPath::parse("UIU").is_ok());
        assert!(MetaPath::parse("U-I-P-I-U").is_ok());
        assert!(MetaPath::parse("UU").is_err());
        assert!(MetaPath::parse("UP").is_err());
        assert!(MetaPath::parse("U").is_err());
        assert!(MetaPath::parse("UXU").is_err());
    }

    #[test]
    fn item_user_item_neighbours() {
        let g = figure_like();
        let iui = MetaPath::parse("IUI").unwrap();
        let n = metapath_neighbors(&g, NodeRef::item(1), &iui).unwrap();
        assert_eq!(n, vec![(NodeRef::item(0), 1), (NodeRef::item(2), 1)]);
    }

    #[test]
    fn multiplicity_counts_walks() {
        let g = figure_like();
        // U0 reaches U1 through I1 only; through A0 once more.
        let uiu = MetaPath::parse("UIU").unwrap();
        assert_eq!(
            metapath_neighbors(&g, NodeRef::user(0), &uiu).unwrap(),
            vec![(NodeRef::user(1), 1)]
        );
        let uiaui = MetaPath::parse("IUAUI").unwrap();
        let n = metapath_neighbors(&g, NodeRef::item(1), &uiaui).unwrap();
        // I1 is bought by U0 and U1, both served by A0, who serves U0 and U1,
        // who bought {I0, I1} and {I1, I2}. Self (I1) excluded.
        assert_eq!(n, vec![(NodeRef::item(0), 2), (NodeRef::item(2), 2)]);
    }

    #[test]
    fn isolated_node_has_no_neighbours() {
        let g = build_graph([1, 1, 1, 1], &[], Default::default()).unwrap();
        for name in DEFAULT_META_PATHS {
            let p = MetaPath::parse(name).unwrap();
            let e = NodeRef::new(p.head(), 0);
            assert!(metapath_neighbors(&g, e, &p).unwrap().is_empty());
        }
    }

    #[test]
    fn head_type_mismatch_is_contract_error() {
        let g = figure_like();
        let p = MetaPath::parse("IUI").unwrap();
        assert!(matches!(
            metapath_neighbors(&g, NodeRef::user(0), &p),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn dropped_path_after_ablation_is_config_error() {
        let g = figure_like().apply_ablation(Ablation::InteractionsOnly);
        let uau = MetaPath::parse("UAU").unwrap();
        assert!(matches!(
            metapath_neighbors(&g, NodeRef::user(0), &uau),
            Err(Error::Config(_))
        ));
        let set = MetaPathSet::default().filtered_for(&g);
        assert_eq!(set.names(), vec!["UIU", "IUI"]);
        assert!(MetaPathSet::default().validate_for(&g).is_err());
        set.validate_for(&g).unwrap();
    }

    #[test]
    fn index_matches_deduplicated_enumeration() {
        let g = figure_like();
        for p in MetaPathSet::default().paths() {
            let idx = MetaPathIndex::build(&g, p).unwrap();
            for id in 0..g.count(p.head()) {
                let expect: Vec<usize> = metapath_neighbors(&g, NodeRef::new(p.head(), id), p)
                    .unwrap()
                    .into_iter()
                    .map(|(n, _)| n.id)
                    .collect();
                assert_eq!(idx.neighbors(id), expect.as_slice(), "{p} from {id}");
            }
        }
    }
}
