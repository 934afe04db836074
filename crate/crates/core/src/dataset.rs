//! A two-domain dataset directory: the target graph with timestamped
//! purchases and consultations, plus source-domain item descriptions and
//! interaction sequences.

use std::collections::BTreeSet;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{build_graph, load_graph_dir, HeteroGraph, IdMap, IdMaps, NodeRef, NodeType, RawEdges, Relation};
use crate::source_model::tokenize;
use crate::tsv;

pub const DESCRIPTIONS_FILE: &str = "item_descriptions.tsv";
pub const SOURCE_FILE: &str = "source_interactions.tsv";
pub const CONSULT_FILE: &str = "consults.tsv";

/// Every file that takes part in the content hash, in hashing order.
pub const DATA_FILES: [&str; 10] = [
    "nodes_user.tsv",
    "nodes_agent.tsv",
    "nodes_item.tsv",
    "nodes_property.tsv",
    "purchase.tsv",
    "served_by.tsv",
    "possess.tsv",
    CONSULT_FILE,
    DESCRIPTIONS_FILE,
    SOURCE_FILE,
];

/// Files that must exist for a directory to load.
pub const REQUIRED_FILES: [&str; 9] = [
    "nodes_user.tsv",
    "nodes_agent.tsv",
    "nodes_item.tsv",
    "nodes_property.tsv",
    "purchase.tsv",
    "served_by.tsv",
    "possess.tsv",
    DESCRIPTIONS_FILE,
    SOURCE_FILE,
];

/// A timestamped user event against another node (item or agent).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Event {
    pub ts: i64,
    pub user: usize,
    pub target: usize,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    /// Target graph with every purchase.
    pub graph: HeteroGraph,
    pub maps: IdMaps,
    /// Purchases sorted by `(ts, user, item)`.
    pub purchases: Vec<Event>,
    /// Consultations `(user, agent)` sorted by `(ts, user, agent)`.
    pub consults: Vec<Event>,
    pub source_items: IdMap,
    pub descriptions: Vec<Vec<String>>,
    /// Per user, source items by ascending timestamp, ties by item id.
    pub source_seqs: Vec<Vec<usize>>,
    pub content_hash: String,
}

/// Names of required files absent from `dir`.
pub fn missing_files(dir: &Path) -> Vec<&'static str> {
    REQUIRED_FILES.iter().copied().filter(|f| !dir.join(f).exists()).collect()
}

/// SHA-256 over the names and bytes of the data files present in `dir`.
pub fn content_hash(dir: &Path) -> Result<String> {
    let mut h = Sha256::new();
    for name in DATA_FILES {
        let path = dir.join(name);
        if !path.exists() {
            continue;
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

fn read_events(path: &Path, users: &IdMap, targets: &IdMap, what: &str) -> Result<Vec<Event>> {
    let (_, rows) = tsv::read(path)?;
    let mut out = Vec::with_capacity(rows.len());
    for row in &rows {
        let lookup = |col: usize, m: &IdMap, kind: &str| -> Result<usize> {
            let raw = row.fields.get(col).map(|s| s.trim()).unwrap_or("");
            m.get(raw)
                .ok_or_else(|| Error::Bounds(format!("{}:{}: unknown {kind} id `{raw}`", path.display(), row.line)))
        };
        let user = lookup(0, users, "user")?;
        let target = lookup(1, targets, what)?;
        let ts = if row.fields.len() > 2 {
            tsv::parse_field(path, row, 2)?
        } else {
            0
        };
        out.push(Event { ts, user, target });
    }
    out.sort_unstable();
    Ok(out)
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        if let Some(f) = missing_files(dir).first() {
            return Err(Error::MissingFile(dir.join(f)));
        }
        let (graph, maps) = load_graph_dir(dir)?;
        let users = &maps[NodeType::User.index()];
        let purchases = read_events(&dir.join("purchase.tsv"), users, &maps[NodeType::Item.index()], "item")?;
        let consult_path = dir.join(CONSULT_FILE);
        let consults = if consult_path.exists() {
            read_events(&consult_path, users, &maps[NodeType::Agent.index()], "agent")?
        } else {
            Vec::new()
        };

        let desc_path = dir.join(DESCRIPTIONS_FILE);
        let (_, rows) = tsv::read(&desc_path)?;
        let mut ids = Vec::with_capacity(rows.len());
        let mut descriptions = Vec::with_capacity(rows.len());
        for row in &rows {
            ids.push(row.fields[0].trim().to_string());
            descriptions.push(tokenize(row.fields.get(1).map_or("", String::as_str)));
        }
        let source_items = IdMap::from_ids(ids)?;

        let mut src = read_events(&dir.join(SOURCE_FILE), users, &source_items, "source item")?;
        src.sort_unstable_by_key(|e| (e.user, e.ts, e.target));
        let mut source_seqs = vec![Vec::new(); users.len()];
        for e in &src {
            source_seqs[e.user].push(e.target);
        }

        Ok(Self {
            graph,
            maps,
            purchases,
            consults,
            source_items,
            descriptions,
            source_seqs,
            content_hash: content_hash(dir)?,
        })
    }

    pub fn n_users(&self) -> usize {
        self.graph.count(NodeType::User)
    }

    pub fn n_items(&self) -> usize {
        self.graph.count(NodeType::Item)
    }

    pub fn n_source_items(&self) -> usize {
        self.source_items.len()
    }

    /// Distinct purchased items per user, ascending.
    pub fn target_items(&self) -> Vec<Vec<usize>> {
        let mut sets = vec![BTreeSet::new(); self.n_users()];
        for e in &self.purchases {
            sets[e.user].insert(e.target);
        }
        sets.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    /// Users with interactions in both domains, ascending.
    pub fn overlap_users(&self) -> Vec<usize> {
        let targets = self.target_items();
        (0..self.n_users())
            .filter(|&u| !targets[u].is_empty() && !self.source_seqs[u].is_empty())
            .collect()
    }

    /// Same nodes, features, agent and property edges; only purchases
    /// whose user passes `keep` survive.
    pub fn training_graph(&self, keep: impl Fn(usize) -> bool) -> Result<HeteroGraph> {
        filter_purchases(&self.graph, |u, _| keep(u))
    }
}

/// Copy of `g` keeping only the purchase edges `(user, item)` that pass
/// `keep`; every other relation and all features are unchanged.
pub fn filter_purchases(g: &HeteroGraph, keep: impl Fn(usize, usize) -> bool) -> Result<HeteroGraph> {
    let mut lists = Vec::new();
    for rel in [Relation::ServedBy, Relation::Possess] {
        let (st, dt) = (rel.src_type(), rel.dst_type());
        let edges = g
            .edges(rel)
            .map(|(s, d)| (NodeRef::new(st, s), NodeRef::new(dt, d)))
            .collect();
        lists.push(RawEdges::new(rel.name(), edges));
    }
    let purchases = g
        .edges(Relation::Purchase)
        .filter(|&(u, i)| keep(u, i))
        .map(|(u, i)| (NodeRef::user(u), NodeRef::item(i)))
        .collect();
    lists.push(RawEdges::new(Relation::Purchase.name(), purchases));
    let features = NodeType::ALL.map(|t| g.features(t).cloned());
    build_graph(g.counts(), &lists, features)
}
