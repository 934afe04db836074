//! TSV ingestion of the heterogeneous graph.
//!
//! Node files are `nodes_<type>.tsv` with rows `id[<TAB>f1,...,fK]`;
//! relation files are `<relation>.tsv` with rows
//! `src_id<TAB>dst_id[<TAB>timestamp]`. Both carry a header row.

use std::collections::HashMap;
use std::path::Path;

use super::{build_graph, HeteroGraph, NodeRef, NodeType, RawEdges, Relation};
use crate::error::{Error, Result};
use crate::tensor::Mat;
use crate::tsv;

/// Dense index for external string ids of one node type.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdMap {
    ids: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl IdMap {
    pub fn from_ids(ids: Vec<String>) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if lookup.insert(id.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate node id `{id}`")));
            }
        }
        Ok(Self { ids, lookup })
    }

    pub fn get(&self, external: &str) -> Option<usize> {
        self.lookup.get(external).copied()
    }

    pub fn external(&self, id: usize) -> &str {
        &self.ids[id]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// One [`IdMap`] per node type.
pub type IdMaps = [IdMap; 4];

fn load_nodes(path: &Path) -> Result<(IdMap, Option<Mat>)> {
    let (_, rows) = tsv::read(path)?;
    let mut ids = Vec::with_capacity(rows.len());
    let mut feats: Vec<Vec<f64>> = Vec::new();
    for row in &rows {
        ids.push(row.fields[0].trim().to_string());
        if let Some(raw) = row.fields.get(1).filter(|s| !s.trim().is_empty()) {
            let v = raw
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .map_err(|_| tsv::parse_err(path, row.line, format!("bad feature `{x}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            feats.push(v);
        }
    }
    let features = if feats.is_empty() {
        None
    } else {
        if feats.len() != ids.len() {
            return Err(tsv::parse_err(path, 1, "features must be given for all rows or none"));
        }
        let dim = feats[0].len();
        if let Some((i, _)) = feats.iter().enumerate().find(|(_, f)| f.len() != dim) {
            return Err(tsv::parse_err(path, rows[i].line, "inconsistent feature width"));
        }
        Some(Mat::from_rows(&feats))
    };
    Ok((IdMap::from_ids(ids)?, features))
}

/// Loads a graph directory. Relation files may be absent (empty relation);
/// node files are required.
pub fn load_graph_dir(dir: &Path) -> Result<(HeteroGraph, IdMaps)> {
    let mut maps: IdMaps = Default::default();
    let mut features: [Option<Mat>; 4] = Default::default();
    for t in NodeType::ALL {
        let (m, f) = load_nodes(&dir.join(format!("nodes_{}.tsv", t.name())))?;
        maps[t.index()] = m;
        features[t.index()] = f;
    }
    let mut lists = Vec::new();
    for rel in Relation::ALL {
        let path = dir.join(format!("{}.tsv", rel.name()));
        if !path.exists() {
            continue;
        }
        let (_, rows) = tsv::read(&path)?;
        let (st, dt) = (rel.src_type(), rel.dst_type());
        let mut edges = Vec::with_capacity(rows.len());
        for row in &rows {
            let resolve = |col: usize, t: NodeType| -> Result<NodeRef> {
                let raw = row.fields.get(col).map(|s| s.trim()).unwrap_or("");
                maps[t.index()]
                    .get(raw)
                    .map(|id| NodeRef::new(t, id))
                    .ok_or_else(|| {
                        Error::Bounds(format!(
                            "{}:{}: unknown {t} id `{raw}`",
                            path.display(),
                            row.line
                        ))
                    })
            };
            edges.push((resolve(0, st)?, resolve(1, dt)?));
        }
        lists.push(RawEdges::new(rel.name(), edges));
    }
    let counts = NodeType::ALL.map(|t| maps[t.index()].len());
    let g = build_graph(counts, &lists, features)?;
    Ok((g, maps))
}

/// Writes the edges of `rel` with external ids.
pub fn write_relation_tsv(path: &Path, g: &HeteroGraph, rel: Relation, maps: &IdMaps) -> Result<()> {
    let (st, dt) = (rel.src_type(), rel.dst_type());
    let rows = g.edges(rel).map(|(s, d)| {
        vec![
            maps[st.index()].external(s).to_string(),
            maps[dt.index()].external(d).to_string(),
        ]
    });
    tsv::write(path, &["src_id", "dst_id"], rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_directory_with_features() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        std::fs::write(p.join("nodes_user.tsv"), "id\tfeatures\nu1\t0.5,1\nu2\t-1,2\n").unwrap();
        std::fs::write(p.join("nodes_agent.tsv"), "id\na1\n").unwrap();
        std::fs::write(p.join("nodes_item.tsv"), "id\ni1\ni2\n").unwrap();
        std::fs::write(p.join("nodes_property.tsv"), "id\nprice_low\n").unwrap();
        std::fs::write(p.join("purchase.tsv"), "src_id\tdst_id\ttimestamp\nu2\ti1\t10\nu2\ti1\t20\n").unwrap();
        std::fs::write(p.join("served_by.tsv"), "src_id\tdst_id\nu1\ta1\n").unwrap();
        let (g, maps) = load_graph_dir(p).unwrap();
        assert_eq!(g.counts(), [2, 1, 2, 1]);
        assert_eq!(g.n_edges(Relation::Purchase), 1);
        assert_eq!(g.successors(Relation::PurchasedBy, 0), &[1]);
        assert_eq!(g.features(NodeType::User).unwrap().row(1), &[-1.0, 2.0]);
        assert_eq!(maps[NodeType::Item.index()].external(1), "i2");

        std::fs::write(p.join("possess.tsv"), "src_id\tdst_id\ni9\tprice_low\n").unwrap();
        assert!(matches!(load_graph_dir(p), Err(Error::Bounds(_))));
    }

    #[test]
    fn missing_node_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_graph_dir(dir.path()).unwrap_err();
        assert!(err.to_string().contains("nodes_user.tsv"), "{err}");
    }
}
