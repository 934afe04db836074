//! Checkpoint directories. `manifest.json` describes the run and lists the
//! tensors, `tensors.bin` holds their values as little-endian f64 in
//! manifest order, and `train_purchases.tsv` lists every purchase pair
//! the target side was trained on, for the leakage audit.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::ParamSet;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::{NodeType, Relation};
use crate::tensor::Mat;
use crate::train_eval::config::{ModelKind, TrainConfig};
use crate::train_eval::model::TrainedModel;
use crate::train_eval::pipeline::TrainOutcome;
use crate::train_eval::split::{Split, SplitSpec};
use crate::train_eval::stage::EpochRecord;
use crate::tsv;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSORS_FILE: &str = "tensors.bin";
pub const PURCHASES_FILE: &str = "train_purchases.tsv";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub model: ModelKind,
    pub config: TrainConfig,
    pub split: SplitSpec,
    /// Content hash of the dataset directory the run trained on.
    pub data_hash: String,
    /// External ids of the cold test users.
    pub test_users: Vec<String>,
    /// External ids of the users whose pairs trained the mapping.
    pub mapping_users: Vec<String>,
    pub tensors: Vec<TensorEntry>,
    pub tensors_sha256: String,
    pub purchases_sha256: String,
    /// False when training diverged and the tensors are the last good
    /// ones of the stages that ran.
    pub complete: bool,
    pub diverged: Option<String>,
    pub notes: Vec<String>,
    pub log: Vec<EpochRecord>,
    pub wall_sec: f64,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub tensors: ParamSet,
}

impl Checkpoint {
    /// The trained model; refuses checkpoints left by a diverged run.
    pub fn model(&self) -> Result<TrainedModel> {
        if !self.manifest.complete {
            return Err(Error::Divergence(format!(
                "checkpoint holds a partial model: {}",
                self.manifest.diverged.as_deref().unwrap_or("unknown cause")
            )));
        }
        TrainedModel::from_tensors(self.manifest.model, &self.tensors, &self.manifest.config)
    }

    /// Fails with an integrity error unless `ds` is the dataset this
    /// checkpoint was trained on.
    pub fn check_data(&self, ds: &Dataset) -> Result<()> {
        if self.manifest.data_hash != ds.content_hash {
            return Err(Error::Integrity(format!(
                "checkpoint was trained on data {} but the dataset hashes to {}",
                self.manifest.data_hash, ds.content_hash
            )));
        }
        Ok(())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn encode_tensors(t: &ParamSet) -> (Vec<TensorEntry>, Vec<u8>) {
    let mut entries = Vec::with_capacity(t.len());
    let mut bytes = Vec::with_capacity(t.num_scalars() * 8);
    for (_, name, m) in t.iter() {
        entries.push(TensorEntry {
            name: name.to_string(),
            rows: m.rows(),
            cols: m.cols(),
        });
        for x in m.data() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    (entries, bytes)
}

pub fn decode_tensors(entries: &[TensorEntry], bytes: &[u8]) -> Result<ParamSet> {
    let total: usize = entries.iter().map(|e| e.rows * e.cols).sum();
    if bytes.len() != total * 8 {
        return Err(Error::Integrity(format!(
            "{TENSORS_FILE} holds {} bytes, the manifest describes {}",
            bytes.len(),
            total * 8
        )));
    }
    let mut out = ParamSet::new();
    let mut at = 0;
    for e in entries {
        if out.id(&e.name).is_some() {
            return Err(Error::Integrity(format!("tensor {} listed twice", e.name)));
        }
        let n = e.rows * e.cols;
        let data = bytes[at..at + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        at += n * 8;
        out.insert(e.name.clone(), Mat::from_vec(e.rows, e.cols, data));
    }
    Ok(out)
}

fn external_users(ds: &Dataset, users: &[usize]) -> Vec<String> {
    let map = &ds.maps[NodeType::User.index()];
    users.iter().map(|&u| map.external(u).to_string()).collect()
}

/// Purchase pairs the target side of `kind` trains on, as external ids
/// in ascending internal order.
fn training_purchases(ds: &Dataset, split: &Split) -> Result<Vec<[String; 2]>> {
    let graph = split.training_graph(ds)?;
    let users = &ds.maps[NodeType::User.index()];
    let items = &ds.maps[NodeType::Item.index()];
    Ok(graph
        .edges(Relation::Purchase)
        .map(|(u, i)| [users.external(u).to_string(), items.external(i).to_string()])
        .collect())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes a checkpoint for `outcome` into `dir`. A diverged run with no
/// model keeps its partial tensors and is marked incomplete.
pub fn save_checkpoint(
    dir: &Path,
    kind: ModelKind,
    ds: &Dataset,
    split: &Split,
    cfg: &TrainConfig,
    outcome: &TrainOutcome<TrainedModel>,
    wall_sec: f64,
) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (tensors, complete) = match &outcome.model {
        Some(m) => (m.tensors(), true),
        None => (outcome.partial.clone(), false),
    };
    let (entries, bytes) = encode_tensors(&tensors);
    write_file(&dir.join(TENSORS_FILE), &bytes)?;

    let purchases_path = dir.join(PURCHASES_FILE);
    tsv::write(&purchases_path, &["user_id", "item_id"], training_purchases(ds, split)?)?;
    let purchase_bytes = std::fs::read(&purchases_path).map_err(|e| Error::io(&purchases_path, e))?;

    let mapping_users = if kind.is_cross_domain() {
        external_users(ds, &split.retained)
    } else {
        Vec::new()
    };
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        model: kind,
        config: cfg.clone(),
        split: split.spec,
        data_hash: ds.content_hash.clone(),
        test_users: external_users(ds, &split.test),
        mapping_users,
        tensors: entries,
        tensors_sha256: sha256_hex(&bytes),
        purchases_sha256: sha256_hex(&purchase_bytes),
        complete,
        diverged: outcome.diverged.clone(),
        notes: outcome.notes.clone(),
        log: outcome.log.clone(),
        wall_sec,
    };
    write_file(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let raw = read_bytes(&path)?;
    let m: Manifest = serde_json::from_slice(&raw)
        .map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Integrity(format!(
            "checkpoint format {} is not supported (expected {FORMAT_VERSION})",
            m.format_version
        )));
    }
    Ok(m)
}

/// Reads and verifies a checkpoint: both hashes must match and the tensor
/// file must have exactly the listed shapes.
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest = read_manifest(dir)?;
    let bytes = read_bytes(&dir.join(TENSORS_FILE))?;
    if sha256_hex(&bytes) != manifest.tensors_sha256 {
        return Err(Error::Integrity(format!("{TENSORS_FILE} does not match its recorded hash")));
    }
    let purchases = read_bytes(&dir.join(PURCHASES_FILE))?;
    if sha256_hex(&purchases) != manifest.purchases_sha256 {
        return Err(Error::Integrity(format!("{PURCHASES_FILE} does not match its recorded hash")));
    }
    let tensors = decode_tensors(&manifest.tensors, &bytes)?;
    Ok(Checkpoint { manifest, tensors })
}

/// Test-user data found in a checkpoint's training artifacts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LeakageReport {
    pub test_users: usize,
    pub purchase_rows: usize,
    /// Training purchases `(user, item)` made by test users.
    pub leaked_purchases: Vec<(String, String)>,
    /// Test users among the mapping users.
    pub leaked_mapping: Vec<String>,
}

impl LeakageReport {
    pub fn is_clean(&self) -> bool {
        self.leaked_purchases.is_empty() && self.leaked_mapping.is_empty()
    }
}

/// Exact set check of the test users against the purchase pairs and
/// mapping users recorded in the checkpoint at `dir`.
pub fn audit_leakage(dir: &Path) -> Result<LeakageReport> {
    let ck = load_checkpoint(dir)?;
    let test: BTreeSet<&str> = ck.manifest.test_users.iter().map(String::as_str).collect();
    let (_, rows) = tsv::read(&dir.join(PURCHASES_FILE))?;
    let leaked_purchases = rows
        .iter()
        .filter(|r| test.contains(r.fields[0].as_str()))
        .map(|r| (r.fields[0].clone(), r.fields.get(1).cloned().unwrap_or_default()))
        .collect();
    let leaked_mapping = ck
        .manifest
        .mapping_users
        .iter()
        .filter(|u| test.contains(u.as_str()))
        .cloned()
        .collect();
    Ok(LeakageReport {
        test_users: test.len(),
        purchase_rows: rows.len(),
        leaked_purchases,
        leaked_mapping,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate, GenConfig};
    use crate::train_eval::model::train_model;
    use crate::train_eval::split::split_dataset;
    use proptest::prelude::*;

    fn setup() -> (tempfile::TempDir, Dataset, Split, TrainConfig) {
        let dir = tempfile::tempdir().unwrap();
        let g = GenConfig {
            users: 300,
            source_items: 40,
            target_items: 10,
            agents: 20,
            properties: 8,
            ..GenConfig::default()
        };
        generate(&g, &dir.path().join("data")).unwrap();
        let ds = Dataset::load(&dir.path().join("data")).unwrap();
        let split = split_dataset(&ds, &SplitSpec { eta: 0.5, ..SplitSpec::default() }).unwrap();
        let mut cfg = TrainConfig {
            max_epochs: 2,
            ..TrainConfig::default()
        };
        cfg.source.word2vec.epochs = 2;
        (dir, ds, split, cfg)
    }

    proptest! {
        #[test]
        fn tensor_bytes_round_trip(shapes in prop::collection::vec((1usize..4, 1usize..4), 0..5), seed in any::<u64>()) {
            let mut rng = crate::rng::substream(seed, "t");
            let mut t = ParamSet::new();
            for (k, (r, c)) in shapes.iter().enumerate() {
                t.insert(format!("t{k}"), Mat::uniform(*r, *c, 1e6, &mut rng));
            }
            let (entries, bytes) = encode_tensors(&t);
            let back = decode_tensors(&entries, &bytes).unwrap();
            prop_assert_eq!(back, t);
        }
    }

    #[test]
    fn save_load_audit_and_tamper() {
        let (dir, ds, split, cfg) = setup();
        let out = train_model(ModelKind::Hcdir, &ds, &split, &cfg, None).unwrap();
        let ck_dir = dir.path().join("ck");
        let m = save_checkpoint(&ck_dir, ModelKind::Hcdir, &ds, &split, &cfg, &out, 1.0).unwrap();
        assert!(m.complete);
        assert_eq!(m.mapping_users.len(), split.retained.len());

        let ck = load_checkpoint(&ck_dir).unwrap();
        assert_eq!(ck.manifest, m);
        ck.check_data(&ds).unwrap();
        let a = out.model.unwrap().cold_scores(&ds, &split.test).unwrap();
        assert_eq!(ck.model().unwrap().cold_scores(&ds, &split.test).unwrap(), a);

        let report = audit_leakage(&ck_dir).unwrap();
        assert!(report.is_clean(), "{report:?}");
        assert_eq!(report.test_users, split.test.len());
        assert!(report.purchase_rows > 0);

        // A test user's purchase slipped into the training list is caught
        // by the audit once the hash is refreshed to match.
        let path = ck_dir.join(PURCHASES_FILE);
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str(&format!("{}\t{}\n", m.test_users[0], ds.maps[NodeType::Item.index()].external(0)));
        std::fs::write(&path, &text).unwrap();
        assert!(matches!(load_checkpoint(&ck_dir), Err(Error::Integrity(_))));
        let mut m2 = m.clone();
        m2.purchases_sha256 = sha256_hex(text.as_bytes());
        std::fs::write(ck_dir.join(MANIFEST_FILE), serde_json::to_string(&m2).unwrap()).unwrap();
        let report = audit_leakage(&ck_dir).unwrap();
        assert_eq!(report.leaked_purchases.len(), 1);

        // Flipped tensor byte.
        let tpath = ck_dir.join(TENSORS_FILE);
        let mut bytes = std::fs::read(&tpath).unwrap();
        bytes[0] ^= 1;
        std::fs::write(&tpath, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&ck_dir), Err(Error::Integrity(_))));
    }

    #[test]
    fn diverged_run_keeps_partial_tensors() {
        let (dir, ds, split, cfg) = setup();
        let mut partial = ParamSet::new();
        partial.insert("tahin/x", Mat::zeros(1, 2));
        let out = TrainOutcome {
            model: None,
            log: Vec::new(),
            notes: Vec::new(),
            diverged: Some("graph encoder: loss NaN at epoch 1".into()),
            partial,
        };
        let ck_dir = dir.path().join("ck");
        let m = save_checkpoint(&ck_dir, ModelKind::Hcdir, &ds, &split, &cfg, &out, 0.0).unwrap();
        assert!(!m.complete);
        let ck = load_checkpoint(&ck_dir).unwrap();
        assert_eq!(ck.tensors.len(), 1);
        assert!(matches!(ck.model(), Err(Error::Divergence(_))));
    }

    #[test]
    fn unknown_manifest_fields_are_rejected() {
        let (dir, ds, split, cfg) = setup();
        let out = train_model(ModelKind::Bpr, &ds, &split, &cfg, None).unwrap();
        let ck_dir = dir.path().join("ck");
        save_checkpoint(&ck_dir, ModelKind::Bpr, &ds, &split, &cfg, &out, 0.0).unwrap();
        let path = ck_dir.join(MANIFEST_FILE);
        let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert!(v["mapping_users"].as_array().unwrap().is_empty());
        v["surprise"] = serde_json::json!(1);
        std::fs::write(&path, v.to_string()).unwrap();
        assert!(matches!(read_manifest(&ck_dir), Err(Error::Integrity(_))));
    }
}
