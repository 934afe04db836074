//! One reproducible run: split, train, checkpoint, and cold-user evaluation.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::{NodeType, Relation};
use crate::train_eval::checkpoint::{load_checkpoint, save_checkpoint, Manifest};
use crate::train_eval::config::{ModelKind, TrainConfig};
use crate::train_eval::model::{train_model, SourceCache};
use crate::train_eval::report::{evaluate_cold, Evaluation, MetricsRecord};
use crate::train_eval::split::{split_dataset, Split, SplitSpec};

pub const LOG_FILE: &str = "train.log";

/// Directory name of a run, e.g. `hcdir_eta0.1_full_s0`.
pub fn run_name(kind: ModelKind, spec: &SplitSpec, cfg: &TrainConfig) -> String {
    format!("{kind}_eta{}_{}_s{}", spec.eta, cfg.ablation, cfg.seed)
}

/// Model label used in metrics lines; ablated runs carry the mode.
pub fn model_label(kind: ModelKind, cfg: &TrainConfig) -> String {
    if kind.uses_graph_structure() && cfg.ablation != crate::graph::Ablation::Full {
        format!("{kind}/{}", cfg.ablation)
    } else {
        kind.to_string()
    }
}

/// Header of a training log: every configuration field, the data hash,
/// the split sizes, and what eta and the ablation remove.
pub fn log_header(kind: ModelKind, ds: &Dataset, split: &Split, cfg: &TrainConfig) -> Result<String> {
    let mut s = String::new();
    let _ = writeln!(s, "model {kind}");
    let _ = writeln!(s, "data_hash {}", ds.content_hash);
    let _ = writeln!(s, "split {}", serde_json::to_string(&split.spec)?);
    let _ = writeln!(s, "train_config {}", serde_json::to_string(cfg)?);
    let _ = writeln!(
        s,
        "users train={} valid={} test={}",
        split.train.len(),
        split.valid.len(),
        split.test.len()
    );
    let _ = writeln!(
        s,
        "eta {} retains {} of {} training overlap users as mapping pairs",
        split.spec.eta,
        split.retained.len(),
        split.train.len()
    );
    let removed = cfg.ablation.removed_types();
    let dropped: Vec<&str> = Relation::ALL
        .into_iter()
        .filter(|r| removed.contains(&r.src_type()) || removed.contains(&r.dst_type()))
        .map(Relation::name)
        .collect();
    let types: Vec<&str> = removed.iter().map(|t| t.name()).collect();
    if dropped.is_empty() {
        let _ = writeln!(s, "ablation {} drops no relations", cfg.ablation);
    } else {
        let _ = writeln!(
            s,
            "ablation {} removes node types [{}] and drops relations [{}]",
            cfg.ablation,
            types.join(", "),
            dropped.join(", ")
        );
    }
    Ok(s)
}

/// Trains `kind` and writes its checkpoint and log into `dir`. A diverged
/// run still writes both; the manifest records the cause.
pub fn train_run(
    kind: ModelKind,
    ds: &Dataset,
    spec: &SplitSpec,
    cfg: &TrainConfig,
    dir: &Path,
    cache: Option<&mut SourceCache>,
) -> Result<Manifest> {
    let split = split_dataset(ds, spec)?;
    let start = Instant::now();
    let outcome = train_model(kind, ds, &split, cfg, cache)?;
    let wall = start.elapsed().as_secs_f64();
    let manifest = save_checkpoint(dir, kind, ds, &split, cfg, &outcome, wall)?;

    let mut log = log_header(kind, ds, &split, cfg)?;
    for r in &outcome.log {
        let _ = writeln!(
            log,
            "epoch stage={} epoch={} loss={:.6} val_ndcg={:.6}",
            r.stage, r.epoch, r.loss, r.val_ndcg
        );
    }
    for n in &outcome.notes {
        let _ = writeln!(log, "{n}");
    }
    if let Some(d) = &outcome.diverged {
        let _ = writeln!(log, "diverged {d}");
    }
    let path = dir.join(LOG_FILE);
    std::fs::write(&path, log).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Scores the test users recorded in the checkpoint at `dir` as cold users.
pub fn evaluate_run(dir: &Path, ds: &Dataset) -> Result<(MetricsRecord, Evaluation)> {
    let start = Instant::now();
    let ck = load_checkpoint(dir)?;
    ck.check_data(ds)?;
    let model = ck.model()?;
    if let Some(d) = &ck.manifest.diverged {
        log::warn!("scoring the last-good parameters of a diverged run ({d})");
    }
    let users_map = &ds.maps[NodeType::User.index()];
    let users = ck
        .manifest
        .test_users
        .iter()
        .map(|u| {
            users_map
                .get(u)
                .ok_or_else(|| Error::Integrity(format!("test user {u} is not in the dataset")))
        })
        .collect::<Result<Vec<_>>>()?;
    let cfg = &ck.manifest.config;
    let ev = evaluate_cold(&model, ds, &users, cfg.ndcg_cutoff)?;
    let wall = ck.manifest.wall_sec + start.elapsed().as_secs_f64();
    let rec = MetricsRecord::new(
        ck.manifest.split.eta,
        &model_label(ck.manifest.model, cfg),
        &ev.summary,
        cfg.seed,
        wall,
    );
    Ok((rec, ev))
}
