//! Comparison models: BPR and GRU4REC in the target domain alone, and the
//! EMCDR pipeline that maps source-domain latents of either kind onto BPR
//! target latents.

pub mod bpr;
pub mod gru4rec;

use std::collections::BTreeSet;

use crate::autograd::ParamSet;
use crate::cross_domain::Mapper;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::NodeType;
use crate::tensor::Mat;
use crate::train_eval::pipeline::{add_prefixed, relevant_sets, train_mapper, TrainOutcome};
use crate::train_eval::stage::{evaluate_scores, positives_by_user, score_matrix, EpochRecord, Holdout};
use crate::train_eval::{Split, TrainConfig};

pub use self::bpr::{bpr_train, BprOutcome, BprSettings, MfParams, BPR_L2};
pub use self::gru4rec::{gru4rec_train, Gru4Rec, Gru4RecOutcome, Gru4RecSettings};

/// Fewest mapping pairs EMCDR accepts.
pub const MIN_MAPPING_USERS: usize = 10;

/// Target-domain BPR; cold users get the mean trained user vector.
#[derive(Clone, Debug)]
pub struct BprModel {
    pub items: Mat,
    pub prior: Vec<f64>,
}

impl BprModel {
    pub fn cold_scores(&self, users: &[usize]) -> Mat {
        let u = Mat::from_rows(&vec![self.prior.clone(); users.len()]);
        score_matrix(&u, &self.items)
    }
}

/// Target-domain GRU4REC; cold users start from the zero state.
#[derive(Clone, Debug)]
pub struct Gru4RecModel {
    pub model: Gru4Rec,
}

impl Gru4RecModel {
    pub fn cold_scores(&self, users: &[usize]) -> Mat {
        self.model.scores(&Mat::zeros(users.len(), self.model.hidden()))
    }
}

/// Source-domain user encoder of an EMCDR pipeline.
#[derive(Clone, Debug)]
pub enum EmcdrSource {
    /// One BPR row per dataset user.
    Bpr(Mat),
    Gru(Gru4Rec),
}

impl EmcdrSource {
    pub fn encode(&self, ds: &Dataset, users: &[usize]) -> Result<Mat> {
        match self {
            EmcdrSource::Bpr(table) => {
                if let Some(&u) = users.iter().find(|&&u| u >= table.rows()) {
                    return Err(Error::Bounds(format!("user {u} has no source row")));
                }
                Ok(table.gather_rows(users))
            }
            EmcdrSource::Gru(m) => {
                let seqs: Vec<&[usize]> = users.iter().map(|&u| ds.source_seqs[u].as_slice()).collect();
                m.encode(&seqs)
            }
        }
    }

    pub fn is_gru(&self) -> bool {
        matches!(self, EmcdrSource::Gru(_))
    }

    /// Adds the encoder's tensors under the `source/` prefix.
    pub fn add_tensors(&self, into: &mut ParamSet) {
        match self {
            EmcdrSource::Bpr(table) => {
                into.insert("source/users", table.clone());
            }
            EmcdrSource::Gru(m) => add_prefixed(into, "source", m.params()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EmcdrSourceStage {
    pub source: EmcdrSource,
    pub log: Vec<EpochRecord>,
    pub diverged: Option<String>,
}

#[derive(Clone, Debug)]
pub struct EmcdrModel {
    pub source: EmcdrSource,
    pub mapper: Mapper,
    /// Target BPR item table.
    pub items: Mat,
    /// Target BPR user table.
    pub users: Mat,
}

impl EmcdrModel {
    pub fn cold_scores(&self, ds: &Dataset, users: &[usize]) -> Result<Mat> {
        let us = self.source.encode(ds, users)?;
        Ok(score_matrix(&self.mapper.map_rows(&us)?, &self.items))
    }
}

/// Purchase sequences in time order for users whose target data trains.
pub fn target_sequences(ds: &Dataset, split: &Split) -> Vec<Vec<usize>> {
    let withheld = split.withheld();
    let mut seqs = vec![Vec::new(); ds.n_users()];
    let mut seen: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); ds.n_users()];
    for e in &ds.purchases {
        if !withheld.contains(&e.user) && seen[e.user].insert(e.target) {
            seqs[e.user].push(e.target);
        }
    }
    seqs
}

/// Target BPR on the training graph with each warm user's latest purchase
/// held out for early stopping.
fn train_target_bpr(ds: &Dataset, split: &Split, cfg: &TrainConfig, stage: &str) -> Result<BprOutcome> {
    let graph = split.training_graph(ds)?;
    let holdout = Holdout::last_purchases(ds, &graph)?;
    let positives = positives_by_user(&holdout.graph);
    let cutoff = cfg.ndcg_cutoff;
    let mut epoch = 0.0;
    let mut validate = |p: &MfParams, _: &[bool]| -> Result<f64> {
        epoch += 1.0;
        if holdout.is_empty() {
            return Ok(epoch);
        }
        holdout.ndcg(&p.users, &p.items, cutoff)
    };
    bpr_train(&positives, graph.count(NodeType::Item), &BprSettings::from(cfg), cfg.seed, stage, &mut validate)
}

pub fn train_bpr(ds: &Dataset, split: &Split, cfg: &TrainConfig) -> Result<TrainOutcome<BprModel>> {
    cfg.validate()?;
    let out = train_target_bpr(ds, split, cfg, "bpr")?;
    let notes = vec![format!("{} users without target positives skipped", out.skipped_users)];
    // On divergence the tables are the last good ones.
    let model = Some(BprModel {
        prior: out.params.prior_user(&out.trained),
        items: out.params.items.clone(),
    });
    Ok(TrainOutcome {
        model,
        log: out.log,
        notes,
        diverged: out.diverged,
        partial: ParamSet::new(),
    })
}

pub fn train_gru4rec(ds: &Dataset, split: &Split, cfg: &TrainConfig) -> Result<TrainOutcome<Gru4RecModel>> {
    cfg.validate()?;
    let seqs = target_sequences(ds, split);
    let relevant = relevant_sets(ds, &split.valid);
    let n_valid = split.valid.len();
    let cutoff = cfg.ndcg_cutoff;
    let mut validate = |m: &Gru4Rec| -> Result<f64> {
        if n_valid == 0 {
            return Ok(0.0);
        }
        let s = m.scores(&Mat::zeros(n_valid, m.hidden()));
        Ok(evaluate_scores(&s, &relevant, cutoff)?.ndcg)
    };
    let out = gru4rec_train(&seqs, ds.n_items(), &Gru4RecSettings::from(cfg), cfg.seed, "gru4rec", &mut validate)?;
    let usable = seqs.iter().filter(|s| s.len() >= 2).count();
    Ok(TrainOutcome {
        model: Some(Gru4RecModel { model: out.model }),
        log: out.log,
        notes: vec![format!("{usable} target sequences of length >= 2")],
        diverged: out.diverged,
        partial: ParamSet::new(),
    })
}

/// Source sequences with each validation user's last item held out, and
/// the held-out items.
fn source_holdout(ds: &Dataset, split: &Split) -> (Vec<Vec<usize>>, Vec<usize>, Vec<BTreeSet<usize>>) {
    let mut seqs = ds.source_seqs.clone();
    let mut users = Vec::new();
    let mut relevant = Vec::new();
    for &u in &split.valid {
        if seqs[u].len() >= 2 {
            let last = seqs[u].pop().expect("length checked");
            users.push(u);
            relevant.push(BTreeSet::from([last]));
        }
    }
    (seqs, users, relevant)
}

/// Source-domain stage of EMCDR: BPR over each user's distinct source
/// items, or GRU4REC over the sequences. Independent of eta.
pub fn train_emcdr_source(gru: bool, ds: &Dataset, split: &Split, cfg: &TrainConfig) -> Result<EmcdrSourceStage> {
    let (seqs, val_users, relevant) = source_holdout(ds, split);
    let n_items = ds.n_source_items();
    let cutoff = cfg.ndcg_cutoff;
    if gru {
        let val_seqs: Vec<Vec<usize>> = val_users.iter().map(|&u| seqs[u].clone()).collect();
        let mut validate = |m: &Gru4Rec| -> Result<f64> {
            if val_seqs.is_empty() {
                return Ok(0.0);
            }
            let s: Vec<&[usize]> = val_seqs.iter().map(Vec::as_slice).collect();
            Ok(evaluate_scores(&m.scores(&m.encode(&s)?), &relevant, cutoff)?.ndcg)
        };
        let out = gru4rec_train(&seqs, n_items, &Gru4RecSettings::from(cfg), cfg.seed, "emcdr.source-gru", &mut validate)?;
        Ok(EmcdrSourceStage {
            source: EmcdrSource::Gru(out.model),
            log: out.log,
            diverged: out.diverged,
        })
    } else {
        let positives: Vec<Vec<usize>> = seqs
            .iter()
            .map(|s| s.iter().copied().collect::<BTreeSet<_>>().into_iter().collect())
            .collect();
        let mut validate = |p: &MfParams, _: &[bool]| -> Result<f64> {
            if val_users.is_empty() {
                return Ok(0.0);
            }
            Ok(evaluate_scores(&score_matrix(&p.users.gather_rows(&val_users), &p.items), &relevant, cutoff)?.ndcg)
        };
        let out = bpr_train(&positives, n_items, &BprSettings::from(cfg), cfg.seed, "emcdr.source-bpr", &mut validate)?;
        Ok(EmcdrSourceStage {
            source: EmcdrSource::Bpr(out.params.users),
            log: out.log,
            diverged: out.diverged,
        })
    }
}

/// Target BPR, then the given (or freshly trained) source stage, then a
/// mapper over the eta-retained overlap users.
pub fn train_emcdr(gru: bool, ds: &Dataset, split: &Split, cfg: &TrainConfig, source: Option<&EmcdrSourceStage>) -> Result<TrainOutcome<EmcdrModel>> {
    cfg.validate()?;
    if split.retained.len() < MIN_MAPPING_USERS {
        return Err(Error::Contract(format!(
            "eta {} keeps {} overlap training users; EMCDR needs at least {MIN_MAPPING_USERS}",
            split.spec.eta,
            split.retained.len()
        )));
    }
    let mut notes = vec![format!(
        "retained {} of {} overlap training users (eta {})",
        split.retained.len(),
        split.train.len(),
        split.spec.eta
    )];
    let target = train_target_bpr(ds, split, cfg, "emcdr.target-bpr")?;
    let mut log = target.log.clone();
    let mut partial = ParamSet::new();
    partial.insert("target/users", target.params.users.clone());
    partial.insert("target/items", target.params.items.clone());
    if target.diverged.is_some() {
        return Ok(TrainOutcome {
            model: None,
            log,
            notes,
            diverged: target.diverged,
            partial,
        });
    }
    let owned;
    let source = match source {
        Some(s) => {
            if s.source.is_gru() != gru {
                return Err(Error::Contract("cached source stage is of the other kind".into()));
            }
            s
        }
        None => {
            owned = train_emcdr_source(gru, ds, split, cfg)?;
            &owned
        }
    };
    log.extend(source.log.iter().cloned());
    if source.diverged.is_some() {
        source.source.add_tensors(&mut partial);
        return Ok(TrainOutcome {
            model: None,
            log,
            notes,
            diverged: source.diverged.clone(),
            partial,
        });
    }
    let xs = source.source.encode(ds, &split.retained)?;
    let ys = target.params.users.gather_rows(&split.retained);
    let xv = source.source.encode(ds, &split.valid)?;
    let (mapper, diverged) = train_mapper(
        &xs,
        &ys,
        &xv,
        &relevant_sets(ds, &split.valid),
        &target.params.items,
        cfg,
        "emcdr.mapper",
        &mut log,
    )?;
    notes.push(format!("mapping pairs: {}", split.retained.len()));
    Ok(TrainOutcome {
        model: Some(EmcdrModel {
            source: source.source.clone(),
            mapper,
            items: target.params.items,
            users: target.params.users,
        }),
        log,
        notes,
        diverged,
        partial: ParamSet::new(),
    })
}
