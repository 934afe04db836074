//! Three-stage training of the cross-domain recommender: the target graph
//! encoder, the source sequence encoder and the mapping between them.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use crate::autograd::{ParamSet, Tape};
use crate::cross_domain::Mapper;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, NodeType};
use crate::optim::Adam;
use crate::rng;
use crate::source_model::{embed_item_text, train_word_embeddings, truncate_recent, SourceModel};
use crate::tahin::{TahinContext, TahinModel};
use crate::tensor::Mat;
use crate::train_eval::config::TrainConfig;
use crate::train_eval::sampling::negative_sample;
use crate::train_eval::split::Split;
use crate::train_eval::stage::{evaluate_scores, positives_by_user, purchase_pairs, score_matrix, EarlyStopping, EpochRecord, Holdout};

/// Everything needed to score cold users.
#[derive(Clone, Debug)]
pub struct HcdirModel {
    /// Graph encoder tensors; scoring only needs the tables below.
    pub tahin: ParamSet,
    pub source: SourceModel,
    pub mapper: Mapper,
    /// Target item embeddings from the trained graph encoder.
    pub items: Mat,
    /// Target user embeddings, kept for inspection and the freeze audit.
    pub users: Mat,
    pub max_seq_len: usize,
}

impl HcdirModel {
    /// Item scores for each user from its source sequence alone.
    pub fn cold_scores(&self, ds: &Dataset, users: &[usize]) -> Result<Mat> {
        let seqs: Vec<&[usize]> = users
            .iter()
            .map(|&u| truncate_recent(&ds.source_seqs[u], self.max_seq_len))
            .collect();
        let us = self.source.encode_users(&seqs)?;
        Ok(score_matrix(&self.mapper.map_rows(&us)?, &self.items))
    }
}

/// Result of a training run; `diverged` is set when a stage produced a
/// non-finite loss or parameter, in which case the returned parameters are
/// the last good ones and later stages did not run.
#[derive(Clone, Debug)]
pub struct TrainOutcome<M> {
    pub model: Option<M>,
    pub log: Vec<EpochRecord>,
    pub notes: Vec<String>,
    pub diverged: Option<String>,
    /// Last-good tensors of the stages that ran, set when divergence left
    /// `model` empty. Names carry a `stage/` prefix.
    pub partial: ParamSet,
}

/// Copies every tensor of `from` into `into` as `prefix/name`.
pub fn add_prefixed(into: &mut ParamSet, prefix: &str, from: &ParamSet) {
    for (_, name, m) in from.iter() {
        into.insert(format!("{prefix}/{name}"), m.clone());
    }
}

/// The tensors of `set` named `prefix/...`, with the prefix stripped, in
/// their original order.
pub fn strip_prefixed(set: &ParamSet, prefix: &str) -> ParamSet {
    let head = format!("{prefix}/");
    let mut out = ParamSet::new();
    for (_, name, m) in set.iter() {
        if let Some(rest) = name.strip_prefix(&head) {
            out.insert(rest, m.clone());
        }
    }
    out
}

/// A trained source encoder; independent of eta and of graph ablations.
#[derive(Clone, Debug)]
pub struct SourceStage {
    pub model: SourceModel,
    pub log: Vec<EpochRecord>,
    pub diverged: Option<String>,
}

pub fn relevant_sets(ds: &Dataset, users: &[usize]) -> Vec<BTreeSet<usize>> {
    let targets = ds.target_items();
    users.iter().map(|&u| targets[u].iter().copied().collect()).collect()
}

fn finite_or(loss: f64, params: &ParamSet, what: &str, epoch: usize) -> Option<String> {
    if !loss.is_finite() {
        Some(format!("{what}: loss {loss} at epoch {epoch}"))
    } else if !params.all_finite() {
        Some(format!("{what}: non-finite parameters at epoch {epoch}"))
    } else {
        None
    }
}

/// Trains the graph encoder on the (unablated) training graph `graph`.
/// Each warm user's latest purchase is held out for early stopping; the
/// returned context encodes the full graph under `cfg.ablation`.
pub fn train_tahin(
    graph: &HeteroGraph,
    ds: &Dataset,
    cfg: &TrainConfig,
    log: &mut Vec<EpochRecord>,
) -> Result<(TahinModel, TahinContext, Option<String>)> {
    let holdout = Holdout::last_purchases(ds, graph)?;
    let paths = cfg.meta_path_set()?;
    let train_graph = holdout.graph.apply_ablation(cfg.ablation);
    let ctx = TahinContext::new(train_graph, paths.filtered_for(&holdout.graph.apply_ablation(cfg.ablation)))?;
    let full_graph = graph.apply_ablation(cfg.ablation);
    let full = TahinContext::new(full_graph, ctx.paths().clone())?;
    let mut rng = rng::substream(cfg.seed, "tahin");
    let mut model = TahinModel::new(cfg.tahin, &ctx, &mut rng)?;
    let positives = positives_by_user(ctx.graph());
    let mut order = purchase_pairs(ctx.graph());
    if order.is_empty() {
        return Err(Error::Contract("target graph has no purchases to train on".into()));
    }
    let n_items = ctx.graph().count(NodeType::Item);
    let mut adam = Adam::new(cfg.adam, model.params());
    let mut stop = EarlyStopping::new(cfg.patience);
    let mut best = model.params().clone();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut triples = Vec::with_capacity(chunk.len() * (1 + cfg.negatives));
            for &(u, i) in chunk {
                triples.push((u, i, 1.0));
                for j in negative_sample(&positives[u], n_items, cfg.negatives, &mut rng) {
                    triples.push((u, j, 0.0));
                }
            }
            let mut tape = Tape::new();
            let loss = model.batch_loss(&mut tape, &ctx, &triples)?;
            let value = tape.value(loss).item();
            let grads = tape.backward(loss, model.params());
            adam.step(model.params_mut(), &grads);
            total += value;
            if let Some(msg) = finite_or(value, model.params(), "graph encoder", epoch) {
                *model.params_mut() = best;
                return Ok((model, full, Some(msg)));
            }
        }
        let val = if holdout.is_empty() {
            -total
        } else {
            let emb = model.encode_all(&ctx)?;
            let users = emb.table(NodeType::User).expect("users are never ablated");
            let items = emb.table(NodeType::Item).expect("items are never ablated");
            holdout.ndcg(users, items, cfg.ndcg_cutoff)?
        };
        log.push(EpochRecord {
            stage: "tahin".into(),
            epoch,
            loss: total,
            val_ndcg: val,
        });
        if stop.observe(epoch, val) {
            best = model.params().clone();
        }
        if stop.should_stop() {
            break;
        }
    }
    *model.params_mut() = best;
    Ok((model, full, None))
}

/// Source item vectors: max-pooled word vectors of each description.
pub fn source_item_vectors(ds: &Dataset, cfg: &TrainConfig) -> Result<Mat> {
    let we = train_word_embeddings(&ds.descriptions, &cfg.source.word2vec, rng::derive_seed(cfg.seed, "word2vec"))?;
    let rows: Vec<Vec<f64>> = ds.descriptions.iter().map(|d| embed_item_text(&we, d)).collect();
    Ok(Mat::from_rows(&rows))
}

/// Trains the source encoder on every user with a source history except
/// the validation users; validation ranks each validation user's last
/// source item from the preceding ones.
pub fn train_source(ds: &Dataset, split: &Split, cfg: &TrainConfig) -> Result<SourceStage> {
    let mut rng = rng::substream(cfg.seed, "source");
    let vectors = source_item_vectors(ds, cfg)?;
    let mut model = SourceModel::new(cfg.source.hidden, vectors, &mut rng)?;
    let n_items = ds.n_source_items();
    let held: BTreeSet<usize> = split.valid.iter().copied().collect();
    let max_len = cfg.source.max_seq_len;
    let mut users: Vec<usize> = (0..ds.n_users())
        .filter(|u| !ds.source_seqs[*u].is_empty() && !held.contains(u))
        .collect();
    let positives: Vec<Vec<usize>> = (0..ds.n_users())
        .map(|u| {
            let s: BTreeSet<usize> = truncate_recent(&ds.source_seqs[u], max_len).iter().copied().collect();
            s.into_iter().collect()
        })
        .collect();
    let val_users: Vec<usize> = split.valid.iter().copied().filter(|&u| ds.source_seqs[u].len() >= 2).collect();
    let val_prefix: Vec<&[usize]> = val_users
        .iter()
        .map(|&u| {
            let s = &ds.source_seqs[u];
            truncate_recent(&s[..s.len() - 1], max_len)
        })
        .collect();
    let val_relevant: Vec<BTreeSet<usize>> = val_users
        .iter()
        .map(|&u| BTreeSet::from([*ds.source_seqs[u].last().expect("length checked")]))
        .collect();

    let mut log = Vec::new();
    let mut adam = Adam::new(cfg.adam, model.params());
    let mut stop = EarlyStopping::new(cfg.patience);
    let mut best = model.params().clone();
    for epoch in 1..=cfg.max_epochs {
        users.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in users.chunks(cfg.batch_size) {
            let seqs: Vec<&[usize]> = chunk.iter().map(|&u| truncate_recent(&ds.source_seqs[u], max_len)).collect();
            let mut triples = Vec::new();
            for (b, &u) in chunk.iter().enumerate() {
                for &i in &positives[u] {
                    triples.push((b, i, 1.0));
                }
                let k = cfg.negatives * positives[u].len();
                for j in negative_sample(&positives[u], n_items, k, &mut rng) {
                    triples.push((b, j, 0.0));
                }
            }
            let mut tape = Tape::new();
            let loss = model.batch_loss(&mut tape, &seqs, &triples)?;
            let value = tape.value(loss).item();
            let grads = tape.backward(loss, model.params());
            adam.step(model.params_mut(), &grads);
            total += value;
            if let Some(msg) = finite_or(value, model.params(), "source encoder", epoch) {
                *model.params_mut() = best;
                return Ok(SourceStage {
                    model,
                    log,
                    diverged: Some(msg),
                });
            }
        }
        let val = if val_users.is_empty() {
            -total
        } else {
            let us = model.encode_users(&val_prefix)?;
            evaluate_scores(&score_matrix(&us, &model.item_embeddings()), &val_relevant, cfg.ndcg_cutoff)?.ndcg
        };
        log.push(EpochRecord {
            stage: "source".into(),
            epoch,
            loss: total,
            val_ndcg: val,
        });
        if stop.observe(epoch, val) {
            best = model.params().clone();
        }
        if stop.should_stop() {
            break;
        }
    }
    *model.params_mut() = best;
    Ok(SourceStage {
        model,
        log,
        diverged: None,
    })
}

/// Trains a mapper from `sources` rows to `targets` rows. Validation maps
/// `val_sources` and ranks `items` against `val_relevant`.
#[allow(clippy::too_many_arguments)]
pub fn train_mapper(
    sources: &Mat,
    targets: &Mat,
    val_sources: &Mat,
    val_relevant: &[BTreeSet<usize>],
    items: &Mat,
    cfg: &TrainConfig,
    stream: &str,
    log: &mut Vec<EpochRecord>,
) -> Result<(Mapper, Option<String>)> {
    let mut rng = rng::substream(cfg.seed, stream);
    let hidden = cfg.mapper.hidden_dims(targets.cols());
    let mut mapper = Mapper::new(sources.cols(), &hidden, targets.cols(), &mut rng)?;
    let mut order: Vec<usize> = (0..sources.rows()).collect();
    let mut adam = Adam::new(cfg.mapper_adam(), mapper.params());
    let mut stop = EarlyStopping::new(cfg.patience);
    let mut best = mapper.params().clone();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let loss = mapper.loss(&mut tape, &sources.gather_rows(chunk), &targets.gather_rows(chunk), cfg.mapper.squared)?;
            let value = tape.value(loss).item();
            let grads = tape.backward(loss, mapper.params());
            adam.step(mapper.params_mut(), &grads);
            total += value;
            if let Some(msg) = finite_or(value, mapper.params(), "mapper", epoch) {
                *mapper.params_mut() = best;
                return Ok((mapper, Some(msg)));
            }
        }
        let val = if val_relevant.is_empty() {
            -total
        } else {
            evaluate_scores(&score_matrix(&mapper.map_rows(val_sources)?, items), val_relevant, cfg.ndcg_cutoff)?.ndcg
        };
        log.push(EpochRecord {
            stage: stream.into(),
            epoch,
            loss: total,
            val_ndcg: val,
        });
        if stop.observe(epoch, val) {
            best = mapper.params().clone();
        }
        if stop.should_stop() {
            break;
        }
    }
    *mapper.params_mut() = best;
    Ok((mapper, None))
}

/// Full three-stage run. `source` may carry a previously trained source
/// stage for the same split users, seed and source settings.
pub fn train_hcdir(ds: &Dataset, split: &Split, cfg: &TrainConfig, source: Option<&SourceStage>) -> Result<TrainOutcome<HcdirModel>> {
    cfg.validate()?;
    let mut notes = Vec::new();
    let mut log = Vec::new();
    let graph = split.training_graph(ds)?;
    notes.push(format!(
        "retained {} of {} overlap training users (eta {})",
        split.retained.len(),
        split.train.len(),
        split.spec.eta
    ));
    if cfg.ablation != crate::graph::Ablation::Full {
        let removed: Vec<&str> = cfg.ablation.removed_types().iter().map(|t| t.name()).collect();
        notes.push(format!("ablation {}: removed {}", cfg.ablation, removed.join(", ")));
    }

    let (tahin, ctx, diverged) = train_tahin(&graph, ds, cfg, &mut log)?;
    let mut partial = ParamSet::new();
    add_prefixed(&mut partial, "tahin", tahin.params());
    if diverged.is_some() {
        return Ok(TrainOutcome {
            model: None,
            log,
            notes,
            diverged,
            partial,
        });
    }
    let owned;
    let source = match source {
        Some(s) => s,
        None => {
            owned = train_source(ds, split, cfg)?;
            &owned
        }
    };
    log.extend(source.log.iter().cloned());
    if source.diverged.is_some() {
        add_prefixed(&mut partial, "source", source.model.params());
        return Ok(TrainOutcome {
            model: None,
            log,
            notes,
            diverged: source.diverged.clone(),
            partial,
        });
    }

    let emb = tahin.encode_all(&ctx)?;
    let users = emb.table(NodeType::User).expect("users are never ablated").clone();
    let items = emb.table(NodeType::Item).expect("items are never ablated").clone();
    let max_len = cfg.source.max_seq_len;
    let encode = |us: &[usize]| -> Result<Mat> {
        let seqs: Vec<&[usize]> = us.iter().map(|&u| truncate_recent(&ds.source_seqs[u], max_len)).collect();
        source.model.encode_users(&seqs)
    };
    let xs = encode(&split.retained)?;
    let ys = users.gather_rows(&split.retained);
    let xv = encode(&split.valid)?;
    let frozen = (tahin.params().clone(), source.model.params().clone());
    let (mapper, diverged) = train_mapper(&xs, &ys, &xv, &relevant_sets(ds, &split.valid), &items, cfg, "mapper", &mut log)?;
    if !params_identical(&frozen.0, tahin.params()) || !params_identical(&frozen.1, source.model.params()) {
        return Err(Error::Integrity("frozen encoder parameters changed during mapping".into()));
    }
    notes.push(format!("mapping pairs: {}", split.retained.len()));
    Ok(TrainOutcome {
        model: Some(HcdirModel {
            tahin: tahin.params().clone(),
            source: source.model.clone(),
            mapper,
            items,
            users,
            max_seq_len: max_len,
        }),
        log,
        notes,
        diverged,
        partial: ParamSet::new(),
    })
}

/// Bitwise equality of two parameter sets.
pub fn params_identical(a: &ParamSet, b: &ParamSet) -> bool {
    a.len() == b.len()
        && a.iter().zip(b.iter()).all(|((_, na, ma), (_, nb, mb))| {
            na == nb
                && ma.shape() == mb.shape()
                && ma.data().iter().zip(mb.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        })
}
