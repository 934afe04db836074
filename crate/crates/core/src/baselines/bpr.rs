//! Matrix factorisation trained with the pairwise BPR objective.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::autograd::{ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::rng;
use crate::tensor::Mat;
use crate::train_eval::sampling::negative_sample;
use crate::train_eval::stage::{EarlyStopping, EpochRecord};
use crate::train_eval::TrainConfig;

/// Weight of the squared norms of every row touched by a triple.
pub const BPR_L2: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BprSettings {
    pub dim: usize,
    pub adam: AdamConfig,
    /// Positive pairs per step.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub negatives: usize,
    pub l2: f64,
}

impl From<&TrainConfig> for BprSettings {
    fn from(c: &TrainConfig) -> Self {
        Self {
            dim: c.tahin.dim,
            adam: c.baseline_adam(),
            batch_size: c.batch_size,
            max_epochs: c.max_epochs,
            patience: c.patience,
            negatives: c.negatives,
            l2: BPR_L2,
        }
    }
}

/// User and item tables of one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct MfParams {
    pub users: Mat,
    pub items: Mat,
}

impl MfParams {
    /// Mean of the user rows flagged in `trained`; the prior for users
    /// without interactions.
    pub fn prior_user(&self, trained: &[bool]) -> Vec<f64> {
        let mut out = vec![0.0; self.users.cols()];
        let n = trained.iter().filter(|&&t| t).count().max(1) as f64;
        for (r, _) in trained.iter().enumerate().filter(|(_, &t)| t) {
            for (o, x) in out.iter_mut().zip(self.users.row(r)) {
                *o += x / n;
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct BprOutcome {
    pub params: MfParams,
    /// Users with at least one positive.
    pub trained: Vec<bool>,
    pub skipped_users: usize,
    pub log: Vec<EpochRecord>,
    pub diverged: Option<String>,
}

/// `sum -ln sigmoid(u . (v+ - v-))` plus `l2` times the squared norms of
/// the gathered rows, for `(user, positive, negative)` triples.
pub fn bpr_batch_loss(tape: &mut Tape, users: Var, items: Var, triples: &[(usize, usize, usize)], l2: f64) -> Var {
    let u_idx: Vec<usize> = triples.iter().map(|t| t.0).collect();
    let p_idx: Vec<usize> = triples.iter().map(|t| t.1).collect();
    let n_idx: Vec<usize> = triples.iter().map(|t| t.2).collect();
    let u = tape.gather_rows(users, &u_idx);
    let p = tape.gather_rows(items, &p_idx);
    let n = tape.gather_rows(items, &n_idx);
    let diff = tape.sub(p, n);
    let x = tape.row_dot(u, diff);
    let fit = tape.neg_log_sigmoid_sum(x);
    if l2 == 0.0 {
        return fit;
    }
    let reg = [u, p, n].map(|v| tape.sum_squares(v));
    let a = tape.add(reg[0], reg[1]);
    let b = tape.add(a, reg[2]);
    let r = tape.scale(b, l2);
    tape.add(fit, r)
}

/// Trains user and item tables on `positives[u]` (sorted item ids) with
/// uniformly sampled negatives. `validate` scores the current tables for
/// early stopping; the best epoch is returned.
pub fn bpr_train(
    positives: &[Vec<usize>],
    n_items: usize,
    cfg: &BprSettings,
    seed: u64,
    stage: &str,
    validate: &mut dyn FnMut(&MfParams, &[bool]) -> Result<f64>,
) -> Result<BprOutcome> {
    if cfg.dim == 0 || cfg.batch_size == 0 || cfg.negatives == 0 {
        return Err(Error::Config("BPR needs positive width, batch size and negatives".into()));
    }
    let mut rng = rng::substream(seed, stage);
    let init = Normal::new(0.0, 0.1).expect("valid normal");
    let mut table = |rows: usize| {
        let data = (0..rows * cfg.dim).map(|_| init.sample(&mut rng)).collect();
        Mat::from_vec(rows, cfg.dim, data)
    };
    let mut params = ParamSet::new();
    let uid = params.insert("bpr.users", table(positives.len()));
    let iid = params.insert("bpr.items", table(n_items));
    let trained: Vec<bool> = positives.iter().map(|p| !p.is_empty()).collect();
    let skipped_users = trained.iter().filter(|&&t| !t).count();
    if skipped_users > 0 {
        log::info!("{stage}: {skipped_users} users without positives skipped");
    }
    let mut pairs: Vec<(usize, usize)> = positives
        .iter()
        .enumerate()
        .flat_map(|(u, items)| items.iter().map(move |&i| (u, i)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Contract(format!("{stage}: no positive interactions")));
    }
    let snapshot = |p: &ParamSet| MfParams {
        users: p.get(uid).clone(),
        items: p.get(iid).clone(),
    };
    let mut adam = Adam::new(cfg.adam, &params);
    let mut stop = EarlyStopping::new(cfg.patience);
    let mut best = params.clone();
    let mut log = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        pairs.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in pairs.chunks(cfg.batch_size) {
            let mut triples = Vec::with_capacity(chunk.len() * cfg.negatives);
            for &(u, i) in chunk {
                for j in negative_sample(&positives[u], n_items, cfg.negatives, &mut rng) {
                    triples.push((u, i, j));
                }
            }
            if triples.is_empty() {
                continue;
            }
            let mut tape = Tape::new();
            let users = tape.param(&params, uid);
            let items = tape.param(&params, iid);
            let loss = bpr_batch_loss(&mut tape, users, items, &triples, cfg.l2);
            let value = tape.value(loss).item();
            let grads = tape.backward(loss, &params);
            adam.step(&mut params, &grads);
            total += value;
            if !value.is_finite() || !params.all_finite() {
                return Ok(BprOutcome {
                    params: snapshot(&best),
                    trained,
                    skipped_users,
                    log,
                    diverged: Some(format!("{stage}: loss {value} at epoch {epoch}")),
                });
            }
        }
        let val = validate(&snapshot(&params), &trained)?;
        log.push(EpochRecord {
            stage: stage.into(),
            epoch,
            loss: total,
            val_ndcg: val,
        });
        if stop.observe(epoch, val) {
            best = params.clone();
        }
        if stop.should_stop() {
            break;
        }
    }
    Ok(BprOutcome {
        params: snapshot(&best),
        trained,
        skipped_users,
        log,
        diverged: None,
    })
}
