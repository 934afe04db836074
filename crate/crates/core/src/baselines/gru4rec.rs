//! Next-item GRU recommender with a full softmax over the item set.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::autograd::{ParamId, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::rng;
use crate::source_model::{truncate_recent, Gru};
use crate::tensor::Mat;
use crate::train_eval::stage::{EarlyStopping, EpochRecord};
use crate::train_eval::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gru4RecSettings {
    pub hidden: usize,
    pub adam: AdamConfig,
    /// Sequences per step.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub max_seq_len: usize,
}

impl From<&TrainConfig> for Gru4RecSettings {
    fn from(c: &TrainConfig) -> Self {
        Self {
            hidden: c.source.hidden,
            adam: c.baseline_adam(),
            batch_size: c.batch_size,
            max_epochs: c.max_epochs,
            patience: c.patience,
            max_seq_len: c.source.max_seq_len,
        }
    }
}

/// Learned item inputs, a GRU, and an output layer
/// `logits = h W_out^T + b_out`.
#[derive(Clone, Debug)]
pub struct Gru4Rec {
    params: ParamSet,
    gru: Gru,
    input: ParamId,
    out: ParamId,
    bias: ParamId,
    max_seq_len: usize,
}

impl Gru4Rec {
    pub fn new<R: rand::Rng + ?Sized>(n_items: usize, hidden: usize, max_seq_len: usize, rng: &mut R) -> Result<Self> {
        if n_items == 0 || hidden == 0 {
            return Err(Error::Config("GRU4REC needs items and a positive width".into()));
        }
        let mut params = ParamSet::new();
        let init = Normal::new(0.0, 0.1).expect("valid normal");
        let data = (0..n_items * hidden).map(|_| init.sample(rng)).collect();
        let input = params.insert("gru4rec.input", Mat::from_vec(n_items, hidden, data));
        let gru = Gru::new(&mut params, "gru4rec.gru", hidden, hidden, rng);
        let out = params.insert("gru4rec.out", Mat::glorot(n_items, hidden, rng));
        let bias = params.insert("gru4rec.bias", Mat::zeros(1, n_items));
        Ok(Self {
            params,
            gru,
            input,
            out,
            bias,
            max_seq_len,
        })
    }

    pub fn from_params(params: ParamSet, max_seq_len: usize) -> Result<Self> {
        let id = |name: &str| {
            params
                .id(name)
                .ok_or_else(|| Error::Integrity(format!("missing tensor {name}")))
        };
        let (input, out, bias) = (id("gru4rec.input")?, id("gru4rec.out")?, id("gru4rec.bias")?);
        let gru = Gru::from_params(&params, "gru4rec.gru")?;
        Ok(Self {
            params,
            gru,
            input,
            out,
            bias,
            max_seq_len,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn n_items(&self) -> usize {
        self.params.get(self.input).rows()
    }

    pub fn hidden(&self) -> usize {
        self.gru.hidden()
    }

    /// Summed next-item cross-entropy over every prefix of `seqs`; each
    /// sequence needs at least two items.
    pub fn batch_loss(&self, tape: &mut Tape, seqs: &[&[usize]]) -> Result<Var> {
        if seqs.iter().any(|s| s.len() < 2) {
            return Err(Error::Contract("next-item loss needs sequences of length at least 2".into()));
        }
        if let Some(&i) = seqs.iter().flat_map(|s| s.iter()).find(|&&i| i >= self.n_items()) {
            return Err(Error::Bounds(format!("item {i} out of range")));
        }
        let prefixes: Vec<&[usize]> = seqs.iter().map(|s| &s[..s.len() - 1]).collect();
        let table = tape.param(&self.params, self.input);
        let run = self.gru.run(tape, &self.params, table, &prefixes)?;
        let mut states = Vec::with_capacity(run.steps.len());
        let mut targets = Vec::new();
        for (t, &h) in run.steps.iter().enumerate() {
            let active = tape.shape(h).0;
            for &b in &run.order[..active] {
                targets.push(seqs[b][t + 1]);
            }
            states.push(h);
        }
        let h = tape.concat_rows(&states);
        let logits = self.logits(tape, h);
        Ok(tape.softmax_xent(logits, &targets))
    }

    fn logits(&self, tape: &mut Tape, h: Var) -> Var {
        let w = tape.param(&self.params, self.out);
        let b = tape.param(&self.params, self.bias);
        tape.linear(h, w, b)
    }

    /// Final hidden state per sequence; an empty sequence gives the zero
    /// state.
    pub fn encode(&self, seqs: &[&[usize]]) -> Result<Mat> {
        let mut out = Mat::zeros(seqs.len(), self.hidden());
        let busy: Vec<usize> = (0..seqs.len()).filter(|&b| !seqs[b].is_empty()).collect();
        if busy.is_empty() {
            return Ok(out);
        }
        let trimmed: Vec<&[usize]> = busy.iter().map(|&b| truncate_recent(seqs[b], self.max_seq_len)).collect();
        let mut tape = Tape::new();
        let table = tape.param(&self.params, self.input);
        let run = self.gru.run(&mut tape, &self.params, table, &trimmed)?;
        let last = tape.value(run.last);
        for (k, &b) in busy.iter().enumerate() {
            out.row_mut(b).copy_from_slice(last.row(k));
        }
        Ok(out)
    }

    /// Next-item logits for each row of hidden states.
    pub fn scores(&self, states: &Mat) -> Mat {
        let mut tape = Tape::new();
        let h = tape.constant(states.clone());
        let l = self.logits(&mut tape, h);
        tape.value(l).clone()
    }

    /// Softmax over the items after `seq`.
    pub fn next_item_distribution(&self, seq: &[usize]) -> Result<Vec<f64>> {
        let h = self.encode(&[seq])?;
        let logits = self.scores(&h);
        let row = logits.row(0);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = e.iter().sum();
        Ok(e.into_iter().map(|x| x / z).collect())
    }
}

#[derive(Clone, Debug)]
pub struct Gru4RecOutcome {
    pub model: Gru4Rec,
    pub log: Vec<EpochRecord>,
    pub diverged: Option<String>,
}

/// Trains on every sequence of length at least two (longer ones are cut to
/// their most recent `max_seq_len` items). `validate` drives early stopping.
pub fn gru4rec_train(
    seqs: &[Vec<usize>],
    n_items: usize,
    cfg: &Gru4RecSettings,
    seed: u64,
    stage: &str,
    validate: &mut dyn FnMut(&Gru4Rec) -> Result<f64>,
) -> Result<Gru4RecOutcome> {
    let mut usable: Vec<&[usize]> = seqs
        .iter()
        .filter(|s| s.len() >= 2)
        .map(|s| truncate_recent(s, cfg.max_seq_len.max(2)))
        .collect();
    if usable.is_empty() {
        return Err(Error::Contract(format!("{stage}: every sequence has fewer than two items")));
    }
    let mut rng = rng::substream(seed, stage);
    let mut model = Gru4Rec::new(n_items, cfg.hidden, cfg.max_seq_len, &mut rng)?;
    let mut adam = Adam::new(cfg.adam, &model.params);
    let mut stop = EarlyStopping::new(cfg.patience);
    let mut best = model.params.clone();
    let mut log = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        usable.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in usable.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let loss = model.batch_loss(&mut tape, chunk)?;
            let value = tape.value(loss).item();
            let grads = tape.backward(loss, &model.params);
            adam.step(&mut model.params, &grads);
            total += value;
            if !value.is_finite() || !model.params.all_finite() {
                model.params = best;
                return Ok(Gru4RecOutcome {
                    model,
                    log,
                    diverged: Some(format!("{stage}: loss {value} at epoch {epoch}")),
                });
            }
        }
        let val = validate(&model)?;
        log.push(EpochRecord {
            stage: stage.into(),
            epoch,
            loss: total,
            val_ndcg: val,
        });
        if stop.observe(epoch, val) {
            best = model.params.clone();
        }
        if stop.should_stop() {
            break;
        }
    }
    model.params = best;
    Ok(Gru4RecOutcome {
        model,
        log,
        diverged: None,
    })
}
