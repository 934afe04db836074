//! Source-domain encoder: item vectors from description text, user vectors
//! from a GRU over the user's item sequence.

mod gru;
mod word2vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use self::gru::{gru_encode, Gru, GruRun};
pub use self::word2vec::{train_word_embeddings, Word2VecConfig, WordEmbeddings, UNK};
use crate::autograd::{ParamId, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::tahin::PROB_EPS;
use crate::tensor::Mat;

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Coordinate-wise maximum of the word vectors of `tokens`. An empty
/// description yields the zero vector.
pub fn embed_item_text(we: &WordEmbeddings, tokens: &[String]) -> Vec<f64> {
    if tokens.is_empty() {
        log::warn!("empty item description; using the zero vector");
        return vec![0.0; we.dim()];
    }
    let mut out = vec![f64::NEG_INFINITY; we.dim()];
    for t in tokens {
        for (o, &x) in out.iter_mut().zip(we.vector(t)) {
            *o = o.max(x);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceConfig {
    /// GRU state width `n_H`.
    pub hidden: usize,
    /// Only the most recent interactions are encoded.
    pub max_seq_len: usize,
    pub word2vec: Word2VecConfig,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            max_seq_len: 50,
            word2vec: Word2VecConfig::default(),
        }
    }
}

/// Keeps the last `max_len` entries.
pub fn truncate_recent(seq: &[usize], max_len: usize) -> &[usize] {
    &seq[seq.len().saturating_sub(max_len)..]
}

/// GRU user encoder over frozen text-derived item vectors. When the word
/// width differs from the GRU width, items are scored through a learned
/// linear map.
#[derive(Clone, Debug)]
pub struct SourceModel {
    params: ParamSet,
    gru: Gru,
    item_map: Option<ParamId>,
    item_vectors: Mat,
}

impl SourceModel {
    pub fn new<R: Rng + ?Sized>(hidden: usize, item_vectors: Mat, rng: &mut R) -> Result<Self> {
        if hidden == 0 || item_vectors.cols() == 0 {
            return Err(Error::Config("source encoder needs positive widths".into()));
        }
        let mut params = ParamSet::new();
        let gru = Gru::new(&mut params, "gru", item_vectors.cols(), hidden, rng);
        let item_map = (item_vectors.cols() != hidden)
            .then(|| params.insert("item_map", Mat::glorot(hidden, item_vectors.cols(), rng)));
        Ok(Self {
            params,
            gru,
            item_map,
            item_vectors,
        })
    }

    pub fn from_params(params: ParamSet, item_vectors: Mat) -> Result<Self> {
        let gru = Gru::from_params(&params, "gru")?;
        if gru.input_dim() != item_vectors.cols() {
            return Err(Error::Integrity("GRU input width does not match the item vectors".into()));
        }
        let item_map = params.id("item_map");
        if item_map.is_none() && gru.input_dim() != gru.hidden() {
            return Err(Error::Integrity("missing tensor item_map".into()));
        }
        Ok(Self {
            params,
            gru,
            item_map,
            item_vectors,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn gru(&self) -> &Gru {
        &self.gru
    }

    pub fn hidden(&self) -> usize {
        self.gru.hidden()
    }

    pub fn item_vectors(&self) -> &Mat {
        &self.item_vectors
    }

    fn item_table(&self, tape: &mut Tape, raw: Var) -> Var {
        match self.item_map {
            Some(id) => {
                let m = tape.param(&self.params, id);
                tape.matmul_bt(raw, m)
            }
            None => raw,
        }
    }

    /// Item embeddings `v^s` used for scoring.
    pub fn item_embeddings(&self) -> Mat {
        let mut tape = Tape::new();
        let raw = tape.constant(self.item_vectors.clone());
        let v = self.item_table(&mut tape, raw);
        tape.value(v).clone()
    }

    /// Summed clamped cross-entropy of `(batch user, item, label)` triples;
    /// user `b` is encoded from `seqs[b]`.
    pub fn batch_loss(&self, tape: &mut Tape, seqs: &[&[usize]], triples: &[(usize, usize, f64)]) -> Result<Var> {
        if triples.is_empty() {
            return Err(Error::Contract("loss over an empty batch".into()));
        }
        let n_items = self.item_vectors.rows();
        if let Some(&(b, i, _)) = triples.iter().find(|&&(b, i, _)| b >= seqs.len() || i >= n_items) {
            return Err(Error::Bounds(format!("triple (user {b}, item {i}) out of range")));
        }
        let raw = tape.constant(self.item_vectors.clone());
        let run = self.gru.run(tape, &self.params, raw, seqs)?;
        let items = self.item_table(tape, raw);
        let users: Vec<usize> = triples.iter().map(|t| t.0).collect();
        let its: Vec<usize> = triples.iter().map(|t| t.1).collect();
        let u = tape.gather_rows(run.last, &users);
        let v = tape.gather_rows(items, &its);
        let logits = tape.row_dot(u, v);
        let labels: Vec<f64> = triples.iter().map(|t| t.2).collect();
        Ok(tape.bce_sum(logits, &labels, PROB_EPS))
    }

    /// Final GRU state for each sequence.
    pub fn encode_users(&self, seqs: &[&[usize]]) -> Result<Mat> {
        const CHUNK: usize = 256;
        let mut out = Mat::zeros(seqs.len(), self.hidden());
        for (c, chunk) in seqs.chunks(CHUNK).enumerate() {
            let mut tape = Tape::new();
            let raw = tape.constant(self.item_vectors.clone());
            let run = self.gru.run(&mut tape, &self.params, raw, chunk)?;
            let v = tape.value(run.last);
            for r in 0..chunk.len() {
                out.row_mut(c * CHUNK + r).copy_from_slice(v.row(r));
            }
        }
        Ok(out)
    }
}

/// Summed clamped cross-entropy over source-domain `(u^s, v^s, y)`.
pub fn source_loss(batch: &[(&[f64], &[f64], f64)]) -> Result<f64> {
    crate::tahin::target_loss(batch)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::gradcheck;
    use crate::rng::Rng;
    use crate::tensor::sigmoid;

    fn toy_embeddings() -> WordEmbeddings {
        let tokens = ["<unk>", "a", "b", "c"].map(String::from).to_vec();
        let table = Mat::from_rows(&[vec![0.0, 0.0], vec![1.0, -2.0], vec![0.0, 3.0], vec![-1.0, -1.0]]);
        WordEmbeddings::new(tokens, table).unwrap()
    }

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn tokenizer_lowercases_and_splits() {
        assert_eq!(tokenize("Sun-Hat, SPF50!  beach"), toks(&["sun", "hat", "spf50", "beach"]));
        assert!(tokenize(" ,;").is_empty());
    }

    #[test]
    fn max_pooling_examples() {
        let we = toy_embeddings();
        assert_eq!(embed_item_text(&we, &toks(&["a"])), vec![1.0, -2.0]);
        assert_eq!(embed_item_text(&we, &toks(&["a", "b"])), vec![1.0, 3.0]);
        assert_eq!(embed_item_text(&we, &toks(&["b", "a"])), vec![1.0, 3.0]);
        assert_eq!(embed_item_text(&we, &toks(&["zzz"])), vec![0.0, 0.0]);
        assert_eq!(embed_item_text(&we, &[]), vec![0.0, 0.0]);
    }

    #[test]
    fn max_pooling_matches_loop_oracle() {
        let mut rng = Rng::seed_from_u64(3);
        let words: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
        let mut tokens = vec![UNK.to_string()];
        tokens.extend(words.iter().cloned());
        let table = Mat::uniform(21, 6, 1.0, &mut rng);
        let we = WordEmbeddings::new(tokens, table.clone()).unwrap();
        use rand::Rng as _;
        let desc: Vec<String> = (0..10).map(|_| words[rng.gen_range(0..20)].clone()).collect();
        let got = embed_item_text(&we, &desc);
        for j in 0..6 {
            let mut m = f64::NEG_INFINITY;
            for w in &desc {
                let row = 1 + w[1..].parse::<usize>().unwrap();
                if table.get(row, j) > m {
                    m = table.get(row, j);
                }
            }
            assert_eq!(got[j], m);
        }
    }

    #[test]
    fn source_loss_examples() {
        let z = [0.0];
        assert!((source_loss(&[(&z, &z, 1.0)]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((source_loss(&[(&z, &z, 1.0), (&z, &z, 1.0)]).unwrap() - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!(source_loss(&[]).is_err());
    }

    #[test]
    fn batch_loss_matches_scalar_oracle_with_item_map() {
        let mut rng = Rng::seed_from_u64(8);
        let vectors = Mat::uniform(5, 3, 1.0, &mut rng);
        let model = SourceModel::new(4, vectors, &mut rng).unwrap();
        let seqs: Vec<Vec<usize>> = vec![vec![0, 1], vec![2, 3, 4]];
        let refs: Vec<&[usize]> = seqs.iter().map(|s| s.as_slice()).collect();
        let triples = [(0, 1, 1.0), (0, 3, 0.0), (1, 4, 1.0), (1, 0, 0.0)];
        let mut tape = Tape::new();
        let l = model.batch_loss(&mut tape, &refs, &triples).unwrap();

        let users = model.encode_users(&refs).unwrap();
        let items = model.item_embeddings();
        assert_eq!(items.shape(), (5, 4));
        let mut expect = 0.0;
        for &(b, i, y) in &triples {
            let p = sigmoid(crate::tensor::dot(users.row(b), items.row(i)));
            expect -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
        assert!((tape.value(l).item() - expect).abs() < 1e-12);

        let report = gradcheck::check(model.params(), 1e-5, 30, |p, tape| {
            let mut m = model.clone();
            *m.params_mut() = p.clone();
            m.batch_loss(tape, &refs, &triples)
        })
        .unwrap();
        assert_eq!(report.tensors.len(), 10);
        assert!(report.max_rel_err() < 1e-4, "{:?}", report.worst());
    }

    #[test]
    fn truncation_keeps_most_recent() {
        let s: Vec<usize> = (0..60).collect();
        assert_eq!(truncate_recent(&s, 50), &s[10..]);
        assert_eq!(truncate_recent(&s[..3], 50), &s[..3]);
    }
}
