//! Skip-gram word vectors trained with negative sampling.

use std::collections::{BTreeMap, HashMap};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{sigmoid, Mat};

/// Token standing in for words outside the vocabulary.
pub const UNK: &str = "<unk>";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Word2VecConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Tokens seen fewer times are trained (and looked up) as [`UNK`].
    pub min_count: usize,
}

impl Default for Word2VecConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            window: 5,
            negatives: 5,
            epochs: 200,
            lr: 0.025,
            min_count: 2,
        }
    }
}

/// Vocabulary and one vector per token; row 0 is [`UNK`].
#[derive(Clone, Debug, PartialEq)]
pub struct WordEmbeddings {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    table: Mat,
}

impl WordEmbeddings {
    pub fn new(tokens: Vec<String>, table: Mat) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNK) {
            return Err(Error::Contract(format!("first token must be {UNK}")));
        }
        if tokens.len() != table.rows() {
            return Err(Error::Contract("one table row per token required".into()));
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Self {
            tokens,
            index,
            table,
        })
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    /// Vocabulary size including [`UNK`].
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn table(&self) -> &Mat {
        &self.table
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn vector(&self, token: &str) -> &[f64] {
        self.table.row(self.id(token))
    }
}

/// Trains skip-gram vectors on tokenised sentences. Uses a shrinking
/// window, unigram^0.75 negatives and a linearly decaying learning rate;
/// the result depends only on the corpus, the config and `seed`.
pub fn train_word_embeddings(corpus: &[Vec<String>], cfg: &Word2VecConfig, seed: u64) -> Result<WordEmbeddings> {
    if corpus.is_empty() {
        return Err(Error::Contract("empty corpus".into()));
    }
    if cfg.dim == 0 || cfg.window == 0 || cfg.lr <= 0.0 {
        return Err(Error::Config("word vectors need positive dim, window and lr".into()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in corpus {
        for t in s {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut tokens = vec![UNK.to_string()];
    tokens.extend(
        counts
            .iter()
            .filter(|(t, &c)| c >= cfg.min_count && **t != UNK)
            .map(|(t, _)| t.to_string()),
    );
    if tokens.len() < 3 {
        return Err(Error::Contract(format!(
            "vocabulary has {} token(s); at least 2 are required",
            tokens.len() - 1
        )));
    }
    let index: HashMap<&str, usize> = tokens.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let ids: Vec<Vec<usize>> = corpus
        .iter()
        .map(|s| s.iter().map(|t| index.get(t.as_str()).copied().unwrap_or(0)).collect())
        .collect();

    let v = tokens.len();
    let d = cfg.dim;
    let mut freq = vec![0.0f64; v];
    for s in &ids {
        for &w in s {
            freq[w] += 1.0;
        }
    }
    let weights: Vec<f64> = freq.iter().map(|f| f.powf(0.75)).collect();
    let noise = WeightedIndex::new(&weights).map_err(|e| Error::Contract(format!("noise distribution: {e}")))?;

    let mut rng = rng::substream(seed, "word2vec");
    let mut input = Mat::uniform(v, d, 0.5 / d as f64, &mut rng);
    let mut output = Mat::zeros(v, d);
    let total = (cfg.epochs * ids.iter().map(Vec::len).sum::<usize>()).max(1) as f64;
    let mut seen = 0usize;
    let mut grad = vec![0.0; d];
    for _ in 0..cfg.epochs {
        for s in &ids {
            for (i, &center) in s.iter().enumerate() {
                let lr = cfg.lr * (1.0 - seen as f64 / total).max(1e-4);
                seen += 1;
                let reach = cfg.window - rng.gen_range(0..cfg.window);
                let lo = i.saturating_sub(reach);
                let hi = (i + reach + 1).min(s.len());
                for (j, &ctx) in s.iter().enumerate().take(hi).skip(lo) {
                    if j == i {
                        continue;
                    }
                    grad.fill(0.0);
                    for k in 0..=cfg.negatives {
                        let (target, label) = if k == 0 {
                            (center, 1.0)
                        } else {
                            let t = noise.sample(&mut rng);
                            if t == center {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let vin = input.row(ctx);
                        let vout = output.row(target);
                        let z: f64 = vin.iter().zip(vout).map(|(a, b)| a * b).sum();
                        let g = (label - sigmoid(z)) * lr;
                        for q in 0..d {
                            grad[q] += g * vout[q];
                        }
                        let vin = input.row(ctx).to_vec();
                        for (o, x) in output.row_mut(target).iter_mut().zip(&vin) {
                            *o += g * x;
                        }
                    }
                    for (x, g) in input.row_mut(ctx).iter_mut().zip(&grad) {
                        *x += g;
                    }
                }
            }
        }
    }
    WordEmbeddings::new(tokens, input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::cosine;

    fn quick() -> Word2VecConfig {
        Word2VecConfig {
            epochs: 5,
            ..Word2VecConfig::default()
        }
    }

    fn sentence(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    /// Two topics with disjoint filler pools. "alpha" and "beta" always
    /// appear together in topic-one sentences; "gamma" only occurs in topic
    /// one and "delta" only in topic two, so they never share a sentence.
    fn corpus() -> Vec<Vec<String>> {
        let mut rng = rng::substream(5, "corpus");
        let pools = [["a", "b", "c", "d"], ["e", "f", "g", "h"]];
        (0..1000)
            .map(|i| {
                let pool = pools[i % 2];
                let mut s: Vec<&str> = (0..4).map(|_| pool[rng.gen_range(0..pool.len())]).collect();
                match i % 4 {
                    0 => {
                        s.insert(2, "alpha");
                        s.insert(3, "beta");
                    }
                    2 => s.insert(1, "gamma"),
                    _ => s.insert(3, "delta"),
                }
                sentence(&s)
            })
            .collect()
    }

    #[test]
    fn co_occurring_tokens_end_closer() {
        let we = train_word_embeddings(&corpus(), &quick(), 1).unwrap();
        let together = cosine(we.vector("alpha"), we.vector("beta"));
        let apart = cosine(we.vector("gamma"), we.vector("delta"));
        assert!(together > apart, "{together} vs {apart}");
    }

    #[test]
    fn same_seed_same_table_and_default_shape() {
        let c = corpus();
        let a = train_word_embeddings(&c, &quick(), 9).unwrap();
        let b = train_word_embeddings(&c, &quick(), 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.table().shape(), (a.len(), 32));
        let c2 = train_word_embeddings(&c, &quick(), 10).unwrap();
        assert_ne!(a.table(), c2.table());
    }

    #[test]
    fn tiny_vocabulary_is_rejected_and_oov_maps_to_unk() {
        let err = train_word_embeddings(&[sentence(&["x", "x", "x"])], &quick(), 0);
        assert!(matches!(err, Err(Error::Contract(_))));
        assert!(matches!(train_word_embeddings(&[], &quick(), 0), Err(Error::Contract(_))));

        let we = train_word_embeddings(&corpus(), &quick(), 2).unwrap();
        assert_eq!(we.id("never-seen"), 0);
        assert_eq!(we.vector("never-seen"), we.vector(UNK));
    }
}
