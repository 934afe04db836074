//! Mapping from source-domain user vectors to the target embedding space
//! and cold-start ranking with the mapped vectors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamId, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{dot, sigmoid, Mat};

/// Added under the square root of every residual norm.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapperConfig {
    /// Hidden layer widths. `None` means one hidden layer of width `2 S`;
    /// an empty list gives a single linear layer.
    pub hidden: Option<Vec<usize>>,
    /// Sum squared residual norms instead of plain norms.
    pub squared: bool,
}

impl Default for MapperConfig {
    fn default() -> Self {
        Self {
            hidden: None,
            squared: false,
        }
    }
}

impl MapperConfig {
    pub fn hidden_dims(&self, out_dim: usize) -> Vec<usize> {
        self.hidden.clone().unwrap_or_else(|| vec![2 * out_dim])
    }
}

/// MLP with tanh hidden layers and a linear output layer.
#[derive(Clone, Debug)]
pub struct Mapper {
    params: ParamSet,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mapper {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], output: usize, rng: &mut R) -> Result<Self> {
        if input == 0 || output == 0 || hidden.contains(&0) {
            return Err(Error::Config("mapper layer widths must be positive".into()));
        }
        let mut params = ParamSet::new();
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                (
                    params.insert(format!("mapper.{l}.w"), Mat::glorot(w[1], w[0], rng)),
                    params.insert(format!("mapper.{l}.b"), Mat::zeros(1, w[1])),
                )
            })
            .collect();
        Ok(Self { params, layers })
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        let mut layers = Vec::new();
        while let (Some(w), Some(b)) = (
            params.id(&format!("mapper.{}.w", layers.len())),
            params.id(&format!("mapper.{}.b", layers.len())),
        ) {
            layers.push((w, b));
        }
        if layers.is_empty() || layers.len() * 2 != params.len() {
            return Err(Error::Integrity("mapper tensors are incomplete".into()));
        }
        Ok(Self { params, layers })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.params.get(self.layers[0].0).cols()
    }

    pub fn output_dim(&self) -> usize {
        self.params.get(self.layers[self.layers.len() - 1].0).rows()
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let mut h = x;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let w = tape.param(&self.params, w);
            let b = tape.param(&self.params, b);
            h = tape.linear(h, w, b);
            if l + 1 < self.layers.len() {
                h = tape.tanh(h);
            }
        }
        h
    }

    /// Maps the rows of `users` (`n x n_H`).
    pub fn map_rows(&self, users: &Mat) -> Result<Mat> {
        if users.cols() != self.input_dim() {
            return Err(Error::Contract(format!(
                "mapper expects width {}, got {}",
                self.input_dim(),
                users.cols()
            )));
        }
        if !self.params.all_finite() {
            return Err(Error::Numeric("non-finite mapper parameters".into()));
        }
        let mut tape = Tape::new();
        let x = tape.constant(users.clone());
        let y = self.forward(&mut tape, x);
        Ok(tape.value(y).clone())
    }

    pub fn map_user(&self, u_s: &[f64]) -> Result<Vec<f64>> {
        Ok(self.map_rows(&Mat::row_vector(u_s))?.row(0).to_vec())
    }

    /// `L_cross` of mapped `sources` against `targets` on `tape`.
    pub fn loss(&self, tape: &mut Tape, sources: &Mat, targets: &Mat, squared: bool) -> Result<Var> {
        if sources.rows() == 0 {
            return Err(Error::Contract("mapping loss over no users".into()));
        }
        if sources.rows() != targets.rows() || targets.cols() != self.output_dim() {
            return Err(Error::Contract("source and target rows must pair up".into()));
        }
        let x = tape.constant(sources.clone());
        let y = self.forward(tape, x);
        let t = tape.constant(targets.clone());
        let r = tape.sub(y, t);
        Ok(if squared {
            tape.sum_squares(r)
        } else {
            let n = tape.row_norm_eps(r, NORM_EPS);
            tape.sum_all(n)
        })
    }
}

/// `sum ||f(u^s) - u^t||` over `(u^s, u^t)` pairs, each norm computed as
/// `sqrt(sum r^2 + 1e-12)`.
pub fn mapping_loss(mapper: &Mapper, pairs: &[(&[f64], &[f64])], squared: bool) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Contract("mapping loss over no users".into()));
    }
    let mut total = 0.0;
    for (s, t) in pairs {
        let y = mapper.map_user(s)?;
        if y.len() != t.len() {
            return Err(Error::Contract("target width mismatch".into()));
        }
        let sq: f64 = y.iter().zip(*t).map(|(a, b)| (a - b) * (a - b)).sum();
        total += if squared { sq } else { (sq + NORM_EPS).sqrt() };
    }
    Ok(total)
}

/// Sorts `(item, score)` by descending score, ties by ascending item id.
pub fn rank_scores(scores: &[f64]) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// Top-`k` items for a cold user with source vector `u_s`, scored by
/// `sigmoid(f(u^s) . v^t_i)` against every row of `items`.
pub fn recommend_cold(mapper: &Mapper, u_s: &[f64], items: &Mat, k: usize) -> Result<Vec<(usize, f64)>> {
    let u = mapper.map_user(u_s)?;
    if items.cols() != u.len() {
        return Err(Error::Contract("item table width differs from the mapped user width".into()));
    }
    let scores: Vec<f64> = (0..items.rows()).map(|i| sigmoid(dot(&u, items.row(i)))).collect();
    let mut ranked = rank_scores(&scores);
    ranked.truncate(k);
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::gradcheck;
    use crate::rng::Rng;

    fn identity_mapper(n: usize) -> Mapper {
        let mut m = Mapper::new(n, &[], n, &mut Rng::seed_from_u64(0)).unwrap();
        let w = m.params().id("mapper.0.w").unwrap();
        *m.params_mut().get_mut(w) = Mat::identity(n);
        m
    }

    #[test]
    fn identity_and_zero_mappers() {
        let m = identity_mapper(3);
        assert_eq!(m.map_user(&[0.5, -1.0, 2.0]).unwrap(), vec![0.5, -1.0, 2.0]);

        let mut z = Mapper::new(3, &[6], 4, &mut Rng::seed_from_u64(1)).unwrap();
        for id in z.params().ids().collect::<Vec<_>>() {
            z.params_mut().get_mut(id).data_mut().fill(0.0);
        }
        assert_eq!(z.map_user(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0; 4]);
        assert!(matches!(z.map_user(&[1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn two_layer_forward_matches_formula() {
        let m = Mapper::new(3, &[5], 2, &mut Rng::seed_from_u64(2)).unwrap();
        let x = [0.3, -0.8, 1.2];
        let p = |n: &str| m.params().by_name(n).unwrap();
        let (w0, b0, w1, b1) = (p("mapper.0.w"), p("mapper.0.b"), p("mapper.1.w"), p("mapper.1.b"));
        let h: Vec<f64> = (0..5).map(|r| (dot(w0.row(r), &x) + b0.get(0, r)).tanh()).collect();
        let y: Vec<f64> = (0..2).map(|r| dot(w1.row(r), &h) + b1.get(0, r)).collect();
        let got = m.map_user(&x).unwrap();
        for (a, b) in got.iter().zip(&y) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn loss_examples() {
        let m = identity_mapper(3);
        let a = [1.0, 2.0, 3.0];
        assert!(mapping_loss(&m, &[(&a, &a)], false).unwrap() < 1e-5);
        let zero = [0.0, 0.0, 0.0];
        let res = [3.0, 4.0, 0.0];
        assert!((mapping_loss(&m, &[(&res, &zero)], false).unwrap() - 5.0).abs() < 1e-12);
        assert!((mapping_loss(&m, &[(&res, &zero)], true).unwrap() - 25.0).abs() < 1e-12);
        assert!(matches!(mapping_loss(&m, &[], false), Err(Error::Contract(_))));
    }

    #[test]
    fn tape_loss_matches_scalar_loss() {
        let m = Mapper::new(4, &[8], 3, &mut Rng::seed_from_u64(3)).unwrap();
        let mut rng = Rng::seed_from_u64(4);
        let s = Mat::uniform(6, 4, 1.0, &mut rng);
        let t = Mat::uniform(6, 3, 1.0, &mut rng);
        for squared in [false, true] {
            let pairs: Vec<(&[f64], &[f64])> = (0..6).map(|r| (s.row(r), t.row(r))).collect();
            let expect = mapping_loss(&m, &pairs, squared).unwrap();
            let mut tape = Tape::new();
            let l = m.loss(&mut tape, &s, &t, squared).unwrap();
            assert!((tape.value(l).item() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = Mapper::new(4, &[8], 3, &mut Rng::seed_from_u64(5)).unwrap();
        let mut rng = Rng::seed_from_u64(6);
        let s = Mat::uniform(5, 4, 1.0, &mut rng);
        let t = Mat::uniform(5, 3, 1.0, &mut rng);
        for squared in [false, true] {
            let report = gradcheck::check(m.params(), 1e-5, 40, |p, tape| {
                let mut mm = m.clone();
                *mm.params_mut() = p.clone();
                mm.loss(tape, &s, &t, squared)
            })
            .unwrap();
            assert!(report.max_rel_err() < 1e-4, "{:?}", report.worst());
        }
    }

    #[test]
    fn ranking_ties_and_full_permutation() {
        let ranked = rank_scores(&[0.2, 0.7, 0.7, 0.1]);
        assert_eq!(ranked.iter().map(|r| r.0).collect::<Vec<_>>(), vec![1, 2, 0, 3]);

        let m = identity_mapper(2);
        let items = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![-1.0, 0.0]]);
        let recs = recommend_cold(&m, &[2.0, 1.0], &items, 4).unwrap();
        assert_eq!(recs.iter().map(|r| r.0).collect::<Vec<_>>(), vec![0, 2, 1, 3]);
        assert_eq!(recommend_cold(&m, &[2.0, 1.0], &items, 2).unwrap().len(), 2);
    }

    #[test]
    fn ranking_is_invariant_under_increasing_transforms() {
        let mut rng = Rng::seed_from_u64(7);
        use rand::Rng as _;
        let scores: Vec<f64> = (0..30).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let a: Vec<usize> = rank_scores(&scores).into_iter().map(|r| r.0).collect();
        let t: Vec<f64> = scores.iter().map(|&s| sigmoid(s)).collect();
        let b: Vec<usize> = rank_scores(&t).into_iter().map(|r| r.0).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn restores_from_params() {
        let m = Mapper::new(4, &[8, 6], 3, &mut Rng::seed_from_u64(8)).unwrap();
        let r = Mapper::from_params(m.params().clone()).unwrap();
        assert_eq!(r.map_user(&[0.1, 0.2, 0.3, 0.4]).unwrap(), m.map_user(&[0.1, 0.2, 0.3, 0.4]).unwrap());
        assert!(Mapper::from_params(ParamSet::new()).is_err());
    }
}
