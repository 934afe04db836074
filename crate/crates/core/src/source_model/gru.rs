//! Gated recurrent unit over item-vector sequences.
//!
//! ```text
//! x_n = sigmoid(W_x i_n + U_x h_{n-1} + b_x)
//! r_n = sigmoid(W_r i_n + U_r h_{n-1} + b_r)
//! h~_n = tanh(W_h i_n + r_n * (U_h h_{n-1}) + b_h)
//! h_n = (1 - x_n) * h_{n-1} + x_n * h~_n
//! ```
//!
//! with `h_0 = 0`.

use rand::Rng;

use crate::autograd::{ParamId, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Gru {
    pub wx: ParamId,
    pub ux: ParamId,
    pub bx: ParamId,
    pub wr: ParamId,
    pub ur: ParamId,
    pub br: ParamId,
    pub wh: ParamId,
    pub uh: ParamId,
    pub bh: ParamId,
    input: usize,
    hidden: usize,
}

/// States of one batched run. Rows of every step are ordered by
/// decreasing sequence length (`order[k]` is the batch index of row `k`);
/// step `t` holds the sequences longer than `t`.
pub struct GruRun {
    pub order: Vec<usize>,
    pub steps: Vec<Var>,
    /// Final state of every sequence, in batch order.
    pub last: Var,
}

impl Gru {
    /// Registers the nine tensors as `<prefix>.w_x` etc.
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut w = |name: &str, rows: usize, cols: usize| {
            params.insert(format!("{prefix}.{name}"), Mat::glorot(rows, cols, rng))
        };
        let (wx, ux) = (w("w_x", hidden, input), w("u_x", hidden, hidden));
        let (wr, ur) = (w("w_r", hidden, input), w("u_r", hidden, hidden));
        let (wh, uh) = (w("w_h", hidden, input), w("u_h", hidden, hidden));
        let mut b = |name: &str| params.insert(format!("{prefix}.{name}"), Mat::zeros(1, hidden));
        Self {
            wx,
            ux,
            bx: b("b_x"),
            wr,
            ur,
            br: b("b_r"),
            wh,
            uh,
            bh: b("b_h"),
            input,
            hidden,
        }
    }

    /// Rebinds to tensors already in `params` under `prefix`.
    pub fn from_params(params: &ParamSet, prefix: &str) -> Result<Self> {
        let id = |name: &str| {
            params
                .id(&format!("{prefix}.{name}"))
                .ok_or_else(|| Error::Integrity(format!("missing tensor {prefix}.{name}")))
        };
        let wx = id("w_x")?;
        let (hidden, input) = params.get(wx).shape();
        Ok(Self {
            wx,
            ux: id("u_x")?,
            bx: id("b_x")?,
            wr: id("w_r")?,
            ur: id("u_r")?,
            br: id("b_r")?,
            wh: id("w_h")?,
            uh: id("u_h")?,
            bh: id("b_h")?,
            input,
            hidden,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Runs every sequence of item ids over the rows of `table`
    /// (`n_items x input`). Empty sequences are a contract error.
    pub fn run(&self, tape: &mut Tape, params: &ParamSet, table: Var, seqs: &[&[usize]]) -> Result<GruRun> {
        if seqs.iter().any(|s| s.is_empty()) {
            return Err(Error::Contract("GRU over an empty sequence".into()));
        }
        if tape.shape(table).1 != self.input {
            return Err(Error::Contract(format!(
                "GRU expects inputs of width {}, got {}",
                self.input,
                tape.shape(table).1
            )));
        }
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        order.sort_by_key(|&b| std::cmp::Reverse(seqs[b].len()));
        let max_len = order.first().map_or(0, |&b| seqs[b].len());

        let p = |tape: &mut Tape, id| tape.param(params, id);
        let (wx, ux, bx) = (p(tape, self.wx), p(tape, self.ux), p(tape, self.bx));
        let (wr, ur, br) = (p(tape, self.wr), p(tape, self.ur), p(tape, self.br));
        let (wh, uh, bh) = (p(tape, self.wh), p(tape, self.uh), p(tape, self.bh));

        let mut h = tape.constant(Mat::zeros(seqs.len(), self.hidden));
        let mut steps = Vec::with_capacity(max_len);
        for t in 0..max_len {
            let active = order.iter().take_while(|&&b| seqs[b].len() > t).count();
            let items: Vec<usize> = order[..active].iter().map(|&b| seqs[b][t]).collect();
            let x_in = tape.gather_rows(table, &items);
            let all = h;
            let rows: Vec<usize> = (0..active).collect();
            let hp = if active == seqs.len() { all } else { tape.gather_rows(all, &rows) };

            let a = tape.linear(x_in, wx, bx);
            let b = tape.matmul_bt(hp, ux);
            let z = tape.add(a, b);
            let x = tape.sigmoid(z);

            let a = tape.linear(x_in, wr, br);
            let b = tape.matmul_bt(hp, ur);
            let z = tape.add(a, b);
            let r = tape.sigmoid(z);

            let a = tape.linear(x_in, wh, bh);
            let uhh = tape.matmul_bt(hp, uh);
            let gated = tape.mul(r, uhh);
            let z = tape.add(a, gated);
            let cand = tape.tanh(z);

            // h = h_prev + x * (cand - h_prev)
            let diff = tape.sub(cand, hp);
            let step = tape.mul(x, diff);
            let hn = tape.add(hp, step);
            steps.push(hn);
            h = if active == seqs.len() {
                hn
            } else {
                let rest: Vec<usize> = (active..seqs.len()).collect();
                let tail = tape.gather_rows(all, &rest);
                tape.concat_rows(&[hn, tail])
            };
        }
        let mut inverse = vec![0; seqs.len()];
        for (k, &b) in order.iter().enumerate() {
            inverse[b] = k;
        }
        let last = tape.gather_rows(h, &inverse);
        Ok(GruRun { order, steps, last })
    }
}

/// Final GRU state for one sequence of input vectors.
pub fn gru_encode(params: &ParamSet, gru: &Gru, sequence: &[Vec<f64>]) -> Result<Vec<f64>> {
    if sequence.is_empty() {
        return Err(Error::Contract("GRU over an empty sequence".into()));
    }
    let mut tape = Tape::new();
    let table = tape.constant(Mat::from_rows(sequence));
    let ids: Vec<usize> = (0..sequence.len()).collect();
    let run = gru.run(&mut tape, params, table, &[&ids])?;
    Ok(tape.value(run.last).row(0).to_vec())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::gradcheck;
    use crate::rng::Rng;
    use crate::tensor::{l2_norm, sigmoid};

    fn setup(seed: u64, input: usize, hidden: usize) -> (ParamSet, Gru) {
        let mut rng = Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let gru = Gru::new(&mut params, "gru", input, hidden, &mut rng);
        for id in [gru.bx, gru.br, gru.bh] {
            *params.get_mut(id) = Mat::uniform(1, hidden, 0.5, &mut rng);
        }
        (params, gru)
    }

    /// The four equations, written out with plain loops.
    fn manual_step(p: &ParamSet, g: &Gru, i: &[f64], h: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = g.hidden();
        let mv = |id: ParamId, v: &[f64], r: usize| -> f64 { (0..v.len()).map(|c| p.get(id).get(r, c) * v[c]).sum() };
        let b = |id: ParamId, r: usize| p.get(id).get(0, r);
        let x: Vec<f64> = (0..n).map(|r| sigmoid(mv(g.wx, i, r) + mv(g.ux, h, r) + b(g.bx, r))).collect();
        let rr: Vec<f64> = (0..n).map(|r| sigmoid(mv(g.wr, i, r) + mv(g.ur, h, r) + b(g.br, r))).collect();
        let cand: Vec<f64> = (0..n)
            .map(|r| (mv(g.wh, i, r) + rr[r] * mv(g.uh, h, r) + b(g.bh, r)).tanh())
            .collect();
        let hn: Vec<f64> = (0..n).map(|r| (1.0 - x[r]) * h[r] + x[r] * cand[r]).collect();
        (x, rr, cand, hn)
    }

    fn random_seq(rng: &mut Rng, len: usize, dim: usize) -> Vec<Vec<f64>> {
        use rand::Rng as _;
        (0..len).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn zero_parameters_keep_state_at_zero() {
        let (mut p, g) = setup(0, 3, 4);
        for id in p.ids().collect::<Vec<_>>() {
            p.get_mut(id).data_mut().fill(0.0);
        }
        let seq = random_seq(&mut Rng::seed_from_u64(1), 6, 3);
        assert_eq!(gru_encode(&p, &g, &seq).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn matches_hand_evaluated_equations() {
        let (p, g) = setup(2, 3, 4);
        let mut rng = Rng::seed_from_u64(3);
        for len in [1, 2, 7] {
            let seq = random_seq(&mut rng, len, 3);
            let mut h = vec![0.0; 4];
            for i in &seq {
                let (x, r, cand, hn) = manual_step(&p, &g, i, &h);
                assert!(x.iter().chain(&r).all(|&v| v > 0.0 && v < 1.0));
                assert!(cand.iter().all(|&v| v > -1.0 && v < 1.0));
                h = hn;
            }
            let got = gru_encode(&p, &g, &seq).unwrap();
            for (a, b) in got.iter().zip(&h) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn ragged_batch_equals_individual_runs() {
        let (p, g) = setup(4, 3, 5);
        let mut rng = Rng::seed_from_u64(5);
        let table = Mat::uniform(10, 3, 1.0, &mut rng);
        let seqs: Vec<Vec<usize>> = vec![vec![1, 2], vec![3, 4, 5, 6], vec![7], vec![0, 9, 8]];
        let refs: Vec<&[usize]> = seqs.iter().map(|s| s.as_slice()).collect();
        let mut tape = Tape::new();
        let tv = tape.constant(table.clone());
        let run = g.run(&mut tape, &p, tv, &refs).unwrap();
        assert_eq!(run.order, vec![1, 3, 0, 2]);
        assert_eq!(run.steps.len(), 4);
        assert_eq!(tape.shape(run.steps[3]), (1, 5));
        for (b, s) in seqs.iter().enumerate() {
            let rows: Vec<Vec<f64>> = s.iter().map(|&i| table.row(i).to_vec()).collect();
            let single = gru_encode(&p, &g, &rows).unwrap();
            assert_eq!(tape.value(run.last).row(b), single.as_slice());
        }
    }

    #[test]
    fn order_matters() {
        let (p, g) = setup(6, 3, 4);
        let seq = random_seq(&mut Rng::seed_from_u64(7), 5, 3);
        let mut rev = seq.clone();
        rev.reverse();
        let a = gru_encode(&p, &g, &seq).unwrap();
        let b = gru_encode(&p, &g, &rev).unwrap();
        let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        assert!(l2_norm(&diff) > 1e-3);
    }

    #[test]
    fn empty_sequence_is_a_contract_error() {
        let (p, g) = setup(0, 3, 4);
        assert!(matches!(gru_encode(&p, &g, &[]), Err(Error::Contract(_))));
    }

    #[test]
    fn gradients_match_finite_differences_across_seeds() {
        for seed in 0..20 {
            let (p, g) = setup(seed, 3, 4);
            let mut rng = Rng::seed_from_u64(100 + seed);
            let table = Mat::uniform(6, 3, 1.0, &mut rng);
            let readout = Mat::uniform(1, 4, 1.0, &mut rng);
            let seqs: Vec<Vec<usize>> = vec![vec![0, 1, 2], vec![3, 4], vec![5, 0, 1, 2]];
            let report = gradcheck::check(&p, 1e-5, 50, |p, tape| {
                let refs: Vec<&[usize]> = seqs.iter().map(|s| s.as_slice()).collect();
                let tv = tape.constant(table.clone());
                let run = g.run(tape, p, tv, &refs)?;
                let w = tape.constant(readout.clone());
                let s = tape.matmul_bt(run.last, w);
                let s = tape.tanh(s);
                Ok(tape.sum_all(s))
            })
            .unwrap();
            assert_eq!(report.tensors.len(), 9);
            assert!(report.max_rel_err() < 1e-4, "seed {seed}: {:?}", report.worst());
        }
    }
}
