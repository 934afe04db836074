//! A small reverse-mode differentiation tape over dense matrices.
//!
//! Every model in the crate builds its loss on a [`Tape`] and reads the
//! gradients of its [`ParamSet`] back with [`Tape::backward`]. The op set is
//! deliberately narrow: exactly what the attention encoder, the GRU, the
//! mapping MLP and the baselines need, including a few fused graph ops
//! (segment softmax, segment weighted sums, multi-head pair logits) so that
//! neighbour aggregation never materialises a `pairs x dim` matrix.

use std::collections::BTreeMap;

use crate::tensor::{sigmoid, Mat};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Named collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Mat>,
    index: BTreeMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Panics on a duplicate name.
    pub fn insert(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Mat> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Mat::is_finite)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }
}

/// Gradients for every tensor of a [`ParamSet`]; `None` where the loss
/// does not depend on the tensor.
#[derive(Clone, Debug)]
pub struct Grads(Vec<Option<Mat>>);

impl Grads {
    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.0.get(id.0).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Tanh,
    Sigmoid,
    Relu,
    LeakyRelu(f64),
    Log,
    Scale(f64),
    AddScalar(f64),
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    Unary(Unary, Var),
    Binary(Binary, Var, Var),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Column(Var, usize),
    SumAll(Var),
    MeanRows(Var),
    RowDot(Var, Var),
    HeadBlock { a: Var, left: bool },
    PairLogits {
        left: Var,
        right: Var,
        e_idx: Vec<usize>,
        w_idx: Vec<usize>,
        slope: f64,
    },
    SegmentSoftmax { x: Var, seg: Vec<usize> },
    SegmentWeightedSum {
        w: Var,
        v: Var,
        idx: Vec<usize>,
        seg: Vec<usize>,
    },
    BceSum { logits: Var, labels: Vec<f64>, eps: f64 },
    RowNormEps(Var),
    SoftmaxXent { logits: Var, targets: Vec<usize> },
    NegLogSigmoidSum(Var),
    SumSquares(Var),
}

struct Node {
    value: Mat,
    op: Op,
}

/// Records a computation for reverse-mode differentiation.
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Option<Var>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("cannot broadcast {a:?} with {b:?}")
        }
    };
    (dim(a.0, b.0), dim(a.1, b.1))
}

#[inline]
fn bidx(m: &Mat, r: usize, c: usize) -> f64 {
    let rr = if m.rows() == 1 { 0 } else { r };
    let cc = if m.cols() == 1 { 0 } else { c };
    m.get(rr, cc)
}

/// Sums `g` down to `shape` along broadcast dimensions.
fn reduce_to(g: &Mat, shape: (usize, usize)) -> Mat {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Mat::zeros(shape.0, shape.1);
    for r in 0..g.rows() {
        let rr = if shape.0 == 1 { 0 } else { r };
        for c in 0..g.cols() {
            let cc = if shape.1 == 1 { 0 } else { c };
            let v = out.get(rr, cc) + g.get(r, c);
            out.set(rr, cc, v);
        }
    }
    out
}

#[inline]
fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn n_segments(seg: &[usize]) -> usize {
    seg.iter().max().map_or(0, |m| m + 1)
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf)
    }

    /// Leaf for a trainable tensor. Repeated calls for the same id return
    /// the same node.
    pub fn param(&mut self, set: &ParamSet, id: ParamId) -> Var {
        if self.params.len() <= id.0 {
            self.params.resize(id.0 + 1, None);
        }
        if let Some(v) = self.params[id.0] {
            return v;
        }
        let v = self.push(set.get(id).clone(), Op::Param);
        self.params[id.0] = Some(v);
        v
    }

    fn unary(&mut self, kind: Unary, a: Var) -> Var {
        let f: Box<dyn Fn(f64) -> f64> = match kind {
            Unary::Tanh => Box::new(f64::tanh),
            Unary::Sigmoid => Box::new(sigmoid),
            Unary::Relu => Box::new(|x: f64| x.max(0.0)),
            Unary::LeakyRelu(s) => Box::new(move |x| leaky(x, s)),
            Unary::Log => Box::new(f64::ln),
            Unary::Scale(c) => Box::new(move |x| x * c),
            Unary::AddScalar(c) => Box::new(move |x| x + c),
        };
        let value = self.value(a).map(f);
        self.push(value, Op::Unary(kind, a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Unary::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(Unary::LeakyRelu(slope), a)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(Unary::Log, a)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(Unary::Scale(c), a)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(Unary::AddScalar(c), a)
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(va.shape(), vb.shape());
        let mut out = Mat::zeros(shape.0, shape.1);
        if va.shape() == vb.shape() {
            for ((o, x), y) in out.data_mut().iter_mut().zip(va.data()).zip(vb.data()) {
                *o = match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                };
            }
        } else {
            for r in 0..shape.0 {
                for c in 0..shape.1 {
                    let (x, y) = (bidx(va, r, c), bidx(vb, r, c));
                    out.set(
                        r,
                        c,
                        match kind {
                            Binary::Add => x + y,
                            Binary::Sub => x - y,
                            Binary::Mul => x * y,
                        },
                    );
                }
            }
        }
        self.push(out, Op::Binary(kind, a, b))
    }

    /// Elementwise sum with broadcasting of unit dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Mul, a, b)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `a * b^T`; the natural form for `x W^T` with `W` stored `out x in`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_bt(self.value(b));
        self.push(value, Op::MatMulBt(a, b))
    }

    /// `x W^T + b` for a row batch `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul_bt(x, w);
        self.add(xw, b)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let v = self.value(p);
                assert_eq!(v.rows(), rows, "concat_cols row mismatch");
                out.row_mut(r)[off..off + v.cols()].copy_from_slice(v.row(r));
                off += v.cols();
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "concat_rows col mismatch");
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let value = self.value(a).gather_rows(idx);
        self.push(value, Op::GatherRows(a, idx.to_vec()))
    }

    pub fn column(&mut self, a: Var, j: usize) -> Var {
        let v = self.value(a);
        let col: Vec<f64> = (0..v.rows()).map(|r| v.get(r, j)).collect();
        self.push(Mat::column(&col), Op::Column(a, j))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Mat::scalar(s), Op::SumAll(a))
    }

    /// Column-wise mean over rows: `n x m -> 1 x m`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let mut out = Mat::zeros(1, v.cols());
        for r in 0..v.rows() {
            for (o, x) in out.data_mut().iter_mut().zip(v.row(r)) {
                *o += x;
            }
        }
        let n = v.rows().max(1) as f64;
        let out = out.scale(1.0 / n);
        self.push(out, Op::MeanRows(a))
    }

    /// Row-wise dot product of two equally shaped matrices: `n x 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "row_dot shape mismatch");
        let out: Vec<f64> = (0..va.rows())
            .map(|r| crate::tensor::dot(va.row(r), vb.row(r)))
            .collect();
        self.push(Mat::column(&out), Op::RowDot(a, b))
    }

    /// Expands per-head attention vectors `a` (`H x 2d`) into the
    /// block-diagonal `Hd x H` matrix that scores either the left (`a[h,
    /// ..d]`) or right (`a[h, d..]`) half of every head.
    pub fn head_block(&mut self, a: Var, left: bool) -> Var {
        let va = self.value(a);
        let heads = va.rows();
        let d = va.cols() / 2;
        let mut out = Mat::zeros(heads * d, heads);
        let off = if left { 0 } else { d };
        for h in 0..heads {
            for j in 0..d {
                out.set(h * d + j, h, va.get(h, off + j));
            }
        }
        self.push(out, Op::HeadBlock { a, left })
    }

    /// Multi-head additive attention logits for pairs: row `p` is
    /// `mean_h LeakyReLU(left[e_idx[p], h] + right[w_idx[p], h])`.
    pub fn pair_logits(
        &mut self,
        left: Var,
        right: Var,
        e_idx: &[usize],
        w_idx: &[usize],
        slope: f64,
    ) -> Var {
        assert_eq!(e_idx.len(), w_idx.len());
        let (vl, vr) = (self.value(left), self.value(right));
        assert_eq!(vl.cols(), vr.cols(), "head count mismatch");
        let heads = vl.cols() as f64;
        let out: Vec<f64> = e_idx
            .iter()
            .zip(w_idx)
            .map(|(&e, &w)| {
                vl.row(e)
                    .iter()
                    .zip(vr.row(w))
                    .map(|(x, y)| leaky(x + y, slope))
                    .sum::<f64>()
                    / heads
            })
            .collect();
        self.push(
            Mat::column(&out),
            Op::PairLogits {
                left,
                right,
                e_idx: e_idx.to_vec(),
                w_idx: w_idx.to_vec(),
                slope,
            },
        )
    }

    /// Softmax of a column `x` within groups given by `seg` (one group id
    /// per row). Groups need not be contiguous.
    pub fn segment_softmax(&mut self, x: Var, seg: &[usize]) -> Var {
        let v = self.value(x);
        assert_eq!(v.cols(), 1);
        assert_eq!(v.rows(), seg.len());
        let n_seg = n_segments(seg);
        let mut max = vec![f64::NEG_INFINITY; n_seg];
        for (i, &s) in seg.iter().enumerate() {
            max[s] = max[s].max(v.get(i, 0));
        }
        let mut out: Vec<f64> = seg
            .iter()
            .enumerate()
            .map(|(i, &s)| (v.get(i, 0) - max[s]).exp())
            .collect();
        let mut total = vec![0.0; n_seg];
        for (o, &s) in out.iter().zip(seg) {
            total[s] += o;
        }
        for (o, &s) in out.iter_mut().zip(seg) {
            *o /= total[s];
        }
        self.push(
            Mat::column(&out),
            Op::SegmentSoftmax {
                x,
                seg: seg.to_vec(),
            },
        )
    }

    /// `out[s] = sum_{p : seg[p] = s} w[p] * v[idx[p]]`, with `n_seg`
    /// output rows (empty groups give zero rows).
    pub fn segment_weighted_sum(
        &mut self,
        w: Var,
        v: Var,
        idx: &[usize],
        seg: &[usize],
        n_seg: usize,
    ) -> Var {
        let (vw, vv) = (self.value(w), self.value(v));
        assert_eq!(vw.cols(), 1);
        assert_eq!(vw.rows(), idx.len());
        assert_eq!(idx.len(), seg.len());
        let mut out = Mat::zeros(n_seg, vv.cols());
        for p in 0..idx.len() {
            let wp = vw.get(p, 0);
            let src = vv.row(idx[p]);
            for (o, x) in out.row_mut(seg[p]).iter_mut().zip(src) {
                *o += wp * x;
            }
        }
        self.push(
            out,
            Op::SegmentWeightedSum {
                w,
                v,
                idx: idx.to_vec(),
                seg: seg.to_vec(),
            },
        )
    }

    /// Summed binary cross-entropy of `sigmoid(logits)` against `labels`,
    /// with the probability clamped to `[eps, 1 - eps]`.
    pub fn bce_sum(&mut self, logits: Var, labels: &[f64], eps: f64) -> Var {
        let v = self.value(logits);
        assert_eq!(v.shape(), (labels.len(), 1));
        let loss: f64 = v
            .data()
            .iter()
            .zip(labels)
            .map(|(&x, &y)| {
                let p = sigmoid(x).clamp(eps, 1.0 - eps);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        self.push(
            Mat::scalar(loss),
            Op::BceSum {
                logits,
                labels: labels.to_vec(),
                eps,
            },
        )
    }

    /// `sqrt(sum_j a[r, j]^2 + eps)` per row.
    pub fn row_norm_eps(&mut self, a: Var, eps: f64) -> Var {
        let v = self.value(a);
        let out: Vec<f64> = (0..v.rows())
            .map(|r| (v.row(r).iter().map(|x| x * x).sum::<f64>() + eps).sqrt())
            .collect();
        self.push(Mat::column(&out), Op::RowNormEps(a))
    }

    /// Summed softmax cross-entropy of each row of `logits` against the
    /// class index in `targets`.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[usize]) -> Var {
        let v = self.value(logits);
        assert_eq!(v.rows(), targets.len());
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = v.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            loss += lse - row[t];
        }
        self.push(
            Mat::scalar(loss),
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
            },
        )
    }

    /// `sum -ln sigmoid(x)` over all entries.
    pub fn neg_log_sigmoid_sum(&mut self, x: Var) -> Var {
        let loss: f64 = self.value(x).data().iter().map(|&z| softplus(-z)).sum();
        self.push(Mat::scalar(loss), Op::NegLogSigmoidSum(x))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().map(|x| x * x).sum();
        self.push(Mat::scalar(s), Op::SumSquares(a))
    }

    /// Back-propagates from the scalar `loss` and returns the gradients of
    /// every tensor in `set` that was registered on this tape.
    pub fn backward(&self, loss: Var, set: &ParamSet) -> Grads {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut out: Vec<Option<Mat>> = vec![None; set.len()];
        for (pid, var) in self.params.iter().enumerate() {
            if let Some(var) = var {
                if pid < out.len() {
                    out[pid] = grads[var.0].take();
                }
            }
        }
        Grads(out)
    }

    fn propagate(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        fn acc(grads: &mut [Option<Mat>], v: Var, delta: Mat) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        }
        let val = |v: Var| &self.nodes[v.0].value;

        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Unary(kind, a) => {
                let x = val(*a);
                let y = &node.value;
                let mut d = Mat::zeros(x.rows(), x.cols());
                for (((o, &xi), &yi), &gi) in d
                    .data_mut()
                    .iter_mut()
                    .zip(x.data())
                    .zip(y.data())
                    .zip(g.data())
                {
                    *o = gi
                        * match kind {
                            Unary::Tanh => 1.0 - yi * yi,
                            Unary::Sigmoid => yi * (1.0 - yi),
                            Unary::Relu => {
                                if xi > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::LeakyRelu(s) => {
                                if xi > 0.0 {
                                    1.0
                                } else {
                                    *s
                                }
                            }
                            Unary::Log => 1.0 / xi,
                            Unary::Scale(c) => *c,
                            Unary::AddScalar(_) => 1.0,
                        };
                }
                acc(grads, *a, d);
            }
            Op::Binary(kind, a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (da, db) = match kind {
                    Binary::Add => (g.clone(), g.clone()),
                    Binary::Sub => (g.clone(), g.scale(-1.0)),
                    Binary::Mul => {
                        let mut da = Mat::zeros(g.rows(), g.cols());
                        let mut db = Mat::zeros(g.rows(), g.cols());
                        for r in 0..g.rows() {
                            for c in 0..g.cols() {
                                let gv = g.get(r, c);
                                da.set(r, c, gv * bidx(vb, r, c));
                                db.set(r, c, gv * bidx(va, r, c));
                            }
                        }
                        (da, db)
                    }
                };
                acc(grads, *a, reduce_to(&da, va.shape()));
                acc(grads, *b, reduce_to(&db, vb.shape()));
            }
            Op::MatMul(a, b) => {
                // C = A B: dA = G B^T, dB = A^T G
                acc(grads, *a, g.matmul_bt(val(*b)));
                acc(grads, *b, val(*a).matmul_at(g));
            }
            Op::MatMulBt(a, b) => {
                // C = A B^T: dA = G B, dB = G^T A
                acc(grads, *a, g.matmul(val(*b)));
                acc(grads, *b, g.matmul_at(val(*a)));
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let cols = val(p).cols();
                    let mut d = Mat::zeros(g.rows(), cols);
                    for r in 0..g.rows() {
                        d.row_mut(r).copy_from_slice(&g.row(r)[off..off + cols]);
                    }
                    off += cols;
                    acc(grads, p, d);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (rows, cols) = val(p).shape();
                    let d = Mat::from_vec(
                        rows,
                        cols,
                        g.data()[off * cols..(off + rows) * cols].to_vec(),
                    );
                    off += rows;
                    acc(grads, p, d);
                }
            }
            Op::GatherRows(a, idx) => {
                let (rows, cols) = val(*a).shape();
                let mut d = Mat::zeros(rows, cols);
                for (k, &i) in idx.iter().enumerate() {
                    for (o, x) in d.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += x;
                    }
                }
                acc(grads, *a, d);
            }
            Op::Column(a, j) => {
                let (rows, cols) = val(*a).shape();
                let mut d = Mat::zeros(rows, cols);
                for r in 0..rows {
                    d.set(r, *j, g.get(r, 0));
                }
                acc(grads, *a, d);
            }
            Op::SumAll(a) => {
                let (rows, cols) = val(*a).shape();
                acc(grads, *a, Mat::filled(rows, cols, g.item()));
            }
            Op::MeanRows(a) => {
                let (rows, cols) = val(*a).shape();
                let mut d = Mat::zeros(rows, cols);
                let inv = 1.0 / rows.max(1) as f64;
                for r in 0..rows {
                    for (o, x) in d.row_mut(r).iter_mut().zip(g.row(0)) {
                        *o = x * inv;
                    }
                }
                acc(grads, *a, d);
            }
            Op::RowDot(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let mut da = Mat::zeros(va.rows(), va.cols());
                let mut db = Mat::zeros(vb.rows(), vb.cols());
                for r in 0..va.rows() {
                    let gr = g.get(r, 0);
                    for c in 0..va.cols() {
                        da.set(r, c, gr * vb.get(r, c));
                        db.set(r, c, gr * va.get(r, c));
                    }
                }
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::HeadBlock { a, left } => {
                let va = val(*a);
                let heads = va.rows();
                let d = va.cols() / 2;
                let off = if *left { 0 } else { d };
                let mut da = Mat::zeros(heads, 2 * d);
                for h in 0..heads {
                    for j in 0..d {
                        da.set(h, off + j, g.get(h * d + j, h));
                    }
                }
                acc(grads, *a, da);
            }
            Op::PairLogits {
                left,
                right,
                e_idx,
                w_idx,
                slope,
            } => {
                let (vl, vr) = (val(*left), val(*right));
                let heads = vl.cols();
                let inv = 1.0 / heads as f64;
                let mut dl = Mat::zeros(vl.rows(), heads);
                let mut dr = Mat::zeros(vr.rows(), heads);
                for (p, (&e, &w)) in e_idx.iter().zip(w_idx).enumerate() {
                    let gp = g.get(p, 0) * inv;
                    if gp == 0.0 {
                        continue;
                    }
                    for h in 0..heads {
                        let z = vl.get(e, h) + vr.get(w, h);
                        let d = if z > 0.0 { gp } else { gp * slope };
                        let cur = dl.get(e, h);
                        dl.set(e, h, cur + d);
                        let cur = dr.get(w, h);
                        dr.set(w, h, cur + d);
                    }
                }
                acc(grads, *left, dl);
                acc(grads, *right, dr);
            }
            Op::SegmentSoftmax { x, seg } => {
                let y = &node.value;
                let n_seg = n_segments(seg);
                let mut dotsum = vec![0.0; n_seg];
                for (p, &s) in seg.iter().enumerate() {
                    dotsum[s] += y.get(p, 0) * g.get(p, 0);
                }
                let d: Vec<f64> = seg
                    .iter()
                    .enumerate()
                    .map(|(p, &s)| y.get(p, 0) * (g.get(p, 0) - dotsum[s]))
                    .collect();
                acc(grads, *x, Mat::column(&d));
            }
            Op::SegmentWeightedSum { w, v, idx, seg } => {
                let (vw, vv) = (val(*w), val(*v));
                let mut dw = Mat::zeros(vw.rows(), 1);
                let mut dv = Mat::zeros(vv.rows(), vv.cols());
                for p in 0..idx.len() {
                    let gs = g.row(seg[p]);
                    dw.set(p, 0, crate::tensor::dot(gs, vv.row(idx[p])));
                    let wp = vw.get(p, 0);
                    for (o, x) in dv.row_mut(idx[p]).iter_mut().zip(gs) {
                        *o += wp * x;
                    }
                }
                acc(grads, *w, dw);
                acc(grads, *v, dv);
            }
            Op::BceSum {
                logits,
                labels,
                eps,
            } => {
                let v = val(*logits);
                let gs = g.item();
                let d: Vec<f64> = v
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&x, &y)| {
                        let p = sigmoid(x);
                        if p < *eps || p > 1.0 - *eps {
                            0.0
                        } else {
                            gs * (p - y)
                        }
                    })
                    .collect();
                acc(grads, *logits, Mat::column(&d));
            }
            Op::RowNormEps(a) => {
                let va = val(*a);
                let n = &node.value;
                let mut d = Mat::zeros(va.rows(), va.cols());
                for r in 0..va.rows() {
                    let s = g.get(r, 0) / n.get(r, 0);
                    for (o, x) in d.row_mut(r).iter_mut().zip(va.row(r)) {
                        *o = s * x;
                    }
                }
                acc(grads, *a, d);
            }
            Op::SoftmaxXent { logits, targets } => {
                let v = val(*logits);
                let gs = g.item();
                let mut d = Mat::zeros(v.rows(), v.cols());
                for (r, &t) in targets.iter().enumerate() {
                    let row = v.row(r);
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
                    for (c, o) in d.row_mut(r).iter_mut().enumerate() {
                        let p = (row[c] - m).exp() / z;
                        *o = gs * (p - if c == t { 1.0 } else { 0.0 });
                    }
                }
                acc(grads, *logits, d);
            }
            Op::NegLogSigmoidSum(x) => {
                let gs = g.item();
                let d = val(*x).map(|z| -gs * sigmoid(-z));
                acc(grads, *x, d);
            }
            Op::SumSquares(a) => {
                let gs = g.item();
                let d = val(*a).map(|x| 2.0 * gs * x);
                acc(grads, *a, d);
            }
        }
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}
