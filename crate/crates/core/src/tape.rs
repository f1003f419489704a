//! Matrix-level reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of one forward pass. Leaves may borrow their
//! value (model parameters) so building a tape never copies weights. [`Tape::backward`]
//! walks the record in reverse and returns [`Grads`] for every node that influences
//! the scalar loss.

use std::borrow::Cow;
use std::rc::Rc;

use crate::crf;
use crate::graph::Mask;
use crate::scalar::{c, sigmoid, Scalar};
use crate::tensor::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How an attention mask excludes non-adjacent pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskMode {
    /// Masked logits are set to `-inf`, so their weight is exactly zero.
    #[default]
    Additive,
    /// Logits are multiplied by the mask; masked pairs keep logit 0 and still receive weight.
    Multiplicative,
}

const LAYER_NORM_EPS: f64 = 1e-5;

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Gather(Var, Vec<usize>),
    MaskedSoftmax {
        x: Var,
        mask: Rc<Mask>,
        mode: MaskMode,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix<T>,
        inv_std: Vec<T>,
    },
    GatedSum {
        query: Var,
        key: Var,
        values: Var,
        neighbors: Rc<Vec<Vec<usize>>>,
    },
    CrfNll {
        emissions: Var,
        transitions: Var,
        gold: Vec<usize>,
    },
    SoftmaxXent {
        logits: Var,
        labels: Vec<usize>,
        probs: Matrix<T>,
    },
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Matrix<T>>,
    op: Op<T>,
}

pub struct Tape<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Matrix<T>>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn owned(&mut self, value: Matrix<T>, op: Op<T>) -> Var {
        self.push(Cow::Owned(value), op)
    }

    pub fn leaf(&mut self, value: Matrix<T>) -> Var {
        self.owned(value, Op::Leaf)
    }

    /// Leaf that borrows its value for the lifetime of the tape.
    pub fn leaf_ref(&mut self, value: &'a Matrix<T>) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf)
    }

    pub fn scalar(&mut self, v: T) -> Var {
        self.leaf(Matrix::filled(1, 1, v))
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    /// Value of a `1 × 1` node.
    pub fn scalar_value(&self, v: Var) -> T {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "not a scalar node");
        m[(0, 0)]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.owned(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.owned(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.owned(v, Op::Add(a, b))
    }

    /// Adds the `1 × c` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(bias));
        assert_eq!(bv.rows(), 1, "bias must be a single row");
        assert_eq!(av.cols(), bv.cols(), "bias width mismatch");
        let b = bv.row(0);
        let v = Matrix::from_fn(av.rows(), av.cols(), |i, j| av[(i, j)] + b[j]);
        self.owned(v, Op::AddRow(a, bias))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.owned(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.owned(v, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.owned(v, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.tanh());
        self.owned(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.owned(v, Op::Sigmoid(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let v = {
            let mats: Vec<&Matrix<T>> = parts.iter().map(|&p| self.value(p)).collect();
            Matrix::concat_cols(&mats)
        };
        self.owned(v, Op::Concat(parts.to_vec()))
    }

    /// Columns `[start, end)` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice_cols(start, end);
        self.owned(v, Op::Slice(a, start))
    }

    /// Row `i` of the result is row `indices[i]` of `table`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Var {
        let v = self.value(table).gather_rows(indices);
        self.owned(v, Op::Gather(table, indices.to_vec()))
    }

    /// Row-wise softmax of `x` restricted by `mask`.
    ///
    /// In additive mode a row without any unmasked entry yields an all-zero row; callers
    /// reject such masks before reaching the tape.
    pub fn masked_softmax(&mut self, x: Var, mask: Rc<Mask>, mode: MaskMode) -> Var {
        let xv = self.value(x);
        let (r, cols) = xv.shape();
        assert_eq!(mask.size(), r, "mask size mismatch");
        assert_eq!(r, cols, "attention scores must be square");
        let mut out = Matrix::zeros(r, cols);
        for i in 0..r {
            let logits: Vec<T> = (0..cols)
                .map(|j| match (mode, mask.get(i, j)) {
                    (_, true) => xv[(i, j)],
                    (MaskMode::Additive, false) => T::neg_infinity(),
                    (MaskMode::Multiplicative, false) => T::zero(),
                })
                .collect();
            let max = logits
                .iter()
                .copied()
                .fold(T::neg_infinity(), |m, v| if v > m { v } else { m });
            if max == T::neg_infinity() {
                continue;
            }
            let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
            let z: T = exps.iter().copied().sum();
            for (j, e) in exps.into_iter().enumerate() {
                out[(i, j)] = e / z;
            }
        }
        self.owned(out, Op::MaskedSoftmax { x, mask, mode })
    }

    /// Per-row layer normalization with learned `1 × c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (r, cols) = xv.shape();
        let (g, b) = (self.value(gain).row(0), self.value(bias).row(0));
        let n = c::<T>(cols as f64);
        let eps = c::<T>(LAYER_NORM_EPS);
        let mut xhat = Matrix::zeros(r, cols);
        let mut inv_std = Vec::with_capacity(r);
        let mut out = Matrix::zeros(r, cols);
        for i in 0..r {
            let row = xv.row(i);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for j in 0..cols {
                let h = (row[j] - mean) * inv;
                xhat[(i, j)] = h;
                out[(i, j)] = g[j] * h + b[j];
            }
        }
        self.owned(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// `out[i] = Σ_{j ∈ neighbors[i]} sigmoid(query[i] + key[j]) ⊙ values[j]`.
    ///
    /// `query` has one row per output node; `key` and `values` have one row per neighbor node.
    pub fn gated_sum(
        &mut self,
        query: Var,
        key: Var,
        values: Var,
        neighbors: Rc<Vec<Vec<usize>>>,
    ) -> Var {
        let (q, k, v) = (self.value(query), self.value(key), self.value(values));
        assert_eq!(q.rows(), neighbors.len(), "one neighbor list per query row");
        assert_eq!(k.shape(), v.shape(), "key/value shape mismatch");
        let d = v.cols();
        let mut out = Matrix::zeros(q.rows(), d);
        for (i, ns) in neighbors.iter().enumerate() {
            for &j in ns {
                for col in 0..d {
                    let gate = sigmoid(q[(i, col)] + k[(j, col)]);
                    out[(i, col)] += gate * v[(j, col)];
                }
            }
        }
        self.owned(
            out,
            Op::GatedSum {
                query,
                key,
                values,
                neighbors,
            },
        )
    }

    /// Negative log-likelihood of `gold` under a linear-chain CRF.
    ///
    /// `transitions` is the raw `(K + 2) × (K + 2)` matrix including START and STOP.
    pub fn crf_nll(&mut self, emissions: Var, transitions: Var, gold: &[usize]) -> Var {
        let e = self.value(emissions);
        let t = self.value(transitions);
        let value = crf::log_partition(e, t) - crf::path_score(e, t, gold);
        self.owned(
            Matrix::filled(1, 1, value),
            Op::CrfNll {
                emissions,
                transitions,
                gold: gold.to_vec(),
            },
        )
    }

    /// Mean softmax cross-entropy of `logits` rows against `labels`; 0 for zero rows.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), labels.len(), "one label per logit row");
        let mut probs = Matrix::zeros(lv.rows(), lv.cols());
        let mut total = T::zero();
        for (i, &y) in labels.iter().enumerate() {
            let row = lv.row(i);
            let lse = crate::scalar::log_sum_exp(row.iter().copied());
            total += lse - row[y];
            for j in 0..lv.cols() {
                probs[(i, j)] = (row[j] - lse).exp();
            }
        }
        let value = if labels.is_empty() {
            T::zero()
        } else {
            total / c::<T>(labels.len() as f64)
        };
        self.owned(
            Matrix::filled(1, 1, value),
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Smallest `|x|` over all ReLU inputs, or `None` when the tape has no ReLU.
    pub fn min_relu_margin(&self) -> Option<T> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(self.value(a).as_slice()),
                _ => None,
            })
            .flatten()
            .map(|x| x.abs())
            .fold(None, |m: Option<T>, x| Some(m.map_or(x, |m| if x < m { x } else { m })))
    }

    /// Reverse pass from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut scattered = Vec::new();
        grads[loss.0] = Some(Matrix::filled(1, 1, T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    // Leaves keep their gradient for the caller.
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    // y = a bᵀ: dA = g b, dB = gᵀ a
                    let ga = g.matmul(self.value(*b));
                    let gb = g.t_matmul(self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, b) => {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (acc, &x) in gb.row_mut(0).iter_mut().zip(g.row(i)) {
                            *acc += x;
                        }
                    }
                    accumulate(&mut grads, *b, gb);
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    accumulate(&mut grads, *a, g.map(|x| x * s));
                }
                Op::Relu(a) => {
                    let ga = g.zip_map(self.value(*a), |x, input| {
                        if input > T::zero() {
                            x
                        } else {
                            T::zero()
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, |x, y| x * (T::one() - y * y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip_map(&node.value, |x, y| x * y * (T::one() - y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        accumulate(&mut grads, p, g.slice_cols(start, start + w));
                        start += w;
                    }
                }
                Op::Slice(a, start) => {
                    let (r, cols) = self.shape(*a);
                    let mut ga = Matrix::zeros(r, cols);
                    for i in 0..r {
                        ga.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Gather(table, indices) => {
                    if matches!(self.nodes[table.0].op, Op::Leaf) {
                        scattered.push((*table, indices.clone(), g));
                    } else {
                        let (r, cols) = self.shape(*table);
                        let mut gt = Matrix::zeros(r, cols);
                        scatter_rows(&mut gt, indices, &g);
                        accumulate(&mut grads, *table, gt);
                    }
                }
                Op::MaskedSoftmax { x, mask, mode } => {
                    let p = &node.value;
                    let (r, cols) = p.shape();
                    let mut gx = Matrix::zeros(r, cols);
                    for i in 0..r {
                        let dot: T = (0..cols).map(|j| p[(i, j)] * g[(i, j)]).sum();
                        for j in 0..cols {
                            let d = p[(i, j)] * (g[(i, j)] - dot);
                            gx[(i, j)] = match mode {
                                MaskMode::Additive => d,
                                MaskMode::Multiplicative if mask.get(i, j) => d,
                                MaskMode::Multiplicative => T::zero(),
                            };
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gain).row(0);
                    let (r, cols) = xhat.shape();
                    let n = c::<T>(cols as f64);
                    let mut ggain = Matrix::zeros(1, cols);
                    let mut gbias = Matrix::zeros(1, cols);
                    let mut gx = Matrix::zeros(r, cols);
                    for i in 0..r {
                        let mut sum_d = T::zero();
                        let mut sum_dx = T::zero();
                        for j in 0..cols {
                            let gij = g[(i, j)];
                            ggain[(0, j)] += gij * xhat[(i, j)];
                            gbias[(0, j)] += gij;
                            let d = gij * gv[j];
                            sum_d += d;
                            sum_dx += d * xhat[(i, j)];
                        }
                        for j in 0..cols {
                            let d = g[(i, j)] * gv[j];
                            gx[(i, j)] = inv_std[i] * (d - sum_d / n - xhat[(i, j)] * sum_dx / n);
                        }
                    }
                    accumulate(&mut grads, *gain, ggain);
                    accumulate(&mut grads, *bias, gbias);
                    accumulate(&mut grads, *x, gx);
                }
                Op::GatedSum {
                    query,
                    key,
                    values,
                    neighbors,
                } => {
                    let (q, k, v) = (self.value(*query), self.value(*key), self.value(*values));
                    let d = v.cols();
                    let mut gq = Matrix::zeros(q.rows(), q.cols());
                    let mut gk = Matrix::zeros(k.rows(), k.cols());
                    let mut gv = Matrix::zeros(v.rows(), v.cols());
                    for (i, ns) in neighbors.iter().enumerate() {
                        for &j in ns.iter() {
                            for col in 0..d {
                                let gate = sigmoid(q[(i, col)] + k[(j, col)]);
                                let up = g[(i, col)];
                                gv[(j, col)] += gate * up;
                                let dpre = up * v[(j, col)] * gate * (T::one() - gate);
                                gq[(i, col)] += dpre;
                                gk[(j, col)] += dpre;
                            }
                        }
                    }
                    accumulate(&mut grads, *query, gq);
                    accumulate(&mut grads, *key, gk);
                    accumulate(&mut grads, *values, gv);
                }
                Op::CrfNll {
                    emissions,
                    transitions,
                    gold,
                } => {
                    let up = g[(0, 0)];
                    let e = self.value(*emissions);
                    let t = self.value(*transitions);
                    let marg = crf::marginals(e, t);
                    let k = e.cols();
                    let (start, stop) = (crf::start(k), crf::stop(k));
                    let mut ge = marg.unary;
                    let mut gt = marg.transitions;
                    for (i, &y) in gold.iter().enumerate() {
                        ge[(i, y)] -= T::one();
                        let from = if i == 0 { start } else { gold[i - 1] };
                        gt[(from, y)] -= T::one();
                    }
                    if let Some(&last) = gold.last() {
                        gt[(last, stop)] -= T::one();
                    }
                    ge.scale_assign(up);
                    gt.scale_assign(up);
                    accumulate(&mut grads, *emissions, ge);
                    accumulate(&mut grads, *transitions, gt);
                }
                Op::SoftmaxXent {
                    logits,
                    labels,
                    probs,
                } => {
                    if labels.is_empty() {
                        continue;
                    }
                    let scale = g[(0, 0)] / c::<T>(labels.len() as f64);
                    let mut gl = probs.clone();
                    for (i, &y) in labels.iter().enumerate() {
                        gl[(i, y)] -= T::one();
                    }
                    gl.scale_assign(scale);
                    accumulate(&mut grads, *logits, gl);
                }
            }
        }
        Grads {
            dense: grads,
            scattered,
        }
    }
}

/// Inverted dropout. Inactive (identity) when built with [`Dropout::off`].
pub struct Dropout<'r> {
    rng: Option<&'r mut dyn rand::RngCore>,
}

impl<'r> Dropout<'r> {
    pub fn off() -> Self {
        Self { rng: None }
    }

    pub fn on(rng: &'r mut dyn rand::RngCore) -> Self {
        Self { rng: Some(rng) }
    }

    pub fn is_active(&self) -> bool {
        self.rng.is_some()
    }

    /// Zeroes each entry of `x` with probability `rate` and rescales survivors by `1 / (1 - rate)`.
    pub fn apply<T: Scalar>(&mut self, tape: &mut Tape<'_, T>, x: Var, rate: f64) -> Var {
        use rand::Rng;
        let Some(rng) = self.rng.as_deref_mut() else {
            return x;
        };
        if rate <= 0.0 {
            return x;
        }
        let (r, cols) = tape.shape(x);
        let keep = c::<T>(1.0 / (1.0 - rate));
        let mask = Matrix::from_fn(r, cols, |_, _| {
            if rng.gen::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        });
        let m = tape.leaf(mask);
        tape.mul(x, m)
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Matrix<T>>], v: Var, g: Matrix<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn scatter_rows<T: Scalar>(dst: &mut Matrix<T>, indices: &[usize], src: &Matrix<T>) {
    for (r, &i) in indices.iter().enumerate() {
        for (d, &s) in dst.row_mut(i).iter_mut().zip(src.row(r)) {
            *d += s;
        }
    }
}

/// Gradients from one reverse pass.
pub struct Grads<T: Scalar> {
    dense: Vec<Option<Matrix<T>>>,
    scattered: Vec<(Var, Vec<usize>, Matrix<T>)>,
}

impl<T: Scalar> Grads<T> {
    /// Dense gradient of a node; `None` when the loss does not depend on it
    /// or when it only feeds row gathers (see [`Grads::accumulate_into`]).
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.dense.get(v.0).and_then(Option::as_ref)
    }

    /// Adds `scale ·` the full gradient of leaf `v` (dense and gathered rows) into `dst`.
    pub fn accumulate_into(&self, v: Var, dst: &mut Matrix<T>, scale: T) {
        if let Some(g) = self.get(v) {
            assert_eq!(g.shape(), dst.shape(), "gradient shape mismatch");
            for (d, &x) in dst.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *d += scale * x;
            }
        }
        for (var, indices, g) in &self.scattered {
            if *var == v {
                for (r, &i) in indices.iter().enumerate() {
                    for (d, &x) in dst.row_mut(i).iter_mut().zip(g.row(r)) {
                        *d += scale * x;
                    }
                }
            }
        }
    }

    /// Full gradient of a leaf with the given shape.
    pub fn dense_of(&self, v: Var, shape: (usize, usize)) -> Matrix<T> {
        let mut out = Matrix::zeros(shape.0, shape.1);
        self.accumulate_into(v, &mut out, T::one());
        out
    }
}
