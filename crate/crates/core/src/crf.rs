//! Linear-chain CRF in log space.
//!
//! Emissions are an `n × K` matrix. Transitions are a `(K + 2) × (K + 2)` matrix whose
//! last two indices are the virtual START ([`start`]) and STOP ([`stop`]) states; a path
//! `y` scores
//!
//! ```text
//! trans[START][y_0] + Σ_i emis[i][y_i] + Σ_{i>0} trans[y_{i-1}][y_i] + trans[y_{n-1}][STOP]
//! ```
//!
//! Entries into START and out of STOP never appear in a path score; [`CrfParams::transitions`]
//! reports them as `-inf`.

use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, Scalar};
use crate::tensor::Matrix;

#[inline]
pub fn start(num_labels: usize) -> usize {
    num_labels
}

#[inline]
pub fn stop(num_labels: usize) -> usize {
    num_labels + 1
}

/// Emission map and transition scores.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfParams<P> {
    /// `d_c × K`.
    pub emission_w: P,
    /// `1 × K`.
    pub emission_b: P,
    /// Raw `(K + 2) × (K + 2)` transition scores.
    pub transitions: P,
}

impl<P> CrfParams<P> {
    pub fn map<'s, Q>(&'s self, f: &mut impl FnMut(&str, &'s P) -> Q) -> CrfParams<Q> {
        CrfParams {
            emission_w: f("emission_w", &self.emission_w),
            emission_b: f("emission_b", &self.emission_b),
            transitions: f("transitions", &self.transitions),
        }
    }

    pub fn visit_mut<'s>(&'s mut self, f: &mut impl FnMut(&str, &'s mut P)) {
        f("emission_w", &mut self.emission_w);
        f("emission_b", &mut self.emission_b);
        f("transitions", &mut self.transitions);
    }
}

impl<T: Scalar> CrfParams<Matrix<T>> {
    pub fn zeros(d_c: usize, num_labels: usize) -> Self {
        Self {
            emission_w: Matrix::zeros(d_c, num_labels),
            emission_b: Matrix::zeros(1, num_labels),
            transitions: Matrix::zeros(num_labels + 2, num_labels + 2),
        }
    }

    pub fn num_labels(&self) -> usize {
        self.emission_b.cols()
    }

    /// Transition matrix with the forbidden START/STOP entries set to `-inf`.
    pub fn transitions(&self) -> Matrix<T> {
        forbid_start_stop(&self.transitions)
    }
}

pub fn forbid_start_stop<T: Scalar>(raw: &Matrix<T>) -> Matrix<T> {
    let size = raw.rows();
    let k = size - 2;
    let mut t = raw.clone();
    for i in 0..size {
        t[(i, start(k))] = T::neg_infinity();
        t[(stop(k), i)] = T::neg_infinity();
    }
    t
}

/// `score[i][y] = (h_i · W + b)[y]`.
pub fn emission_scores<T: Scalar>(states: &Matrix<T>, params: &CrfParams<Matrix<T>>) -> Matrix<T> {
    let mut out = states.matmul(&params.emission_w);
    let b = params.emission_b.row(0);
    for i in 0..out.rows() {
        for (o, &bj) in out.row_mut(i).iter_mut().zip(b) {
            *o += bj;
        }
    }
    out
}

fn check_shapes<T: Scalar>(emissions: &Matrix<T>, transitions: &Matrix<T>) {
    let k = emissions.cols();
    assert_eq!(
        transitions.shape(),
        (k + 2, k + 2),
        "transitions must be (K+2)x(K+2) for K = {k}"
    );
}

/// Score of one label path.
pub fn path_score<T: Scalar>(emissions: &Matrix<T>, transitions: &Matrix<T>, tags: &[usize]) -> T {
    check_shapes(emissions, transitions);
    assert_eq!(tags.len(), emissions.rows(), "tag count must equal sequence length");
    let k = emissions.cols();
    let mut prev = start(k);
    let mut score = T::zero();
    for (i, &y) in tags.iter().enumerate() {
        score += transitions[(prev, y)] + emissions[(i, y)];
        prev = y;
    }
    score + transitions[(prev, stop(k))]
}

fn forward<T: Scalar>(emissions: &Matrix<T>, transitions: &Matrix<T>) -> Matrix<T> {
    let (n, k) = emissions.shape();
    let mut alpha = Matrix::zeros(n, k);
    for y in 0..k {
        if n > 0 {
            alpha[(0, y)] = transitions[(start(k), y)] + emissions[(0, y)];
        }
    }
    for i in 1..n {
        for y in 0..k {
            let lse = log_sum_exp((0..k).map(|p| alpha[(i - 1, p)] + transitions[(p, y)]));
            alpha[(i, y)] = lse + emissions[(i, y)];
        }
    }
    alpha
}

/// Log of the sum of `exp(path score)` over all `K^n` label paths.
pub fn log_partition<T: Scalar>(emissions: &Matrix<T>, transitions: &Matrix<T>) -> T {
    check_shapes(emissions, transitions);
    let (n, k) = emissions.shape();
    if n == 0 {
        return transitions[(start(k), stop(k))];
    }
    let alpha = forward(emissions, transitions);
    log_sum_exp((0..k).map(|y| alpha[(n - 1, y)] + transitions[(y, stop(k))]))
}

/// Posterior marginals of one sequence.
#[derive(Debug, Clone)]
pub struct Marginals<T> {
    pub log_partition: T,
    /// `P(y_i = y)`, `n × K`.
    pub unary: Matrix<T>,
    /// Expected transition counts over the full `(K + 2) × (K + 2)` matrix.
    pub transitions: Matrix<T>,
}

/// Forward-backward marginals; the gradient of [`log_partition`].
pub fn marginals<T: Scalar>(emissions: &Matrix<T>, transitions: &Matrix<T>) -> Marginals<T> {
    check_shapes(emissions, transitions);
    let (n, k) = emissions.shape();
    let mut unary = Matrix::zeros(n, k);
    let mut pair = Matrix::zeros(k + 2, k + 2);
    if n == 0 {
        pair[(start(k), stop(k))] = T::one();
        return Marginals {
            log_partition: transitions[(start(k), stop(k))],
            unary,
            transitions: pair,
        };
    }
    let alpha = forward(emissions, transitions);
    let mut beta = Matrix::zeros(n, k);
    for y in 0..k {
        beta[(n - 1, y)] = transitions[(y, stop(k))];
    }
    for i in (0..n - 1).rev() {
        for y in 0..k {
            beta[(i, y)] = log_sum_exp(
                (0..k).map(|q| transitions[(y, q)] + emissions[(i + 1, q)] + beta[(i + 1, q)]),
            );
        }
    }
    let log_z = log_sum_exp((0..k).map(|y| alpha[(n - 1, y)] + transitions[(y, stop(k))]));
    for i in 0..n {
        for y in 0..k {
            unary[(i, y)] = (alpha[(i, y)] + beta[(i, y)] - log_z).exp();
        }
    }
    for y in 0..k {
        pair[(start(k), y)] = unary[(0, y)];
        pair[(y, stop(k))] = unary[(n - 1, y)];
    }
    for i in 1..n {
        for p in 0..k {
            for q in 0..k {
                let lp = alpha[(i - 1, p)] + transitions[(p, q)] + emissions[(i, q)] + beta[(i, q)]
                    - log_z;
                pair[(p, q)] += lp.exp();
            }
        }
    }
    Marginals {
        log_partition: log_z,
        unary,
        transitions: pair,
    }
}

/// `log_partition - path_score(gold)`.
pub fn nll_loss<T: Scalar>(emissions: &Matrix<T>, transitions: &Matrix<T>, gold: &[usize]) -> Result<T> {
    let k = emissions.cols();
    if gold.len() != emissions.rows() {
        return Err(Error::Shape(format!(
            "gold has {} tags for a sequence of length {}",
            gold.len(),
            emissions.rows()
        )));
    }
    if let Some(&bad) = gold.iter().find(|&&y| y >= k) {
        return Err(Error::invalid(format!("gold label id {bad} out of range for {k} labels")));
    }
    Ok(log_partition(emissions, transitions) - path_score(emissions, transitions, gold))
}

/// Highest-scoring path. Among equal scores the path with the smallest label at the
/// latest differing position wins.
pub fn viterbi_decode<T: Scalar>(emissions: &Matrix<T>, transitions: &Matrix<T>) -> Vec<usize> {
    check_shapes(emissions, transitions);
    let (n, k) = emissions.shape();
    if n == 0 {
        return Vec::new();
    }
    let mut delta = Matrix::zeros(n, k);
    let mut back = vec![vec![0usize; k]; n];
    for y in 0..k {
        delta[(0, y)] = transitions[(start(k), y)] + emissions[(0, y)];
    }
    for i in 1..n {
        for y in 0..k {
            let mut best = T::neg_infinity();
            let mut arg = 0;
            for p in 0..k {
                let s = delta[(i - 1, p)] + transitions[(p, y)];
                if s > best {
                    best = s;
                    arg = p;
                }
            }
            delta[(i, y)] = best + emissions[(i, y)];
            back[i][y] = arg;
        }
    }
    let mut best = T::neg_infinity();
    let mut last = 0;
    for y in 0..k {
        let s = delta[(n - 1, y)] + transitions[(y, stop(k))];
        if s > best {
            best = s;
            last = y;
        }
    }
    let mut path = vec![0; n];
    path[n - 1] = last;
    for i in (1..n).rev() {
        path[i - 1] = back[i][path[i]];
    }
    path
}
