//! Stacked multi-source fusion layers.
//!
//! Each layer updates both sources in three steps:
//!
//! 1. intra-source masked multi-head self-attention, `T = LN(H + Attn(H))`;
//! 2. inter-source cross-gating, `S_i = T_i + Σ_{j ∈ N(i)} σ(W1·T_i + W2·T'_j) ⊙ T'_j`;
//! 3. a position-wise feed-forward network, `H' = LN(S + FFN(S))`.
//!
//! Characters and words use identically shaped but separate parameters.

use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{LatticeGraph, Mask};
use crate::scalar::{c, Scalar};
use crate::tape::{Dropout, MaskMode, Tape, Var};
use crate::tensor::Matrix;

/// Parameters of one source (characters or words) within one fusion layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceParams<P> {
    /// Per-head query maps stacked column-wise: head `i` uses columns `[i·d_z, (i+1)·d_z)`.
    pub query: P,
    pub key: P,
    pub value: P,
    /// `W^t`, applied to the concatenated heads.
    pub output: P,
    pub attn_norm_gain: P,
    pub attn_norm_bias: P,
    /// Gate weight applied to this source's own state.
    pub gate_self: P,
    /// Gate weight applied to the neighbor's state from the other source.
    pub gate_other: P,
    pub ffn_in: P,
    pub ffn_in_bias: P,
    pub ffn_out: P,
    pub ffn_out_bias: P,
    pub ffn_norm_gain: P,
    pub ffn_norm_bias: P,
}

impl<P> SourceParams<P> {
    pub fn map<'s, Q>(&'s self, f: &mut impl FnMut(&str, &'s P) -> Q) -> SourceParams<Q> {
        SourceParams {
            query: f("query", &self.query),
            key: f("key", &self.key),
            value: f("value", &self.value),
            output: f("output", &self.output),
            attn_norm_gain: f("attn_norm_gain", &self.attn_norm_gain),
            attn_norm_bias: f("attn_norm_bias", &self.attn_norm_bias),
            gate_self: f("gate_self", &self.gate_self),
            gate_other: f("gate_other", &self.gate_other),
            ffn_in: f("ffn_in", &self.ffn_in),
            ffn_in_bias: f("ffn_in_bias", &self.ffn_in_bias),
            ffn_out: f("ffn_out", &self.ffn_out),
            ffn_out_bias: f("ffn_out_bias", &self.ffn_out_bias),
            ffn_norm_gain: f("ffn_norm_gain", &self.ffn_norm_gain),
            ffn_norm_bias: f("ffn_norm_bias", &self.ffn_norm_bias),
        }
    }

    pub fn visit_mut<'s>(&'s mut self, f: &mut impl FnMut(&str, &'s mut P)) {
        f("query", &mut self.query);
        f("key", &mut self.key);
        f("value", &mut self.value);
        f("output", &mut self.output);
        f("attn_norm_gain", &mut self.attn_norm_gain);
        f("attn_norm_bias", &mut self.attn_norm_bias);
        f("gate_self", &mut self.gate_self);
        f("gate_other", &mut self.gate_other);
        f("ffn_in", &mut self.ffn_in);
        f("ffn_in_bias", &mut self.ffn_in_bias);
        f("ffn_out", &mut self.ffn_out);
        f("ffn_out_bias", &mut self.ffn_out_bias);
        f("ffn_norm_gain", &mut self.ffn_norm_gain);
        f("ffn_norm_bias", &mut self.ffn_norm_bias);
    }
}

impl<T: Scalar> SourceParams<Matrix<T>> {
    pub fn random<R: Rng + ?Sized>(d_c: usize, d_ff: usize, rng: &mut R) -> Self {
        Self {
            query: Matrix::xavier(d_c, d_c, rng),
            key: Matrix::xavier(d_c, d_c, rng),
            value: Matrix::xavier(d_c, d_c, rng),
            output: Matrix::xavier(d_c, d_c, rng),
            attn_norm_gain: Matrix::filled(1, d_c, T::one()),
            attn_norm_bias: Matrix::zeros(1, d_c),
            gate_self: Matrix::xavier(d_c, d_c, rng),
            gate_other: Matrix::xavier(d_c, d_c, rng),
            ffn_in: Matrix::xavier(d_c, d_ff, rng),
            ffn_in_bias: Matrix::zeros(1, d_ff),
            ffn_out: Matrix::xavier(d_ff, d_c, rng),
            ffn_out_bias: Matrix::zeros(1, d_c),
            ffn_norm_gain: Matrix::filled(1, d_c, T::one()),
            ffn_norm_bias: Matrix::zeros(1, d_c),
        }
    }

    pub fn d_c(&self) -> usize {
        self.query.rows()
    }

    pub fn d_ff(&self) -> usize {
        self.ffn_in.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionLayerParams<P> {
    pub chars: SourceParams<P>,
    pub words: SourceParams<P>,
}

impl<P> FusionLayerParams<P> {
    pub fn map<'s, Q>(&'s self, f: &mut impl FnMut(&str, &'s P) -> Q) -> FusionLayerParams<Q> {
        FusionLayerParams {
            chars: self.chars.map(&mut |n, p| f(&format!("chars.{n}"), p)),
            words: self.words.map(&mut |n, p| f(&format!("words.{n}"), p)),
        }
    }

    pub fn visit_mut<'s>(&'s mut self, f: &mut impl FnMut(&str, &'s mut P)) {
        self.chars.visit_mut(&mut |n, p| f(&format!("chars.{n}"), p));
        self.words.visit_mut(&mut |n, p| f(&format!("words.{n}"), p));
    }
}

impl<T: Scalar> FusionLayerParams<Matrix<T>> {
    pub fn random<R: Rng + ?Sized>(d_c: usize, d_ff: usize, rng: &mut R) -> Self {
        Self {
            chars: SourceParams::random(d_c, d_ff, rng),
            words: SourceParams::random(d_c, d_ff, rng),
        }
    }
}

/// Non-learned encoder settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionSettings {
    pub heads: usize,
    pub mask_mode: MaskMode,
    /// Dropout applied to each sublayer output (attention, gated sum, FFN).
    pub dropout: f64,
}

impl Default for FusionSettings {
    fn default() -> Self {
        Self {
            heads: 8,
            mask_mode: MaskMode::Additive,
            dropout: 0.3,
        }
    }
}

/// States of both sources after `layer` fusion layers.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeStates<T> {
    pub chars: Matrix<T>,
    pub words: Matrix<T>,
    pub layer: usize,
}

/// Graph structure shared by every layer of one forward pass.
pub struct GraphContext {
    pub char_mask: Rc<Mask>,
    pub word_mask: Rc<Mask>,
    pub char_neighbors: Rc<Vec<Vec<usize>>>,
    pub word_neighbors: Rc<Vec<Vec<usize>>>,
}

impl GraphContext {
    pub fn new(graph: &LatticeGraph) -> Result<Self> {
        let ctx = Self {
            char_mask: Rc::new(graph.char_mask().clone()),
            word_mask: Rc::new(graph.word_mask().clone()),
            char_neighbors: Rc::new(graph.all_char_neighbors().to_vec()),
            word_neighbors: Rc::new(graph.all_word_neighbors().to_vec()),
        };
        check_mask(&ctx.char_mask, "character")?;
        check_mask(&ctx.word_mask, "word")?;
        Ok(ctx)
    }
}

fn check_mask(mask: &Mask, what: &str) -> Result<()> {
    if let Some(i) = (0..mask.size()).find(|&i| !mask.row(i).iter().any(|&b| b)) {
        return Err(Error::invalid(format!(
            "{what} mask row {i} has no unmasked entry; attention cannot be normalized"
        )));
    }
    Ok(())
}

fn check_dims<T: Scalar>(h: &Matrix<T>, p: &SourceParams<Matrix<T>>, heads: usize) -> Result<()> {
    let d = p.d_c();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "hidden size {d} is not divisible by {heads} heads"
        )));
    }
    if h.cols() != d {
        return Err(Error::Shape(format!(
            "node states have width {}, parameters expect {d}",
            h.cols()
        )));
    }
    Ok(())
}

/// Output of [`attention`]: the updated states and per-head attention weights.
pub struct AttentionOutput {
    pub states: Var,
    pub weights: Vec<Var>,
}

/// `LN(H + ([Att_1; …; Att_z] W^t))`, `Att_i = σ(mask(H Q_i (H K_i)ᵀ / √d_c)) H V_i`.
pub fn attention<T: Scalar>(
    tape: &mut Tape<'_, T>,
    h: Var,
    mask: &Rc<Mask>,
    p: &SourceParams<Var>,
    settings: &FusionSettings,
    dropout: &mut Dropout<'_>,
) -> AttentionOutput {
    let d = tape.shape(p.query).0;
    let dz = d / settings.heads;
    let scale = c::<T>(1.0 / (d as f64).sqrt());
    let q = tape.matmul(h, p.query);
    let k = tape.matmul(h, p.key);
    let v = tape.matmul(h, p.value);
    let mut heads = Vec::with_capacity(settings.heads);
    let mut weights = Vec::with_capacity(settings.heads);
    for i in 0..settings.heads {
        let (lo, hi) = (i * dz, (i + 1) * dz);
        let qi = tape.slice_cols(q, lo, hi);
        let ki = tape.slice_cols(k, lo, hi);
        let vi = tape.slice_cols(v, lo, hi);
        let scores = tape.matmul_t(qi, ki);
        let scores = tape.scale(scores, scale);
        let probs = tape.masked_softmax(scores, mask.clone(), settings.mask_mode);
        weights.push(probs);
        heads.push(tape.matmul(probs, vi));
    }
    let cat = tape.concat_cols(&heads);
    let out = tape.matmul(cat, p.output);
    let out = dropout.apply(tape, out, settings.dropout);
    let res = tape.add(h, out);
    let states = tape.layer_norm(res, p.attn_norm_gain, p.attn_norm_bias);
    AttentionOutput { states, weights }
}

/// Cross-gated aggregation of the other source's neighbor states.
pub fn inter_fusion<T: Scalar>(
    tape: &mut Tape<'_, T>,
    t_chars: Var,
    t_words: Var,
    ctx: &GraphContext,
    layer: &FusionLayerParams<Var>,
    settings: &FusionSettings,
    dropout: &mut Dropout<'_>,
) -> (Var, Var) {
    let s_chars = gated_update(
        tape,
        t_chars,
        t_words,
        &ctx.char_neighbors,
        &layer.chars,
        settings,
        dropout,
    );
    let s_words = gated_update(
        tape,
        t_words,
        t_chars,
        &ctx.word_neighbors,
        &layer.words,
        settings,
        dropout,
    );
    (s_chars, s_words)
}

fn gated_update<T: Scalar>(
    tape: &mut Tape<'_, T>,
    own: Var,
    other: Var,
    neighbors: &Rc<Vec<Vec<usize>>>,
    p: &SourceParams<Var>,
    settings: &FusionSettings,
    dropout: &mut Dropout<'_>,
) -> Var {
    let query = tape.matmul(own, p.gate_self);
    let key = tape.matmul(other, p.gate_other);
    let agg = tape.gated_sum(query, key, other, neighbors.clone());
    let agg = dropout.apply(tape, agg, settings.dropout);
    tape.add(own, agg)
}

/// `LN(S + W_2 ReLU(W_1 S + b_1) + b_2)`.
pub fn feed_forward<T: Scalar>(
    tape: &mut Tape<'_, T>,
    s: Var,
    p: &SourceParams<Var>,
    settings: &FusionSettings,
    dropout: &mut Dropout<'_>,
) -> Var {
    let hidden = tape.matmul(s, p.ffn_in);
    let hidden = tape.add_row(hidden, p.ffn_in_bias);
    let hidden = tape.relu(hidden);
    let out = tape.matmul(hidden, p.ffn_out);
    let out = tape.add_row(out, p.ffn_out_bias);
    let out = dropout.apply(tape, out, settings.dropout);
    let res = tape.add(s, out);
    tape.layer_norm(res, p.ffn_norm_gain, p.ffn_norm_bias)
}

/// One full fusion layer on the tape; returns the new `(H_c, H_w)`.
pub fn layer<T: Scalar>(
    tape: &mut Tape<'_, T>,
    chars: Var,
    words: Var,
    ctx: &GraphContext,
    params: &FusionLayerParams<Var>,
    settings: &FusionSettings,
    dropout: &mut Dropout<'_>,
) -> (Var, Var) {
    let t_c = attention(tape, chars, &ctx.char_mask, &params.chars, settings, dropout).states;
    let t_w = attention(tape, words, &ctx.word_mask, &params.words, settings, dropout).states;
    let (s_c, s_w) = inter_fusion(tape, t_c, t_w, ctx, params, settings, dropout);
    let h_c = feed_forward(tape, s_c, &params.chars, settings, dropout);
    let h_w = feed_forward(tape, s_w, &params.words, settings, dropout);
    (h_c, h_w)
}

/// Intra-source attention on plain matrices (no dropout).
pub fn intra_source_attention<T: Scalar>(
    h: &Matrix<T>,
    mask: &Mask,
    params: &SourceParams<Matrix<T>>,
    settings: &FusionSettings,
) -> Result<Matrix<T>> {
    Ok(attention_with_weights(h, mask, params, settings)?.0)
}

/// Like [`intra_source_attention`] but also returns each head's `n × n` attention weights.
pub fn attention_with_weights<T: Scalar>(
    h: &Matrix<T>,
    mask: &Mask,
    params: &SourceParams<Matrix<T>>,
    settings: &FusionSettings,
) -> Result<(Matrix<T>, Vec<Matrix<T>>)> {
    check_dims(h, params, settings.heads)?;
    if mask.size() != h.rows() {
        return Err(Error::Shape(format!(
            "mask of size {} for {} nodes",
            mask.size(),
            h.rows()
        )));
    }
    check_mask(mask, "attention")?;
    let mut tape = Tape::new();
    let hv = tape.leaf_ref(h);
    let p = params.map(&mut |_, m| tape.leaf_ref(m));
    let out = attention(&mut tape, hv, &Rc::new(mask.clone()), &p, settings, &mut Dropout::off());
    let weights = out.weights.iter().map(|&w| tape.value(w).clone()).collect();
    Ok((tape.value(out.states).clone(), weights))
}

/// Inter-source fusion on plain matrices (no dropout); returns `(S_c, S_w)`.
pub fn inter_source_fusion<T: Scalar>(
    t_chars: &Matrix<T>,
    t_words: &Matrix<T>,
    graph: &LatticeGraph,
    params: &FusionLayerParams<Matrix<T>>,
) -> Result<(Matrix<T>, Matrix<T>)> {
    if t_chars.rows() != graph.n() || t_words.rows() != graph.m() {
        return Err(Error::Shape(format!(
            "states have {}/{} rows for a graph with {} characters and {} words",
            t_chars.rows(),
            t_words.rows(),
            graph.n(),
            graph.m()
        )));
    }
    let ctx = GraphContext::new(graph)?;
    let mut tape = Tape::new();
    let c = tape.leaf_ref(t_chars);
    let w = tape.leaf_ref(t_words);
    let p = params.map(&mut |_, m| tape.leaf_ref(m));
    let settings = FusionSettings {
        dropout: 0.0,
        ..FusionSettings::default()
    };
    let (s_c, s_w) = inter_fusion(&mut tape, c, w, &ctx, &p, &settings, &mut Dropout::off());
    Ok((tape.value(s_c).clone(), tape.value(s_w).clone()))
}

/// One fusion layer on plain matrices (no dropout).
pub fn fusion_layer<T: Scalar>(
    states: &NodeStates<T>,
    graph: &LatticeGraph,
    params: &FusionLayerParams<Matrix<T>>,
    settings: &FusionSettings,
) -> Result<NodeStates<T>> {
    let (chars, words) = encode(graph, &states.chars, &states.words, std::slice::from_ref(params), settings)?;
    Ok(NodeStates {
        chars,
        words,
        layer: states.layer + 1,
    })
}

/// Applies every layer in order and returns `(H_c^(L), H_w^(L))`.
pub fn encode<T: Scalar>(
    graph: &LatticeGraph,
    chars: &Matrix<T>,
    words: &Matrix<T>,
    layers: &[FusionLayerParams<Matrix<T>>],
    settings: &FusionSettings,
) -> Result<(Matrix<T>, Matrix<T>)> {
    if chars.rows() != graph.n() || words.rows() != graph.m() {
        return Err(Error::Shape(format!(
            "states have {}/{} rows for a graph with {} characters and {} words",
            chars.rows(),
            words.rows(),
            graph.n(),
            graph.m()
        )));
    }
    for (l, p) in layers.iter().enumerate() {
        check_dims(chars, &p.chars, settings.heads)
            .and_then(|_| check_dims(words, &p.words, settings.heads))
            .map_err(|e| Error::Shape(format!("layer {l}: {e}")))?;
    }
    let ctx = GraphContext::new(graph)?;
    let mut tape = Tape::new();
    let mut c = tape.leaf_ref(chars);
    let mut w = tape.leaf_ref(words);
    let bound: Vec<_> = layers.iter().map(|p| p.map(&mut |_, m| tape.leaf_ref(m))).collect();
    for p in &bound {
        (c, w) = layer(&mut tape, c, w, &ctx, p, settings, &mut Dropout::off());
    }
    Ok((tape.value(c).clone(), tape.value(w).clone()))
}
