//! The full tagger: embeddings, word projection, fusion layers, CRF and the LEC head.

use rand::Rng;

use crate::config::ModelConfig;
use crate::crf::{self, CrfParams};
use crate::data::{Sentence, TagSet};
use crate::encoding::{self, EmbeddingTable, PositionCodec, PretrainedEmbeddings, Vocab, WordProjection};
use crate::error::{Error, Result};
use crate::fusion::{self, FusionLayerParams, GraphContext};
use crate::graph::LatticeGraph;
use crate::lexicon::{label_lec, LecLabel, LexiconTrie, MatchOptions, MatchedWord};
use crate::scalar::{c, Scalar};
use crate::tape::{Dropout, Tape, Var};
use crate::tensor::Matrix;

/// Every learned tensor of the model.
///
/// `map` and `visit_mut` walk the tensors in one fixed order under unique dotted
/// names; that order is the parameter registry used by the optimizer,
/// gradient checks and checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<P> {
    pub char_embeddings: P,
    pub word_embeddings: P,
    pub projection: WordProjection<P>,
    pub layers: Vec<FusionLayerParams<P>>,
    pub crf: CrfParams<P>,
    /// `d_c × 3`.
    pub lec_w: P,
    /// `1 × 3`.
    pub lec_b: P,
}

impl<P> ModelParams<P> {
    pub fn map<'s, Q>(&'s self, f: &mut impl FnMut(&str, &'s P) -> Q) -> ModelParams<Q> {
        ModelParams {
            char_embeddings: f("char_embeddings", &self.char_embeddings),
            word_embeddings: f("word_embeddings", &self.word_embeddings),
            projection: self.projection.map(&mut |n, p| f(&format!("projection.{n}"), p)),
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(l, layer)| layer.map(&mut |n, p| f(&format!("layers.{l}.{n}"), p)))
                .collect(),
            crf: self.crf.map(&mut |n, p| f(&format!("crf.{n}"), p)),
            lec_w: f("lec.weight", &self.lec_w),
            lec_b: f("lec.bias", &self.lec_b),
        }
    }

    pub fn visit_mut<'s>(&'s mut self, f: &mut impl FnMut(&str, &'s mut P)) {
        f("char_embeddings", &mut self.char_embeddings);
        f("word_embeddings", &mut self.word_embeddings);
        self.projection.visit_mut(&mut |n, p| f(&format!("projection.{n}"), p));
        for (l, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&mut |n, p| f(&format!("layers.{l}.{n}"), p));
        }
        self.crf.visit_mut(&mut |n, p| f(&format!("crf.{n}"), p));
        f("lec.weight", &mut self.lec_w);
        f("lec.bias", &mut self.lec_b);
    }

    /// Mutable tensors in registry order.
    pub fn flat_mut(&mut self) -> Vec<&mut P> {
        let mut out = Vec::new();
        self.visit_mut(&mut |_, p| out.push(p));
        out
    }

    /// `(name, tensor)` pairs in registry order.
    pub fn named(&self) -> Vec<(String, &P)> {
        let mut out = Vec::new();
        self.map(&mut |n, p| out.push((n.to_string(), p)));
        out
    }

    pub fn into_flat(self) -> Vec<P>
    where
        P: Clone,
    {
        self.named().into_iter().map(|(_, p)| p.clone()).collect()
    }
}

impl<T: Scalar> ModelParams<Matrix<T>> {
    /// Zero tensors with the same shapes.
    pub fn zeros_like(&self) -> Self {
        self.map(&mut |_, m| Matrix::zeros(m.rows(), m.cols()))
    }

    pub fn num_values(&self) -> usize {
        self.named().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<Matrix<U>> {
        self.map(&mut |_, m| m.cast())
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, m)| m.all_finite())
    }
}

/// A sentence prepared for the model: ids, matched words, graph and optional gold labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub chars: Vec<char>,
    pub char_ids: Vec<usize>,
    pub words: Vec<MatchedWord>,
    pub word_ids: Vec<usize>,
    pub graph: LatticeGraph,
    pub tags: Option<Vec<usize>>,
    pub lec: Option<Vec<LecLabel>>,
}

impl Instance {
    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }
}

/// Tape nodes produced by one forward pass.
pub struct Forward {
    pub params: ModelParams<Var>,
    pub chars: Var,
    pub words: Var,
    pub emissions: Var,
    pub lec_logits: Var,
}

/// Loss nodes; `total = (1 - λ) · ner + λ · lec`.
pub struct LossVars {
    pub forward: Forward,
    pub ner: Var,
    pub lec: Var,
    pub total: Var,
}

/// Dropout rates applied during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DropoutRates {
    pub embedding: f64,
    pub fusion: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub tags: TagSet,
    pub char_vocab: Vocab,
    pub word_vocab: Vocab,
    pub params: ModelParams<Matrix<T>>,
    char_codec: PositionCodec<T>,
    word_codec: PositionCodec<T>,
}

const POSITION_TABLE: usize = 512;

impl<T: Scalar> Model<T> {
    /// Randomly initialized model. Embedding rows are uniform in `[-init_scale, init_scale]`,
    /// weight matrices are Glorot-uniform, biases and transitions are zero, norm gains are one.
    pub fn new<R: Rng + ?Sized>(
        config: ModelConfig,
        tags: TagSet,
        char_vocab: Vocab,
        word_vocab: Vocab,
        init_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let (d_c, d_w, k) = (config.d_c, config.d_w, tags.len());
        let char_embeddings = EmbeddingTable::<T>::random(char_vocab.clone(), d_c, init_scale, rng).weights;
        let word_embeddings = EmbeddingTable::<T>::random(word_vocab.clone(), d_w, init_scale, rng).weights;
        let projection = WordProjection::random(d_w, d_c, rng);
        let layers = (0..config.layers)
            .map(|_| FusionLayerParams::random(d_c, config.ffn_dim(), rng))
            .collect();
        let crf = CrfParams {
            emission_w: Matrix::xavier(d_c, k, rng),
            emission_b: Matrix::zeros(1, k),
            transitions: Matrix::zeros(k + 2, k + 2),
        };
        let params = ModelParams {
            char_embeddings,
            word_embeddings,
            projection,
            layers,
            crf,
            lec_w: Matrix::xavier(d_c, LecLabel::COUNT, rng),
            lec_b: Matrix::zeros(1, LecLabel::COUNT),
        };
        Self::from_parts(config, tags, char_vocab, word_vocab, params)
    }

    /// Assembles a model from existing parameters, checking every tensor shape.
    pub fn from_parts(
        config: ModelConfig,
        tags: TagSet,
        char_vocab: Vocab,
        word_vocab: Vocab,
        params: ModelParams<Matrix<T>>,
    ) -> Result<Self> {
        config.validate()?;
        if params.layers.len() != config.layers {
            return Err(Error::Shape(format!(
                "{} fusion layers for a config with layers = {}",
                params.layers.len(),
                config.layers
            )));
        }
        let model = Self {
            char_codec: PositionCodec::new(POSITION_TABLE, config.d_c)?,
            word_codec: PositionCodec::new(2 * POSITION_TABLE, config.d_w)?,
            config,
            tags,
            char_vocab,
            word_vocab,
            params,
        };
        let expected = model.expected_shapes();
        for ((name, m), (_, shape)) in model.params.named().iter().zip(&expected) {
            if m.shape() != *shape {
                return Err(Error::Shape(format!(
                    "parameter '{name}' has shape {:?}, expected {:?}",
                    m.shape(),
                    shape
                )));
            }
        }
        Ok(model)
    }

    /// Registry names and the shapes implied by the config, vocabularies and tag set.
    pub fn expected_shapes(&self) -> Vec<(String, (usize, usize))> {
        let cfg = &self.config;
        let (d_c, d_w, d_ff, k) = (cfg.d_c, cfg.d_w, cfg.ffn_dim(), self.tags.len());
        let source = |prefix: &str, out: &mut Vec<(String, (usize, usize))>| {
            let shapes = [
                ("query", (d_c, d_c)),
                ("key", (d_c, d_c)),
                ("value", (d_c, d_c)),
                ("output", (d_c, d_c)),
                ("attn_norm_gain", (1, d_c)),
                ("attn_norm_bias", (1, d_c)),
                ("gate_self", (d_c, d_c)),
                ("gate_other", (d_c, d_c)),
                ("ffn_in", (d_c, d_ff)),
                ("ffn_in_bias", (1, d_ff)),
                ("ffn_out", (d_ff, d_c)),
                ("ffn_out_bias", (1, d_c)),
                ("ffn_norm_gain", (1, d_c)),
                ("ffn_norm_bias", (1, d_c)),
            ];
            for (n, s) in shapes {
                out.push((format!("{prefix}.{n}"), s));
            }
        };
        let mut out = vec![
            ("char_embeddings".to_string(), (self.char_vocab.len(), d_c)),
            ("word_embeddings".to_string(), (self.word_vocab.len(), d_w)),
            ("projection.pos_w".to_string(), (4 * d_w, d_w)),
            ("projection.w1".to_string(), (d_w, d_c)),
            ("projection.b1".to_string(), (1, d_c)),
            ("projection.w2".to_string(), (d_c, d_c)),
            ("projection.b2".to_string(), (1, d_c)),
        ];
        for l in 0..cfg.layers {
            source(&format!("layers.{l}.chars"), &mut out);
            source(&format!("layers.{l}.words"), &mut out);
        }
        out.push(("crf.emission_w".into(), (d_c, k)));
        out.push(("crf.emission_b".into(), (1, k)));
        out.push(("crf.transitions".into(), (k + 2, k + 2)));
        out.push(("lec.weight".into(), (d_c, LecLabel::COUNT)));
        out.push(("lec.bias".into(), (1, LecLabel::COUNT)));
        out
    }

    pub fn match_options(&self) -> MatchOptions {
        MatchOptions {
            min_len: self.config.min_word_len,
            ..MatchOptions::default()
        }
    }

    /// Matches the lexicon, builds the graph for the configured variant and encodes gold labels.
    pub fn prepare(&self, chars: &[char], trie: &LexiconTrie, gold: Option<&Sentence>) -> Result<Instance> {
        let words = trie.match_with(chars, &self.match_options()).words;
        self.prepare_with_words(chars, words, gold)
    }

    pub fn prepare_with_words(
        &self,
        chars: &[char],
        words: Vec<MatchedWord>,
        gold: Option<&Sentence>,
    ) -> Result<Instance> {
        let graph = LatticeGraph::build(chars.len(), &words)?.with_variant(self.config.variant);
        let (tags, lec) = match gold {
            Some(s) => {
                if s.chars.as_slice() != chars {
                    return Err(Error::invalid("gold sentence does not match the characters"));
                }
                (Some(self.tags.encode(&s.tags)?), Some(label_lec(&words, &s.spans())?))
            }
            None => (None, None),
        };
        Ok(Instance {
            chars: chars.to_vec(),
            char_ids: self.char_vocab.char_ids(chars),
            word_ids: words.iter().map(|w| self.word_vocab.id(&w.surface)).collect(),
            words,
            graph,
            tags,
            lec,
        })
    }

    pub fn prepare_corpus(&self, sentences: &[Sentence], trie: &LexiconTrie) -> Result<Vec<Instance>> {
        sentences
            .iter()
            .map(|s| self.prepare(&s.chars, trie, Some(s)))
            .collect()
    }

    /// Records the forward pass of `inst` on `tape`.
    pub fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a, T>,
        inst: &Instance,
        rates: DropoutRates,
        dropout: &mut Dropout<'_>,
    ) -> Result<Forward> {
        let ctx = GraphContext::new(&inst.graph)?;
        let params = self.params.map(&mut |_, m| tape.leaf_ref(m));
        let chars = encoding::char_states(tape, params.char_embeddings, &inst.char_ids, &self.char_codec);
        let chars = dropout.apply(tape, chars, rates.embedding);
        let words = encoding::word_states(
            tape,
            params.word_embeddings,
            &inst.word_ids,
            &inst.words,
            &params.projection,
            &self.word_codec,
        );
        let words = dropout.apply(tape, words, rates.embedding);
        let settings = self.config.fusion_settings(rates.fusion);
        let (mut h_c, mut h_w) = (chars, words);
        for layer in &params.layers {
            (h_c, h_w) = fusion::layer(tape, h_c, h_w, &ctx, layer, &settings, dropout);
        }
        let emissions = tape.matmul(h_c, params.crf.emission_w);
        let emissions = tape.add_row(emissions, params.crf.emission_b);
        let lec_logits = tape.matmul(h_w, params.lec_w);
        let lec_logits = tape.add_row(lec_logits, params.lec_b);
        Ok(Forward {
            params,
            chars: h_c,
            words: h_w,
            emissions,
            lec_logits,
        })
    }

    /// Forward pass plus the NER, LEC and combined losses for a gold-labelled instance.
    pub fn loss<'a>(
        &'a self,
        tape: &mut Tape<'a, T>,
        inst: &Instance,
        lambda: f64,
        rates: DropoutRates,
        dropout: &mut Dropout<'_>,
    ) -> Result<LossVars> {
        let (Some(tags), Some(lec)) = (&inst.tags, &inst.lec) else {
            return Err(Error::invalid("instance has no gold labels"));
        };
        let forward = self.forward(tape, inst, rates, dropout)?;
        let ner = tape.crf_nll(forward.emissions, forward.params.crf.transitions, tags);
        let lec_ids: Vec<usize> = lec.iter().map(|l| l.index()).collect();
        let lec = tape.softmax_xent(forward.lec_logits, &lec_ids);
        let a = tape.scale(ner, c(1.0 - lambda));
        let b = tape.scale(lec, c(lambda));
        let total = tape.add(a, b);
        Ok(LossVars {
            forward,
            ner,
            lec,
            total,
        })
    }

    /// Transition matrix used for decoding, including the well-formedness constraints if enabled.
    pub fn decoding_transitions(&self) -> Matrix<T> {
        let mut t = self.params.crf.transitions();
        if self.config.constrained_decoding {
            t.add_assign(&self.tags.transition_constraints());
        }
        t
    }

    /// Emission scores and LEC logits without dropout.
    pub fn scores(&self, inst: &Instance) -> Result<(Matrix<T>, Matrix<T>)> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, inst, DropoutRates::default(), &mut Dropout::off())?;
        Ok((tape.value(f.emissions).clone(), tape.value(f.lec_logits).clone()))
    }

    /// Viterbi label ids for every character.
    pub fn predict(&self, inst: &Instance) -> Result<Vec<usize>> {
        if inst.is_empty() {
            return Ok(Vec::new());
        }
        let (emissions, _) = self.scores(inst)?;
        Ok(crf::viterbi_decode(&emissions, &self.decoding_transitions()))
    }

    pub fn predict_tags(&self, inst: &Instance) -> Result<Vec<String>> {
        Ok(self.tags.decode(&self.predict(inst)?))
    }

    /// Label ids and LEC predictions from a single forward pass.
    pub fn predict_all(&self, inst: &Instance) -> Result<(Vec<usize>, Vec<LecLabel>)> {
        if inst.is_empty() {
            return Ok((Vec::new(), Vec::new()));
        }
        let (emissions, logits) = self.scores(inst)?;
        let tags = crf::viterbi_decode(&emissions, &self.decoding_transitions());
        let lec = (0..logits.rows())
            .map(|j| {
                let row = logits.row(j);
                let best = (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b });
                LecLabel::ALL[best]
            })
            .collect();
        Ok((tags, lec))
    }

    /// Overwrites embedding rows of tokens found in pretrained tables. Returns rows copied
    /// for characters and words.
    pub fn copy_pretrained(
        &mut self,
        chars: Option<&PretrainedEmbeddings>,
        words: Option<&PretrainedEmbeddings>,
    ) -> Result<(usize, usize)> {
        let copy = |vocab: &Vocab, weights: &mut Matrix<T>, pre: Option<&PretrainedEmbeddings>| {
            let Some(pre) = pre else { return Ok(0) };
            let mut table = EmbeddingTable {
                vocab: vocab.clone(),
                weights: std::mem::replace(weights, Matrix::zeros(0, 0)),
            };
            let copied = table.copy_pretrained(pre);
            *weights = table.weights;
            copied
        };
        let nc = copy(&self.char_vocab, &mut self.params.char_embeddings, chars)?;
        let nw = copy(&self.word_vocab, &mut self.params.word_embeddings, words)?;
        Ok((nc, nw))
    }

    pub fn cast<U: Scalar>(&self) -> Result<Model<U>> {
        Model::from_parts(
            self.config.clone(),
            self.tags.clone(),
            self.char_vocab.clone(),
            self.word_vocab.clone(),
            self.params.cast(),
        )
    }
}

/// Character vocabulary of a corpus in first-occurrence order.
pub fn char_vocab<'a>(sentences: impl IntoIterator<Item = &'a Sentence>) -> Vocab {
    let mut v = Vocab::new(std::iter::empty::<&str>());
    let mut buf = [0u8; 4];
    for s in sentences {
        for ch in &s.chars {
            v.insert(ch.encode_utf8(&mut buf));
        }
    }
    v
}

/// Word vocabulary from lexicon entries of at least `min_len` characters.
pub fn word_vocab<S: AsRef<str>>(lexicon: &[S], min_len: usize) -> Vocab {
    Vocab::new(crate::lexicon::distinct_words(lexicon, min_len))
}
