//! Initial node states: character embeddings with absolute sinusoidal positions, and word
//! embeddings with a learned relative-position term projected into character space.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::MatchedWord;
use crate::scalar::{c, Scalar};
use crate::tape::{Tape, Var};
use crate::tensor::Matrix;

/// Sinusoidal encoding of `pos` in `d` dimensions:
/// `P[2k] = sin(pos / 10000^(2k/d))`, `P[2k+1] = cos(pos / 10000^(2k/d))`.
pub fn encode_position<T: Scalar>(pos: usize, d: usize) -> Result<Vec<T>> {
    if !d.is_multiple_of(2) {
        return Err(Error::Config(format!("position encoding dimension {d} must be even")));
    }
    let mut out = Vec::with_capacity(d);
    for k in 0..d / 2 {
        let angle = pos as f64 / 10000f64.powf((2 * k) as f64 / d as f64);
        out.push(c(angle.sin()));
        out.push(c(angle.cos()));
    }
    Ok(out)
}

/// Cached position encodings for `0..max_pos`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionCodec<T> {
    dim: usize,
    table: Matrix<T>,
}

impl<T: Scalar> PositionCodec<T> {
    pub fn new(max_pos: usize, dim: usize) -> Result<Self> {
        let mut rows = Vec::with_capacity(max_pos);
        for p in 0..max_pos {
            rows.push(encode_position(p, dim)?);
        }
        Ok(Self {
            dim,
            table: Matrix::from_row_vecs(&rows, dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_pos(&self) -> usize {
        self.table.rows()
    }

    pub fn encode(&self, pos: usize) -> Vec<T> {
        if pos < self.table.rows() {
            self.table.row(pos).to_vec()
        } else {
            encode_position(pos, self.dim).expect("dimension validated at construction")
        }
    }

    /// Rows `P_0 .. P_{n-1}`.
    pub fn sequence(&self, n: usize) -> Matrix<T> {
        Matrix::from_row_vecs(&(0..n).map(|p| self.encode(p)).collect::<Vec<_>>(), self.dim)
    }

    /// One row `P_h ⊕ P_t ⊕ P_{t-h} ⊕ P_{t+h}` per word.
    pub fn word_spans(&self, words: &[MatchedWord]) -> Matrix<T> {
        let rows: Vec<Vec<T>> = words
            .iter()
            .map(|w| {
                let (h, t) = (w.head, w.tail);
                let mut row = Vec::with_capacity(4 * self.dim);
                for p in [h, t, t - h, t + h] {
                    row.extend(self.encode(p));
                }
                row
            })
            .collect();
        Matrix::from_row_vecs(&rows, 4 * self.dim)
    }
}

/// Token to row mapping with a reserved unknown-token row 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    pub const UNK: &'static str = "<unk>";
    pub const UNK_ID: usize = 0;

    pub fn new<S: AsRef<str>>(tokens: impl IntoIterator<Item = S>) -> Self {
        let mut v = Self {
            tokens: vec![Self::UNK.to_string()],
            index: HashMap::new(),
        };
        v.index.insert(Self::UNK.to_string(), Self::UNK_ID);
        for t in tokens {
            v.insert(t.as_ref());
        }
        v
    }

    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), self.tokens.len() - 1);
        self.tokens.len() - 1
    }

    /// Row for `token`, falling back to the unknown row.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Number of rows including the unknown row.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Rebuilds the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    /// Character ids of a sentence.
    pub fn char_ids(&self, chars: &[char]) -> Vec<usize> {
        let mut buf = [0u8; 4];
        chars.iter().map(|ch| self.id(ch.encode_utf8(&mut buf))).collect()
    }
}

/// Lookup table `e(·)`: a vocabulary and one `dim`-wide row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T> {
    pub vocab: Vocab,
    pub weights: Matrix<T>,
}

impl<T: Scalar> EmbeddingTable<T> {
    /// Rows drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(vocab: Vocab, dim: usize, scale: f64, rng: &mut R) -> Self {
        let weights = Matrix::uniform(vocab.len(), dim, scale, rng);
        Self { vocab, weights }
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn lookup(&self, token: &str) -> &[T] {
        self.weights.row(self.vocab.id(token))
    }

    /// Overwrites rows of tokens present in a pretrained table of the same width.
    /// Returns how many rows were copied.
    pub fn copy_pretrained(&mut self, pretrained: &PretrainedEmbeddings) -> Result<usize> {
        if pretrained.dim != self.dim() {
            return Err(Error::Shape(format!(
                "embedding file has dimension {}, model expects {}",
                pretrained.dim,
                self.dim()
            )));
        }
        let mut copied = 0;
        for (token, values) in &pretrained.entries {
            if let Some(id) = self.vocab.get(token) {
                for (dst, &v) in self.weights.row_mut(id).iter_mut().zip(values) {
                    *dst = c(v as f64);
                }
                copied += 1;
            }
        }
        Ok(copied)
    }
}

/// Vectors read from a text embedding file.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainedEmbeddings {
    pub dim: usize,
    pub entries: Vec<(String, Vec<f32>)>,
}

impl PretrainedEmbeddings {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// `token v1 … vd` per line; a leading `count dim` header is detected and skipped.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut dim = None;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if lineno == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
                dim = fields[1].parse().ok();
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message,
            };
            let values = fields[1..]
                .iter()
                .map(|f| f.parse::<f32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(format!("bad vector component: {e}")))?;
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(parse_err(format!("expected {d} components, found {}", values.len())))
                }
                Some(_) => {}
            }
            entries.push((fields[0].to_string(), values));
        }
        Ok(Self {
            dim: dim.unwrap_or(0),
            entries,
        })
    }
}

/// Word-side parameters.
///
/// `pos_w` (`4·d_w × d_w`) maps span encodings to the relative term, `w1`
/// (`d_w × d_c`) and `w2` (`d_c × d_c`) project words into character space.
#[derive(Debug, Clone, PartialEq)]
pub struct WordProjection<P> {
    pub pos_w: P,
    pub w1: P,
    pub b1: P,
    pub w2: P,
    pub b2: P,
}

impl<P> WordProjection<P> {
    pub fn map<'s, Q>(&'s self, f: &mut impl FnMut(&str, &'s P) -> Q) -> WordProjection<Q> {
        WordProjection {
            pos_w: f("pos_w", &self.pos_w),
            w1: f("w1", &self.w1),
            b1: f("b1", &self.b1),
            w2: f("w2", &self.w2),
            b2: f("b2", &self.b2),
        }
    }

    pub fn visit_mut<'s>(&'s mut self, f: &mut impl FnMut(&str, &'s mut P)) {
        f("pos_w", &mut self.pos_w);
        f("w1", &mut self.w1);
        f("b1", &mut self.b1);
        f("w2", &mut self.w2);
        f("b2", &mut self.b2);
    }
}

impl<T: Scalar> WordProjection<Matrix<T>> {
    pub fn zeros(d_w: usize, d_c: usize) -> Self {
        Self {
            pos_w: Matrix::zeros(4 * d_w, d_w),
            w1: Matrix::zeros(d_w, d_c),
            b1: Matrix::zeros(1, d_c),
            w2: Matrix::zeros(d_c, d_c),
            b2: Matrix::zeros(1, d_c),
        }
    }

    pub fn random<R: Rng + ?Sized>(d_w: usize, d_c: usize, rng: &mut R) -> Self {
        Self {
            pos_w: Matrix::xavier(4 * d_w, d_w, rng),
            w1: Matrix::xavier(d_w, d_c, rng),
            b1: Matrix::zeros(1, d_c),
            w2: Matrix::xavier(d_c, d_c, rng),
            b2: Matrix::zeros(1, d_c),
        }
    }

    pub fn d_w(&self) -> usize {
        self.pos_w.cols()
    }

    pub fn d_c(&self) -> usize {
        self.w2.cols()
    }
}

/// `h_i = e(c_i) + P_i`.
pub fn encode_char<T: Scalar>(ch: char, i: usize, table: &EmbeddingTable<T>) -> Result<Vec<T>> {
    let mut buf = [0u8; 4];
    let e = table.lookup(ch.encode_utf8(&mut buf));
    let p = encode_position::<T>(i, table.dim())?;
    Ok(e.iter().zip(p).map(|(&a, b)| a + b).collect())
}

/// `h_j = W2 · tanh(W1 · (e(w_j) + R_j) + b1) + b2` with
/// `R_j = ReLU(W_r · (P_h ⊕ P_t ⊕ P_{t-h} ⊕ P_{t+h}))`.
pub fn encode_word<T: Scalar>(
    word: &MatchedWord,
    table: &EmbeddingTable<T>,
    proj: &WordProjection<Matrix<T>>,
) -> Result<Vec<T>> {
    let codec = PositionCodec::<T>::new(0, proj.d_w())?;
    let mut tape = Tape::new();
    let embeddings = tape.leaf_ref(&table.weights);
    let bound = proj.map(&mut |_, m| tape.leaf_ref(m));
    let ids = [table.vocab.id(&word.surface)];
    let out = word_states(&mut tape, embeddings, &ids, std::slice::from_ref(word), &bound, &codec);
    Ok(tape.value(out).row(0).to_vec())
}

/// Character states `H_c⁽⁰⁾` for a sentence, `n × d_c`.
pub fn char_states<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    embeddings: Var,
    char_ids: &[usize],
    codec: &PositionCodec<T>,
) -> Var {
    let e = tape.gather_rows(embeddings, char_ids);
    let p = tape.leaf(codec.sequence(char_ids.len()));
    tape.add(e, p)
}

/// Word states `H_w⁽⁰⁾`, `m × d_c`. `codec` must have dimension `d_w`.
pub fn word_states<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    embeddings: Var,
    word_ids: &[usize],
    words: &[MatchedWord],
    proj: &WordProjection<Var>,
    codec: &PositionCodec<T>,
) -> Var {
    let e = tape.gather_rows(embeddings, word_ids);
    let spans = tape.leaf(codec.word_spans(words));
    let r = tape.matmul(spans, proj.pos_w);
    let r = tape.relu(r);
    let v = tape.add(e, r);
    let hidden = tape.matmul(v, proj.w1);
    let hidden = tape.add_row(hidden, proj.b1);
    let hidden = tape.tanh(hidden);
    let out = tape.matmul(hidden, proj.w2);
    tape.add_row(out, proj.b2)
}
