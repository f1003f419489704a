//! Unified character/word graph built from a sentence and its matched words.
//!
//! Characters are fully connected to each other. Two words are connected when their
//! spans share a character, and each character is connected to every word covering it.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lexicon::MatchedWord;

/// Square 0/1 matrix used as an attention mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    size: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn ones(size: usize) -> Self {
        Self {
            size,
            bits: vec![true; size * size],
        }
    }

    pub fn identity(size: usize) -> Self {
        Self::from_fn(size, |i, j| i == j)
    }

    pub fn from_fn(size: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                bits.push(f(i, j));
            }
        }
        Self { size, bits }
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Self {
        let size = rows.len();
        assert!(rows.iter().all(|r| r.len() == size), "mask must be square");
        Self::from_fn(size, |i, j| rows[i][j] != 0)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.size + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[i * self.size + j] = v;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.size..(i + 1) * self.size]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.size).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.size)
            .map(|i| self.row(i).iter().map(|&b| b as u8).collect())
            .collect()
    }
}

/// Edge-construction variants used for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GraphVariant {
    #[default]
    Standard,
    /// Word nodes only attend to themselves.
    WoWordEdge,
    /// Every pair of word nodes is connected.
    FcIntra,
    /// Every character is connected to every word.
    FcInter,
}

impl GraphVariant {
    pub const ALL: [GraphVariant; 4] = [
        GraphVariant::Standard,
        GraphVariant::WoWordEdge,
        GraphVariant::FcIntra,
        GraphVariant::FcInter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GraphVariant::Standard => "standard",
            GraphVariant::WoWordEdge => "wo_word_edge",
            GraphVariant::FcIntra => "fc_intra",
            GraphVariant::FcInter => "fc_inter",
        }
    }
}

impl fmt::Display for GraphVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GraphVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown graph variant '{s}' (expected one of standard, wo_word_edge, fc_intra, fc_inter)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeGraph {
    n: usize,
    words: Vec<MatchedWord>,
    char_mask: Mask,
    word_mask: Mask,
    /// `N(c_i)`: word ids adjacent to character `i`, ascending.
    char_neighbors: Vec<Vec<usize>>,
    /// `N(w_j)`: character ids adjacent to word `j`, ascending.
    word_neighbors: Vec<Vec<usize>>,
}

impl LatticeGraph {
    /// Builds the standard graph for a sentence of `n` characters.
    pub fn build(n: usize, words: &[MatchedWord]) -> Result<Self> {
        for (j, w) in words.iter().enumerate() {
            if w.head > w.tail || w.tail >= n {
                return Err(Error::invalid(format!(
                    "word {j} '{}' span ({}, {}) is outside a sentence of length {n}",
                    w.surface, w.head, w.tail
                )));
            }
        }
        let m = words.len();
        let word_mask = Mask::from_fn(m, |j, k| j == k || words[j].overlaps(&words[k]));
        let char_neighbors = (0..n)
            .map(|i| (0..m).filter(|&j| words[j].covers(i)).collect())
            .collect();
        let word_neighbors = words.iter().map(|w| (w.head..=w.tail).collect()).collect();
        Ok(Self {
            n,
            words: words.to_vec(),
            char_mask: Mask::ones(n),
            word_mask,
            char_neighbors,
            word_neighbors,
        })
    }

    /// Returns a copy of this graph with the edge set rewritten for `variant`.
    pub fn with_variant(&self, variant: GraphVariant) -> Self {
        let mut g = self.clone();
        let (n, m) = (self.n, self.m());
        match variant {
            GraphVariant::Standard => {}
            GraphVariant::WoWordEdge => g.word_mask = Mask::identity(m),
            GraphVariant::FcIntra => g.word_mask = Mask::ones(m),
            GraphVariant::FcInter => {
                g.char_neighbors = vec![(0..m).collect(); n];
                g.word_neighbors = vec![(0..n).collect(); m];
            }
        }
        g
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.words.len()
    }

    pub fn words(&self) -> &[MatchedWord] {
        &self.words
    }

    /// `M_c`.
    pub fn char_mask(&self) -> &Mask {
        &self.char_mask
    }

    /// `M_w`.
    pub fn word_mask(&self) -> &Mask {
        &self.word_mask
    }

    pub fn char_neighbors(&self, i: usize) -> &[usize] {
        &self.char_neighbors[i]
    }

    pub fn word_neighbors(&self, j: usize) -> &[usize] {
        &self.word_neighbors[j]
    }

    pub fn all_char_neighbors(&self) -> &[Vec<usize>] {
        &self.char_neighbors
    }

    pub fn all_word_neighbors(&self) -> &[Vec<usize>] {
        &self.word_neighbors
    }

    /// Reorders word nodes: new word `k` is old word `order[k]`.
    pub fn permute_words(&self, order: &[usize]) -> Self {
        assert_eq!(order.len(), self.m());
        let mut inverse = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            inverse[old] = new;
        }
        let words = order
            .iter()
            .enumerate()
            .map(|(k, &old)| MatchedWord {
                word_id: k,
                ..self.words[old].clone()
            })
            .collect();
        let mut char_neighbors: Vec<Vec<usize>> = self
            .char_neighbors
            .iter()
            .map(|ns| ns.iter().map(|&j| inverse[j]).collect())
            .collect();
        for ns in &mut char_neighbors {
            ns.sort_unstable();
        }
        Self {
            n: self.n,
            words,
            char_mask: self.char_mask.clone(),
            word_mask: Mask::from_fn(order.len(), |a, b| self.word_mask.get(order[a], order[b])),
            char_neighbors,
            word_neighbors: order.iter().map(|&old| self.word_neighbors[old].clone()).collect(),
        }
    }

    /// Line-oriented text dump of nodes and edges.
    ///
    /// ```text
    /// sentence <id>
    /// chars <n>
    /// c <i> <char>
    /// words <m>
    /// w <j> <head> <tail> <surface>
    /// word_edges <j>-<k> ...        (j < k, self loops omitted)
    /// char_word <i>:<j>,<j> ...     (characters with at least one word)
    /// end
    /// ```
    pub fn to_text(&self, sentence_id: usize, chars: &[char]) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "sentence {sentence_id}");
        let _ = writeln!(out, "chars {}", self.n);
        for (i, ch) in chars.iter().enumerate().take(self.n) {
            let _ = writeln!(out, "c {i} {ch}");
        }
        let _ = writeln!(out, "words {}", self.m());
        for (j, w) in self.words.iter().enumerate() {
            let _ = writeln!(out, "w {j} {} {} {}", w.head, w.tail, w.surface);
        }
        out.push_str("word_edges");
        for j in 0..self.m() {
            for k in j + 1..self.m() {
                if self.word_mask.get(j, k) {
                    let _ = write!(out, " {j}-{k}");
                }
            }
        }
        out.push('\n');
        out.push_str("char_word");
        for (i, ns) in self.char_neighbors.iter().enumerate() {
            if !ns.is_empty() {
                let list: Vec<String> = ns.iter().map(usize::to_string).collect();
                let _ = write!(out, " {i}:{}", list.join(","));
            }
        }
        out.push_str("\nend\n");
        out
    }
}
