//! Lexicon trie and sentence matching.
//!
//! Every lexicon word that occurs as a contiguous character run of a sentence becomes a
//! [`MatchedWord`]. Occurrences are enumerated by walking the trie from every start
//! position, which reports overlapping and nested words alike.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
struct TrieNode {
    children: HashMap<char, usize>,
    word: Option<usize>,
}

/// Prefix tree over lexicon words. Immutable once built.
#[derive(Debug, Clone)]
pub struct LexiconTrie {
    nodes: Vec<TrieNode>,
    words: Vec<String>,
    max_len: usize,
}

impl Default for LexiconTrie {
    fn default() -> Self {
        Self {
            nodes: vec![TrieNode::default()],
            words: Vec::new(),
            max_len: 0,
        }
    }
}

impl LexiconTrie {
    /// Builds a trie from `lexicon`; duplicates are merged.
    pub fn build<S: AsRef<str>>(lexicon: &[S]) -> Result<Self> {
        let mut trie = Self::default();
        for (i, w) in lexicon.iter().enumerate() {
            let w = w.as_ref();
            if w.is_empty() {
                return Err(Error::invalid(format!("lexicon entry {i} is empty")));
            }
            trie.insert(w);
        }
        Ok(trie)
    }

    fn insert(&mut self, word: &str) {
        let mut node = 0;
        let mut len = 0;
        for ch in word.chars() {
            len += 1;
            node = match self.nodes[node].children.get(&ch) {
                Some(&next) => next,
                None => {
                    self.nodes.push(TrieNode::default());
                    let next = self.nodes.len() - 1;
                    self.nodes[node].children.insert(ch, next);
                    next
                }
            };
        }
        if self.nodes[node].word.is_none() {
            self.nodes[node].word = Some(self.words.len());
            self.words.push(word.to_string());
            self.max_len = self.max_len.max(len);
        }
    }

    /// Number of distinct words.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Distinct words in first-insertion order.
    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Length in characters of the longest word.
    pub fn max_word_len(&self) -> usize {
        self.max_len
    }

    pub fn contains(&self, word: &str) -> bool {
        self.find(word.chars()).is_some_and(|n| self.nodes[n].word.is_some())
    }

    /// True if some word starts with `prefix` (or equals it).
    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.find(prefix.chars()).is_some()
    }

    fn find(&self, chars: impl Iterator<Item = char>) -> Option<usize> {
        let mut node = 0;
        for ch in chars {
            node = *self.nodes[node].children.get(&ch)?;
        }
        Some(node)
    }

    /// Matches every lexicon word in `sentence` with the default options.
    pub fn match_sentence(&self, sentence: &[char]) -> SentenceMatches {
        self.match_with(sentence, &MatchOptions::default())
    }

    pub fn match_with(&self, sentence: &[char], opts: &MatchOptions) -> SentenceMatches {
        let cap = opts.max_len.unwrap_or(self.max_len);
        let mut words = Vec::new();
        for head in 0..sentence.len() {
            let mut node = 0;
            for (tail, ch) in sentence.iter().enumerate().skip(head) {
                if tail - head + 1 > cap {
                    break;
                }
                match self.nodes[node].children.get(ch) {
                    Some(&next) => node = next,
                    None => break,
                }
                let len = tail - head + 1;
                if len >= opts.min_len && self.nodes[node].word.is_some() {
                    words.push(MatchedWord {
                        word_id: 0,
                        surface: sentence[head..=tail].iter().collect(),
                        head,
                        tail,
                    });
                }
            }
        }
        // Walking heads in order and tails ascending already yields (head, tail) order.
        for (id, w) in words.iter_mut().enumerate() {
            w.word_id = id;
        }
        let subsets = WordSubsetIndex::new(sentence.len(), &words);
        SentenceMatches { words, subsets }
    }
}

/// Matching limits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchOptions {
    /// Shortest word to report. Single characters duplicate character nodes, so the default is 2.
    pub min_len: usize,
    /// Longest word to report; `None` means the longest lexicon word.
    pub max_len: Option<usize>,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self {
            min_len: 2,
            max_len: None,
        }
    }
}

/// One occurrence of a lexicon word in a sentence. `head` and `tail` are inclusive
/// 0-based character indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MatchedWord {
    pub word_id: usize,
    pub surface: String,
    pub head: usize,
    pub tail: usize,
}

impl MatchedWord {
    pub fn new(word_id: usize, surface: impl Into<String>, head: usize, tail: usize) -> Self {
        Self {
            word_id,
            surface: surface.into(),
            head,
            tail,
        }
    }

    pub fn len(&self) -> usize {
        self.tail + 1 - self.head
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn covers(&self, i: usize) -> bool {
        self.head <= i && i <= self.tail
    }

    pub fn overlaps(&self, other: &MatchedWord) -> bool {
        self.head <= other.tail && other.head <= self.tail
    }
}

/// `ws_i` for every character: the sorted ids of words whose span contains `i`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WordSubsetIndex {
    subsets: Vec<Vec<usize>>,
}

impl WordSubsetIndex {
    pub fn new(n: usize, words: &[MatchedWord]) -> Self {
        let mut subsets = vec![Vec::new(); n];
        for (id, w) in words.iter().enumerate() {
            for s in &mut subsets[w.head..=w.tail.min(n.saturating_sub(1))] {
                s.push(id);
            }
        }
        Self { subsets }
    }

    pub fn subset(&self, i: usize) -> &[usize] {
        &self.subsets[i]
    }

    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.subsets.iter().map(Vec::as_slice)
    }
}

/// Output of matching one sentence: the full word set and per-character subsets.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SentenceMatches {
    pub words: Vec<MatchedWord>,
    pub subsets: WordSubsetIndex,
}

/// Role of a matched word relative to the gold entities of its sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LecLabel {
    /// Span equals a gold entity span.
    Match = 0,
    /// Span lies strictly inside a gold entity span.
    Cover = 1,
    /// Anything else: crosses an entity boundary, contains an entity, or lies outside all entities.
    Disturb = 2,
}

impl LecLabel {
    pub const COUNT: usize = 3;
    pub const ALL: [LecLabel; 3] = [LecLabel::Match, LecLabel::Cover, LecLabel::Disturb];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for LecLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LecLabel::Match => "Match",
            LecLabel::Cover => "Cover",
            LecLabel::Disturb => "Disturb",
        })
    }
}

/// Labels each word as Match, Cover or Disturb against `gold` spans `(head, tail, type)`.
///
/// Gold spans must not overlap.
pub fn label_lec<S>(words: &[MatchedWord], gold: &[(usize, usize, S)]) -> Result<Vec<LecLabel>> {
    let mut spans: Vec<(usize, usize)> = gold.iter().map(|(h, t, _)| (*h, *t)).collect();
    spans.sort_unstable();
    for &(h, t) in &spans {
        if h > t {
            return Err(Error::invalid(format!("gold span ({h}, {t}) has head after tail")));
        }
    }
    for pair in spans.windows(2) {
        if pair[1].0 <= pair[0].1 {
            return Err(Error::invalid(format!(
                "gold spans {:?} and {:?} overlap",
                pair[0], pair[1]
            )));
        }
    }
    Ok(words
        .iter()
        .map(|w| {
            let mut label = LecLabel::Disturb;
            for &(h, t) in &spans {
                if w.head == h && w.tail == t {
                    label = LecLabel::Match;
                    break;
                }
                if h <= w.head && w.tail <= t {
                    label = LecLabel::Cover;
                    break;
                }
            }
            label
        })
        .collect())
}

/// Reads a lexicon file: one word per line, an optional whitespace-separated
/// second column (frequency) is ignored. Blank lines are skipped.
pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_lexicon(&text))
}

pub fn parse_lexicon(text: &str) -> Vec<String> {
    text.lines()
        .filter_map(|l| l.split_whitespace().next())
        .map(str::to_string)
        .collect()
}

/// Distinct multi-character entries of a lexicon; the order is stable and defines word vocabulary ids.
pub fn distinct_words<S: AsRef<str>>(lexicon: &[S], min_len: usize) -> Vec<String> {
    let mut seen = BTreeSet::new();
    lexicon
        .iter()
        .map(AsRef::as_ref)
        .filter(|w| w.chars().count() >= min_len)
        .filter(|w| seen.insert(w.to_string()))
        .map(str::to_string)
        .collect()
}
