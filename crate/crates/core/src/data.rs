//! Tagged corpora, entity spans, strict-match evaluation and dataset statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{label_lec, LecLabel, LexiconTrie, MatchOptions};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

pub const OUTSIDE: &str = "O";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TagScheme {
    /// `B-T`, `I-T`, `O`.
    #[default]
    Bio,
    /// `B-T`, `M-T`, `E-T`, `S-T`, `O`.
    Bmes,
}

impl TagScheme {
    fn prefixes(self) -> &'static [&'static str] {
        match self {
            TagScheme::Bio => &["B", "I"],
            TagScheme::Bmes => &["B", "M", "E", "S"],
        }
    }
}

impl FromStr for TagScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bio" => Ok(TagScheme::Bio),
            "bmes" | "bioes" => Ok(TagScheme::Bmes),
            _ => Err(Error::Config(format!("unknown tag scheme '{s}' (expected bio or bmes)"))),
        }
    }
}

impl fmt::Display for TagScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TagScheme::Bio => "bio",
            TagScheme::Bmes => "bmes",
        })
    }
}

/// A typed entity span with inclusive character bounds.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Entity {
    pub head: usize,
    pub tail: usize,
    pub kind: String,
}

impl Entity {
    pub fn new(head: usize, tail: usize, kind: impl Into<String>) -> Self {
        Self {
            head,
            tail,
            kind: kind.into(),
        }
    }

    pub fn as_tuple(&self) -> (usize, usize, &str) {
        (self.head, self.tail, &self.kind)
    }
}

fn split_tag(tag: &str) -> Option<(&str, &str)> {
    let (prefix, kind) = tag.split_once('-')?;
    (!kind.is_empty()).then_some((prefix, kind))
}

/// Checks that `tag` is well-formed for `scheme`.
pub fn validate_tag(tag: &str, scheme: TagScheme) -> Result<()> {
    if tag == OUTSIDE {
        return Ok(());
    }
    match split_tag(tag) {
        Some((prefix, _)) if scheme.prefixes().contains(&prefix) => Ok(()),
        _ => Err(Error::invalid(format!("tag '{tag}' is not valid in the {scheme} scheme"))),
    }
}

/// Decodes entity spans from a tag sequence.
///
/// Ill-formed sequences are read leniently (an `I-T` without an open `T` starts a new
/// entity); the returned flag reports whether any repair was needed.
pub fn extract_spans<S: AsRef<str>>(tags: &[S], scheme: TagScheme) -> (Vec<Entity>, bool) {
    let mut out = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    let mut repaired = false;
    let close = |open: &mut Option<(usize, &str)>, end: usize, out: &mut Vec<Entity>| {
        if let Some((h, k)) = open.take() {
            out.push(Entity::new(h, end, k));
        }
    };
    for (i, tag) in tags.iter().enumerate() {
        let tag = tag.as_ref();
        let Some((prefix, kind)) = split_tag(tag) else {
            if open.is_some() && scheme == TagScheme::Bmes {
                repaired = true;
            }
            close(&mut open, i.saturating_sub(1), &mut out);
            continue;
        };
        let continues = matches!(open, Some((_, k)) if k == kind);
        match (scheme, prefix) {
            (_, "B") => {
                if open.is_some() && scheme == TagScheme::Bmes {
                    repaired = true;
                }
                close(&mut open, i.saturating_sub(1), &mut out);
                open = Some((i, kind));
            }
            (TagScheme::Bio, "I") | (TagScheme::Bmes, "M") => {
                if !continues {
                    repaired = true;
                    close(&mut open, i.saturating_sub(1), &mut out);
                    open = Some((i, kind));
                }
            }
            (TagScheme::Bmes, "E") => {
                if !continues {
                    repaired = true;
                    close(&mut open, i.saturating_sub(1), &mut out);
                    open = Some((i, kind));
                }
                close(&mut open, i, &mut out);
            }
            (TagScheme::Bmes, "S") => {
                if open.is_some() {
                    repaired = true;
                }
                close(&mut open, i.saturating_sub(1), &mut out);
                out.push(Entity::new(i, i, kind));
            }
            _ => {
                // Prefix outside the scheme: treat as outside.
                repaired = true;
                close(&mut open, i.saturating_sub(1), &mut out);
            }
        }
    }
    if open.is_some() && scheme == TagScheme::Bmes {
        repaired = true;
    }
    close(&mut open, tags.len().saturating_sub(1), &mut out);
    (out, repaired)
}

/// Renders non-overlapping spans as tags over `n` characters.
pub fn render_spans(n: usize, entities: &[Entity], scheme: TagScheme) -> Vec<String> {
    let mut tags = vec![OUTSIDE.to_string(); n];
    for e in entities {
        let k = &e.kind;
        match scheme {
            TagScheme::Bio => {
                tags[e.head] = format!("B-{k}");
                for t in &mut tags[e.head + 1..=e.tail] {
                    *t = format!("I-{k}");
                }
            }
            TagScheme::Bmes if e.head == e.tail => tags[e.head] = format!("S-{k}"),
            TagScheme::Bmes => {
                tags[e.head] = format!("B-{k}");
                for t in &mut tags[e.head + 1..e.tail] {
                    *t = format!("M-{k}");
                }
                tags[e.tail] = format!("E-{k}");
            }
        }
    }
    tags
}

/// Label inventory: `O` is always id 0, followed by every prefix of each type in sorted type order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSet {
    scheme: TagScheme,
    labels: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl TagSet {
    pub fn new<S: AsRef<str>>(scheme: TagScheme, types: impl IntoIterator<Item = S>) -> Self {
        let types: BTreeSet<String> = types.into_iter().map(|t| t.as_ref().to_string()).collect();
        let mut labels = vec![OUTSIDE.to_string()];
        for t in &types {
            for p in scheme.prefixes() {
                labels.push(format!("{p}-{t}"));
            }
        }
        let mut set = Self {
            scheme,
            labels,
            index: HashMap::new(),
        };
        set.reindex();
        set
    }

    /// Tag set covering every entity type in `corpus`.
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let types = corpus
            .sentences
            .iter()
            .flat_map(|s| s.entities.iter().map(|e| e.kind.clone()));
        Self::new(corpus.scheme, types)
    }

    pub fn reindex(&mut self) {
        self.index = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
    }

    pub fn scheme(&self) -> TagScheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn encode<S: AsRef<str>>(&self, tags: &[S]) -> Result<Vec<usize>> {
        tags.iter()
            .map(|t| {
                self.id(t.as_ref())
                    .ok_or_else(|| Error::invalid(format!("tag '{}' is not in the tag set", t.as_ref())))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.labels[i].clone()).collect()
    }

    /// `(K + 2) × (K + 2)` penalty matrix that forbids ill-formed label transitions with `-inf`.
    pub fn transition_constraints<T: Scalar>(&self) -> Matrix<T> {
        let k = self.len();
        let (start, stop) = (k, k + 1);
        let parse = |i: usize| split_tag(&self.labels[i]);
        // Labels that may follow an open entity of `kind` / that continue one.
        let continues = |prefix: &str| match self.scheme {
            TagScheme::Bio => prefix == "I",
            TagScheme::Bmes => prefix == "M" || prefix == "E",
        };
        let leaves_open = |prefix: &str| match self.scheme {
            TagScheme::Bio => false,
            TagScheme::Bmes => prefix == "B" || prefix == "M",
        };
        let opens = |prefix: &str| match self.scheme {
            TagScheme::Bio => prefix == "B" || prefix == "I",
            TagScheme::Bmes => prefix == "B" || prefix == "M",
        };
        let allowed = |from: usize, to: usize| -> bool {
            let src = if from == start { None } else { parse(from) };
            if to == stop {
                return !src.is_some_and(|(p, _)| leaves_open(p));
            }
            let dst = parse(to);
            match (src, dst) {
                (None, None) => true,
                (None, Some((p, _))) => !continues(p),
                (Some((p, _)), None) => !leaves_open(p),
                (Some((sp, sk)), Some((dp, dk))) => {
                    if continues(dp) {
                        opens(sp) && sk == dk
                    } else {
                        !leaves_open(sp)
                    }
                }
            }
        };
        Matrix::from_fn(k + 2, k + 2, |i, j| {
            if i == stop || j == start || !allowed(i, j) {
                T::neg_infinity()
            } else {
                T::zero()
            }
        })
    }
}

/// One tagged sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub chars: Vec<char>,
    pub tags: Vec<String>,
    pub entities: Vec<Entity>,
}

impl Sentence {
    pub fn from_entities(chars: Vec<char>, entities: Vec<Entity>, scheme: TagScheme) -> Self {
        let tags = render_spans(chars.len(), &entities, scheme);
        Self {
            chars,
            tags,
            entities,
        }
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn text(&self) -> String {
        self.chars.iter().collect()
    }

    /// Gold spans as `(head, tail, type)`.
    pub fn spans(&self) -> Vec<(usize, usize, String)> {
        self.entities
            .iter()
            .map(|e| (e.head, e.tail, e.kind.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub scheme: TagScheme,
    pub sentences: Vec<Sentence>,
    /// Sentences whose gold tags were ill-formed and rewritten.
    pub repaired: usize,
}

impl Corpus {
    pub fn new(scheme: TagScheme, sentences: Vec<Sentence>) -> Self {
        Self {
            scheme,
            sentences,
            repaired: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn entity_count(&self) -> usize {
        self.sentences.iter().map(|s| s.entities.len()).sum()
    }

    /// Two-column text: `char<TAB>tag` per line, blank line after each sentence.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            for (ch, tag) in s.chars.iter().zip(&s.tags) {
                let _ = writeln!(out, "{ch}\t{tag}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn load_corpus(path: impl AsRef<Path>, scheme: TagScheme) -> Result<Corpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, path, scheme)
}

/// Parses `char<TAB>tag` lines; sentences are separated by blank lines.
pub fn parse_corpus(text: &str, path: &Path, scheme: TagScheme) -> Result<Corpus> {
    let mut corpus = Corpus::new(scheme, Vec::new());
    let mut chars = Vec::new();
    let mut tags = Vec::new();
    let flush = |chars: &mut Vec<char>, tags: &mut Vec<String>, corpus: &mut Corpus| {
        if chars.is_empty() {
            return;
        }
        let (entities, repaired) = extract_spans(tags, scheme);
        let raw = std::mem::take(tags);
        let tags = if repaired {
            corpus.repaired += 1;
            render_spans(chars.len(), &entities, scheme)
        } else {
            raw
        };
        corpus.sentences.push(Sentence {
            chars: std::mem::take(chars),
            tags,
            entities,
        });
    };
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut chars, &mut tags, &mut corpus);
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let (token, tag) = line
            .split_once('\t')
            .or_else(|| line.split_once(' '))
            .ok_or_else(|| err("expected 'character<TAB>tag'".to_string()))?;
        let mut it = token.chars();
        let ch = match (it.next(), it.next()) {
            (Some(ch), None) => ch,
            _ => return Err(err(format!("expected a single character, found '{token}'"))),
        };
        let tag = tag.trim();
        validate_tag(tag, scheme).map_err(|e| err(e.to_string()))?;
        chars.push(ch);
        tags.push(tag.to_string());
    }
    flush(&mut chars, &mut tags, &mut corpus);
    if corpus.repaired > 0 {
        log::warn!(
            "{}: repaired {} ill-formed tag sequences",
            path.display(),
            corpus.repaired
        );
    }
    Ok(corpus)
}

/// Reads the first column of a one-character-per-line file; blank lines separate sentences.
pub fn parse_columns(text: &str, path: &Path) -> Result<Vec<Vec<char>>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            continue;
        }
        let token = line.split(['\t', ' ']).next().unwrap_or("");
        let mut it = token.chars();
        match (it.next(), it.next()) {
            (Some(ch), None) => cur.push(ch),
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: format!("expected a single character, found '{token}'"),
                })
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    Ok(out)
}

/// Precision, recall and F1 for one entity type or overall.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Scores {
    pub predicted: usize,
    pub gold: usize,
    pub correct: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Scores {
    pub fn from_counts(predicted: usize, gold: usize, correct: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(correct, predicted);
        let recall = ratio(correct, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            predicted,
            gold,
            correct,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct EvalReport {
    pub overall: Scores,
    pub per_type: BTreeMap<String, Scores>,
}

impl EvalReport {
    pub fn precision(&self) -> f64 {
        self.overall.precision
    }

    pub fn recall(&self) -> f64 {
        self.overall.recall
    }

    pub fn f1(&self) -> f64 {
        self.overall.f1
    }

    /// Aligned table followed by `key=value` lines.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>9} {:>9} {:>9} {:>7} {:>7} {:>7}",
            "type", "precision", "recall", "f1", "pred", "gold", "correct"
        );
        let mut row = |name: &str, s: &Scores| {
            let _ = writeln!(
                out,
                "{:<12} {:>9.4} {:>9.4} {:>9.4} {:>7} {:>7} {:>7}",
                name, s.precision, s.recall, s.f1, s.predicted, s.gold, s.correct
            );
        };
        for (k, s) in &self.per_type {
            row(k, s);
        }
        row("overall", &self.overall);
        let o = &self.overall;
        let _ = writeln!(
            out,
            "eval precision={:.6} recall={:.6} f1={:.6} predicted={} gold={} correct={}",
            o.precision, o.recall, o.f1, o.predicted, o.gold, o.correct
        );
        for (k, s) in &self.per_type {
            let _ = writeln!(
                out,
                "eval_type type={k} precision={:.6} recall={:.6} f1={:.6}",
                s.precision, s.recall, s.f1
            );
        }
        out
    }
}

/// Strict span-and-type match between predicted and gold entities, sentence by sentence.
pub fn evaluate_spans(pred: &[Vec<Entity>], gold: &[Vec<Entity>]) -> Result<EvalReport> {
    if pred.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} predicted sentences for {} gold sentences",
            pred.len(),
            gold.len()
        )));
    }
    let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    for (p, g) in pred.iter().zip(gold) {
        let gold_set: BTreeSet<&Entity> = g.iter().collect();
        for e in p {
            let c = counts.entry(e.kind.clone()).or_default();
            c.0 += 1;
            if gold_set.contains(e) {
                c.2 += 1;
            }
        }
        for e in g {
            counts.entry(e.kind.clone()).or_default().1 += 1;
        }
    }
    let (mut tp, mut tg, mut tc) = (0, 0, 0);
    let per_type = counts
        .into_iter()
        .map(|(k, (p, g, c))| {
            tp += p;
            tg += g;
            tc += c;
            (k, Scores::from_counts(p, g, c))
        })
        .collect();
    Ok(EvalReport {
        overall: Scores::from_counts(tp, tg, tc),
        per_type,
    })
}

/// Evaluates predicted tag sequences against a gold corpus.
pub fn evaluate<S: AsRef<str>>(pred: &[Vec<S>], gold: &Corpus) -> Result<EvalReport> {
    if pred.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} predicted sentences for {} gold sentences",
            pred.len(),
            gold.len()
        )));
    }
    let mut pred_spans = Vec::with_capacity(pred.len());
    for (i, (p, g)) in pred.iter().zip(&gold.sentences).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Shape(format!(
                "sentence {i}: {} predicted tags for {} characters",
                p.len(),
                g.len()
            )));
        }
        pred_spans.push(extract_spans(p, gold.scheme).0);
    }
    let gold_spans: Vec<Vec<Entity>> = gold.sentences.iter().map(|s| s.entities.clone()).collect();
    evaluate_spans(&pred_spans, &gold_spans)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub sentences: usize,
    pub entities: usize,
    pub entity_avg: f64,
    pub matched_words: usize,
    /// Matched words labelled Match or Cover.
    pub effective_words: usize,
    /// `effective_words / entities × 100`.
    pub rate_word_ent: f64,
}

impl CorpusStats {
    pub fn render(&self) -> String {
        format!(
            "{:<16} {:>10}\n{:<16} {:>10}\n{:<16} {:>10.4}\n{:<16} {:>10}\n{:<16} {:>10}\n{:<16} {:>10.4}\n\
             stats sentences={} entities={} entity_avg={:.6} matched_words={} effective_words={} rate_word_ent={:.6} rate_definition=match_or_cover_words_per_entity\n",
            "sentences", self.sentences,
            "entities", self.entities,
            "entity_avg", self.entity_avg,
            "matched_words", self.matched_words,
            "effective_words", self.effective_words,
            "rate_word_ent(%)", self.rate_word_ent,
            self.sentences, self.entities, self.entity_avg, self.matched_words, self.effective_words, self.rate_word_ent,
        )
    }
}

pub fn corpus_stats(corpus: &Corpus, trie: &LexiconTrie, opts: &MatchOptions) -> Result<CorpusStats> {
    let mut matched = 0;
    let mut effective = 0;
    for s in &corpus.sentences {
        let words = trie.match_with(&s.chars, opts).words;
        matched += words.len();
        let labels = label_lec(&words, &s.spans())?;
        effective += labels.iter().filter(|&&l| l != LecLabel::Disturb).count();
    }
    let entities = corpus.entity_count();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(CorpusStats {
        sentences: corpus.len(),
        entities,
        entity_avg: ratio(entities, corpus.len()),
        matched_words: matched,
        effective_words: effective,
        rate_word_ent: ratio(effective, entities) * 100.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("test.txt")
    }

    #[test]
    fn empty_file() {
        let c = parse_corpus("", p(), TagScheme::Bio).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn two_sentences() {
        let text = "北\tB-GPE\n京\tI-GPE\n人\tO\n\n人\tB-ORG\n民\tI-ORG\n\n\n";
        let c = parse_corpus(text, p(), TagScheme::Bio).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.sentences[0].len(), 3);
        assert_eq!(c.sentences[1].len(), 2);
        assert_eq!(c.sentences[0].entities, vec![Entity::new(0, 1, "GPE")]);
        assert_eq!(c.to_text(), "北\tB-GPE\n京\tI-GPE\n人\tO\n\n人\tB-ORG\n民\tI-ORG\n\n");
    }

    #[test]
    fn malformed_line_reports_number() {
        let err = parse_corpus("北\tO\n京\n", p(), TagScheme::Bio).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_corpus("北\tO\n京\tX-LOC\n", p(), TagScheme::Bio).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_corpus("北京\tO\n", p(), TagScheme::Bio).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn stray_inside_is_promoted() {
        let c = parse_corpus("a\tO\nb\tI-LOC\nc\tI-LOC\n", p(), TagScheme::Bio).unwrap();
        assert_eq!(c.repaired, 1);
        assert_eq!(c.sentences[0].tags, vec!["O", "B-LOC", "I-LOC"]);
        assert_eq!(c.sentences[0].entities, vec![Entity::new(1, 2, "LOC")]);
    }

    #[test]
    fn type_switch_inside_starts_new_entity() {
        let (spans, repaired) = extract_spans(&["B-LOC", "I-ORG"], TagScheme::Bio);
        assert!(repaired);
        assert_eq!(spans, vec![Entity::new(0, 0, "LOC"), Entity::new(1, 1, "ORG")]);
    }

    #[test]
    fn bmes_round_trip() {
        let ents = vec![Entity::new(0, 0, "PER"), Entity::new(2, 4, "ORG"), Entity::new(5, 6, "LOC")];
        let tags = render_spans(8, &ents, TagScheme::Bmes);
        assert_eq!(tags, vec!["S-PER", "O", "B-ORG", "M-ORG", "E-ORG", "B-LOC", "E-LOC", "O"]);
        assert_eq!(extract_spans(&tags, TagScheme::Bmes), (ents, false));
    }

    #[test]
    fn eval_partial() {
        let gold = vec![vec![Entity::new(0, 1, "GPE"), Entity::new(2, 6, "ORG")]];
        let pred = vec![vec![Entity::new(0, 1, "GPE")]];
        let r = evaluate_spans(&pred, &gold).unwrap();
        assert_eq!(r.precision(), 1.0);
        assert_eq!(r.recall(), 0.5);
        assert!((r.f1() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.per_type["ORG"].recall, 0.0);
    }

    #[test]
    fn eval_identity_and_empty() {
        let gold = vec![vec![Entity::new(0, 1, "GPE")], vec![]];
        let r = evaluate_spans(&gold, &gold).unwrap();
        assert_eq!((r.precision(), r.recall(), r.f1()), (1.0, 1.0, 1.0));
        let r = evaluate_spans(&[vec![], vec![]], &[vec![], vec![]]).unwrap();
        assert_eq!(r.f1(), 0.0);
        assert!(evaluate_spans(&gold[..1], &gold).is_err());
    }

    #[test]
    fn wrong_type_is_not_correct() {
        let gold = vec![vec![Entity::new(0, 1, "GPE")]];
        let pred = vec![vec![Entity::new(0, 1, "LOC")]];
        assert_eq!(evaluate_spans(&pred, &gold).unwrap().overall.correct, 0);
    }

    #[test]
    fn tagset_layout() {
        let t = TagSet::new(TagScheme::Bio, ["ORG", "GPE", "ORG"]);
        assert_eq!(t.labels(), &["O", "B-GPE", "I-GPE", "B-ORG", "I-ORG"]);
        assert_eq!(t.encode(&["O", "B-ORG"]).unwrap(), vec![0, 3]);
        assert!(t.encode(&["B-PER"]).is_err());
    }

    #[test]
    fn bio_constraints() {
        let t = TagSet::new(TagScheme::Bio, ["A", "B"]);
        let m = t.transition_constraints::<f64>();
        let id = |s: &str| t.id(s).unwrap();
        let (start, stop) = (t.len(), t.len() + 1);
        assert_eq!(m[(id("O"), id("I-A"))], f64::NEG_INFINITY);
        assert_eq!(m[(id("B-B"), id("I-A"))], f64::NEG_INFINITY);
        assert_eq!(m[(start, id("I-A"))], f64::NEG_INFINITY);
        assert_eq!(m[(id("B-A"), id("I-A"))], 0.0);
        assert_eq!(m[(id("I-A"), id("I-A"))], 0.0);
        assert_eq!(m[(id("I-A"), stop)], 0.0);
        assert_eq!(m[(id("I-A"), id("B-B"))], 0.0);
    }

    #[test]
    fn stats() {
        let c = Corpus::new(
            TagScheme::Bio,
            vec![
                Sentence::from_entities("北京人".chars().collect(), vec![Entity::new(0, 1, "GPE")], TagScheme::Bio),
                Sentence::from_entities(
                    "人民大会堂".chars().collect(),
                    vec![Entity::new(0, 4, "ORG"), ],
                    TagScheme::Bio,
                ),
                Sentence::from_entities("好".chars().collect(), vec![Entity::new(0, 0, "X")], TagScheme::Bio),
            ],
        );
        let empty = LexiconTrie::build::<&str>(&[]).unwrap();
        let s = corpus_stats(&c, &empty, &MatchOptions::default()).unwrap();
        assert_eq!(s.entity_avg, 1.0);
        assert_eq!(s.rate_word_ent, 0.0);
        let trie = LexiconTrie::build(&["北京", "人民", "大会", "京人"]).unwrap();
        let s = corpus_stats(&c, &trie, &MatchOptions::default()).unwrap();
        assert_eq!(s.matched_words, 4);
        assert_eq!(s.effective_words, 3);
        assert!((s.rate_word_ent - 100.0).abs() < 1e-12);
    }
}
