use std::collections::BTreeSet;

use lattice_ner::crf::{self, log_partition, marginals, path_score, viterbi_decode};
use lattice_ner::data::{evaluate, extract_spans, render_spans, Corpus, Entity, Sentence, TagScheme};
use lattice_ner::encoding::{encode_word, EmbeddingTable, Vocab, WordProjection};
use lattice_ner::fusion::{attention_with_weights, FusionSettings, SourceParams};
use lattice_ner::lexicon::{label_lec, LecLabel, LexiconTrie};
use lattice_ner::train::lambda_at;
use lattice_ner::{GraphVariant, LatticeGraph, MatchedWord, Matrix64};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const ALPHABET: [char; 5] = ['a', 'b', 'c', 'd', 'e'];

fn sentence() -> impl Strategy<Value = Vec<char>> {
    prop::collection::vec(prop::sample::select(&ALPHABET[..]), 0..25)
}

fn lexicon() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(
        prop::collection::vec(prop::sample::select(&ALPHABET[..]), 1..5).prop_map(|w| w.into_iter().collect()),
        0..30,
    )
}

fn naive(sentence: &[char], lexicon: &[String]) -> BTreeSet<(String, usize, usize)> {
    let mut out = BTreeSet::new();
    for w in lexicon {
        let wc: Vec<char> = w.chars().collect();
        if wc.len() < 2 || wc.len() > sentence.len() {
            continue;
        }
        for h in 0..=sentence.len() - wc.len() {
            if sentence[h..h + wc.len()] == wc[..] {
                out.insert((w.clone(), h, h + wc.len() - 1));
            }
        }
    }
    out
}

fn as_set(words: &[MatchedWord]) -> BTreeSet<(String, usize, usize)> {
    words.iter().map(|w| (w.surface.clone(), w.head, w.tail)).collect()
}

/// Non-overlapping spans over `n` characters with types from a small pool.
fn entities(n: usize) -> impl Strategy<Value = Vec<Entity>> {
    prop::collection::vec((0..n.max(1), 1..4usize, 0..3usize), 0..5).prop_map(move |cands| {
        let mut taken = vec![false; n];
        let mut out = Vec::new();
        for (head, len, kind) in cands {
            let tail = head + len - 1;
            if tail < n && !taken[head..=tail].iter().any(|&t| t) {
                taken[head..=tail].iter_mut().for_each(|t| *t = true);
                out.push(Entity::new(head, tail, ["PER", "LOC", "ORG"][kind]));
            }
        }
        out.sort_by_key(|e| e.head);
        out
    })
}

fn scores(n: usize, k: usize) -> impl Strategy<Value = (Matrix64, Matrix64)> {
    (
        prop::collection::vec(-3.0..3.0f64, n * k),
        prop::collection::vec(-2.0..2.0f64, (k + 2) * (k + 2)),
    )
        .prop_map(move |(e, t)| {
            (
                Matrix64::from_vec(n, k, e),
                crf::forbid_start_stop(&Matrix64::from_vec(k + 2, k + 2, t)),
            )
        })
}

fn all_paths(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0..k.pow(n as u32))
        .map(|mut code| {
            (0..n)
                .map(|_| {
                    let y = code % k;
                    code /= k;
                    y
                })
                .collect()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_equal_substring_scan(s in sentence(), lex in lexicon()) {
        let trie = LexiconTrie::build(&lex).unwrap();
        prop_assert_eq!(as_set(&trie.match_sentence(&s).words), naive(&s, &lex));
    }

    #[test]
    fn matching_ignores_insertion_order_and_repeats(s in sentence(), lex in lexicon(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut shuffled = lex.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = LexiconTrie::build(&lex).unwrap();
        let b = LexiconTrie::build(&shuffled).unwrap();
        prop_assert_eq!(as_set(&a.match_sentence(&s).words), as_set(&b.match_sentence(&s).words));
        prop_assert_eq!(a.match_sentence(&s), a.match_sentence(&s));
    }

    #[test]
    fn each_distinct_word_is_stored_once(lex in lexicon()) {
        let trie = LexiconTrie::build(&lex).unwrap();
        let distinct: BTreeSet<&String> = lex.iter().collect();
        prop_assert_eq!(trie.len(), distinct.len());
        for w in &lex {
            prop_assert!(trie.contains(w));
        }
    }

    #[test]
    fn word_subsets_cover_their_character(s in sentence(), lex in lexicon()) {
        let trie = LexiconTrie::build(&lex).unwrap();
        let m = trie.match_sentence(&s);
        prop_assert_eq!(m.subsets.len(), s.len());
        for i in 0..s.len() {
            let expected: Vec<usize> = (0..m.words.len()).filter(|&j| m.words[j].covers(i)).collect();
            prop_assert_eq!(m.subsets.subset(i), &expected[..]);
            for &j in m.subsets.subset(i) {
                prop_assert!(m.words[j].head <= i && i <= m.words[j].tail);
            }
        }
    }

    #[test]
    fn lec_labels_partition_words((s, ents) in sentence().prop_flat_map(|s| { let n = s.len(); (Just(s), entities(n)) }), lex in lexicon()) {
        let trie = LexiconTrie::build(&lex).unwrap();
        let words = trie.match_sentence(&s).words;
        let spans: Vec<(usize, usize, String)> = ents.iter().map(|e| (e.head, e.tail, e.kind.clone())).collect();
        let labels = label_lec(&words, &spans).unwrap();
        prop_assert_eq!(labels.len(), words.len());
        for (w, l) in words.iter().zip(&labels) {
            let exact = spans.iter().any(|&(h, t, _)| w.head == h && w.tail == t);
            let inside = spans.iter().any(|&(h, t, _)| h <= w.head && w.tail <= t);
            let want = if exact { LecLabel::Match } else if inside { LecLabel::Cover } else { LecLabel::Disturb };
            prop_assert_eq!(*l, want);
        }
    }

    #[test]
    fn graph_masks_are_symmetric_and_consistent(s in sentence(), lex in lexicon(), v in 0..4usize) {
        let trie = LexiconTrie::build(&lex).unwrap();
        let words = trie.match_sentence(&s).words;
        let g = LatticeGraph::build(s.len(), &words).unwrap();
        let g = g.with_variant(GraphVariant::ALL[v]);
        prop_assert!(g.word_mask().is_symmetric());
        prop_assert!(g.char_mask().is_symmetric());
        for j in 0..g.m() {
            prop_assert!(g.word_mask().get(j, j));
        }
        for i in 0..g.n() {
            for &j in g.char_neighbors(i) {
                prop_assert!(g.word_neighbors(j).contains(&i));
            }
        }
        for j in 0..g.m() {
            for &i in g.word_neighbors(j) {
                prop_assert!(g.char_neighbors(i).contains(&j));
            }
        }
        prop_assert_eq!(LatticeGraph::build(s.len(), &words).unwrap().with_variant(GraphVariant::ALL[v]), g);
    }

    #[test]
    fn standard_word_edges_are_overlaps(s in sentence(), lex in lexicon()) {
        let trie = LexiconTrie::build(&lex).unwrap();
        let words = trie.match_sentence(&s).words;
        let g = LatticeGraph::build(s.len(), &words).unwrap();
        for j in 0..g.m() {
            for k in 0..g.m() {
                prop_assert_eq!(g.word_mask().get(j, k), words[j].overlaps(&words[k]));
            }
        }
    }

    #[test]
    fn render_then_extract_is_identity((n, ents) in (0..20usize).prop_flat_map(|n| (Just(n), entities(n))), bmes in any::<bool>()) {
        let scheme = if bmes { TagScheme::Bmes } else { TagScheme::Bio };
        let tags = render_spans(n, &ents, scheme);
        prop_assert_eq!(tags.len(), n);
        let (back, repaired) = extract_spans(&tags, scheme);
        prop_assert!(!repaired);
        prop_assert_eq!(back, ents);
    }

    #[test]
    fn evaluation_is_order_free_and_bounded(
        sents in prop::collection::vec((1..12usize).prop_flat_map(|n| (Just(n), entities(n), entities(n))), 1..8),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let gold: Vec<Sentence> = sents
            .iter()
            .map(|(n, g, _)| Sentence::from_entities(vec!['x'; *n], g.clone(), TagScheme::Bio))
            .collect();
        let pred: Vec<Vec<String>> = sents.iter().map(|(n, _, p)| render_spans(*n, p, TagScheme::Bio)).collect();
        let report = evaluate(&pred, &Corpus::new(TagScheme::Bio, gold.clone())).unwrap();
        for v in [report.precision(), report.recall(), report.f1()] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let mut order: Vec<usize> = (0..gold.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let gold2 = Corpus::new(TagScheme::Bio, order.iter().map(|&i| gold[i].clone()).collect());
        let pred2: Vec<Vec<String>> = order.iter().map(|&i| pred[i].clone()).collect();
        prop_assert_eq!(evaluate(&pred2, &gold2).unwrap(), report);
    }

    #[test]
    fn schedule_is_monotone_with_floor(l0 in 0.0..=1.0f64, l1 in 0.0..=1.0f64, tau in 0.0..=1.0f64) {
        prop_assert_eq!(lambda_at(0, l0, l1, tau), l0.max(tau));
        let mut prev = f64::INFINITY;
        for t in 0..=100 {
            let l = lambda_at(t, l0, l1, tau);
            prop_assert!(l >= tau && l <= prev);
            prev = l;
        }
    }

    #[test]
    fn crf_marginals_are_distributions((e, t) in (1..5usize, 1..4usize).prop_flat_map(|(n, k)| scores(n, k))) {
        let (n, k) = e.shape();
        let m = marginals(&e, &t);
        for i in 0..n {
            prop_assert!((m.unary.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let z = log_partition(&e, &t);
        let total: f64 = all_paths(n, k).iter().map(|p| (path_score(&e, &t, p) - z).exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        for p in all_paths(n, k) {
            let prob = (path_score(&e, &t, &p) - z).exp();
            prop_assert!(prob > 0.0 && prob <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn viterbi_beats_every_path((e, t) in (1..5usize, 1..4usize).prop_flat_map(|(n, k)| scores(n, k))) {
        let (n, k) = e.shape();
        let best = viterbi_decode(&e, &t);
        let best_score = path_score(&e, &t, &best);
        for p in all_paths(n, k) {
            prop_assert!(path_score(&e, &t, &p) <= best_score + 1e-12);
        }
    }

    #[test]
    fn emission_shift_leaves_posteriors((e, t) in (1..5usize, 2..4usize).prop_flat_map(|(n, k)| scores(n, k)), shift in -5.0..5.0f64, pos in 0..5usize) {
        let (n, k) = e.shape();
        let pos = pos % n;
        let mut shifted = e.clone();
        for y in 0..k {
            shifted[(pos, y)] += shift;
        }
        prop_assert_eq!(viterbi_decode(&shifted, &t), viterbi_decode(&e, &t));
        let (a, b) = (marginals(&e, &t), marginals(&shifted, &t));
        for (x, y) in a.unary.as_slice().iter().zip(b.unary.as_slice()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn masked_words_get_zero_attention(s in sentence(), lex in lexicon(), seed in any::<u64>()) {
        let trie = LexiconTrie::build(&lex).unwrap();
        let words = trie.match_sentence(&s).words;
        let g = LatticeGraph::build(s.len(), &words).unwrap();
        prop_assume!(g.m() > 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = SourceParams::<Matrix64>::random(4, 8, &mut rng);
        let h = Matrix64::uniform(g.m(), 4, 2.0, &mut rng);
        let settings = FusionSettings { heads: 2, dropout: 0.0, ..FusionSettings::default() };
        let (_, weights) = attention_with_weights(&h, g.word_mask(), &p, &settings).unwrap();
        for w in &weights {
            for j in 0..g.m() {
                prop_assert!((w.row(j).iter().sum::<f64>() - 1.0).abs() < 1e-6);
                for k in 0..g.m() {
                    if !g.word_mask().get(j, k) {
                        prop_assert_eq!(w.row(j)[k], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn word_encoding_depends_on_position(head in 0..20usize, other in 0..20usize, len in 2..5usize, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = EmbeddingTable::<f64>::random(Vocab::new(["ab"]), 8, 0.5, &mut rng);
        let proj = WordProjection::random(8, 6, &mut rng);
        let a = encode_word(&MatchedWord::new(0, "ab", head, head + len - 1), &table, &proj).unwrap();
        let b = encode_word(&MatchedWord::new(0, "ab", other, other + len - 1), &table, &proj).unwrap();
        prop_assert_eq!(a.len(), 6);
        prop_assert_eq!(&a, &encode_word(&MatchedWord::new(0, "ab", head, head + len - 1), &table, &proj).unwrap());
        if head == other {
            prop_assert_eq!(a, b);
        }
    }
}

#[test]
fn word_encodings_differ_across_positions() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let table = EmbeddingTable::<f64>::random(Vocab::new(["ab"]), 8, 0.5, &mut rng);
    let proj = WordProjection::random(8, 6, &mut rng);
    let enc = |h| encode_word(&MatchedWord::new(0, "ab", h, h + 1), &table, &proj).unwrap();
    let all: Vec<Vec<f64>> = (0..10).map(enc).collect();
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            assert_ne!(all[i], all[j], "positions {i} and {j}");
        }
    }
}
