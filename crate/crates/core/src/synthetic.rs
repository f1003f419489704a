//! Generated corpora with known lexicon structure, for overfitting and ablation runs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Corpus, Entity, Sentence, TagScheme};

/// Sentences and the lexicon they were generated against.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub train: Corpus,
    pub test: Corpus,
    pub lexicon: Vec<String>,
    /// Lexicon words that only ever occur outside entities or across their boundaries.
    pub disturb_words: Vec<String>,
}

pub const TYPES: [&str; 3] = ["PER", "LOC", "ORG"];

/// Entity characters; disjoint from [`FILLER`].
const ENTITY_CHARS: &str = "甲乙丙丁戊己庚辛壬癸子丑寅卯辰巳午未申酉戌亥金木水火土山川日月星云风雷雨雪霜";
const FILLER: &str = "的了是在有和就不也都而及与着或之";

fn chars(s: &str) -> Vec<char> {
    s.chars().collect()
}

/// Random words over `alphabet` with lengths in `lens`, none a substring of another.
fn distinct_words(rng: &mut ChaCha8Rng, alphabet: &[char], lens: &[usize], count: usize) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    while out.len() < count {
        let len = *lens.choose(rng).expect("lengths");
        let w: String = (0..len).map(|_| *alphabet.choose(rng).expect("alphabet")).collect();
        let uniq = w.chars().collect::<std::collections::HashSet<_>>().len() == len;
        if uniq && out.iter().all(|o| !o.contains(&w) && !w.contains(o.as_str())) {
            out.push(w);
        }
    }
    out
}

/// 50 sentences over 3 entity types and a 30-word lexicon: 15 entity words (each entity
/// in the corpus is one of them), 5 words strictly inside 3-character entities and
/// 10 words that fall outside entities or cross their boundaries.
pub fn overfit_corpus(seed: u64) -> SyntheticData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ent_chars = chars(ENTITY_CHARS);
    let filler = chars(FILLER);
    let mut entity_words = distinct_words(&mut rng, &ent_chars, &[3], 5);
    entity_words.extend(distinct_words_excluding(&mut rng, &ent_chars, &[2, 3], 10, &entity_words));
    let kinds: Vec<&str> = (0..entity_words.len()).map(|i| TYPES[i % 3]).collect();
    let cover_words: Vec<String> = entity_words[..5]
        .iter()
        .map(|w| w.chars().take(2).collect())
        .collect();

    let mut sentences = Vec::with_capacity(50);
    let mut pick = 0usize;
    for _ in 0..50 {
        let mut cs = Vec::new();
        let mut ents = Vec::new();
        let count = rng.gen_range(1..=2);
        for _ in 0..count {
            for _ in 0..rng.gen_range(1..=3) {
                cs.push(*filler.choose(&mut rng).expect("filler"));
            }
            let e = if pick < entity_words.len() {
                pick
            } else {
                rng.gen_range(0..entity_words.len())
            };
            pick += 1;
            let head = cs.len();
            cs.extend(entity_words[e].chars());
            ents.push(Entity::new(head, cs.len() - 1, kinds[e]));
        }
        for _ in 0..rng.gen_range(1..=2) {
            cs.push(*filler.choose(&mut rng).expect("filler"));
        }
        sentences.push(Sentence::from_entities(cs, ents, TagScheme::Bio));
    }

    // Disturb words: bigrams seen in the corpus that are not inside any entity.
    let mut disturb = Vec::new();
    let mut candidates = Vec::new();
    for s in &sentences {
        for i in 0..s.len().saturating_sub(1) {
            let inside = s.entities.iter().any(|e| e.head <= i && i < e.tail);
            if !inside {
                candidates.push(s.chars[i..i + 2].iter().collect::<String>());
            }
        }
    }
    candidates.sort();
    candidates.dedup();
    candidates.shuffle(&mut rng);
    for c in candidates {
        if disturb.len() == 10 {
            break;
        }
        if !entity_words.contains(&c) && !cover_words.contains(&c) {
            disturb.push(c);
        }
    }

    let mut lexicon = entity_words.clone();
    lexicon.extend(cover_words);
    lexicon.extend(disturb.iter().cloned());
    let corpus = Corpus::new(TagScheme::Bio, sentences);
    SyntheticData {
        train: corpus.clone(),
        test: corpus,
        lexicon,
        disturb_words: disturb,
    }
}

fn distinct_words_excluding(
    rng: &mut ChaCha8Rng,
    alphabet: &[char],
    lens: &[usize],
    count: usize,
    existing: &[String],
) -> Vec<String> {
    let mut out = Vec::new();
    while out.len() < count {
        let w = distinct_words(rng, alphabet, lens, 1).remove(0);
        let clash = existing
            .iter()
            .chain(&out)
            .any(|o: &String| o.contains(&w) || w.contains(o.as_str()));
        if !clash {
            out.push(w);
        }
    }
    out
}

/// Corpus where every entity word also occurs as a non-entity.
///
/// A word occurrence is an entity unless a lexicon word crosses its left or right boundary,
/// so whether a word is an entity depends on which other words overlap it.
pub fn ambiguous_corpus(seed: u64, train: usize, test: usize) -> SyntheticData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ent_chars = chars(ENTITY_CHARS);
    let filler = chars(FILLER);
    let entity_words = distinct_words(&mut rng, &ent_chars, &[2, 3], 12);
    let kinds: Vec<&str> = (0..entity_words.len()).map(|i| TYPES[i % 3]).collect();
    // For each word: filler characters that form a lexicon word with its first / last character.
    let mut left: Vec<Vec<char>> = Vec::new();
    let mut right: Vec<Vec<char>> = Vec::new();
    let mut lexicon = entity_words.clone();
    let mut disturb = Vec::new();
    for w in &entity_words {
        let first = w.chars().next().expect("non-empty");
        let last = w.chars().last().expect("non-empty");
        let mut pool = filler.clone();
        pool.shuffle(&mut rng);
        let l = pool[..2].to_vec();
        let r = pool[2..4].to_vec();
        for &c in &l {
            disturb.push(format!("{c}{first}"));
        }
        for &c in &r {
            disturb.push(format!("{last}{c}"));
        }
        left.push(l);
        right.push(r);
    }
    lexicon.extend(disturb.iter().cloned());

    // Fillers around an occurrence that must not form a lexicon word with it.
    let crosses = |a: char, b: char| disturb.iter().any(|d| d.chars().eq([a, b]));
    let safe_left = |e: usize, rng: &mut ChaCha8Rng| loop {
        let c = *filler.choose(rng).expect("filler");
        if !crosses(c, entity_words[e].chars().next().expect("non-empty")) {
            return c;
        }
    };
    let safe_right = |e: usize, rng: &mut ChaCha8Rng| loop {
        let c = *filler.choose(rng).expect("filler");
        if !crosses(entity_words[e].chars().last().expect("non-empty"), c) {
            return c;
        }
    };

    let make = |rng: &mut ChaCha8Rng| {
        let mut cs = vec![*filler.choose(rng).expect("filler")];
        let mut ents = Vec::new();
        let flip = rng.gen_bool(0.5);
        for slot in 0..2 {
            let e = rng.gen_range(0..entity_words.len());
            // One clean and one disturbed occurrence per sentence, in random order.
            let disturbed = (slot == 0) == flip;
            let (lc, rc) = if disturbed {
                if rng.gen_bool(0.5) {
                    (*left[e].choose(rng).expect("left"), safe_right(e, rng))
                } else {
                    (safe_left(e, rng), *right[e].choose(rng).expect("right"))
                }
            } else {
                (safe_left(e, rng), safe_right(e, rng))
            };
            cs.push(lc);
            let head = cs.len();
            cs.extend(entity_words[e].chars());
            if !disturbed {
                ents.push(Entity::new(head, cs.len() - 1, kinds[e]));
            }
            cs.push(rc);
        }
        cs.push(*filler.choose(rng).expect("filler"));
        Sentence::from_entities(cs, ents, TagScheme::Bio)
    };
    let train_s: Vec<Sentence> = (0..train).map(|_| make(&mut rng)).collect();
    let test_s: Vec<Sentence> = (0..test).map(|_| make(&mut rng)).collect();
    SyntheticData {
        train: Corpus::new(TagScheme::Bio, train_s),
        test: Corpus::new(TagScheme::Bio, test_s),
        lexicon,
        disturb_words: disturb,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{label_lec, LecLabel, LexiconTrie};

    #[test]
    fn overfit_corpus_shape() {
        let d = overfit_corpus(7);
        assert_eq!(d.train.len(), 50);
        assert_eq!(d.lexicon.len(), 30);
        assert!(d.disturb_words.len() >= 5);
        let types: std::collections::BTreeSet<_> = d
            .train
            .sentences
            .iter()
            .flat_map(|s| s.entities.iter().map(|e| e.kind.clone()))
            .collect();
        assert_eq!(types.len(), 3);
        let trie = LexiconTrie::build(&d.lexicon).unwrap();
        let mut disturb_seen = std::collections::BTreeSet::new();
        for s in &d.train.sentences {
            let words = trie.match_sentence(&s.chars).words;
            let labels = label_lec(&words, &s.spans()).unwrap();
            for e in &s.entities {
                assert!(
                    words.iter().zip(&labels).any(|(w, &l)| l == LecLabel::Match && w.head == e.head && w.tail == e.tail),
                    "entity without a Match word"
                );
            }
            for (w, l) in words.iter().zip(&labels) {
                if *l == LecLabel::Disturb {
                    disturb_seen.insert(w.surface.clone());
                }
            }
        }
        assert!(disturb_seen.len() >= 5);
    }

    #[test]
    fn ambiguous_words_occur_both_ways() {
        let d = ambiguous_corpus(3, 40, 10);
        let trie = LexiconTrie::build(&d.lexicon).unwrap();
        for s in &d.train.sentences {
            assert_eq!(s.entities.len(), 1);
            let words = trie.match_sentence(&s.chars).words;
            // The entity is matched and no lexicon word crosses its boundary.
            let e = &s.entities[0];
            assert!(words.iter().any(|w| w.head == e.head && w.tail == e.tail));
            assert!(!words
                .iter()
                .any(|w| (w.head < e.head && w.tail >= e.head) || (w.head <= e.tail && w.tail > e.tail)));
        }
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(overfit_corpus(1), overfit_corpus(1));
        assert_eq!(ambiguous_corpus(1, 5, 5), ambiguous_corpus(1, 5, 5));
    }
}
