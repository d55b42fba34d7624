use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{TokenId, VocabError, Vocabulary};
use crate::decomp::DecompositionMap;
use crate::lexicon::Lexicon;

/// Which characters count as letters of the target language.
#[derive(Debug, Clone, PartialEq)]
pub enum LetterSet {
    Alphabetic,
    AsciiLetters,
    Chars(BTreeSet<char>),
}

impl Default for LetterSet {
    fn default() -> Self {
        LetterSet::Alphabetic
    }
}

impl LetterSet {
    pub fn contains(&self, c: char) -> bool {
        match self {
            LetterSet::Alphabetic => c.is_alphabetic(),
            LetterSet::AsciiLetters => c.is_ascii_alphabetic(),
            LetterSet::Chars(set) => set.contains(&c),
        }
    }

    pub fn is_word(&self, s: &str) -> bool {
        !s.is_empty() && s.chars().all(|c| self.contains(c))
    }

    pub fn parse(s: &str) -> Self {
        match s {
            "alphabetic" | "unicode" => LetterSet::Alphabetic,
            "ascii" | "english" => LetterSet::AsciiLetters,
            chars => LetterSet::Chars(chars.chars().collect()),
        }
    }
}

/// Whole-word tokens: id to bare word (leading space stripped).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WordTokenSet {
    pub words: BTreeMap<TokenId, String>,
}

impl WordTokenSet {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.words.contains_key(&id)
    }
}

/// Tokens with a leading space whose bare form is a lexicon lemma or form.
/// Tokens without the space can occur word-internally and never count.
pub fn identify_word_tokens(vocab: &Vocabulary, lexicon: &Lexicon, case_fold: bool, letters: &LetterSet) -> WordTokenSet {
    let folded: HashSet<String> = if case_fold {
        lexicon.words().map(str::to_lowercase).collect()
    } else {
        HashSet::new()
    };
    let mut words = BTreeMap::new();
    for (id, tok) in vocab.tokens().iter().enumerate() {
        let Some(bare) = tok.strip_prefix(' ') else { continue };
        if !letters.is_word(bare) {
            continue;
        }
        let known = lexicon.contains_word(bare) || (case_fold && folded.contains(&bare.to_lowercase()));
        if known {
            words.insert(id as TokenId, bare.to_string());
        }
    }
    WordTokenSet { words }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedundancyReport {
    pub n_word_tokens: usize,
    pub n_case_folded: usize,
    pub n_base_forms: usize,
    pub reduction_pct: f64,
    pub n_oov_composable: usize,
    pub input_checksums: Vec<String>,
}

impl RedundancyReport {
    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "n_word_tokens: {}", self.n_word_tokens).unwrap();
        writeln!(s, "n_case_folded: {}", self.n_case_folded).unwrap();
        writeln!(s, "n_base_forms: {}", self.n_base_forms).unwrap();
        writeln!(s, "reduction_pct: {:.2}", self.reduction_pct).unwrap();
        writeln!(s, "n_oov_composable: {}", self.n_oov_composable).unwrap();
        for c in &self.input_checksums {
            writeln!(s, "input_checksum: {c}").unwrap();
        }
        s
    }
}

/// Counts whole-word tokens, their case-folded types and the base forms
/// left after resolving every word token through the decomposition map.
pub fn redundancy_report(
    vocab: &Vocabulary,
    lexicon: &Lexicon,
    map: &DecompositionMap,
    letters: &LetterSet,
) -> Result<RedundancyReport, VocabError> {
    for d in map.entries().values() {
        match vocab.token(d.base_token_id) {
            Some(t) if t == d.base => {}
            _ => {
                return Err(VocabError::InconsistentInputs(format!(
                    "entry {:?} references base id {} ({:?})",
                    d.surface, d.base_token_id, d.base
                )))
            }
        }
        if d.in_vocab && vocab.id(&d.surface).is_none() {
            return Err(VocabError::InconsistentInputs(format!("in-vocab surface {:?} is not a token", d.surface)));
        }
    }
    let words = identify_word_tokens(vocab, lexicon, true, letters);
    let case_folded: BTreeSet<String> = words.words.values().map(|w| w.to_lowercase()).collect();
    let mut bases: BTreeSet<String> = BTreeSet::new();
    for (&id, bare) in &words.words {
        let tok = vocab.token(id).expect("word ids come from vocab");
        let base = match map.get(tok) {
            Some(d) if words.contains(d.base_token_id) => d.base[1..].to_lowercase(),
            _ => bare.to_lowercase(),
        };
        bases.insert(base);
    }
    let n_word_tokens = words.len();
    let n_base_forms = bases.len();
    let reduction_pct = if n_word_tokens == 0 {
        0.0
    } else {
        100.0 * (1.0 - n_base_forms as f64 / n_word_tokens as f64)
    };
    Ok(RedundancyReport {
        n_word_tokens,
        n_case_folded: case_folded.len(),
        n_base_forms,
        reduction_pct,
        n_oov_composable: map.entries().values().filter(|d| !d.in_vocab).count(),
        input_checksums: map.checksums().iter().map(|(k, v)| format!("{k}:{v}")).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::{build_map, BuildOptions};
    use crate::lexicon::{parse_unimorph, ParseOptions};
    use crate::vocab::SpaceMarker;

    fn vocab(tokens: &[&str]) -> Vocabulary {
        Vocabulary::from_tokens(tokens.iter().map(|s| s.to_string()).collect(), SpaceMarker::LiteralSpace).unwrap()
    }

    fn lex(text: &str) -> Lexicon {
        parse_unimorph(text.as_bytes(), &ParseOptions::default()).unwrap()
    }

    #[test]
    fn word_tokens_need_leading_space_and_lexicon_membership() {
        let v = vocab(&[" walk", "walk", " walked", " xqz", " Walk"]);
        let l = lex("walk\twalked\tV;PST\n");
        let strict = identify_word_tokens(&v, &l, false, &LetterSet::default());
        assert_eq!(strict.words.values().collect::<Vec<_>>(), vec!["walk", "walked"]);
        let folded = identify_word_tokens(&v, &l, true, &LetterSet::default());
        assert_eq!(folded.len(), 3);
        assert!(folded.contains(4));
    }

    #[test]
    fn five_token_fixture() {
        let v = vocab(&[" walk", " walks", " Walk", " walked", " run"]);
        let l = lex("walk\twalks\tV;PRS;3;SG\nwalk\twalked\tV;PST\nwalk\twalking\tV;V.PTCP;PRS\nrun\tran\tV;PST\n");
        let map = build_map(&v, &l, &BuildOptions::default()).map;
        let r = redundancy_report(&v, &l, &map, &LetterSet::default()).unwrap();
        assert_eq!((r.n_word_tokens, r.n_case_folded, r.n_base_forms), (5, 4, 2));
        assert!((r.reduction_pct - 60.0).abs() < 1e-9);
        // OOV: walking, Walks, Walked, Walking, ran, Ran, Run
        assert_eq!(r.n_oov_composable, 7);
    }

    #[test]
    fn empty_lexicon_gives_zeros() {
        let v = vocab(&[" walk", " walks"]);
        let l = Lexicon::default();
        let map = build_map(&v, &l, &BuildOptions::default()).map;
        let r = redundancy_report(&v, &l, &map, &LetterSet::default()).unwrap();
        assert_eq!((r.n_word_tokens, r.n_case_folded, r.n_base_forms, r.n_oov_composable), (0, 0, 0, 0));
        assert_eq!(r.reduction_pct, 0.0);
    }

    #[test]
    fn mismatched_map_is_inconsistent() {
        let v = vocab(&[" walk", " walked"]);
        let l = lex("walk\twalked\tV;PST\n");
        let map = build_map(&v, &l, &BuildOptions::default()).map;
        let other = vocab(&[" run", " walked"]);
        assert!(matches!(
            redundancy_report(&other, &l, &map, &LetterSet::default()),
            Err(VocabError::InconsistentInputs(_))
        ));
    }

    #[test]
    fn letter_sets() {
        assert!(LetterSet::AsciiLetters.is_word("walk"));
        assert!(!LetterSet::AsciiLetters.is_word("café"));
        assert!(LetterSet::Alphabetic.is_word("café"));
        assert!(!LetterSet::Alphabetic.is_word("t-shirt"));
        assert!(LetterSet::parse("ab").is_word("abba"));
    }
}
