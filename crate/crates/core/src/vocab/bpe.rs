use std::collections::{BTreeSet, HashMap};

use super::{TokenId, VocabError, Vocabulary};
use crate::toy::CorpusSampler;

/// Splits text into merge domains: an optional single leading space plus a
/// run of letters, an optional leading space plus one other character, or a
/// lone space. Concatenating the chunks gives the input back.
pub fn pre_tokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < text.len() {
        let start = i;
        if bytes[i] == b' ' {
            i += 1;
        }
        let mut chars = text[i..].char_indices();
        match chars.next() {
            Some((_, c)) if c.is_alphabetic() => {
                let mut end = i + c.len_utf8();
                for (off, c) in chars {
                    if !c.is_alphabetic() {
                        break;
                    }
                    end = i + off + c.len_utf8();
                }
                i = end;
            }
            Some((_, ' ')) if i > start => {}
            Some((_, c)) => i += c.len_utf8(),
            None => {}
        }
        out.push(&text[start..i]);
    }
    out
}

/// Samples `n_train_words` words from the sampler and trains on them.
pub fn train_bpe(sampler: &mut CorpusSampler, target_size: usize, n_train_words: usize) -> Result<Vocabulary, VocabError> {
    let text = sampler.sample_words(n_train_words);
    train_bpe_on_text(&text, target_size)
}

/// Character-level BPE: repeatedly merges the most frequent adjacent pair
/// (ties to the lexicographically smallest pair) until `target_size` tokens.
pub fn train_bpe_on_text(text: &str, target_size: usize) -> Result<Vocabulary, VocabError> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for chunk in pre_tokenize(text) {
        *counts.entry(chunk).or_default() += 1;
    }
    let alphabet: BTreeSet<char> = counts.keys().flat_map(|w| w.chars()).collect();
    if target_size < alphabet.len() {
        return Err(VocabError::TargetBelowAlphabet {
            target: target_size,
            alphabet: alphabet.len(),
        });
    }
    let mut tokens: Vec<String> = alphabet.iter().map(|c| c.to_string()).collect();
    let mut index: HashMap<String, TokenId> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as TokenId)).collect();

    // Sorted for a deterministic iteration order.
    let mut words: Vec<(&str, u64)> = counts.into_iter().collect();
    words.sort();
    let mut seqs: Vec<(Vec<TokenId>, u64)> = words
        .iter()
        .map(|(w, n)| (w.chars().map(|c| index[&c.to_string()]).collect(), *n))
        .collect();

    let mut merges: Vec<(String, String)> = Vec::new();
    while tokens.len() < target_size {
        let mut pair_counts: HashMap<(TokenId, TokenId), u64> = HashMap::new();
        for (seq, n) in &seqs {
            for w in seq.windows(2) {
                *pair_counts.entry((w[0], w[1])).or_default() += n;
            }
        }
        let best = pair_counts.iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                // Smaller strings win ties, so compare reversed.
                let ka = (&tokens[pa.0 as usize], &tokens[pa.1 as usize]);
                let kb = (&tokens[pb.0 as usize], &tokens[pb.1 as usize]);
                kb.cmp(&ka)
            })
        });
        let Some((&(a, b), _)) = best else {
            return Err(VocabError::CorpusTooSmall(merges.len()));
        };
        let merged = format!("{}{}", tokens[a as usize], tokens[b as usize]);
        let new_id = match index.get(&merged) {
            Some(&id) => id,
            None => {
                let id = tokens.len() as TokenId;
                tokens.push(merged.clone());
                index.insert(merged, id);
                id
            }
        };
        merges.push((tokens[a as usize].clone(), tokens[b as usize].clone()));
        for (seq, _) in seqs.iter_mut() {
            merge_in_place(seq, a, b, new_id);
        }
    }
    Vocabulary::from_tokens(tokens, super::SpaceMarker::LiteralSpace)?.with_merges(merges)
}

fn merge_in_place(seq: &mut Vec<TokenId>, a: TokenId, b: TokenId, new_id: TokenId) {
    let mut w = 0;
    let mut r = 0;
    while r < seq.len() {
        if r + 1 < seq.len() && seq[r] == a && seq[r + 1] == b {
            seq[w] = new_id;
            r += 2;
        } else {
            seq[w] = seq[r];
            r += 1;
        }
        w += 1;
    }
    seq.truncate(w);
}

/// Applies recorded merges in rank order to one chunk.
pub(super) fn apply_merges(vocab: &Vocabulary, chunk: &str, out: &mut Vec<TokenId>) -> Result<(), VocabError> {
    let mut seq: Vec<TokenId> = Vec::with_capacity(chunk.len());
    let mut buf = [0u8; 4];
    for c in chunk.chars() {
        let id = vocab.id(c.encode_utf8(&mut buf)).ok_or(VocabError::UncoveredCharacter(c))?;
        seq.push(id);
    }
    loop {
        let best = seq
            .windows(2)
            .filter_map(|w| vocab.merge_table.get(&(w[0], w[1])).map(|&(rank, id)| (rank, w[0], w[1], id)))
            .min();
        let Some((_, a, b, new_id)) = best else { break };
        merge_in_place(&mut seq, a, b, new_id);
    }
    out.extend(seq);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pre_tokenize_chunks() {
        assert_eq!(pre_tokenize("he walked, fast."), vec!["he", " walked", ",", " fast", "."]);
        assert_eq!(pre_tokenize("  a"), vec![" ", " a"]);
        assert_eq!(pre_tokenize("a , b"), vec!["a", " ,", " b"]);
        assert_eq!(pre_tokenize(""), Vec::<&str>::new());
        assert_eq!(pre_tokenize("x "), vec!["x", " "]);
    }

    #[test]
    fn first_merge_matches_hand_count() {
        // chunks: "aa", " aa", " aa"; pairs: (a,a) x3, (" ",a) x2
        let v = train_bpe_on_text("aa aa aa", 4).unwrap();
        assert_eq!(v.tokens()[..3], [" ", "a", "aa"].map(String::from));
        assert_eq!(v.merges().unwrap()[0], ("a".to_string(), "a".to_string()));
        // next: (" ", "aa") x2
        assert_eq!(v.tokens()[3], " aa");
    }

    #[test]
    fn ties_go_to_smallest_pair() {
        // chunks "ab", " cd": every pair occurs once, " " sorts first
        let v = train_bpe_on_text("ab cd", 8).unwrap();
        let m = v.merges().unwrap();
        assert_eq!(m[0], (" ".into(), "c".into()));
        assert_eq!(m[1], (" c".into(), "d".into()));
        assert_eq!(m[2], ("a".into(), "b".into()));
    }

    #[test]
    fn alphabet_size_target_means_no_merges() {
        let v = train_bpe_on_text("aa aa aa", 2).unwrap();
        assert_eq!(v.len(), 2);
        assert!(v.merges().unwrap().is_empty());
        assert!(matches!(train_bpe_on_text("abc", 2), Err(VocabError::TargetBelowAlphabet { .. })));
    }

    #[test]
    fn corpus_too_small() {
        assert_eq!(train_bpe_on_text("ab", 10), Err(VocabError::CorpusTooSmall(1)));
    }

    #[test]
    fn encode_applies_merges_by_hand() {
        let v = train_bpe_on_text("walk walk walk walked walked talk", 14).unwrap();
        let ids = v.encode(" talked").unwrap();
        assert_eq!(v.decode(&ids).unwrap(), " talked");
        // replay merges greedily by rank on the raw characters
        let mut parts: Vec<String> = " talked".chars().map(|c| c.to_string()).collect();
        for (a, b) in v.merges().unwrap() {
            let mut i = 0;
            while i + 1 < parts.len() {
                if &parts[i] == a && &parts[i + 1] == b {
                    parts[i] = format!("{a}{b}");
                    parts.remove(i + 1);
                }
                i += 1;
            }
        }
        let expect: Vec<&str> = parts.iter().map(String::as_str).collect();
        let got: Vec<&str> = ids.iter().map(|&i| v.token(i).unwrap()).collect();
        assert_eq!(got, expect);
        assert!(ids.len() >= 2);
    }

    #[test]
    fn uncovered_character() {
        let v = train_bpe_on_text("ab ab", 4).unwrap();
        assert_eq!(v.encode("abz"), Err(VocabError::UncoveredCharacter('z')));
    }
}
