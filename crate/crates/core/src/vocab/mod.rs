//! Token vocabularies: loading dumps, a reference BPE trainer for the toy
//! language, and whole-word redundancy analysis.

mod bpe;
mod words;

use std::collections::HashMap;
use std::fmt;

use base64::Engine;
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

pub use bpe::{pre_tokenize, train_bpe, train_bpe_on_text};
pub use words::{identify_word_tokens, redundancy_report, LetterSet, RedundancyReport, WordTokenSet};

pub type TokenId = u32;

#[derive(Debug, Error, PartialEq)]
pub enum VocabError {
    #[error("duplicate token: ids {0} and {1} map to the same string")]
    DuplicateToken(TokenId, TokenId),
    #[error("malformed vocabulary input: {0}")]
    MalformedInput(String),
    #[error("target size {target} is below the base alphabet size {alphabet}")]
    TargetBelowAlphabet { target: usize, alphabet: usize },
    #[error("corpus too small: no adjacent pairs left after {0} merges")]
    CorpusTooSmall(usize),
    #[error("character {0:?} is not covered by the vocabulary")]
    UncoveredCharacter(char),
    #[error("unknown token id {0}")]
    UnknownId(TokenId),
    #[error("map and vocabulary disagree: {0}")]
    InconsistentInputs(String),
}

/// How a vocabulary dump writes the word-initial space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpaceMarker {
    #[default]
    LiteralSpace,
    /// `Ġ` (U+0120), byte-level BPE dumps.
    GMarker,
    /// `▁` (U+2581), SentencePiece dumps.
    UnderbarMarker,
}

impl SpaceMarker {
    pub fn marker_char(self) -> char {
        match self {
            SpaceMarker::LiteralSpace => ' ',
            SpaceMarker::GMarker => '\u{0120}',
            SpaceMarker::UnderbarMarker => '\u{2581}',
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SpaceMarker::LiteralSpace => "literal_space",
            SpaceMarker::GMarker => "g_marker",
            SpaceMarker::UnderbarMarker => "underbar_marker",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "literal_space" | "space" => Some(SpaceMarker::LiteralSpace),
            "g_marker" | "g" => Some(SpaceMarker::GMarker),
            "underbar_marker" | "underbar" => Some(SpaceMarker::UnderbarMarker),
            _ => None,
        }
    }

    fn normalize(self, token: &str) -> String {
        match self {
            SpaceMarker::LiteralSpace => token.to_string(),
            m => token.replace(m.marker_char(), " "),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabFormat {
    /// One token per line, id = line index.
    TokenPerLine,
    /// A JSON object mapping token string to id.
    IdMapJson,
    /// `base64(token-bytes) SPACE rank` per line.
    Tiktoken,
}

impl VocabFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "token_per_line" | "lines" => Some(VocabFormat::TokenPerLine),
            "id_map_json" | "json" => Some(VocabFormat::IdMapJson),
            "tiktoken" => Some(VocabFormat::Tiktoken),
            _ => None,
        }
    }
}

/// Ordered token table; internally word-initial spaces are literal.
#[derive(Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    space_marker: SpaceMarker,
    merges: Option<Vec<(String, String)>>,
    // pair of ids -> (rank, merged id)
    merge_table: HashMap<(TokenId, TokenId), (usize, TokenId)>,
}

impl fmt::Debug for Vocabulary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Vocabulary")
            .field("len", &self.tokens.len())
            .field("space_marker", &self.space_marker)
            .field("merges", &self.merges.as_ref().map(Vec::len))
            .finish()
    }
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>, space_marker: SpaceMarker) -> Result<Self, VocabError> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(VocabError::MalformedInput(format!("empty token at id {i}")));
            }
            if let Some(prev) = index.insert(t.clone(), i as TokenId) {
                return Err(VocabError::DuplicateToken(prev, i as TokenId));
            }
        }
        Ok(Self {
            tokens,
            index,
            space_marker,
            merges: None,
            merge_table: HashMap::new(),
        })
    }

    pub(crate) fn with_merges(mut self, merges: Vec<(String, String)>) -> Result<Self, VocabError> {
        let mut table = HashMap::with_capacity(merges.len());
        for (rank, (a, b)) in merges.iter().enumerate() {
            let (Some(&ia), Some(&ib)) = (self.index.get(a), self.index.get(b)) else {
                return Err(VocabError::MalformedInput(format!("merge {rank} uses unknown tokens")));
            };
            let merged = format!("{a}{b}");
            let Some(&im) = self.index.get(&merged) else {
                return Err(VocabError::MalformedInput(format!("merge {rank} result {merged:?} missing")));
            };
            table.entry((ia, ib)).or_insert((rank, im));
        }
        self.merges = Some(merges);
        self.merge_table = table;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn space_marker(&self) -> SpaceMarker {
        self.space_marker
    }

    pub fn merges(&self) -> Option<&[(String, String)]> {
        self.merges.as_deref()
    }

    /// Encodes text: BPE merges when present, greedy longest match otherwise.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>, VocabError> {
        let mut out = Vec::with_capacity(text.len() / 3 + 1);
        let mut memo: HashMap<&str, (usize, usize)> = HashMap::new();
        for chunk in pre_tokenize(text) {
            if let Some(&(start, end)) = memo.get(chunk) {
                out.extend_from_within(start..end);
                continue;
            }
            let start = out.len();
            self.encode_chunk(chunk, &mut out)?;
            memo.insert(chunk, (start, out.len()));
        }
        Ok(out)
    }

    /// Encodes one pre-tokenized chunk, appending ids.
    pub fn encode_chunk(&self, chunk: &str, out: &mut Vec<TokenId>) -> Result<(), VocabError> {
        if self.merges.is_some() {
            bpe::apply_merges(self, chunk, out)
        } else {
            self.longest_match(chunk, out)
        }
    }

    fn longest_match(&self, chunk: &str, out: &mut Vec<TokenId>) -> Result<(), VocabError> {
        let mut rest = chunk;
        while !rest.is_empty() {
            let mut ends: Vec<usize> = rest.char_indices().map(|(i, c)| i + c.len_utf8()).collect();
            ends.reverse();
            let hit = ends.into_iter().find_map(|end| self.index.get(&rest[..end]).map(|&id| (end, id)));
            match hit {
                Some((end, id)) => {
                    out.push(id);
                    rest = &rest[end..];
                }
                None => return Err(VocabError::UncoveredCharacter(rest.chars().next().unwrap())),
            }
        }
        Ok(())
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String, VocabError> {
        let mut s = String::new();
        for &id in ids {
            s.push_str(self.token(id).ok_or(VocabError::UnknownId(id))?);
        }
        Ok(s)
    }

    /// Tokens and merges as JSON, for tokenizers trained here.
    pub fn to_tokenizer_json(&self) -> String {
        let v = serde_json::json!({
            "format": "morphovoc-tokenizer",
            "version": 1,
            "space_marker": self.space_marker.as_str(),
            "tokens": self.tokens,
            "merges": self.merges,
        });
        let mut s = serde_json::to_string_pretty(&v).expect("serializable");
        s.push('\n');
        s
    }

    pub fn from_tokenizer_json(bytes: &[u8]) -> Result<Self, VocabError> {
        #[derive(Deserialize)]
        struct File {
            version: u64,
            space_marker: String,
            tokens: Vec<String>,
            merges: Option<Vec<(String, String)>>,
        }
        let f: File = serde_json::from_slice(bytes).map_err(|e| VocabError::MalformedInput(e.to_string()))?;
        if f.version != 1 {
            return Err(VocabError::MalformedInput(format!("tokenizer version {}", f.version)));
        }
        let marker = SpaceMarker::parse(&f.space_marker).ok_or_else(|| VocabError::MalformedInput(format!("space marker {:?}", f.space_marker)))?;
        let v = Vocabulary::from_tokens(f.tokens, marker)?;
        match f.merges {
            Some(m) => v.with_merges(m),
            None => Ok(v),
        }
    }

    /// Token strings in the dump's own marker convention, one per line.
    pub fn to_token_lines(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            match self.space_marker {
                SpaceMarker::LiteralSpace => out.push_str(t),
                m => out.push_str(&t.replace(' ', &m.marker_char().to_string())),
            }
            out.push('\n');
        }
        out
    }
}

/// Renders raw token bytes: UTF-8 as-is, otherwise a unique escaped form.
pub fn bytes_to_token_string(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) => s.to_string(),
        Err(_) => format!("<0x{}>", hex::encode(bytes)),
    }
}

pub fn load_vocab(source: &[u8], format: VocabFormat, marker: SpaceMarker) -> Result<Vocabulary, VocabError> {
    let raw: Vec<String> = match format {
        VocabFormat::TokenPerLine => {
            let text = std::str::from_utf8(source).map_err(|e| VocabError::MalformedInput(e.to_string()))?;
            let text = text.strip_suffix('\n').unwrap_or(text);
            if text.is_empty() {
                Vec::new()
            } else {
                text.split('\n').map(str::to_string).collect()
            }
        }
        VocabFormat::IdMapJson => {
            let text = std::str::from_utf8(source).map_err(|e| VocabError::MalformedInput(e.to_string()))?;
            let mut de = serde_json::Deserializer::from_str(text);
            let pairs = IdPairs::deserialize(&mut de).map_err(|e| VocabError::MalformedInput(e.to_string()))?;
            de.end().map_err(|e| VocabError::MalformedInput(e.to_string()))?;
            dense_from_pairs(pairs.0)?
        }
        VocabFormat::Tiktoken => {
            let text = std::str::from_utf8(source).map_err(|e| VocabError::MalformedInput(e.to_string()))?;
            let engine = base64::engine::general_purpose::STANDARD;
            let mut pairs = Vec::new();
            for (n, line) in text.lines().enumerate() {
                if line.is_empty() {
                    continue;
                }
                let (b64, rank) = line
                    .split_once(' ')
                    .ok_or_else(|| VocabError::MalformedInput(format!("line {}", n + 1)))?;
                let bytes = engine
                    .decode(b64)
                    .map_err(|e| VocabError::MalformedInput(format!("line {}: {e}", n + 1)))?;
                let rank: u64 = rank
                    .trim()
                    .parse()
                    .map_err(|_| VocabError::MalformedInput(format!("line {}: bad rank", n + 1)))?;
                pairs.push((bytes_to_token_string(&bytes), rank));
            }
            dense_from_pairs(pairs)?
        }
    };
    let tokens = raw.iter().map(|t| marker.normalize(t)).collect();
    Vocabulary::from_tokens(tokens, marker)
}

fn dense_from_pairs(pairs: Vec<(String, u64)>) -> Result<Vec<String>, VocabError> {
    let mut seen: HashMap<&str, u64> = HashMap::new();
    for (tok, id) in &pairs {
        if let Some(prev) = seen.insert(tok.as_str(), *id) {
            let (a, b) = if prev < *id { (prev, *id) } else { (*id, prev) };
            return Err(VocabError::DuplicateToken(a as TokenId, b as TokenId));
        }
    }
    let n = pairs.len();
    let mut slots: Vec<Option<String>> = vec![None; n];
    for (tok, id) in pairs {
        let i = id as usize;
        if i >= n || slots[i].is_some() {
            return Err(VocabError::MalformedInput(format!("ids are not dense 0..{n}: {id}")));
        }
        slots[i] = Some(tok);
    }
    Ok(slots.into_iter().map(|s| s.expect("dense")).collect())
}

/// JSON object entries in document order, duplicates kept.
struct IdPairs(Vec<(String, u64)>);

impl<'de> Deserialize<'de> for IdPairs {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = IdPairs;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping token strings to integer ids")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<IdPairs, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, u64>()? {
                    out.push((k, v));
                }
                Ok(IdPairs(out))
            }
        }
        d.deserialize_map(V)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_json_keeps_merges() {
        let v = train_bpe_on_text(" abab abab ab", 6).unwrap();
        let back = Vocabulary::from_tokenizer_json(v.to_tokenizer_json().as_bytes()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.encode(" abab").unwrap(), v.encode(" abab").unwrap());
    }

    #[test]
    fn token_per_line_with_g_marker() {
        let v = load_vocab("a\nĠwalk\nĠwalked".as_bytes(), VocabFormat::TokenPerLine, SpaceMarker::GMarker).unwrap();
        assert_eq!(v.tokens(), &["a", " walk", " walked"]);
        assert_eq!(v.id(" walked"), Some(2));
    }

    #[test]
    fn json_duplicate_is_rejected() {
        let err = load_vocab(br#"{" walk":0," walk":1}"#, VocabFormat::IdMapJson, SpaceMarker::LiteralSpace).unwrap_err();
        assert_eq!(err, VocabError::DuplicateToken(0, 1));
    }

    #[test]
    fn json_ids_must_be_dense() {
        let err = load_vocab(br#"{"a":0,"b":2}"#, VocabFormat::IdMapJson, SpaceMarker::LiteralSpace).unwrap_err();
        assert!(matches!(err, VocabError::MalformedInput(_)));
        let v = load_vocab(br#"{"b":1,"a":0}"#, VocabFormat::IdMapJson, SpaceMarker::LiteralSpace).unwrap();
        assert_eq!(v.tokens(), &["a", "b"]);
    }

    #[test]
    fn markers_normalize_to_the_same_tokens() {
        let g = load_vocab("Ġwalk\nĠwalked\n".as_bytes(), VocabFormat::TokenPerLine, SpaceMarker::GMarker).unwrap();
        let u = load_vocab("▁walk\n▁walked\n".as_bytes(), VocabFormat::TokenPerLine, SpaceMarker::UnderbarMarker).unwrap();
        assert_eq!(g.tokens(), u.tokens());
    }

    #[test]
    fn marker_collision_is_duplicate() {
        let err = load_vocab("Ġa\n a\n".as_bytes(), VocabFormat::TokenPerLine, SpaceMarker::GMarker).unwrap_err();
        assert_eq!(err, VocabError::DuplicateToken(0, 1));
    }

    #[test]
    fn tiktoken_format() {
        // "IHdhbGs=" is " walk", "YQ==" is "a", "/w==" is a lone 0xff byte.
        let v = load_vocab(b"YQ== 0\nIHdhbGs= 1\n/w== 2\n", VocabFormat::Tiktoken, SpaceMarker::LiteralSpace).unwrap();
        assert_eq!(v.tokens(), &["a", " walk", "<0xff>"]);
    }

    #[test]
    fn lookup_mode_longest_match() {
        let v = Vocabulary::from_tokens(
            ["a", "b", " ", " ab", "ab"].iter().map(|s| s.to_string()).collect(),
            SpaceMarker::LiteralSpace,
        )
        .unwrap();
        let ids = v.encode("ab abb").unwrap();
        assert_eq!(ids, vec![4, 3, 1]);
        assert_eq!(v.decode(&ids).unwrap(), "ab abb");
        assert_eq!(v.encode("abc"), Err(VocabError::UncoveredCharacter('c')));
    }
}
