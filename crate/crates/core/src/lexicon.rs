//! Morphological lexicons in UniMorph TSV form.
//!
//! A lexicon is a sorted, deduplicated list of `(lemma, form, tag)` triples
//! with exact inverse indexes by form and by lemma. Relations (inflection vs.
//! derivation) are either inferred from derivational marker segments in the
//! tag or forced per input file.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LexiconError {
    #[error("malformed line {0}: expected lemma<TAB>form<TAB>tags")]
    MalformedLine(usize),
    #[error("invalid feature tag {tag:?} on line {line}")]
    InvalidTag { line: usize, tag: String },
    #[error("input is not valid UTF-8 (byte offset {0})")]
    InvalidEncoding(usize),
    #[error("invalid toy language spec: {0}")]
    InvalidSpec(String),
}

/// Semicolon-joined UniMorph feature symbols, e.g. `V;PST`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FeatureTag(String);

impl FeatureTag {
    pub fn new(text: impl Into<String>) -> Result<Self, String> {
        let text = text.into();
        if text.is_empty() || text.chars().any(char::is_whitespace) {
            return Err(text);
        }
        if text.split(';').any(str::is_empty) {
            return Err(text);
        }
        Ok(Self(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn segments(&self) -> impl Iterator<Item = &str> {
        self.0.split(';')
    }
}

impl TryFrom<String> for FeatureTag {
    type Error = String;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        FeatureTag::new(value).map_err(|t| format!("invalid feature tag {t:?}"))
    }
}

impl From<FeatureTag> for String {
    fn from(tag: FeatureTag) -> String {
        tag.0
    }
}

impl fmt::Display for FeatureTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Inflection,
    Derivation,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Inflection => "inflection",
            Relation::Derivation => "derivation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LexEntry {
    pub lemma: String,
    pub form: String,
    pub tag: FeatureTag,
    pub relation: Relation,
}

/// Controls how relations are assigned while parsing.
#[derive(Debug, Clone)]
pub struct ParseOptions {
    /// Forces every entry of the file to this relation.
    pub relation: Option<Relation>,
    /// Tag segments that mark an entry as derivational.
    pub derivation_markers: Vec<String>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            relation: None,
            derivation_markers: vec!["V.MSDR".to_string()],
        }
    }
}

impl ParseOptions {
    pub fn with_relation(relation: Relation) -> Self {
        Self {
            relation: Some(relation),
            ..Self::default()
        }
    }

    fn classify(&self, tag: &FeatureTag) -> Relation {
        if let Some(forced) = self.relation {
            return forced;
        }
        let derivational = tag
            .segments()
            .any(|seg| self.derivation_markers.iter().any(|m| m == seg));
        if derivational {
            Relation::Derivation
        } else {
            Relation::Inflection
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    entries: Vec<LexEntry>,
    by_form: BTreeMap<String, Vec<usize>>,
    by_lemma: BTreeMap<String, Vec<usize>>,
}

impl Lexicon {
    pub fn from_entries(mut entries: Vec<LexEntry>) -> Self {
        entries.sort();
        // Duplicate triples collapse; a triple seen under both relations keeps
        // the inflection reading, which sorts first.
        entries.dedup_by(|b, a| a.lemma == b.lemma && a.form == b.form && a.tag == b.tag);
        let mut by_form: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut by_lemma: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            by_form.entry(e.form.clone()).or_default().push(i);
            by_lemma.entry(e.lemma.clone()).or_default().push(i);
        }
        Self {
            entries,
            by_form,
            by_lemma,
        }
    }

    /// Merges two lexicons, e.g. an inflection file and a derivation file.
    pub fn merged(self, other: Lexicon) -> Self {
        let mut all = self.entries;
        all.extend(other.entries);
        Self::from_entries(all)
    }

    pub fn entries(&self) -> &[LexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lemmas(&self) -> impl Iterator<Item = &str> {
        self.by_lemma.keys().map(String::as_str)
    }

    pub fn entries_for_lemma(&self, lemma: &str) -> impl Iterator<Item = &LexEntry> {
        self.by_lemma
            .get(lemma)
            .into_iter()
            .flatten()
            .map(move |&i| &self.entries[i])
    }

    pub fn entries_for_form(&self, form: &str) -> impl Iterator<Item = &LexEntry> {
        self.by_form
            .get(form)
            .into_iter()
            .flatten()
            .map(move |&i| &self.entries[i])
    }

    pub fn is_lemma(&self, word: &str) -> bool {
        self.by_lemma.contains_key(word)
    }

    /// True if `word` is a lemma or a form of any entry.
    pub fn contains_word(&self, word: &str) -> bool {
        self.by_form.contains_key(word) || self.by_lemma.contains_key(word)
    }

    /// Every distinct lemma and form.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.by_lemma
            .keys()
            .chain(self.by_form.keys().filter(|f| !self.by_lemma.contains_key(*f)))
            .map(String::as_str)
    }

    /// All analyses of an exact surface form, inflections first, then by tag
    /// text, then by lemma.
    pub fn analyses_of(&self, form: &str) -> Vec<(String, FeatureTag, Relation)> {
        let mut out: Vec<_> = self
            .entries_for_form(form)
            .map(|e| (e.lemma.clone(), e.tag.clone(), e.relation))
            .collect();
        out.sort_by(|a, b| {
            a.2.cmp(&b.2)
                .then_with(|| a.1.cmp(&b.1))
                .then_with(|| a.0.cmp(&b.0))
        });
        out
    }

    /// Three-column TSV in entry order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&e.lemma);
            out.push('\t');
            out.push_str(&e.form);
            out.push('\t');
            out.push_str(e.tag.as_str());
            out.push('\n');
        }
        out
    }
}

/// Parses UniMorph TSV: `lemma TAB form TAB tags [TAB ...]`, LF or CRLF,
/// `#` comment lines and blank lines skipped.
pub fn parse_unimorph(bytes: &[u8], opts: &ParseOptions) -> Result<Lexicon, LexiconError> {
    let text = std::str::from_utf8(bytes).map_err(|e| LexiconError::InvalidEncoding(e.valid_up_to()))?;
    let mut entries = Vec::new();
    for (idx, raw) in text.split('\n').enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(lemma), Some(form), Some(tags)) = (fields.next(), fields.next(), fields.next()) else {
            return Err(LexiconError::MalformedLine(line_no));
        };
        if lemma.is_empty() || form.is_empty() {
            return Err(LexiconError::MalformedLine(line_no));
        }
        let tag = FeatureTag::new(tags.trim()).map_err(|tag| LexiconError::InvalidTag { line: line_no, tag })?;
        let relation = opts.classify(&tag);
        entries.push(LexEntry {
            lemma: lemma.to_string(),
            form: form.to_string(),
            tag,
            relation,
        });
    }
    Ok(Lexicon::from_entries(entries))
}

/// Uppercases the first character, leaving the rest untouched.
pub fn capitalize_first(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Lowercases the first character, leaving the rest untouched.
pub fn decapitalize_first(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Lexicon, LexiconError> {
        parse_unimorph(text.as_bytes(), &ParseOptions::default())
    }

    #[test]
    fn parses_single_inflection() {
        let lex = parse("walk\twalked\tV;PST").unwrap();
        assert_eq!(lex.len(), 1);
        let e = &lex.entries()[0];
        assert_eq!(e.lemma, "walk");
        assert_eq!(e.form, "walked");
        assert_eq!(e.tag.as_str(), "V;PST");
        assert_eq!(e.relation, Relation::Inflection);
    }

    #[test]
    fn empty_input_is_empty_lexicon() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn space_separated_line_is_malformed() {
        assert_eq!(parse("walk walked"), Err(LexiconError::MalformedLine(1)));
        assert_eq!(parse("# c\nwalk\twalked"), Err(LexiconError::MalformedLine(2)));
    }

    #[test]
    fn rejects_non_utf8() {
        let bytes = b"walk\twalk\xffed\tV;PST\n";
        assert!(matches!(
            parse_unimorph(bytes, &ParseOptions::default()),
            Err(LexiconError::InvalidEncoding(_))
        ));
    }

    #[test]
    fn crlf_comments_and_extra_fields() {
        let lex = parse("# header\r\nwalk\twalked\tV;PST\textra\r\n\r\nwalk\twalks\tV;PRS;3;SG\r\n").unwrap();
        assert_eq!(lex.len(), 2);
        assert_eq!(lex.entries()[1].form, "walks");
    }

    #[test]
    fn duplicates_are_collapsed() {
        let lex = parse("walk\twalked\tV;PST\nwalk\twalked\tV;PST\nwalk\twalked\tV;V.PTCP;PST\n").unwrap();
        assert_eq!(lex.len(), 2);
    }

    #[test]
    fn feature_tag_invariants() {
        assert!(FeatureTag::new("V;PST").is_ok());
        assert!(FeatureTag::new("V;;PST").is_err());
        assert!(FeatureTag::new("V; PST").is_err());
        assert!(FeatureTag::new("").is_err());
        assert!(FeatureTag::new("V;").is_err());
    }

    #[test]
    fn derivation_marker_and_file_flag() {
        let lex = parse("walk\twalking\tV.MSDR\n").unwrap();
        assert_eq!(lex.entries()[0].relation, Relation::Derivation);
        let forced = parse_unimorph(
            b"walk\twalker\tN\n",
            &ParseOptions::with_relation(Relation::Derivation),
        )
        .unwrap();
        assert_eq!(forced.entries()[0].relation, Relation::Derivation);
    }

    #[test]
    fn analyses_of_known_and_unknown() {
        let lex = parse("walk\twalked\tV;PST\n").unwrap();
        assert_eq!(
            lex.analyses_of("walked"),
            vec![("walk".to_string(), FeatureTag::new("V;PST").unwrap(), Relation::Inflection)]
        );
        assert!(lex.analyses_of("zzz").is_empty());
    }

    #[test]
    fn analyses_follow_tie_break_order() {
        // "walked" is both past and past participle; a derivation reading is
        // listed last regardless of tag text.
        let infl = parse("walk\twalked\tV;V.PTCP;PST\nwalk\twalked\tV;PST\n").unwrap();
        let der = parse_unimorph(b"walk\twalked\tADJ\n", &ParseOptions::with_relation(Relation::Derivation)).unwrap();
        let lex = infl.merged(der);
        let tags: Vec<String> = lex.analyses_of("walked").into_iter().map(|a| a.1.to_string()).collect();
        assert_eq!(tags, vec!["V;PST", "V;V.PTCP;PST", "ADJ"]);
    }

    #[test]
    fn indexes_are_inverse() {
        let lex = parse("walk\twalked\tV;PST\nrun\tran\tV;PST\nwalk\twalks\tV;PRS;3;SG\n").unwrap();
        for e in lex.entries() {
            assert!(lex.entries_for_form(&e.form).any(|x| x == e));
            assert!(lex.entries_for_lemma(&e.lemma).any(|x| x == e));
        }
        let n: usize = lex.lemmas().map(|l| lex.entries_for_lemma(l).count()).sum();
        assert_eq!(n, lex.len());
    }

    #[test]
    fn capitalization_helpers() {
        assert_eq!(capitalize_first("walk"), "Walk");
        assert_eq!(decapitalize_first("Walk"), "walk");
        assert_eq!(capitalize_first(""), "");
    }
}
