//! The vocabulary decomposition map `surface -> (base token, transformations)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::lexicon::{capitalize_first, FeatureTag, Lexicon, Relation};
use crate::vocab::{SpaceMarker, TokenId, Vocabulary};

pub const MAP_SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum DecompError {
    #[error("map schema version {found} is not supported (expected {MAP_SCHEMA_VERSION})")]
    SchemaVersionMismatch { found: u64 },
    #[error("corrupt map entry at {0}")]
    CorruptEntry(String),
    #[error("map is not valid JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TransformId(pub u32);

impl fmt::Display for TransformId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TransformKind {
    Morph(FeatureTag),
    CapFirst,
}

impl TransformKind {
    pub fn label(&self) -> &str {
        match self {
            TransformKind::Morph(tag) => tag.as_str(),
            TransformKind::CapFirst => "CAP_FIRST",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MapRelation {
    Inflection,
    Derivation,
    CapOnly,
}

impl MapRelation {
    pub fn as_str(self) -> &'static str {
        match self {
            MapRelation::Inflection => "inflection",
            MapRelation::Derivation => "derivation",
            MapRelation::CapOnly => "cap_only",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "inflection" => Some(MapRelation::Inflection),
            "derivation" => Some(MapRelation::Derivation),
            "cap_only" => Some(MapRelation::CapOnly),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decomposition {
    pub surface: String,
    pub base_token_id: TokenId,
    pub base: String,
    /// Sorted; at most one morph id and at most one cap id.
    pub transforms: Vec<TransformId>,
    pub in_vocab: bool,
    pub relation: MapRelation,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecompositionMap {
    space_marker: SpaceMarker,
    transforms: Vec<TransformKind>,
    entries: BTreeMap<String, Decomposition>,
    by_base: BTreeMap<TokenId, Vec<String>>,
    checksums: BTreeMap<String, String>,
}

impl DecompositionMap {
    fn from_parts(
        space_marker: SpaceMarker,
        transforms: Vec<TransformKind>,
        entries: BTreeMap<String, Decomposition>,
        checksums: BTreeMap<String, String>,
    ) -> Self {
        let mut by_base: BTreeMap<TokenId, Vec<String>> = BTreeMap::new();
        for d in entries.values() {
            by_base.entry(d.base_token_id).or_default().push(d.surface.clone());
        }
        Self {
            space_marker,
            transforms,
            entries,
            by_base,
            checksums,
        }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn transforms(&self) -> &[TransformKind] {
        &self.transforms
    }

    pub fn transform(&self, id: TransformId) -> &TransformKind {
        &self.transforms[id.0 as usize]
    }

    pub fn transform_id(&self, kind: &TransformKind) -> Option<TransformId> {
        self.transforms.iter().position(|k| k == kind).map(|i| TransformId(i as u32))
    }

    pub fn entries(&self) -> &BTreeMap<String, Decomposition> {
        &self.entries
    }

    pub fn get(&self, surface: &str) -> Option<&Decomposition> {
        self.entries.get(surface)
    }

    pub fn by_base(&self) -> &BTreeMap<TokenId, Vec<String>> {
        &self.by_base
    }

    pub fn checksums(&self) -> &BTreeMap<String, String> {
        &self.checksums
    }

    pub fn set_checksum(&mut self, name: impl Into<String>, value: impl Into<String>) {
        self.checksums.insert(name.into(), value.into());
    }

    pub fn space_marker(&self) -> SpaceMarker {
        self.space_marker
    }

    /// Label of an entry's transformation set, e.g. `V;PST+CAP_FIRST`.
    pub fn transform_set_label(&self, ids: &[TransformId]) -> String {
        ids.iter().map(|&t| self.transform(t).label()).collect::<Vec<_>>().join("+")
    }

    /// Restricts the map to `keep`, re-compacting transform ids in order.
    fn retain(&self, mut keep: impl FnMut(&Decomposition) -> bool) -> Self {
        let kept: Vec<&Decomposition> = self.entries.values().filter(|d| keep(d)).collect();
        let used: BTreeSet<TransformId> = kept.iter().flat_map(|d| d.transforms.iter().copied()).collect();
        let remap: BTreeMap<TransformId, TransformId> = used
            .iter()
            .enumerate()
            .map(|(new, &old)| (old, TransformId(new as u32)))
            .collect();
        let transforms = used.iter().map(|&t| self.transform(t).clone()).collect();
        let entries = kept
            .into_iter()
            .map(|d| {
                let mut d = d.clone();
                d.transforms = d.transforms.iter().map(|t| remap[t]).collect();
                (d.surface.clone(), d)
            })
            .collect();
        Self::from_parts(self.space_marker, transforms, entries, self.checksums.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildOptions {
    pub include_oov: bool,
    pub include_derivations: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            include_oov: true,
            include_derivations: true,
        }
    }
}

/// Forms that did not make it into the map, by reason.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SkipReport {
    pub base_not_in_vocab: usize,
    pub base_without_leading_space: usize,
    pub conflicting_surface: usize,
    pub multiword_form: usize,
    pub surface_is_base: usize,
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub map: DecompositionMap,
    pub skips: SkipReport,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Candidate {
    n_transforms: usize,
    derivational: bool,
    tag_text: String,
    base_id: TokenId,
    morph: Option<FeatureTag>,
    cap: bool,
    relation: Relation,
}

/// Builds the map for every lemma whose space-prefixed form is a single
/// token. A surface that is itself such a lemma stays a base. Ambiguous
/// surfaces resolve to the smallest transformation set, then inflection over
/// derivation, then the smallest tag text, then the smallest base id.
pub fn build_map(vocab: &Vocabulary, lexicon: &Lexicon, opts: &BuildOptions) -> BuildOutput {
    let mut skips = SkipReport::default();
    let mut candidates: BTreeMap<String, BTreeSet<Candidate>> = BTreeMap::new();

    let is_base = |word: &str| lexicon.is_lemma(word) && vocab.id(&format!(" {word}")).is_some();

    for lemma in lexicon.lemmas() {
        let family: Vec<_> = lexicon
            .entries_for_lemma(lemma)
            .filter(|e| opts.include_derivations || e.relation != Relation::Derivation)
            .collect();
        let Some(base_id) = vocab.id(&format!(" {lemma}")) else {
            if vocab.id(lemma).is_some() {
                skips.base_without_leading_space += family.len();
            } else {
                skips.base_not_in_vocab += family.len();
            }
            continue;
        };
        let cap_lemma = capitalize_first(lemma);
        let mut push = |form: String, morph: Option<(&FeatureTag, Relation)>, cap: bool| {
            let cand = Candidate {
                n_transforms: usize::from(morph.is_some()) + usize::from(cap),
                derivational: matches!(morph, Some((_, Relation::Derivation))),
                tag_text: morph.map(|(t, _)| t.as_str().to_string()).unwrap_or_default(),
                base_id,
                morph: morph.map(|(t, _)| t.clone()),
                cap,
                relation: morph.map(|(_, r)| r).unwrap_or(Relation::Inflection),
            };
            candidates.entry(format!(" {form}")).or_default().insert(cand);
        };
        if cap_lemma != lemma {
            push(cap_lemma.clone(), None, true);
        }
        for e in family {
            if e.form.chars().any(char::is_whitespace) {
                skips.multiword_form += 1;
                continue;
            }
            if e.form == lemma || e.form == cap_lemma {
                continue;
            }
            push(e.form.clone(), Some((&e.tag, e.relation)), false);
            let cap_form = capitalize_first(&e.form);
            if cap_form != e.form {
                push(cap_form, Some((&e.tag, e.relation)), true);
            }
        }
    }

    let mut chosen: Vec<(String, Candidate, bool)> = Vec::new();
    for (surface, cands) in candidates {
        if is_base(&surface[1..]) {
            skips.surface_is_base += 1;
            continue;
        }
        let in_vocab = vocab.id(&surface).is_some();
        if !in_vocab && !opts.include_oov {
            continue;
        }
        if cands.len() > 1 {
            skips.conflicting_surface += 1;
        }
        let best = cands.into_iter().next().expect("non-empty");
        chosen.push((surface, best, in_vocab));
    }

    let mut kinds: BTreeSet<TransformKind> = BTreeSet::new();
    for (_, c, _) in &chosen {
        if let Some(t) = &c.morph {
            kinds.insert(TransformKind::Morph(t.clone()));
        }
        if c.cap {
            kinds.insert(TransformKind::CapFirst);
        }
    }
    // Morph tags sort before CapFirst.
    let transforms: Vec<TransformKind> = kinds.into_iter().collect();
    let id_of = |k: &TransformKind| TransformId(transforms.iter().position(|x| x == k).unwrap() as u32);

    let mut entries = BTreeMap::new();
    for (surface, c, in_vocab) in chosen {
        let mut ts = Vec::new();
        if let Some(t) = &c.morph {
            ts.push(id_of(&TransformKind::Morph(t.clone())));
        }
        if c.cap {
            ts.push(id_of(&TransformKind::CapFirst));
        }
        ts.sort();
        let relation = match (c.morph.is_some(), c.relation) {
            (false, _) => MapRelation::CapOnly,
            (true, Relation::Inflection) => MapRelation::Inflection,
            (true, Relation::Derivation) => MapRelation::Derivation,
        };
        let base = vocab.token(c.base_id).expect("base id from vocab").to_string();
        entries.insert(
            surface.clone(),
            Decomposition {
                surface,
                base_token_id: c.base_id,
                base,
                transforms: ts,
                in_vocab,
                relation,
            },
        );
    }
    BuildOutput {
        map: DecompositionMap::from_parts(vocab.space_marker(), transforms, entries, BTreeMap::new()),
        skips,
    }
}

/// Removes failed surfaces (and optionally all derivations). Removed words
/// fall back to their original tokenization. Returns warnings for failed
/// surfaces the map does not contain.
pub fn filter_map(map: &DecompositionMap, failed: &BTreeSet<String>, drop_derivations: bool) -> (DecompositionMap, Vec<String>) {
    let warnings = failed
        .iter()
        .filter(|s| !map.entries.contains_key(*s))
        .map(|s| format!("unknown surface {s:?}"))
        .collect();
    let out = map.retain(|d| !failed.contains(&d.surface) && !(drop_derivations && d.relation == MapRelation::Derivation));
    (out, warnings)
}

/// Keeps only entries satisfying `keep`; transform ids are re-compacted.
pub fn retain_entries(map: &DecompositionMap, keep: impl FnMut(&Decomposition) -> bool) -> DecompositionMap {
    map.retain(keep)
}

/// `(removed in-vocab surface tokens, size of the union vocabulary)`.
pub fn reduction_stats(map: &DecompositionMap, vocab: &Vocabulary) -> (usize, usize) {
    let removed = map.entries.values().filter(|d| d.in_vocab && !d.transforms.is_empty()).count();
    (removed, vocab.len() - removed + map.len())
}

pub fn serialize_map(map: &DecompositionMap) -> Vec<u8> {
    let transforms: Vec<Value> = map
        .transforms
        .iter()
        .enumerate()
        .map(|(i, k)| match k {
            TransformKind::Morph(tag) => json!({"id": i, "kind": "morph", "tag": tag.as_str()}),
            TransformKind::CapFirst => json!({"id": i, "kind": "cap_first"}),
        })
        .collect();
    let entries: Vec<Value> = map
        .entries
        .values()
        .map(|d| {
            json!({
                "surface": d.surface,
                "base_id": d.base_token_id,
                "base": d.base,
                "transforms": d.transforms.iter().map(|t| t.0).collect::<Vec<_>>(),
                "in_vocab": d.in_vocab,
                "relation": d.relation.as_str(),
            })
        })
        .collect();
    let doc = json!({
        "version": MAP_SCHEMA_VERSION,
        "space_marker": map.space_marker.as_str(),
        "transforms": transforms,
        "entries": entries,
        "checksums": map.checksums,
    });
    let mut out = serde_json::to_vec_pretty(&doc).expect("json");
    out.push(b'\n');
    out
}

pub fn load_map(bytes: &[u8]) -> Result<DecompositionMap, DecompError> {
    let doc: Value = serde_json::from_slice(bytes).map_err(|e| DecompError::Json(e.to_string()))?;
    let corrupt = |p: String| DecompError::CorruptEntry(p);
    let version = doc.get("version").and_then(Value::as_u64).ok_or_else(|| corrupt("version".into()))?;
    if version != MAP_SCHEMA_VERSION {
        return Err(DecompError::SchemaVersionMismatch { found: version });
    }
    let space_marker = doc
        .get("space_marker")
        .and_then(Value::as_str)
        .and_then(SpaceMarker::parse)
        .ok_or_else(|| corrupt("space_marker".into()))?;

    let raw_t = doc.get("transforms").and_then(Value::as_array).ok_or_else(|| corrupt("transforms".into()))?;
    let mut transforms = Vec::with_capacity(raw_t.len());
    for (i, t) in raw_t.iter().enumerate() {
        let p = |f: &str| format!("transforms[{i}].{f}");
        let id = t.get("id").and_then(Value::as_u64).ok_or_else(|| corrupt(p("id")))?;
        if id != i as u64 {
            return Err(corrupt(p("id")));
        }
        let kind = match t.get("kind").and_then(Value::as_str) {
            Some("morph") => {
                let tag = t.get("tag").and_then(Value::as_str).ok_or_else(|| corrupt(p("tag")))?;
                TransformKind::Morph(FeatureTag::new(tag).map_err(|_| corrupt(p("tag")))?)
            }
            Some("cap_first") => TransformKind::CapFirst,
            _ => return Err(corrupt(p("kind"))),
        };
        transforms.push(kind);
    }

    let raw_e = doc.get("entries").and_then(Value::as_array).ok_or_else(|| corrupt("entries".into()))?;
    let mut entries = BTreeMap::new();
    for (i, e) in raw_e.iter().enumerate() {
        let p = |f: &str| format!("entries[{i}].{f}");
        let surface = e.get("surface").and_then(Value::as_str).ok_or_else(|| corrupt(p("surface")))?;
        let base_id = e.get("base_id").and_then(Value::as_u64).ok_or_else(|| corrupt(p("base_id")))?;
        let base = e.get("base").and_then(Value::as_str).ok_or_else(|| corrupt(p("base")))?;
        let ts = e.get("transforms").and_then(Value::as_array).ok_or_else(|| corrupt(p("transforms")))?;
        let mut ids = Vec::with_capacity(ts.len());
        for t in ts {
            let id = t.as_u64().filter(|&id| (id as usize) < transforms.len()).ok_or_else(|| corrupt(p("transforms")))?;
            ids.push(TransformId(id as u32));
        }
        let in_vocab = e.get("in_vocab").and_then(Value::as_bool).ok_or_else(|| corrupt(p("in_vocab")))?;
        let relation = e
            .get("relation")
            .and_then(Value::as_str)
            .and_then(MapRelation::parse)
            .ok_or_else(|| corrupt(p("relation")))?;
        if ids.is_empty() || surface == base || entries.contains_key(surface) {
            return Err(corrupt(p("surface")));
        }
        entries.insert(
            surface.to_string(),
            Decomposition {
                surface: surface.to_string(),
                base_token_id: base_id as TokenId,
                base: base.to_string(),
                transforms: ids,
                in_vocab,
                relation,
            },
        );
    }
    let mut checksums = BTreeMap::new();
    if let Some(obj) = doc.get("checksums").and_then(Value::as_object) {
        for (k, v) in obj {
            let v = v.as_str().ok_or_else(|| corrupt(format!("checksums.{k}")))?;
            checksums.insert(k.clone(), v.to_string());
        }
    }
    Ok(DecompositionMap::from_parts(space_marker, transforms, entries, checksums))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{parse_unimorph, ParseOptions};

    fn vocab(tokens: &[&str]) -> Vocabulary {
        Vocabulary::from_tokens(tokens.iter().map(|s| s.to_string()).collect(), SpaceMarker::LiteralSpace).unwrap()
    }

    fn lex(text: &str) -> Lexicon {
        parse_unimorph(text.as_bytes(), &ParseOptions::default()).unwrap()
    }

    fn fixture() -> (Vocabulary, Lexicon) {
        let v = vocab(&["a", " walk", " walked", " Walk", " walks", "ed", " run"]);
        let mut l = lex("walk\twalked\tV;PST\nwalk\twalks\tV;PRS;3;SG\nwalk\twalking\tV;V.PTCP;PRS\nrun\tran\tV;PST\n");
        let der = parse_unimorph(b"walk\twalker\tN\nwalk\twalkable\tADJ\nrun\trunner\tN\n", &ParseOptions::with_relation(Relation::Derivation)).unwrap();
        l = l.merged(der);
        (v, l)
    }

    #[test]
    fn past_tense_maps_to_base() {
        let (v, l) = fixture();
        let m = build_map(&v, &l, &BuildOptions::default()).map;
        let d = m.get(" walked").unwrap();
        assert_eq!(d.base, " walk");
        assert_eq!(d.base_token_id, 1);
        assert!(d.in_vocab);
        assert_eq!(m.transform_set_label(&d.transforms), "V;PST");
        assert_eq!(d.relation, MapRelation::Inflection);
    }

    #[test]
    fn capitalized_inflection_composes() {
        let (v, l) = fixture();
        let m = build_map(&v, &l, &BuildOptions::default()).map;
        let d = m.get(" Walked").unwrap();
        assert_eq!(d.base, " walk");
        assert!(!d.in_vocab);
        assert_eq!(m.transform_set_label(&d.transforms), "V;PST+CAP_FIRST");
        let cap = m.get(" Walk").unwrap();
        assert_eq!(cap.relation, MapRelation::CapOnly);
        assert!(cap.in_vocab);
    }

    #[test]
    fn lemma_without_single_token_has_no_family() {
        let v = vocab(&[" wal", "k", " walked"]);
        let l = lex("walk\twalked\tV;PST\n");
        let out = build_map(&v, &l, &BuildOptions::default());
        assert!(out.map.is_empty());
        assert_eq!(out.skips.base_not_in_vocab, 1);
        let v2 = vocab(&["walk", " walked"]);
        assert_eq!(build_map(&v2, &l, &BuildOptions::default()).skips.base_without_leading_space, 1);
    }

    #[test]
    fn flags_control_oov_and_derivations() {
        let (v, l) = fixture();
        let iv = build_map(&v, &l, &BuildOptions { include_oov: false, include_derivations: true }).map;
        assert!(iv.entries().values().all(|d| d.in_vocab));
        let no_der = build_map(&v, &l, &BuildOptions { include_oov: true, include_derivations: false }).map;
        assert!(no_der.entries().values().all(|d| d.relation != MapRelation::Derivation));
        assert!(no_der.get(" walker").is_none());
    }

    #[test]
    fn surface_that_is_a_base_is_not_decomposed() {
        let v = vocab(&[" saw", " see"]);
        let l = lex("see\tsaw\tV;PST\nsaw\tsaws\tN;PL\n");
        let out = build_map(&v, &l, &BuildOptions::default());
        assert!(out.map.get(" saw").is_none());
        assert_eq!(out.map.get(" saws").unwrap().base, " saw");
        assert_eq!(out.skips.surface_is_base, 1);
    }

    #[test]
    fn tie_break_prefers_inflection_then_tag_then_base() {
        let v = vocab(&[" walk", " walked"]);
        let mut l = lex("walk\twalked\tV;V.PTCP;PST\nwalk\twalked\tV;PST\n");
        l = l.merged(parse_unimorph(b"walk\twalked\tADJ\n", &ParseOptions::with_relation(Relation::Derivation)).unwrap());
        let out = build_map(&v, &l, &BuildOptions::default());
        let d = out.map.get(" walked").unwrap();
        assert_eq!(out.map.transform_set_label(&d.transforms), "V;PST");
        // " walked" and " Walked"
        assert_eq!(out.skips.conflicting_surface, 2);
        // two bases: smaller id wins
        let v = vocab(&[" b", " a"]);
        let l = lex("a\tax\tN;PL\nb\tax\tN;PL\n");
        assert_eq!(build_map(&v, &l, &BuildOptions::default()).map.get(" ax").unwrap().base, " b");
    }

    #[test]
    fn invariants_hold() {
        let (v, l) = fixture();
        let m = build_map(&v, &l, &BuildOptions::default()).map;
        let bases: BTreeSet<TokenId> = m.entries().values().map(|d| d.base_token_id).collect();
        for d in m.entries().values() {
            assert!(v.token(d.base_token_id).unwrap().starts_with(' '));
            assert!(d.transforms.len() <= 2 && !d.transforms.is_empty());
            assert_ne!(d.surface, d.base);
            let caps = d.transforms.iter().filter(|&&t| *m.transform(t) == TransformKind::CapFirst).count();
            assert!(caps <= 1 && d.transforms.len() - caps <= 1);
            // no composed surface is also a retained base
            assert!(v.id(&d.surface).map_or(true, |id| !bases.contains(&id)));
        }
        for (b, surfaces) in m.by_base() {
            for s in surfaces {
                assert_eq!(m.get(s).unwrap().base_token_id, *b);
            }
        }
    }

    #[test]
    fn filter_removes_failed_and_derivations() {
        let (v, l) = fixture();
        let m = build_map(&v, &l, &BuildOptions::default()).map;
        let failed: BTreeSet<String> = [" walked".to_string(), " nope".to_string()].into();
        let (f, warnings) = filter_map(&m, &failed, false);
        assert!(f.get(" walked").is_none());
        assert_eq!(f.len(), m.len() - 1);
        assert_eq!(warnings.len(), 1);
        let n_der = m.entries().values().filter(|d| d.relation == MapRelation::Derivation).count();
        assert_eq!(n_der, 6);
        let (nd, _) = filter_map(&m, &BTreeSet::new(), true);
        assert_eq!(nd.len(), m.len() - n_der);
        // ids are dense after filtering
        let used: BTreeSet<u32> = nd.entries().values().flat_map(|d| d.transforms.iter().map(|t| t.0)).collect();
        assert_eq!(used.len(), nd.transforms().len());
    }

    #[test]
    fn serialization_round_trip_and_determinism() {
        let (v, l) = fixture();
        let mut m = build_map(&v, &l, &BuildOptions::default()).map;
        m.set_checksum("lexicon", "sha256:abc");
        let bytes = serialize_map(&m);
        assert_eq!(load_map(&bytes).unwrap(), m);
        let again = serialize_map(&build_map(&v, &l, &BuildOptions::default()).map);
        let mut m2 = load_map(&again).unwrap();
        m2.set_checksum("lexicon", "sha256:abc");
        assert_eq!(serialize_map(&m2), bytes);
    }

    #[test]
    fn tampered_map_is_corrupt() {
        let (v, l) = fixture();
        let m = build_map(&v, &l, &BuildOptions::default()).map;
        let mut doc: Value = serde_json::from_slice(&serialize_map(&m)).unwrap();
        doc["entries"][0].as_object_mut().unwrap().remove("base");
        let err = load_map(&serde_json::to_vec(&doc).unwrap()).unwrap_err();
        assert_eq!(err, DecompError::CorruptEntry("entries[0].base".into()));
        doc["version"] = json!(2);
        assert_eq!(
            load_map(&serde_json::to_vec(&doc).unwrap()).unwrap_err(),
            DecompError::SchemaVersionMismatch { found: 2 }
        );
    }

    #[test]
    fn reduction_counts() {
        let (v, l) = fixture();
        let m = build_map(&v, &l, &BuildOptions::default()).map;
        let (removed, union) = reduction_stats(&m, &v);
        // walked, walks, Walk
        assert_eq!(removed, 3);
        assert_eq!(union, v.len() - 3 + m.len());
        assert_eq!(reduction_stats(&DecompositionMap::empty(), &v), (0, v.len()));
    }
}
