//! Compositional input embeddings and factored output scores over the union
//! of retained plain tokens and composed surface forms.

use std::collections::HashMap;

use thiserror::Error;

use crate::decomp::{DecompositionMap, TransformId};
use crate::transforms::{EmbeddingMatrix, Rows, TransformationTable};
use crate::vocab::{pre_tokenize, TokenId, VocabError, Vocabulary};

#[derive(Debug, Error, PartialEq)]
pub enum ComposeError {
    #[error("unknown surface {0:?}")]
    UnknownSurface(String),
    #[error("transformation {0} has no defined offset")]
    UndefinedTransform(TransformId),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("k must be in 1..={max}, got {k}")]
    InvalidK { k: usize, max: usize },
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

/// Dot product with eight independent accumulators. Every logit in the
/// crate goes through this routine so factored and per-entry scores agree
/// bit for bit.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = 0f32;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `out[i] = dot(h, m.row(i))`.
pub fn dot_rows(m: Rows<'_>, h: &[f32], out: &mut [f32]) {
    for (o, row) in out.iter_mut().zip(m.data.chunks_exact(m.dim)) {
        *o = dot(h, row);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UnionEntry {
    Plain(TokenId),
    Composed {
        surface: String,
        base_id: TokenId,
        transforms: Vec<TransformId>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InputSlot {
    Plain(TokenId),
    /// Index into the union.
    Composed(u32),
}

#[derive(Debug, Clone, Copy)]
struct Packed {
    base: u32,
    n: u8,
    t: [u32; 2],
}

#[derive(Debug, Clone)]
pub struct CompositionalVocab {
    pub vocab: Vocabulary,
    pub map: DecompositionMap,
    pub table: TransformationTable,
    union: Vec<UnionEntry>,
    surfaces: HashMap<String, u32>,
    plain_union: Vec<Option<u32>>,
    /// Union index of the composed entry replacing a removed plain token.
    removed: Vec<Option<u32>>,
    n_plain: usize,
    packed: Vec<Packed>,
    bases: Vec<TokenId>,
}

impl CompositionalVocab {
    /// Entries using an undefined transformation are left out, so their
    /// words keep the original tokenization.
    pub fn new(vocab: Vocabulary, map: DecompositionMap, table: TransformationTable) -> Result<Self, ComposeError> {
        if table.len() != map.transforms().len() {
            return Err(ComposeError::DimensionMismatch {
                expected: map.transforms().len(),
                got: table.len(),
            });
        }
        let active: Vec<_> = map
            .entries()
            .values()
            .filter(|d| d.transforms.iter().all(|&t| table.is_defined(t)))
            .cloned()
            .collect();
        let mut masked = vec![false; vocab.len()];
        for d in &active {
            if d.in_vocab {
                let id = vocab.id(&d.surface).ok_or_else(|| ComposeError::UnknownSurface(d.surface.clone()))?;
                masked[id as usize] = true;
            }
        }
        let mut union = Vec::new();
        let mut plain_union = vec![None; vocab.len()];
        for id in 0..vocab.len() {
            if !masked[id] {
                plain_union[id] = Some(union.len() as u32);
                union.push(UnionEntry::Plain(id as TokenId));
            }
        }
        let n_plain = union.len();
        let mut removed = vec![None; vocab.len()];
        let mut packed = Vec::with_capacity(active.len());
        let mut bases = Vec::new();
        for d in active {
            let idx = union.len() as u32;
            if d.in_vocab {
                removed[vocab.id(&d.surface).unwrap() as usize] = Some(idx);
            }
            let mut t = [0u32; 2];
            for (slot, id) in t.iter_mut().zip(&d.transforms) {
                *slot = id.0;
            }
            packed.push(Packed {
                base: d.base_token_id,
                n: d.transforms.len() as u8,
                t,
            });
            bases.push(d.base_token_id);
            union.push(UnionEntry::Composed {
                surface: d.surface,
                base_id: d.base_token_id,
                transforms: d.transforms,
            });
        }
        bases.sort_unstable();
        bases.dedup();
        let mut surfaces = HashMap::with_capacity(union.len());
        for (i, e) in union.iter().enumerate() {
            let s = match e {
                UnionEntry::Plain(id) => vocab.token(*id).unwrap().to_string(),
                UnionEntry::Composed { surface, .. } => surface.clone(),
            };
            // Surface strings are unique by construction.
            let prev = surfaces.insert(s, i as u32);
            debug_assert!(prev.is_none());
        }
        Ok(Self {
            vocab,
            map,
            table,
            union,
            surfaces,
            plain_union,
            removed,
            n_plain,
            packed,
            bases,
        })
    }

    /// Plain-only view: every token keeps its own slot.
    pub fn plain(vocab: Vocabulary, dim: usize) -> Self {
        Self::new(vocab, DecompositionMap::empty(), TransformationTable::empty(dim)).expect("empty map")
    }

    pub fn len(&self) -> usize {
        self.union.len()
    }

    pub fn is_empty(&self) -> bool {
        self.union.is_empty()
    }

    pub fn n_plain(&self) -> usize {
        self.n_plain
    }

    pub fn n_composed(&self) -> usize {
        self.packed.len()
    }

    pub fn entries(&self) -> &[UnionEntry] {
        &self.union
    }

    pub fn entry(&self, i: usize) -> &UnionEntry {
        &self.union[i]
    }

    pub fn surface(&self, i: usize) -> &str {
        match &self.union[i] {
            UnionEntry::Plain(id) => self.vocab.token(*id).unwrap(),
            UnionEntry::Composed { surface, .. } => surface,
        }
    }

    pub fn index_of(&self, surface: &str) -> Option<usize> {
        self.surfaces.get(surface).map(|&i| i as usize)
    }

    /// Distinct base ids of the active composed entries.
    pub fn bases(&self) -> &[TokenId] {
        &self.bases
    }

    pub fn is_removed(&self, id: TokenId) -> bool {
        self.removed[id as usize].is_some()
    }

    /// Original-vocabulary id of a union entry's surface, if it has one.
    pub fn orig_id(&self, i: usize) -> Option<TokenId> {
        match &self.union[i] {
            UnionEntry::Plain(id) => Some(*id),
            UnionEntry::Composed { surface, .. } => self.vocab.id(surface),
        }
    }

    /// Union slot that represents an original token id.
    pub fn union_of_orig(&self, id: TokenId) -> u32 {
        self.plain_union[id as usize].or(self.removed[id as usize]).expect("every token is represented")
    }

    pub fn slot_for_entry(&self, i: usize) -> InputSlot {
        match &self.union[i] {
            UnionEntry::Plain(id) => InputSlot::Plain(*id),
            UnionEntry::Composed { .. } => InputSlot::Composed(i as u32),
        }
    }

    pub fn slot_text(&self, slot: InputSlot) -> &str {
        match slot {
            InputSlot::Plain(id) => self.vocab.token(id).unwrap(),
            InputSlot::Composed(i) => self.surface(i as usize),
        }
    }

    pub fn slots_text(&self, slots: &[InputSlot]) -> String {
        slots.iter().map(|&s| self.slot_text(s)).collect()
    }

    /// `e_b + sum e_t` with explicit offsets (the table may be stale during
    /// training).
    pub fn slot_embedding_into(&self, e: Rows<'_>, e_t: Rows<'_>, slot: InputSlot, out: &mut [f32]) {
        match slot {
            InputSlot::Plain(id) => out.copy_from_slice(e.row(id as usize)),
            InputSlot::Composed(i) => {
                let p = &self.packed[i as usize - self.n_plain];
                out.copy_from_slice(e.row(p.base as usize));
                for &t in &p.t[..p.n as usize] {
                    for (o, x) in out.iter_mut().zip(e_t.row(t as usize)) {
                        *o += x;
                    }
                }
            }
        }
    }

    /// Transformation rows used by a slot.
    pub fn slot_transforms(&self, slot: InputSlot) -> &[u32] {
        match slot {
            InputSlot::Plain(_) => &[],
            InputSlot::Composed(i) => {
                let p = &self.packed[i as usize - self.n_plain];
                &p.t[..p.n as usize]
            }
        }
    }

    /// Base token id used by a slot.
    pub fn slot_base(&self, slot: InputSlot) -> TokenId {
        match slot {
            InputSlot::Plain(id) => id,
            InputSlot::Composed(i) => self.packed[i as usize - self.n_plain].base,
        }
    }

    /// Input vector for a surface: composed entries sum base and offsets,
    /// plain tokens return their row unchanged.
    pub fn compose_embedding(&self, e: &EmbeddingMatrix, surface: &str) -> Result<Vec<f32>, ComposeError> {
        if e.rows != self.vocab.len() {
            return Err(ComposeError::DimensionMismatch {
                expected: self.vocab.len(),
                got: e.rows,
            });
        }
        if let Some(d) = self.map.get(surface) {
            if let Some(&t) = d.transforms.iter().find(|&&t| !self.table.is_defined(t)) {
                return Err(ComposeError::UndefinedTransform(t));
            }
        }
        let i = self.index_of(surface).ok_or_else(|| ComposeError::UnknownSurface(surface.to_string()))?;
        let mut out = vec![0.0; e.dim];
        self.slot_embedding_into(e.view(), self.table.input_offsets.view(), self.slot_for_entry(i), &mut out);
        Ok(out)
    }

    /// Score of one union entry: `h.u_b + sum h.u_t`.
    pub fn composed_logit(&self, u: Rows<'_>, u_t: Rows<'_>, h: &[f32], entry: usize) -> Result<f32, ComposeError> {
        if h.len() != u.dim {
            return Err(ComposeError::DimensionMismatch { expected: u.dim, got: h.len() });
        }
        Ok(match &self.union[entry] {
            UnionEntry::Plain(id) => dot(h, u.row(*id as usize)),
            UnionEntry::Composed { base_id, transforms, .. } => {
                let mut s = dot(h, u.row(*base_id as usize));
                for t in transforms {
                    s += dot(h, u_t.row(t.0 as usize));
                }
                s
            }
        })
    }

    /// Whole union in two stages: base logits for every original token, then
    /// transform logits, then per-entry sums. `base` and `tl` are scratch.
    pub fn score_union_into(
        &self,
        u: Rows<'_>,
        u_t: Rows<'_>,
        h: &[f32],
        base: &mut Vec<f32>,
        tl: &mut Vec<f32>,
        out: &mut Vec<f32>,
    ) -> Result<(), ComposeError> {
        if h.len() != u.dim {
            return Err(ComposeError::DimensionMismatch { expected: u.dim, got: h.len() });
        }
        base.resize(u.rows, 0.0);
        dot_rows(u, h, base);
        tl.resize(u_t.rows, 0.0);
        if u_t.rows > 0 {
            dot_rows(u_t, h, tl);
        }
        out.clear();
        out.reserve(self.union.len());
        for e in &self.union[..self.n_plain] {
            let UnionEntry::Plain(id) = e else { unreachable!() };
            out.push(base[*id as usize]);
        }
        for p in &self.packed {
            let mut s = base[p.base as usize];
            for &t in &p.t[..p.n as usize] {
                s += tl[t as usize];
            }
            out.push(s);
        }
        Ok(())
    }

    pub fn score_union(&self, u: Rows<'_>, u_t: Rows<'_>, h: &[f32]) -> Result<Vec<f32>, ComposeError> {
        let (mut b, mut t, mut out) = (Vec::new(), Vec::new(), Vec::new());
        self.score_union_into(u, u_t, h, &mut b, &mut t, &mut out)?;
        Ok(out)
    }

    /// Like `score_union_into`, but composed entries whose base is outside
    /// the top-k bases score `-inf`.
    #[allow(clippy::too_many_arguments)]
    pub fn score_union_pruned_into(
        &self,
        u: Rows<'_>,
        u_t: Rows<'_>,
        h: &[f32],
        k: usize,
        base: &mut Vec<f32>,
        tl: &mut Vec<f32>,
        keep: &mut Vec<bool>,
        out: &mut Vec<f32>,
    ) -> Result<(), ComposeError> {
        if h.len() != u.dim {
            return Err(ComposeError::DimensionMismatch { expected: u.dim, got: h.len() });
        }
        base.resize(u.rows, 0.0);
        dot_rows(u, h, base);
        let top = prune_bases(base, &self.bases, k)?;
        keep.clear();
        keep.resize(u.rows, false);
        for b in top {
            keep[b as usize] = true;
        }
        tl.resize(u_t.rows, 0.0);
        if u_t.rows > 0 {
            dot_rows(u_t, h, tl);
        }
        out.clear();
        for e in &self.union[..self.n_plain] {
            let UnionEntry::Plain(id) = e else { unreachable!() };
            out.push(base[*id as usize]);
        }
        for p in &self.packed {
            if !keep[p.base as usize] {
                out.push(f32::NEG_INFINITY);
                continue;
            }
            let mut s = base[p.base as usize];
            for &t in &p.t[..p.n as usize] {
                s += tl[t as usize];
            }
            out.push(s);
        }
        Ok(())
    }

    /// Splits text into chunks; a space-prefixed word that is an active map
    /// surface becomes one composed slot, everything else is encoded as
    /// usual. Removed tokens produced by the fallback are swapped for their
    /// composed slot.
    pub fn restructure_input(&self, text: &str) -> Result<Vec<InputSlot>, ComposeError> {
        let mut out = Vec::new();
        let mut ids = Vec::new();
        for chunk in pre_tokenize(text) {
            if chunk.starts_with(' ') {
                if let Some(&i) = self.surfaces.get(chunk) {
                    if i as usize >= self.n_plain {
                        out.push(InputSlot::Composed(i));
                        continue;
                    }
                }
            }
            ids.clear();
            self.vocab.encode_chunk(chunk, &mut ids)?;
            for &id in &ids {
                out.push(match self.removed[id as usize] {
                    Some(i) => InputSlot::Composed(i),
                    None => InputSlot::Plain(id),
                });
            }
        }
        Ok(out)
    }

    /// Plain BPE slots, as the unmodified model sees the text.
    pub fn plain_slots(&self, text: &str) -> Result<Vec<InputSlot>, ComposeError> {
        Ok(self.vocab.encode(text)?.into_iter().map(InputSlot::Plain).collect())
    }
}

/// Top-k of `bases` by `base_logits` (ties to the smaller id).
pub fn prune_bases(base_logits: &[f32], bases: &[TokenId], k: usize) -> Result<Vec<TokenId>, ComposeError> {
    if k == 0 || k > bases.len() {
        return Err(ComposeError::InvalidK { k, max: bases.len() });
    }
    let mut v: Vec<TokenId> = bases.to_vec();
    let cmp = |a: &TokenId, b: &TokenId| base_logits[*b as usize].total_cmp(&base_logits[*a as usize]).then(a.cmp(b));
    if k < v.len() {
        v.select_nth_unstable_by(k - 1, cmp);
        v.truncate(k);
    }
    v.sort_unstable_by(cmp);
    Ok(v)
}

/// Index of the largest score (ties to the smaller index).
pub fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::{build_map, BuildOptions};
    use crate::lexicon::{parse_unimorph, ParseOptions};
    use crate::transforms::extract_table;
    use crate::vocab::SpaceMarker;

    fn small() -> (CompositionalVocab, EmbeddingMatrix) {
        let v = Vocabulary::from_tokens(
            [" ", "a", "b", "e", "h", "k", "l", "d", "w", " he", " walk", " walked", " talk", " talked", " Walk", "able", " talkable"]
                .map(String::from)
                .to_vec(),
            SpaceMarker::LiteralSpace,
        )
        .unwrap();
        let l = parse_unimorph(b"walk\twalked\tV;PST\ntalk\ttalked\tV;PST\nwalk\twalkable\tADJ\ntalk\ttalkable\tADJ\n", &ParseOptions::default()).unwrap();
        let m = build_map(&v, &l, &BuildOptions::default()).map;
        let e = EmbeddingMatrix::from_data(v.len(), 2, (0..v.len() * 2).map(|x| (x as f32 * 0.37).cos()).collect()).unwrap();
        let t = extract_table(&m, &v, &e, &e).unwrap();
        (CompositionalVocab::new(v, m, t).unwrap(), e)
    }

    #[test]
    fn plain_token_embedding_is_unchanged() {
        let (cv, e) = small();
        assert_eq!(cv.compose_embedding(&e, " he").unwrap(), e.row(9));
        assert!(matches!(cv.compose_embedding(&e, " zzz"), Err(ComposeError::UnknownSurface(_))));
    }

    #[test]
    fn composed_embedding_is_base_plus_offset() {
        let v = Vocabulary::from_tokens([" walk", " walked"].map(String::from).to_vec(), SpaceMarker::LiteralSpace).unwrap();
        let l = parse_unimorph(b"walk\twalked\tV;PST\n", &ParseOptions::default()).unwrap();
        let m = build_map(&v, &l, &BuildOptions::default()).map;
        let e = EmbeddingMatrix::from_data(2, 2, vec![1.0, 2.0, 1.5, 1.0]).unwrap();
        let t = extract_table(&m, &v, &e, &e).unwrap();
        assert_eq!(t.input_offsets.row(0), &[0.5, -1.0]);
        let cv = CompositionalVocab::new(v, m, t).unwrap();
        assert_eq!(cv.compose_embedding(&e, " walked").unwrap(), vec![1.5, 1.0]);
    }

    #[test]
    fn logit_of_dot_products() {
        let v = Vocabulary::from_tokens([" walk", " walked"].map(String::from).to_vec(), SpaceMarker::LiteralSpace).unwrap();
        let l = parse_unimorph(b"walk\twalked\tV;PST\nwalk\twalking\tV;V.PTCP;PRS\n", &ParseOptions::default()).unwrap();
        let m = build_map(&v, &l, &BuildOptions { include_oov: true, include_derivations: false }).map;
        let mut t = TransformationTable::empty(2);
        t.input_offsets = EmbeddingMatrix::zeros(m.transforms().len(), 2);
        t.output_offsets = EmbeddingMatrix::from_data(m.transforms().len(), 2, vec![4.0, 5.0].repeat(m.transforms().len())).unwrap();
        t.support = vec![1; m.transforms().len()];
        t.labels = vec![String::new(); m.transforms().len()];
        let u = EmbeddingMatrix::from_data(2, 2, vec![2.0, 3.0, 0.0, 0.0]).unwrap();
        let cv = CompositionalVocab::new(v, m, t.clone()).unwrap();
        let i = cv.index_of(" walking").unwrap();
        assert_eq!(cv.composed_logit(u.view(), t.output_offsets.view(), &[1.0, 0.0], i).unwrap(), 6.0);
        let j = cv.index_of(" walk").unwrap();
        assert_eq!(cv.composed_logit(u.view(), t.output_offsets.view(), &[1.0, 0.0], j).unwrap(), 2.0);
        assert!(cv.composed_logit(u.view(), t.output_offsets.view(), &[1.0], j).is_err());
    }

    #[test]
    fn union_masks_removed_tokens() {
        let (cv, _) = small();
        let walked = cv.vocab.id(" walked").unwrap();
        assert!(cv.is_removed(walked));
        let i = cv.index_of(" walked").unwrap();
        assert!(matches!(cv.entry(i), UnionEntry::Composed { .. }));
        let (removed, union) = crate::decomp::reduction_stats(&cv.map, &cv.vocab);
        assert_eq!(cv.len(), union);
        assert_eq!(cv.n_plain(), cv.vocab.len() - removed);
        let mut seen = std::collections::HashSet::new();
        for i in 0..cv.len() {
            assert!(seen.insert(cv.surface(i).to_string()));
        }
        for id in 0..cv.vocab.len() as u32 {
            assert_eq!(cv.orig_id(cv.union_of_orig(id) as usize), Some(id));
        }
    }

    #[test]
    fn factored_scores_equal_per_entry_logits() {
        let (cv, e) = small();
        let h = [0.3, -1.2];
        let s = cv.score_union(e.view(), cv.table.output_offsets.view(), &h).unwrap();
        assert_eq!(s.len(), cv.len());
        for (i, &x) in s.iter().enumerate() {
            assert_eq!(x.to_bits(), cv.composed_logit(e.view(), cv.table.output_offsets.view(), &h, i).unwrap().to_bits());
        }
        assert!(cv.score_union(e.view(), cv.table.output_offsets.view(), &[0.0, 0.0]).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn restructure_replaces_map_words() {
        let (cv, _) = small();
        let slots = cv.restructure_input("he walked").unwrap();
        assert_eq!(slots.last().copied(), Some(InputSlot::Composed(cv.index_of(" walked").unwrap() as u32)));
        assert_eq!(cv.slots_text(&slots), "he walked");
        let plain = cv.restructure_input("he ha").unwrap();
        assert_eq!(plain, cv.plain_slots("he ha").unwrap());
        // OOV word: one slot instead of several
        assert!(cv.vocab.encode(" walkable").unwrap().len() >= 2);
        let oov = cv.restructure_input(" walkable").unwrap();
        assert_eq!(oov.len(), 1);
    }

    #[test]
    fn fallback_tokens_that_were_removed_become_composed() {
        let v = Vocabulary::from_tokens(
            [" ", "d", "e", " walk", " walked", " talk", " talked"].map(String::from).to_vec(),
            SpaceMarker::LiteralSpace,
        )
        .unwrap();
        let l = parse_unimorph(b"walk\twalked\tV;PST\ntalk\ttalked\tV;PST\n", &ParseOptions::default()).unwrap();
        let m = build_map(&v, &l, &BuildOptions::default()).map;
        let e = EmbeddingMatrix::zeros(v.len(), 2);
        let t = extract_table(&m, &v, &e, &e).unwrap();
        let cv = CompositionalVocab::new(v, m, t).unwrap();
        let slots = cv.restructure_input(" walkedd").unwrap();
        assert!(slots.iter().all(|s| match s {
            InputSlot::Plain(id) => !cv.is_removed(*id),
            InputSlot::Composed(_) => true,
        }));
        assert_eq!(slots[0], InputSlot::Composed(cv.index_of(" walked").unwrap() as u32));
        assert_eq!(cv.slots_text(&slots), " walkedd");
    }

    #[test]
    fn pruning_picks_top_k_with_id_ties() {
        let logits = [0.5, 2.0, 2.0, -1.0, 3.0];
        assert_eq!(prune_bases(&logits, &[0, 1, 2, 3, 4], 3).unwrap(), vec![4, 1, 2]);
        assert_eq!(prune_bases(&logits, &[0, 2, 1], 1).unwrap(), vec![1]);
        assert!(prune_bases(&logits, &[0, 1], 0).is_err());
        assert!(prune_bases(&logits, &[0, 1], 3).is_err());
    }

    #[test]
    fn full_k_pruning_is_a_no_op() {
        let (cv, e) = small();
        let h = [0.7, 0.1];
        let full = cv.score_union(e.view(), cv.table.output_offsets.view(), &h).unwrap();
        let (mut b, mut t, mut k, mut out) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        cv.score_union_pruned_into(e.view(), cv.table.output_offsets.view(), &h, cv.bases().len(), &mut b, &mut t, &mut k, &mut out)
            .unwrap();
        assert_eq!(full, out);
    }

    #[test]
    fn dot_matches_f64() {
        let a: Vec<f32> = (0..37).map(|i| (i as f32).sin()).collect();
        let b: Vec<f32> = (0..37).map(|i| (i as f32 * 0.5).cos()).collect();
        let exact: f64 = a.iter().zip(&b).map(|(&x, &y)| x as f64 * y as f64).sum();
        assert!((dot(&a, &b) as f64 - exact).abs() < 1e-5);
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
    }
}
