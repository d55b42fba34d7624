//! Invariants checked over generated inputs.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use morphovoc::compose::{prune_bases, CompositionalVocab, InputSlot, UnionEntry};
use morphovoc::decomp::{build_map, filter_map, load_map, serialize_map, BuildOptions, DecompositionMap, TransformId};
use morphovoc::lexicon::{FeatureTag, LexEntry, Lexicon, Relation};
use morphovoc::toy::{gen_toy_language, CorpusSampler, ToyLanguageSpec};
use morphovoc::toylm::kd_loss;
use morphovoc::transforms::{consistency_score, extract_offset, extract_table, EmbeddingMatrix, MatrixRole, PairSet};
use morphovoc::vocab::{redundancy_report, train_bpe, LetterSet, Vocabulary};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Fixture {
    lexicon: Lexicon,
    sampler: CorpusSampler,
    vocab: Vocabulary,
    map: DecompositionMap,
    cv: CompositionalVocab,
    u: EmbeddingMatrix,
}

const DIM: usize = 12;

fn random_matrix(rows: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * DIM).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    EmbeddingMatrix::from_data(rows, DIM, data).unwrap()
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let spec = ToyLanguageSpec {
            n_stems: 40,
            ..ToyLanguageSpec::default()
        };
        let (lexicon, sampler) = gen_toy_language(&spec).unwrap();
        let vocab = train_bpe(&mut sampler.fork(1), 260, 8000).unwrap();
        let map = build_map(&vocab, &lexicon, &BuildOptions::default()).map;
        let e = random_matrix(vocab.len(), 1);
        let u = random_matrix(vocab.len(), 2).with_role(MatrixRole::OutputUnembedding);
        let table = extract_table(&map, &vocab, &e, &u).unwrap();
        let cv = CompositionalVocab::new(vocab.clone(), map.clone(), table).unwrap();
        Fixture {
            lexicon,
            sampler,
            vocab,
            map,
            cv,
            u,
        }
    })
}

fn word() -> impl Strategy<Value = String> {
    "[a-e]{1,4}"
}

fn entry() -> impl Strategy<Value = LexEntry> {
    (word(), word(), prop::sample::select(vec!["V;PST", "N;PL", "V;V.PTCP;PRS"])).prop_map(|(lemma, suffix, tag)| LexEntry {
        form: format!("{lemma}{suffix}"),
        lemma,
        tag: FeatureTag::new(tag.to_string()).unwrap(),
        relation: Relation::Inflection,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lexicon_indexes_are_inverse(entries in prop::collection::vec(entry(), 0..30)) {
        let lex = Lexicon::from_entries(entries);
        for e in lex.entries() {
            prop_assert!(lex.entries_for_form(&e.form).any(|x| x == e));
            prop_assert!(lex.entries_for_lemma(&e.lemma).any(|x| x == e));
        }
        let via_forms: usize = lex.entries().iter().map(|e| e.form.clone()).collect::<BTreeSet<_>>().iter().map(|f| lex.entries_for_form(f).count()).sum();
        let via_lemmas: usize = lex.entries().iter().map(|e| e.lemma.clone()).collect::<BTreeSet<_>>().iter().map(|l| lex.entries_for_lemma(l).count()).sum();
        prop_assert_eq!(via_forms, lex.len());
        prop_assert_eq!(via_lemmas, lex.len());
        let sorted = lex.entries().windows(2).all(|w| (&w[0].lemma, &w[0].form) <= (&w[1].lemma, &w[1].form));
        prop_assert!(sorted);
    }

    #[test]
    fn encode_decode_round_trips(seed in 0u64..1000) {
        let f = fixture();
        let mut s = f.sampler.fork(100 + seed);
        let text = s.sample_words(20);
        let ids = f.vocab.encode(&text).unwrap();
        prop_assert_eq!(f.vocab.decode(&ids).unwrap(), text);
    }

    #[test]
    fn restructured_input_spells_the_text(seed in 0u64..1000) {
        let f = fixture();
        let text = f.sampler.fork(2000 + seed).sentence();
        let slots = f.cv.restructure_input(&text).unwrap();
        prop_assert_eq!(f.cv.slots_text(&slots), text.clone());
        prop_assert!(slots.len() <= f.vocab.encode(&text).unwrap().len());
    }

    #[test]
    fn filtering_keeps_everything_else(picks in prop::collection::vec(any::<prop::sample::Index>(), 0..12), drop_derivations in any::<bool>()) {
        let f = fixture();
        let surfaces: Vec<&String> = f.map.entries().keys().collect();
        let failed: BTreeSet<String> = picks.iter().map(|i| i.get(&surfaces).to_string()).collect();
        let (out, _) = filter_map(&f.map, &failed, drop_derivations);
        for (s, d) in f.map.entries() {
            let kept = out.get(s);
            if failed.contains(s) {
                prop_assert!(kept.is_none());
            } else {
                let k = kept.expect("unrelated entries survive");
                prop_assert_eq!(&k.base, &d.base);
                prop_assert_eq!(out.transform_set_label(&k.transforms), f.map.transform_set_label(&d.transforms));
            }
        }
        let bytes = serialize_map(&out);
        prop_assert_eq!(&load_map(&bytes).unwrap(), &out);
        prop_assert_eq!(serialize_map(&load_map(&bytes).unwrap()), bytes);
    }

    #[test]
    fn one_pair_offset_is_the_exact_difference(w in prop::collection::vec(-10.0f32..10.0, 4), b in prop::collection::vec(-10.0f32..10.0, 4)) {
        let e = EmbeddingMatrix::from_data(2, 4, [w.clone(), b.clone()].concat()).unwrap();
        let o = extract_offset(&e, &PairSet { transform: TransformId(0), pairs: vec![(0, 1)] }).unwrap();
        let diff: Vec<f32> = w.iter().zip(&b).map(|(x, y)| x - y).collect();
        prop_assert_eq!(o, diff);
    }

    #[test]
    fn offsets_ignore_translation_and_follow_scaling(
        rows in prop::collection::vec(prop::collection::vec(-5.0f32..5.0, 3), 6..12),
        shift in prop::collection::vec(-5.0f32..5.0, 3),
        scale in 0.1f32..10.0,
    ) {
        let n = rows.len();
        let pairs = PairSet { transform: TransformId(0), pairs: (0..n / 2).map(|i| (2 * i as u32, 2 * i as u32 + 1)).collect() };
        let e = EmbeddingMatrix::from_data(n, 3, rows.concat()).unwrap();
        let o = extract_offset(&e, &pairs).unwrap();
        let shifted: Vec<f32> = rows.iter().flat_map(|r| r.iter().zip(&shift).map(|(x, s)| x + s)).collect();
        let scaled: Vec<f32> = rows.iter().flat_map(|r| r.iter().map(|x| x * scale)).collect();
        let o_shift = extract_offset(&EmbeddingMatrix::from_data(n, 3, shifted).unwrap(), &pairs).unwrap();
        let o_scale = extract_offset(&EmbeddingMatrix::from_data(n, 3, scaled).unwrap(), &pairs).unwrap();
        let norm = o.iter().map(|x| x.abs()).fold(1.0f32, f32::max);
        for k in 0..3 {
            prop_assert!((o_shift[k] - o[k]).abs() <= 1e-5 * norm.max(shift.iter().fold(0.0f32, |m, s| m.max(s.abs())) * 10.0));
            prop_assert!((o_scale[k] - scale * o[k]).abs() <= 1e-5 * (scale * norm));
        }
        // residuals against the mean sum to zero
        for k in 0..3 {
            let r: f64 = pairs.pairs.iter().map(|&(w, b)| (rows[w as usize][k] - rows[b as usize][k] - o[k]) as f64).sum();
            prop_assert!(r.abs() <= 1e-4, "residual {r}");
        }
    }

    #[test]
    fn consistency_is_a_cosine(rows in prop::collection::vec(prop::collection::vec(-5.0f32..5.0, 3), 4..10)) {
        let n = rows.len() / 2 * 2;
        let pairs = PairSet { transform: TransformId(0), pairs: (0..n / 2).map(|i| (2 * i as u32, 2 * i as u32 + 1)).collect() };
        let e = EmbeddingMatrix::from_data(n, 3, rows[..n].concat()).unwrap();
        let o = extract_offset(&e, &pairs).unwrap();
        if let Ok((mean, per)) = consistency_score(&e, &pairs, &o) {
            prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&mean));
            prop_assert_eq!(per.len(), pairs.pairs.len());
        }
    }

    #[test]
    fn factored_scores_match_materialized_rows(h in prop::collection::vec(-3.0f32..3.0, DIM)) {
        let f = fixture();
        let u_t = &f.cv.table.output_offsets;
        let scores = f.cv.score_union(f.u.view(), u_t.view(), &h).unwrap();
        prop_assert_eq!(scores.len(), f.cv.len());
        for (i, e) in f.cv.entries().iter().enumerate() {
            let mut row: Vec<f64> = match e {
                UnionEntry::Plain(id) => f.u.row(*id as usize).iter().map(|&x| x as f64).collect(),
                UnionEntry::Composed { base_id, .. } => f.u.row(*base_id as usize).iter().map(|&x| x as f64).collect(),
            };
            if let UnionEntry::Composed { transforms, .. } = e {
                for t in transforms {
                    for (r, x) in row.iter_mut().zip(u_t.row(t.0 as usize)) {
                        *r += *x as f64;
                    }
                }
            }
            let oracle: f64 = row.iter().zip(&h).map(|(r, x)| r * *x as f64).sum();
            let scale = oracle.abs().max(1.0);
            prop_assert!(((scores[i] as f64) - oracle).abs() / scale <= 1e-5, "entry {i}: {} vs {oracle}", scores[i]);
        }
    }

    #[test]
    fn pruning_keeps_the_top_bases(logits in prop::collection::vec(-5.0f32..5.0, 20), k in 1usize..20) {
        let bases: Vec<u32> = (0..20).step_by(2).map(|b| b as u32).collect();
        if k <= bases.len() {
            let top = prune_bases(&logits, &bases, k).unwrap();
            prop_assert_eq!(top.len(), k);
            let worst_kept = top.iter().map(|&b| logits[b as usize]).fold(f32::INFINITY, f32::min);
            for &b in bases.iter().filter(|b| !top.contains(b)) {
                prop_assert!(logits[b as usize] <= worst_kept);
            }
        } else {
            prop_assert!(prune_bases(&logits, &bases, k).is_err());
        }
    }

    #[test]
    fn full_pruning_equals_the_union_head(h in prop::collection::vec(-3.0f32..3.0, DIM)) {
        let f = fixture();
        let u_t = f.cv.table.output_offsets.view();
        let full = f.cv.score_union(f.u.view(), u_t, &h).unwrap();
        let (mut base, mut tl, mut keep, mut out) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        f.cv.score_union_pruned_into(f.u.view(), u_t, &h, f.cv.bases().len(), &mut base, &mut tl, &mut keep, &mut out).unwrap();
        prop_assert_eq!(out, full);
    }

    #[test]
    fn kd_loss_is_at_least_teacher_entropy(t in prop::collection::vec(-4.0f32..4.0, 8), s in prop::collection::vec(-4.0f32..4.0, 8), tau in 0.5f32..3.0) {
        let entropy = kd_loss(&t, &t, tau);
        prop_assert!(kd_loss(&t, &s, tau) >= entropy - 1e-9);
        // translation of the logits leaves both distributions alone
        let shifted: Vec<f32> = s.iter().map(|x| x + 1.5).collect();
        prop_assert!((kd_loss(&t, &shifted, tau) - kd_loss(&t, &s, tau)).abs() < 1e-5);
    }
}

#[test]
fn union_size_and_masking_invariants() {
    let f = fixture();
    let removed = f.map.entries().values().filter(|d| d.in_vocab && f.cv.index_of(&d.surface).is_some()).count();
    let active = f.cv.n_composed();
    assert_eq!(f.cv.len(), f.vocab.len() - removed + active);
    let surfaces: BTreeSet<&str> = (0..f.cv.len()).map(|i| f.cv.surface(i)).collect();
    assert_eq!(surfaces.len(), f.cv.len(), "union surfaces are distinct");
    for d in f.map.entries().values().filter(|d| d.in_vocab) {
        if let Some(i) = f.cv.index_of(&d.surface) {
            assert!(i >= f.cv.n_plain(), "{:?} must be composed only", d.surface);
            let id = f.vocab.id(&d.surface).unwrap();
            assert!(f.cv.is_removed(id));
        }
    }
    for i in f.cv.n_plain()..f.cv.len() {
        assert!(matches!(f.cv.slot_for_entry(i), InputSlot::Composed(_)));
    }
}

#[test]
fn map_invariants_on_the_toy_lexicon() {
    let f = fixture();
    for d in f.map.entries().values() {
        assert!(!d.transforms.is_empty());
        assert_ne!(d.surface, d.base);
        assert_eq!(f.vocab.token(d.base_token_id), Some(d.base.as_str()));
        assert!(d.base.starts_with(' '));
        assert!(f.map.by_base()[&d.base_token_id].contains(&d.surface));
    }
    let report = redundancy_report(&f.vocab, &f.lexicon, &f.map, &LetterSet::Alphabetic).unwrap();
    assert!(report.n_base_forms <= report.n_case_folded && report.n_case_folded <= report.n_word_tokens);
    let expect = 100.0 * (1.0 - report.n_base_forms as f64 / report.n_word_tokens as f64);
    assert!((report.reduction_pct - expect).abs() < 1e-9);
}
