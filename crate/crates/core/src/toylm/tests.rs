use std::sync::Arc;

use super::*;
use crate::compose::{CompositionalVocab, InputSlot};
use crate::decomp::{build_map, BuildOptions, DecompositionMap};
use crate::toy::{gen_toy_language, CorpusSampler, ToyLanguageSpec};
use crate::transforms::{extract_table, TransformationTable};
use crate::vocab::{train_bpe, Vocabulary};

fn tiny_config(v: usize) -> ModelConfig {
    ModelConfig {
        dim: 16,
        n_layers: 2,
        n_heads: 2,
        ffn_mult: 2,
        max_seq: 48,
        vocab_rows: v,
        tie_embeddings: false,
        seed: 3,
    }
}

struct Fixture {
    sampler: CorpusSampler,
    vocab: Vocabulary,
    base: ModelParams,
    cv: Arc<CompositionalVocab>,
}

fn fixture() -> Fixture {
    let spec = ToyLanguageSpec { n_stems: 30, ..ToyLanguageSpec::default() };
    let (lex, mut sampler) = gen_toy_language(&spec).unwrap();
    let vocab = train_bpe(&mut sampler, 180, 4000).unwrap();
    let map = build_map(&vocab, &lex, &BuildOptions::default()).map;
    let base = init_model(&tiny_config(vocab.len())).unwrap();
    let (e, u) = base.embedding_matrices();
    let table = extract_table(&map, &vocab, &e, &u).unwrap();
    let cv = Arc::new(CompositionalVocab::new(vocab.clone(), map, table).unwrap());
    Fixture { sampler, vocab, base, cv }
}

fn plain(ids: &[u32]) -> Vec<InputSlot> {
    ids.iter().map(|&i| InputSlot::Plain(i)).collect()
}

#[test]
fn init_is_deterministic() {
    let c = tiny_config(50);
    let a = init_model(&c).unwrap();
    let b = init_model(&c).unwrap();
    assert_eq!(a.data, b.data);
    let d = init_model(&ModelConfig { seed: 4, ..c }).unwrap();
    assert_ne!(a.data, d.data);
}

#[test]
fn tied_embeddings_share_rows() {
    let c = ModelConfig { tie_embeddings: true, ..tiny_config(50) };
    let p = init_model(&c).unwrap();
    assert_eq!(p.layout.unembed, p.layout.wte);
    assert!(p.layout.get("unembed").is_none());
}

#[test]
fn forward_is_causal() {
    let p = init_model(&tiny_config(50)).unwrap();
    let mut a = Activations::default();
    let mut b = Activations::default();
    forward_train(&p, &plain(&[1, 2, 3, 4, 5]), &mut a).unwrap();
    forward_train(&p, &plain(&[1, 2, 3, 4, 9]), &mut b).unwrap();
    let c = p.config.dim;
    assert_eq!(a.lnf[..4 * c], b.lnf[..4 * c]);
    assert_ne!(a.lnf[4 * c..], b.lnf[4 * c..]);
}

#[test]
fn too_long_sequences_are_rejected() {
    let p = init_model(&tiny_config(50)).unwrap();
    let ids: Vec<u32> = (0..49).map(|i| i % 50).collect();
    let err = forward_train(&p, &plain(&ids), &mut Activations::default()).unwrap_err();
    assert!(matches!(err, LmError::SequenceTooLong { len: 49, max: 48 }));
}

#[test]
fn kv_cache_matches_full_forward() {
    let p = init_model(&tiny_config(50)).unwrap();
    let slots = plain(&[3, 1, 4, 1, 5, 9, 2, 6]);
    let mut a = Activations::default();
    forward_train(&p, &slots, &mut a).unwrap();
    let mut cache = KvCache::new(&p);
    let c = p.config.dim;
    for (i, &s) in slots.iter().enumerate() {
        let h = cache.step(&p, s, None, None).unwrap();
        for (x, y) in h.iter().zip(&a.lnf[i * c..(i + 1) * c]) {
            assert!((x - y).abs() < 1e-5, "{x} vs {y}");
        }
    }
}

#[test]
fn empty_map_model_equals_plain_model() {
    let f = fixture();
    let cv = Arc::new(
        CompositionalVocab::new(f.vocab.clone(), DecompositionMap::empty(), TransformationTable::empty(16)).unwrap(),
    );
    let m = f.base.attach(cv.clone()).unwrap();
    let mut sampler = f.sampler;
    let text = sampler.sentence();
    let text = text.as_str();
    let ids = f.vocab.encode(text).unwrap();
    let slots = cv.restructure_input(text).unwrap();
    assert_eq!(slots, plain(&ids));
    let a = score_text(&f.base, &plain(&ids), Head::Plain).unwrap();
    let b = score_text(&m, &slots, Head::Union).unwrap();
    assert_eq!(a, b);
    let la = logits_last(&f.base, &plain(&ids), Head::Plain).unwrap();
    let lb = logits_last(&m, &slots, Head::Union).unwrap();
    assert_eq!(la, lb);
}

#[test]
fn kd_loss_of_identical_logits_is_teacher_entropy() {
    let z = [0.3f32, -1.0, 2.0, 0.0];
    for tau in [0.5f32, 1.0, 2.0] {
        let p: Vec<f64> = {
            let e: Vec<f64> = z.iter().map(|&x| (x as f64 / tau as f64).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|x| x / s).collect()
        };
        let h: f64 = -p.iter().map(|q| q * q.ln()).sum::<f64>();
        assert!((kd_loss(&z, &z, tau) - h).abs() < 1e-12);
        assert!(kd_loss(&z, &[0.0, 0.0, 0.0, 1.0], tau) > h);
    }
}

#[test]
fn pretraining_reduces_loss() {
    let mut f = fixture();
    let ex = make_lm_examples(&mut f.sampler, &f.vocab, 64, 32).unwrap();
    assert!(ex.iter().all(|e| e.len() == 33));
    let spec = TrainSpec { n_examples: 64, n_epochs: 3, batch: 8, learning_rate: 1e-2, ..TrainSpec::default() };
    let (_, rep) = train_lm(&f.base, &ex, &spec).unwrap();
    assert_eq!(rep.steps, 24);
    let first = rep.losses[0];
    let last = rep.final_loss().unwrap();
    assert!(last < first - 0.5, "{first} -> {last}");
}

#[test]
fn zero_examples_leave_weights_untouched() {
    let f = fixture();
    let spec = TrainSpec { n_examples: 0, ..TrainSpec::default() };
    let (p, rep) = train_lm(&f.base, &[], &spec).unwrap();
    assert_eq!(rep.steps, 0);
    assert_eq!(p.data, f.base.data);
}

#[test]
fn distillation_examples_align_words() {
    let mut f = fixture();
    let ex = build_distill_examples(&f.cv, &mut f.sampler, 4, 40).unwrap();
    for e in &ex {
        assert!(e.teacher.len() <= 40);
        assert_eq!(e.align.len(), e.student.len());
        assert!(e.student.len() <= e.teacher.len());
        for w in e.align.windows(2) {
            assert!(w[0].1 < w[1].1);
        }
        assert_eq!(e.align.last().unwrap().1, e.teacher.len() - 1);
    }
}

#[test]
fn stages_train_only_their_rows() {
    let mut f = fixture();
    let ex = build_distill_examples(&f.cv, &mut f.sampler, 8, 40).unwrap();
    let student = f.base.attach(f.cv.clone()).unwrap();
    let spec = TrainSpec { n_examples: 8, batch: 4, learning_rate: 1e-2, ..TrainSpec::default() };
    let (s1, _) = distill_stage(&student, &f.base, DistillStage::InputTransforms, &spec, &ex).unwrap();
    let et = s1.layout.e_t.clone().unwrap();
    assert_eq!(s1.data[..et.start], student.data[..et.start]);
    assert_eq!(s1.data[et.end..], student.data[et.end..]);
    assert_ne!(s1.data[et.clone()], student.data[et.clone()]);

    let (s2, _) = distill_stage(&s1, &s1, DistillStage::OutputTransforms, &spec, &ex).unwrap();
    let ut = s2.layout.u_t.clone().unwrap();
    assert_eq!(s2.data[..ut.start], s1.data[..ut.start]);
    assert_ne!(s2.data[ut.clone()], s1.data[ut]);
}

#[test]
fn stage_order_is_enforced() {
    let mut f = fixture();
    let ex = build_distill_examples(&f.cv, &mut f.sampler, 2, 40).unwrap();
    let student = f.base.attach(f.cv.clone()).unwrap();
    let spec = TrainSpec { n_examples: 2, ..TrainSpec::default() };
    let e = distill_stage(&student, &f.base, DistillStage::OutputTransforms, &spec, &ex).unwrap_err();
    assert!(matches!(e, LmError::StageOrderViolation(_)));
    let e = distill_stage(&student, &student, DistillStage::InputTransforms, &spec, &ex).unwrap_err();
    assert!(matches!(e, LmError::StageOrderViolation(_)));
    let other = Arc::new((*f.cv).clone());
    let foreign = f.base.attach(other).unwrap();
    let e = distill_stage(&student, &foreign, DistillStage::OutputTransforms, &spec, &ex).unwrap_err();
    assert!(matches!(e, LmError::StageOrderViolation(_)));
}

#[test]
fn input_stage_gradients_match_finite_differences() {
    let mut f = fixture();
    let ex = build_distill_examples(&f.cv, &mut f.sampler, 1, 24).unwrap();
    let teacher = f.base.clone();
    let student = teacher.attach(f.cv.clone()).unwrap();
    let spec = TrainSpec::default();
    let g = grad_check(&student, &teacher, DistillStage::InputTransforms, "comp.e_t", &ex, &spec, 1e-3).unwrap();
    assert!(g.trainable);
    assert!(g.analytic.iter().any(|&x| x != 0.0));
    assert!(g.max_rel_error <= 1e-3, "relative error {}", g.max_rel_error);

    let frozen = grad_check(&student, &teacher, DistillStage::InputTransforms, "layers.0.attn.wqkv", &ex, &spec, 1e-3).unwrap();
    assert!(!frozen.trainable);
    assert!(frozen.analytic.iter().all(|&x| x == 0.0));
}

#[test]
fn output_stage_gradients_match_finite_differences() {
    let mut f = fixture();
    let ex = build_distill_examples(&f.cv, &mut f.sampler, 1, 24).unwrap();
    let student = f.base.attach(f.cv.clone()).unwrap();
    for renormalize_stage2 in [true, false] {
        let spec = TrainSpec { renormalize_stage2, ..TrainSpec::default() };
        let g = grad_check(&student, &student, DistillStage::OutputTransforms, "comp.u_t", &ex, &spec, 1e-3).unwrap();
        assert!(g.analytic.iter().any(|&x| x != 0.0));
        assert!(g.max_rel_error <= 1e-3, "relative error {}", g.max_rel_error);
    }
}

#[test]
fn checkpoint_round_trip() {
    let f = fixture();
    let m = f.base.attach(f.cv.clone()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    m.save_checkpoint(dir.path()).unwrap();
    let back = ModelParams::load_checkpoint(dir.path(), Some(f.cv.clone())).unwrap();
    assert_eq!(back.data, m.data);
    assert_eq!(back.layout, m.layout);
}

#[test]
fn perplexity_is_finite_and_at_least_one() {
    let mut f = fixture();
    let texts: Vec<String> = (0..4).map(|_| f.sampler.sentence()).collect();
    let pb = per_word_perplexity(&f.base, &f.vocab, &texts, Head::Plain).unwrap();
    let m = f.base.attach(f.cv.clone()).unwrap();
    let pc = per_word_perplexity(&m, &f.vocab, &texts, Head::Union).unwrap();
    assert!(pb.is_finite() && pb >= 1.0);
    assert!(pc.is_finite() && pc >= 1.0);
}


#[test]
fn config_validation() {
    assert!(ModelConfig::desk(100).validate().is_ok());
    let c = ModelConfig { dim: 10, n_heads: 4, ..ModelConfig::desk(10) };
    assert!(c.validate().is_err());
    let c = ModelConfig { max_seq: 1, ..ModelConfig::desk(10) };
    assert!(c.validate().is_err());
    assert_eq!(ModelConfig::paper(10).max_seq, 256);
}

#[test]
fn train_spec_schedule() {
    let s = TrainSpec { n_examples: 100, batch: 10, warmup_ratio: 0.2, learning_rate: 1.0, ..TrainSpec::default() };
    assert_eq!(s.n_steps(), 10);
    assert_eq!(s.lr_at(0), 0.5);
    assert_eq!(s.lr_at(1), 1.0);
    assert_eq!(s.lr_at(9), 1.0);
    let p = TrainSpec::paper();
    assert_eq!((p.learning_rate, p.warmup_ratio, p.weight_decay, p.n_examples, p.n_epochs), (5e-5, 0.03, 0.0, 20_000, 1));
    assert!(TrainSpec { batch: 0, ..TrainSpec::default() }.validate().is_err());
}

