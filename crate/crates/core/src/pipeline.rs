//! The toy end to end run: language, tokenizer, pretrained baseline,
//! decomposition map, transformation table and two-stage distillation.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compose::CompositionalVocab;
use crate::decomp::{build_map, filter_map, BuildOptions, DecompositionMap};
use crate::lexicon::{Lexicon, LexiconError};
use crate::probe::{accuracy_report, ProbeError, ProbeResult, ProbeSample, ProbeSpec};
use crate::toy::{gen_toy_language, CorpusSampler, ToyLanguageSpec};
use crate::toylm::{
    build_distill_examples, distill_stage, init_model, make_lm_examples, per_word_perplexity, stage2_loss, train_lm, DistillExample,
    DistillStage, Head, LmError, ModelConfig, ModelParams, TrainReport, TrainSpec,
};
use crate::transforms::{extract_table, TransformError};
use crate::vocab::{train_bpe, VocabError, Vocabulary};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

impl From<crate::compose::ComposeError> for PipelineError {
    fn from(e: crate::compose::ComposeError) -> Self {
        PipelineError::Lm(e.into())
    }
}

/// Sampler streams, so that every stage reads independent text.
pub mod stream {
    pub const BPE: u64 = 1;
    pub const PRETRAIN: u64 = 2;
    pub const DISTILL: u64 = 3;
    pub const HELD_OUT: u64 = 4;
    pub const BENCH: u64 = 5;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSpec {
    pub language: ToyLanguageSpec,
    pub vocab_size: usize,
    pub bpe_train_words: usize,
    pub build: BuildOptions,
    pub model: ModelConfig,
    pub pretrain: TrainSpec,
    pub distill: TrainSpec,
    pub probe: ProbeSpec,
    pub sample: ProbeSample,
    pub n_held_out: usize,
}

impl Default for PipelineSpec {
    fn default() -> Self {
        Self {
            language: ToyLanguageSpec::default(),
            vocab_size: 800,
            bpe_train_words: 100_000,
            build: BuildOptions::default(),
            model: ModelConfig {
                dim: 64,
                tie_embeddings: true,
                ..ModelConfig::desk(0)
            },
            pretrain: TrainSpec {
                n_examples: 6000,
                n_epochs: 2,
                batch: 16,
                learning_rate: 3e-3,
                ..TrainSpec::default()
            },
            distill: TrainSpec {
                n_examples: 2000,
                batch: 16,
                learning_rate: 3e-3,
                ..TrainSpec::default()
            },
            probe: ProbeSpec::default(),
            sample: ProbeSample::default(),
            n_held_out: 200,
        }
    }
}

pub fn language(spec: &PipelineSpec) -> Result<(Lexicon, CorpusSampler), PipelineError> {
    Ok(gen_toy_language(&spec.language)?)
}

pub fn tokenizer(spec: &PipelineSpec, sampler: &CorpusSampler) -> Result<Vocabulary, PipelineError> {
    Ok(train_bpe(&mut sampler.fork(stream::BPE), spec.vocab_size, spec.bpe_train_words)?)
}

pub fn pretrain(spec: &PipelineSpec, sampler: &CorpusSampler, vocab: &Vocabulary) -> Result<(ModelParams, TrainReport), PipelineError> {
    let config = ModelConfig {
        vocab_rows: vocab.len(),
        ..spec.model.clone()
    };
    let init = init_model(&config)?;
    let examples = make_lm_examples(&mut sampler.fork(stream::PRETRAIN), vocab, spec.pretrain.n_examples, config.max_seq)?;
    Ok(train_lm(&init, &examples, &spec.pretrain)?)
}

/// Map plus a table extracted from the model's own embeddings.
pub fn compositional_vocab(vocab: &Vocabulary, map: DecompositionMap, base: &ModelParams) -> Result<Arc<CompositionalVocab>, PipelineError> {
    let (e, u) = base.embedding_matrices();
    let table = extract_table(&map, vocab, &e, &u)?;
    Ok(Arc::new(CompositionalVocab::new(vocab.clone(), map, table)?))
}

/// Held-out sentences whose plain encoding fits the model context.
pub fn held_out_texts(spec: &PipelineSpec, sampler: &CorpusSampler, vocab: &Vocabulary) -> Result<Vec<String>, PipelineError> {
    let mut s = sampler.fork(stream::HELD_OUT);
    let mut out = Vec::with_capacity(spec.n_held_out);
    while out.len() < spec.n_held_out {
        let text = s.sentence();
        if vocab.encode(&text)?.len() <= spec.model.max_seq {
            out.push(text);
        }
    }
    Ok(out)
}

/// Short decoding prompts: the first `n_words` words of fresh sentences.
pub fn bench_prompts(sampler: &CorpusSampler, n: usize, n_words: usize) -> Vec<String> {
    let mut s = sampler.fork(stream::BENCH);
    (0..n)
        .map(|_| s.sentence().split_inclusive(' ').filter(|w| !w.trim().is_empty()).take(n_words).collect::<String>())
        .map(|p| format!(" {}", p.trim()))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Distilled {
    pub stage1: ModelParams,
    pub stage2: ModelParams,
    pub reports: [TrainReport; 2],
}

/// Both stages from a plain baseline. Examples longer than the model's
/// context are avoided by packing on the plain encoding.
pub fn distill(spec: &PipelineSpec, sampler: &CorpusSampler, base: &ModelParams, cv: Arc<CompositionalVocab>) -> Result<Distilled, PipelineError> {
    let examples = distill_examples(spec, sampler, &cv, base.config.max_seq)?;
    let student = base.attach(cv)?;
    let (stage1, r1) = distill_stage(&student, base, DistillStage::InputTransforms, &spec.distill, &examples)?;
    let (stage2, r2) = distill_stage(&stage1, &stage1, DistillStage::OutputTransforms, &spec.distill, &examples)?;
    Ok(Distilled {
        stage1,
        stage2,
        reports: [r1, r2],
    })
}

pub fn distill_examples(
    spec: &PipelineSpec,
    sampler: &CorpusSampler,
    cv: &CompositionalVocab,
    max_seq: usize,
) -> Result<Vec<DistillExample>, PipelineError> {
    Ok(build_distill_examples(cv, &mut sampler.fork(stream::DISTILL), spec.distill.n_examples, max_seq)?)
}

pub fn held_out_examples(cv: &CompositionalVocab, texts: &[String]) -> Result<Vec<DistillExample>, PipelineError> {
    texts.iter().map(|t| Ok(DistillExample::from_text(cv, t)?)).collect()
}

#[derive(Debug, Clone)]
pub struct ToyRun {
    pub lexicon: Lexicon,
    pub sampler: CorpusSampler,
    pub vocab: Vocabulary,
    pub base: ModelParams,
    pub pretrain_report: TrainReport,
    pub cv: Arc<CompositionalVocab>,
    pub distilled: Distilled,
    pub held_out: Vec<String>,
    pub seconds: f64,
}

pub fn run_toy(spec: &PipelineSpec) -> Result<ToyRun, PipelineError> {
    let t0 = Instant::now();
    let (lexicon, sampler) = language(spec)?;
    let vocab = tokenizer(spec, &sampler)?;
    log::info!("tokenizer: {} tokens", vocab.len());
    let (base, pretrain_report) = pretrain(spec, &sampler, &vocab)?;
    log::info!("pretrain: final loss {:?}", pretrain_report.final_loss());
    let map = build_map(&vocab, &lexicon, &spec.build).map;
    let cv = compositional_vocab(&vocab, map, &base)?;
    log::info!("map: {} composed entries, {} transforms", cv.n_composed(), cv.table.len());
    let distilled = distill(spec, &sampler, &base, cv.clone())?;
    let held_out = held_out_texts(spec, &sampler, &vocab)?;
    Ok(ToyRun {
        lexicon,
        sampler,
        vocab,
        base,
        pretrain_report,
        cv,
        distilled,
        held_out,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

impl ToyRun {
    pub fn baseline_perplexity(&self) -> Result<f64, PipelineError> {
        Ok(per_word_perplexity(&self.base, &self.vocab, &self.held_out, Head::Plain)?)
    }

    pub fn compositional_perplexity(&self) -> Result<f64, PipelineError> {
        Ok(per_word_perplexity(&self.distilled.stage2, &self.vocab, &self.held_out, Head::Union)?)
    }

    pub fn probe(&self, spec: &PipelineSpec) -> Result<ProbeResult, PipelineError> {
        Ok(accuracy_report(&self.distilled.stage2, &spec.probe, &spec.sample)?)
    }

    /// Held-out stage-2 loss of the distilled model.
    pub fn stage2_loss(&self, spec: &PipelineSpec) -> Result<f64, PipelineError> {
        let ex = held_out_examples(&self.cv, &self.held_out)?;
        Ok(stage2_loss(&self.distilled.stage2, &self.distilled.stage1, &ex, &spec.distill)?)
    }

    /// Rebuilds the vocabulary without `drop`, distils again and returns
    /// the new run's held-out stage-2 loss.
    pub fn refit_without(&self, spec: &PipelineSpec, drop: &std::collections::BTreeSet<String>) -> Result<(Arc<CompositionalVocab>, Distilled, f64), PipelineError> {
        let (map, _) = filter_map(&self.cv.map, drop, false);
        let cv = compositional_vocab(&self.vocab, map, &self.base)?;
        let d = distill(spec, &self.sampler, &self.base, cv.clone())?;
        let ex = held_out_examples(&cv, &self.held_out)?;
        let loss = stage2_loss(&d.stage2, &d.stage1, &ex, &spec.distill)?;
        Ok((cv, d, loss))
    }
}
