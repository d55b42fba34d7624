//! Small shared fixture for the examples: a reduced toy language and
//! tokenizer that build in a few seconds.

use morphovoc::lexicon::Lexicon;
use morphovoc::pipeline::{self, PipelineSpec};
use morphovoc::toy::CorpusSampler;
use morphovoc::vocab::Vocabulary;

#[allow(dead_code)]
pub fn small_spec() -> PipelineSpec {
    let mut spec = PipelineSpec::default();
    spec.language.n_stems = 60;
    spec.vocab_size = 400;
    spec.bpe_train_words = 20_000;
    spec.model.dim = 32;
    spec.model.n_layers = 2;
    spec.model.n_heads = 2;
    spec.model.max_seq = 48;
    spec.pretrain.n_examples = 1500;
    spec.pretrain.n_epochs = 1;
    spec.distill.n_examples = 300;
    spec.n_held_out = 50;
    spec
}

#[allow(dead_code)]
pub fn language(spec: &PipelineSpec) -> (Lexicon, CorpusSampler, Vocabulary) {
    let (lex, sampler) = pipeline::language(spec).expect("valid toy spec");
    let vocab = pipeline::tokenizer(spec, &sampler).expect("tokenizer trains");
    (lex, sampler, vocab)
}

#[allow(dead_code)]
pub fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
}
