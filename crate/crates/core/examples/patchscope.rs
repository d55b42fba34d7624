//! Patchscope probes on a pretrained toy model: the embedding probe of a
//! plain word, then embed and detok probes of composed words.

mod common;

use morphovoc::decomp::{build_map, BuildOptions};
use morphovoc::pipeline;
use morphovoc::probe::{accuracy_report, build_prompt, detok_sweep, matches_target, patchscope_generate, ProbeSample};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    common::init_logging();
    let spec = common::small_spec();
    let (lex, sampler, vocab) = common::language(&spec);
    let (base, _) = pipeline::pretrain(&spec, &sampler, &vocab)?;
    let prompt = build_prompt(&base, &vocab, &spec.probe)?;
    let word = vocab.tokens().iter().position(|t| t.len() > 4 && t.starts_with(' ')).expect("some word token");
    let target = vocab.tokens()[word].clone();
    let (e, _) = base.embedding_matrices();
    let text = patchscope_generate(&base, &vocab, &prompt, e.row(word), 0, &spec.probe)?;
    println!("embed probe of {target:?}: {text:?} (match {})", matches_target(&text, &target));
    let d = detok_sweep(&base, &vocab, &prompt, e.row(word), &target, &spec.probe)?;
    println!("detok sweep: {:?}", d.texts);

    let map = build_map(&vocab, &lex, &BuildOptions::default()).map;
    let cv = pipeline::compositional_vocab(&vocab, map, &base)?;
    let model = base.attach(cv)?;
    let report = accuracy_report(&model, &spec.probe, &ProbeSample { max_words: 60 })?;
    print!("{}", report.to_table());
    for v in report.verdicts.iter().take(5) {
        println!("{:?} embed {:?} detok {:?}", v.surface, v.embed_text, v.detok.texts);
    }
    Ok(())
}
