//! Greedy decoding throughput of a baseline and its compositional twin,
//! with pruned-head variants.

mod common;

use morphovoc::bench::{bench_decode, BenchSpec};
use morphovoc::decomp::{build_map, BuildOptions};
use morphovoc::pipeline;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    common::init_logging();
    let mut spec = common::small_spec();
    spec.pretrain.n_examples = 200;
    let (lex, sampler, vocab) = common::language(&spec);
    let (base, _) = pipeline::pretrain(&spec, &sampler, &vocab)?;
    let map = build_map(&vocab, &lex, &BuildOptions::default()).map;
    let cv = pipeline::compositional_vocab(&vocab, map, &base)?;
    let k10 = (cv.bases().len() / 10).max(1);
    let model = base.attach(cv)?;
    let prompts = pipeline::bench_prompts(&sampler, 20, 6);
    let bench = BenchSpec {
        max_new: 24,
        rounds: 3,
        pruned_k: vec![1, k10],
    };
    print!("{}", bench_decode(&base, &model, &vocab, &prompts, &bench)?.to_text());
    Ok(())
}
