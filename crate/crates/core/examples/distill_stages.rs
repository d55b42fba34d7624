//! Two-stage distillation on a small toy model: stage 1 fits the input
//! transformation rows, stage 2 the output rows; all other weights stay
//! frozen bit for bit.

mod common;

use morphovoc::decomp::{build_map, BuildOptions};
use morphovoc::pipeline;
use morphovoc::toylm::{per_word_perplexity, Head};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    common::init_logging();
    let spec = common::small_spec();
    let (lex, sampler, vocab) = common::language(&spec);
    let (base, _) = pipeline::pretrain(&spec, &sampler, &vocab)?;
    let map = build_map(&vocab, &lex, &BuildOptions::default()).map;
    let cv = pipeline::compositional_vocab(&vocab, map, &base)?;
    let d = pipeline::distill(&spec, &sampler, &base, cv)?;
    for (name, r) in ["stage 1", "stage 2"].iter().zip(&d.reports) {
        println!("{name}: {} steps, loss {:.3} -> {:.3}", r.steps, r.losses[0], r.final_loss().unwrap_or(f64::NAN));
    }
    let changed: Vec<&str> = d
        .stage2
        .layout
        .tensors
        .iter()
        .filter(|t| base.tensor(&t.name) != d.stage2.tensor(&t.name))
        .map(|t| t.name.as_str())
        .collect();
    println!("tensors that differ from the baseline: {changed:?}");
    let held = pipeline::held_out_texts(&spec, &sampler, &vocab)?;
    let pb = per_word_perplexity(&base, &vocab, &held, Head::Plain)?;
    let pc = per_word_perplexity(&d.stage2, &vocab, &held, Head::Union)?;
    println!("per-word perplexity: baseline {pb:.2}, compositional {pc:.2}");
    Ok(())
}
