//! Pretrains a small baseline on the toy language and decodes greedily.

mod common;

use morphovoc::compose::InputSlot;
use morphovoc::pipeline;
use morphovoc::toylm::{generate, output_text, per_word_perplexity, Head};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    common::init_logging();
    let spec = common::small_spec();
    let (_, sampler, vocab) = common::language(&spec);
    let (model, report) = pipeline::pretrain(&spec, &sampler, &vocab)?;
    let every = (report.losses.len() / 5).max(1);
    for (i, l) in report.losses.iter().enumerate().step_by(every) {
        println!("step {i:>4} loss {l:.3}");
    }
    let held = pipeline::held_out_texts(&spec, &sampler, &vocab)?;
    println!("held-out per-word perplexity {:.2}", per_word_perplexity(&model, &vocab, &held, Head::Plain)?);
    let prompt = &held[0];
    let words: Vec<&str> = prompt.split_inclusive(' ').take(4).collect();
    let prefix = words.concat();
    let slots: Vec<InputSlot> = vocab.encode(prefix.trim_end())?.into_iter().map(InputSlot::Plain).collect();
    let out = generate(&model, &slots, 12, Head::Plain, &[])?;
    let text: String = out.into_iter().map(|i| output_text(&model, &vocab, Head::Plain, i)).collect();
    println!("{:?} -> {text:?}", prefix.trim_end());
    Ok(())
}
