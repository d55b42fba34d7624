//! Interpretation accuracy and offset consistency across tokenizer sizes,
//! for tied and untied embeddings, with Spearman correlations.

mod common;

use morphovoc::probe::{scaling_study, ScalingSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    common::init_logging();
    let mut spec = ScalingSpec::default();
    if std::env::args().any(|a| a == "--quick") {
        spec.language.n_stems = 60;
        spec.vocab_sizes = vec![250, 300, 350, 400];
        spec.bpe_train_words = 20_000;
        spec.pretrain.n_examples = 400;
        spec.sample.max_words = 40;
    }
    let report = scaling_study(&spec)?;
    print!("{}", report.to_tsv());
    println!("trend tied: {}, untied: {}", report.trend(true), report.trend(false));
    Ok(())
}
