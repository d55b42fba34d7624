//! Factored output scores over the union vocabulary against one
//! materialized row per entry, plus top-k base pruning.

mod common;

use morphovoc::compose::{argmax, CompositionalVocab};
use morphovoc::decomp::{build_map, BuildOptions};
use morphovoc::transforms::{extract_table, EmbeddingMatrix, MatrixRole};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    common::init_logging();
    let spec = common::small_spec();
    let (lex, _, vocab) = common::language(&spec);
    let map = build_map(&vocab, &lex, &BuildOptions::default()).map;
    let dim = 24;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut random = |rows| {
        let mut m = EmbeddingMatrix::zeros(rows, dim);
        m.data.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        m
    };
    let e = random(vocab.len());
    let u = random(vocab.len()).with_role(MatrixRole::OutputUnembedding);
    let table = extract_table(&map, &vocab, &e, &u)?;
    let cv = CompositionalVocab::new(vocab.clone(), map, table)?;
    println!("union: {} plain + {} composed entries", cv.n_plain(), cv.n_composed());
    let h: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let scores = cv.score_union(u.view(), cv.table.output_offsets.view(), &h)?;
    let mut worst = 0.0f32;
    for (i, &s) in scores.iter().enumerate() {
        let direct = cv.composed_logit(u.view(), cv.table.output_offsets.view(), &h, i)?;
        worst = worst.max((s - direct).abs() / direct.abs().max(1.0));
    }
    let best = argmax(&scores);
    println!("argmax {:?}, worst relative deviation from per-entry scoring {worst:.2e}", cv.surface(best));
    for k in [1, 5, cv.bases().len() / 10] {
        let (mut base, mut tl, mut keep, mut out) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        cv.score_union_pruned_into(u.view(), cv.table.output_offsets.view(), &h, k, &mut base, &mut tl, &mut keep, &mut out)?;
        println!("pruned k={k}: argmax {:?}", cv.surface(argmax(&out)));
    }
    Ok(())
}
