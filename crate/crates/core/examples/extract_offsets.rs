//! Mean-offset transformation vectors on a planted embedding matrix: every
//! surface row is its base row plus a fixed offset plus noise, so the
//! extracted offset and its consistency can be checked by eye.

mod common;

use morphovoc::decomp::{build_map, BuildOptions, TransformId};
use morphovoc::transforms::{collect_pairs, consistency_score, extract_table, EmbeddingMatrix, MatrixRole};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    common::init_logging();
    let spec = common::small_spec();
    let (lex, _, vocab) = common::language(&spec);
    let map = build_map(&vocab, &lex, &BuildOptions::default()).map;
    let dim = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut e = EmbeddingMatrix::zeros(vocab.len(), dim);
    for x in e.data.iter_mut() {
        *x = rng.random_range(-1.0..1.0);
    }
    let planted: Vec<Vec<f32>> = (0..map.transforms().len()).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    for d in map.entries().values().filter(|d| d.in_vocab && d.transforms.len() == 1) {
        let s = vocab.id(&d.surface).expect("in-vocab surface") as usize;
        let base = e.row(d.base_token_id as usize).to_vec();
        let o = &planted[d.transforms[0].0 as usize];
        for (k, x) in e.row_mut(s).iter_mut().enumerate() {
            *x = base[k] + o[k] + rng.random_range(-0.1..0.1);
        }
    }
    let u = e.clone().with_role(MatrixRole::OutputUnembedding);
    let table = extract_table(&map, &vocab, &e, &u)?;
    for t in 0..table.len() {
        let pairs = collect_pairs(&map, &vocab, TransformId(t as u32));
        let err: f32 = table.input_offsets.row(t).iter().zip(&planted[t]).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        let cons = consistency_score(&e, &pairs, table.input_offsets.row(t)).map(|c| c.0).unwrap_or(f64::NAN);
        println!("{:<14} pairs {:>3}  max |o - planted| {err:.3}  consistency {cons:.3}", table.labels[t], table.support[t]);
    }
    Ok(())
}
