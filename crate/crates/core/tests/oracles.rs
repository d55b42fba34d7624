//! Derived quantities recomputed by independent, deliberately naive code.

use std::collections::BTreeMap;

use morphovoc::pipeline::{run_toy, PipelineSpec};
use morphovoc::probe::{spearman, Split};
use morphovoc::toy::{gen_toy_language, ToyLanguageSpec};

#[test]
fn stem_frequencies_follow_the_zipf_law() {
    let spec = ToyLanguageSpec::default();
    let (_, sampler) = gen_toy_language(&spec).unwrap();
    let mut s = sampler.fork(7);
    let n = sampler.stems().len();
    let draws = 400_000;
    let mut counts = vec![0usize; n];
    for _ in 0..draws {
        counts[s.sample_stem()] += 1;
    }
    let z: f64 = (1..=n).map(|r| (r as f64).powf(-spec.zipf_exponent)).sum();
    for (r, &c) in counts.iter().enumerate().take(20) {
        let p = ((r + 1) as f64).powf(-spec.zipf_exponent) / z;
        let sd = (p * (1.0 - p) / draws as f64).sqrt();
        let observed = c as f64 / draws as f64;
        assert!((observed - p).abs() < 5.0 * sd, "rank {}: {observed} vs {p}", r + 1);
    }
    // least-squares slope of log frequency on log rank over the head
    let pts: Vec<(f64, f64)> = (0..50).map(|r| (((r + 1) as f64).ln(), (counts[r] as f64).ln())).collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((slope + spec.zipf_exponent).abs() < 0.05, "slope {slope}");
}

#[test]
fn spearman_matches_the_difference_formula() {
    // distinct values, so rho = 1 - 6 sum d^2 / (n (n^2 - 1))
    let x = [3.1, 0.2, 5.5, 4.0, 1.7, 9.9, 6.3];
    let y = [10.0, 2.0, 30.0, 25.0, 1.0, 31.0, 5.0];
    let rank = |v: &[f64]| -> Vec<f64> { v.iter().map(|a| v.iter().filter(|b| *b < a).count() as f64 + 1.0).collect() };
    let (rx, ry) = (rank(&x), rank(&y));
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
    let n = x.len() as f64;
    let oracle = 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
    assert!((spearman(&x, &y).unwrap() - oracle).abs() < 1e-12);
    assert_eq!(spearman(&x, &x.map(|v| -v)), Some(-1.0));
    assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
}

#[test]
fn spearman_with_ties_is_pearson_on_average_ranks() {
    let x = [1.0, 2.0, 2.0, 3.0, 5.0, 5.0, 5.0];
    let y = [2.0, 1.0, 4.0, 3.0, 7.0, 6.0, 6.0];
    let avg_rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| {
                let below = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (avg_rank(&x), avg_rank(&y));
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    let oracle = cov / (vx * vy).sqrt();
    assert!((spearman(&x, &y).unwrap() - oracle).abs() < 1e-12);
}

fn tiny_spec() -> PipelineSpec {
    let mut spec = PipelineSpec::default();
    spec.language.n_stems = 40;
    spec.vocab_size = 300;
    spec.bpe_train_words = 10_000;
    spec.model.dim = 16;
    spec.model.n_layers = 2;
    spec.model.n_heads = 2;
    spec.model.max_seq = 48;
    spec.pretrain.n_examples = 300;
    spec.pretrain.n_epochs = 1;
    spec.distill.n_examples = 100;
    spec.n_held_out = 20;
    spec.sample.max_words = 40;
    spec
}

#[test]
fn accuracy_rows_are_the_verdict_averages() {
    let spec = tiny_spec();
    let run = run_toy(&spec).unwrap();
    let report = run.probe(&spec).unwrap();
    assert_eq!(report.verdicts.len(), 40.min(run.cv.n_composed()));

    let mut by_group: BTreeMap<(String, bool), (usize, usize, usize)> = BTreeMap::new();
    for v in &report.verdicts {
        for key in v.transforms.iter().cloned().chain(["ALL".to_string()]) {
            let g = by_group.entry((key, v.in_vocab)).or_default();
            g.0 += 1;
            g.1 += v.embed_match as usize;
            g.2 += v.detok.any_match as usize;
        }
    }
    for row in report.rows.iter().chain(&report.overall) {
        let key = (row.transform.clone(), row.split == Split::InVocab);
        let (n, embed, detok) = by_group.get(&key).copied().unwrap_or_default();
        assert_eq!(row.n, n, "{key:?}");
        if n > 0 {
            assert!((row.embed_accuracy - embed as f64 / n as f64).abs() < 1e-12);
            assert!((row.detok_accuracy - detok as f64 / n as f64).abs() < 1e-12);
        }
    }
    let failed: Vec<&str> = report.verdicts.iter().filter(|v| !v.embed_match && !v.detok.any_match).map(|v| v.surface.as_str()).collect();
    assert_eq!(report.failed.iter().map(String::as_str).collect::<Vec<_>>(), {
        let mut f = failed;
        f.sort();
        f
    });
}
