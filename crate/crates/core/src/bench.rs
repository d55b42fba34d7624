//! Greedy decoding throughput of a baseline against its compositional twin.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::compose::InputSlot;
use crate::toylm::{generate_with, Head, KvCache, LmError, ModelParams};
use crate::vocab::Vocabulary;

pub const WARMUP_PROMPTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSpec {
    pub max_new: usize,
    /// Timed passes over all prompts; the fastest pass counts.
    pub rounds: usize,
    /// Pruned-mode k values.
    pub pruned_k: Vec<usize>,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            max_new: 32,
            rounds: 5,
            pruned_k: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunedThroughput {
    pub k: usize,
    pub tokens_per_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub n_prompts: usize,
    pub tokens_per_pass: [usize; 2],
    pub baseline_tokens_per_sec: f64,
    pub compositional_tokens_per_sec: f64,
    /// `100 * (1 - compositional / baseline)`.
    pub overhead_pct: f64,
    pub pruned: Vec<PrunedThroughput>,
}

struct Mode<'a> {
    model: &'a ModelParams,
    head: Head,
    prompts: Vec<Vec<InputSlot>>,
    cache: KvCache,
    best: f64,
    tokens: usize,
}

impl Mode<'_> {
    fn pass(&mut self, max_new: usize) -> Result<(usize, f64), LmError> {
        let t = Instant::now();
        let mut n = 0;
        for p in &self.prompts {
            n += generate_with(self.model, &mut self.cache, p, max_new, self.head, &[])?.len();
        }
        Ok((n, t.elapsed().as_secs_f64()))
    }
}

/// Throughput of greedy generation. The first prompts warm each mode up
/// and are not timed; modes are interleaved within every round so drift
/// hits them alike.
pub fn bench_decode(
    baseline: &ModelParams,
    compositional: &ModelParams,
    vocab: &Vocabulary,
    prompts: &[String],
    spec: &BenchSpec,
) -> Result<BenchReport, LmError> {
    let cv = compositional
        .comp
        .clone()
        .ok_or_else(|| LmError::InvalidConfig("benchmark needs a compositional model".into()))?;
    if prompts.len() < 10 {
        return Err(LmError::InvalidConfig("benchmark needs at least 10 prompts".into()));
    }
    let plain: Vec<Vec<InputSlot>> = prompts
        .iter()
        .map(|p| Ok(vocab.encode(p)?.into_iter().map(InputSlot::Plain).collect()))
        .collect::<Result<_, LmError>>()?;
    let restructured: Vec<Vec<InputSlot>> = prompts.iter().map(|p| cv.restructure_input(p)).collect::<Result<_, _>>()?;
    let mode = |model, head, prompts: &Vec<Vec<InputSlot>>| Mode {
        model,
        head,
        prompts: prompts.clone(),
        cache: KvCache::new(model),
        best: f64::INFINITY,
        tokens: 0,
    };
    let mut modes = vec![mode(baseline, Head::Plain, &plain), mode(compositional, Head::Union, &restructured)];
    for &k in &spec.pruned_k {
        modes.push(mode(compositional, Head::Pruned(k), &restructured));
    }
    for m in &mut modes {
        for p in m.prompts.iter().take(WARMUP_PROMPTS) {
            generate_with(m.model, &mut m.cache, p, spec.max_new, m.head, &[])?;
        }
    }
    for _ in 0..spec.rounds.max(1) {
        for m in &mut modes {
            let (n, secs) = m.pass(spec.max_new)?;
            m.tokens = n;
            m.best = m.best.min(secs);
        }
    }
    let tps = |m: &Mode| m.tokens as f64 / m.best;
    let (b, c) = (tps(&modes[0]), tps(&modes[1]));
    Ok(BenchReport {
        n_prompts: prompts.len(),
        tokens_per_pass: [modes[0].tokens, modes[1].tokens],
        baseline_tokens_per_sec: b,
        compositional_tokens_per_sec: c,
        overhead_pct: 100.0 * (1.0 - c / b),
        pruned: spec
            .pruned_k
            .iter()
            .zip(&modes[2..])
            .map(|(&k, m)| PrunedThroughput { k, tokens_per_sec: tps(m) })
            .collect(),
    })
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "prompts\t{}\nbaseline_tokens_per_sec\t{:.1}\ncompositional_tokens_per_sec\t{:.1}\noverhead_pct\t{:.2}\n",
            self.n_prompts, self.baseline_tokens_per_sec, self.compositional_tokens_per_sec, self.overhead_pct
        );
        for p in &self.pruned {
            s.push_str(&format!("pruned_k{}_tokens_per_sec\t{:.1}\n", p.k, p.tokens_per_sec));
        }
        s
    }
}
