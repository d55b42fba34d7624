//! Patchscope probes of composed embeddings: the embedding-layer probe, the
//! early-layer detokenization sweep, per-transformation accuracy reports and
//! the vocabulary-size scaling study.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compose::{CompositionalVocab, InputSlot, UnionEntry};
use crate::decomp::{build_map, BuildOptions, TransformId};
use crate::toy::{gen_toy_language, ToyLanguageSpec};
use crate::toylm::{generate, hidden_states, init_model, make_lm_examples, output_text, train_lm, Head, LmError, ModelConfig, ModelParams, Patch, TrainSpec};
use crate::transforms::{collect_pairs, consistency_score, extract_table};
use crate::vocab::{train_bpe, Vocabulary};

pub const PLACEHOLDER: &str = "[X]";

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("patch vector has {got} values, model dimension is {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid probe spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Lm(#[from] LmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatchSlots {
    All,
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeSpec {
    /// Prompt with `[X]` placeholders. A placeholder stands for a whole
    /// space-led word, so a space right before it is absorbed.
    pub template: String,
    pub k_layers: usize,
    pub max_gen: usize,
    /// Text put before the prompt, such as "In toy:".
    pub language_prefix: Option<String>,
    pub patch_slots: PatchSlots,
    /// Layer the embed probe writes to.
    pub embed_layer: usize,
    /// Decode with the original vocabulary rows even when composed entries
    /// are available.
    pub plain_head: bool,
    /// Layer of the prompt that receives each detok state; `None` patches
    /// the layer the state came from. Shallow models have no blocks left
    /// after a same-layer patch, so the default feeds states in as inputs.
    pub detok_target_layer: Option<usize>,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            template: "[X], [X], [X], [X],".to_string(),
            k_layers: 10,
            max_gen: 4,
            language_prefix: None,
            patch_slots: PatchSlots::All,
            embed_layer: 0,
            plain_head: false,
            detok_target_layer: Some(0),
        }
    }
}

impl ProbeSpec {
    pub fn validate(&self) -> Result<(), ProbeError> {
        if !self.template.contains(PLACEHOLDER) {
            return Err(ProbeError::InvalidSpec(format!("template needs at least one {PLACEHOLDER}")));
        }
        if self.k_layers == 0 || self.max_gen == 0 {
            return Err(ProbeError::InvalidSpec("k_layers and max_gen must be positive".into()));
        }
        Ok(())
    }

    pub fn head(&self, model: &ModelParams) -> Head {
        if self.plain_head || model.comp.is_none() {
            Head::Plain
        } else {
            Head::Union
        }
    }
}

/// Tokenized probe prompt and the positions to patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub slots: Vec<InputSlot>,
    pub placeholders: Vec<usize>,
}

fn text_slots(model: &ModelParams, vocab: &Vocabulary, text: &str) -> Result<Vec<InputSlot>, LmError> {
    Ok(match &model.comp {
        Some(cv) => cv.restructure_input(text)?,
        None => vocab.encode(text)?.into_iter().map(InputSlot::Plain).collect(),
    })
}

pub fn build_prompt(model: &ModelParams, vocab: &Vocabulary, spec: &ProbeSpec) -> Result<Prompt, ProbeError> {
    spec.validate()?;
    let mut text = String::new();
    if let Some(p) = &spec.language_prefix {
        text.push_str(p);
    }
    text.push_str(&spec.template);
    let pieces: Vec<&str> = text.split(PLACEHOLDER).collect();
    let filler = InputSlot::Plain(0);
    let mut slots = Vec::new();
    let mut placeholders = Vec::new();
    for (i, piece) in pieces.iter().enumerate() {
        let piece = if i + 1 < pieces.len() { piece.strip_suffix(' ').unwrap_or(piece) } else { piece };
        slots.extend(text_slots(model, vocab, piece)?);
        if i + 1 < pieces.len() {
            placeholders.push(slots.len());
            slots.push(filler);
        }
    }
    if spec.patch_slots == PatchSlots::Last {
        placeholders.drain(..placeholders.len() - 1);
    }
    Ok(Prompt { slots, placeholders })
}

/// Greedy continuation of the prompt with every placeholder overwritten by
/// `vector` at `layer` (0 is the input embedding).
pub fn patchscope_generate(
    model: &ModelParams,
    vocab: &Vocabulary,
    prompt: &Prompt,
    vector: &[f32],
    layer: usize,
    spec: &ProbeSpec,
) -> Result<String, ProbeError> {
    if vector.len() != model.config.dim {
        return Err(ProbeError::DimensionMismatch {
            expected: model.config.dim,
            got: vector.len(),
        });
    }
    let head = spec.head(model);
    let patch = Patch {
        layer,
        positions: prompt.placeholders.clone(),
        vector: vector.to_vec(),
    };
    let out = generate(model, &prompt.slots, spec.max_gen, head, &[patch])?;
    Ok(out.into_iter().map(|i| output_text(model, vocab, head, i)).collect())
}

/// The continuation starts with the target word (leading spaces ignored)
/// followed by a non-letter or the end.
pub fn matches_target(generated: &str, target: &str) -> bool {
    let g = generated.trim_start_matches(' ');
    let t = target.trim_start_matches(' ');
    if t.is_empty() {
        return false;
    }
    match g.strip_prefix(t) {
        Some(rest) => !rest.chars().next().is_some_and(char::is_alphabetic),
        None => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetokResult {
    /// Continuation for layers 1..=k.
    pub texts: Vec<String>,
    pub matches: Vec<bool>,
    pub any_match: bool,
}

/// Feeds `embedding` as the only input and patchscopes its state after
/// each of the first `k` blocks into `spec.detok_target_layer`.
pub fn detok_sweep(
    model: &ModelParams,
    vocab: &Vocabulary,
    prompt: &Prompt,
    embedding: &[f32],
    target: &str,
    spec: &ProbeSpec,
) -> Result<DetokResult, ProbeError> {
    if embedding.len() != model.config.dim {
        return Err(ProbeError::DimensionMismatch {
            expected: model.config.dim,
            got: embedding.len(),
        });
    }
    let states = hidden_states(model, &[InputSlot::Plain(0)], Some(embedding))?;
    let k = spec.k_layers.min(model.config.n_layers);
    let mut texts = Vec::with_capacity(k);
    for (l, state) in states.iter().enumerate().take(k + 1).skip(1) {
        let target = spec.detok_target_layer.unwrap_or(l);
        texts.push(patchscope_generate(model, vocab, prompt, state, target, spec)?);
    }
    let matches: Vec<bool> = texts.iter().map(|t| matches_target(t, target)).collect();
    Ok(DetokResult {
        any_match: matches.iter().any(|&m| m),
        texts,
        matches,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordVerdict {
    pub surface: String,
    pub transforms: Vec<String>,
    pub in_vocab: bool,
    pub embed_text: String,
    pub embed_match: bool,
    pub detok: DetokResult,
}

impl WordVerdict {
    pub fn failed(&self) -> bool {
        !self.embed_match && !self.detok.any_match
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    InVocab,
    OutOfVocab,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::InVocab => "in_vocab",
            Split::OutOfVocab => "out_of_vocab",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub transform: String,
    pub split: Split,
    pub n: usize,
    pub embed_accuracy: f64,
    pub detok_accuracy: f64,
    /// Detok accuracy of the zero vector against the same targets.
    pub control_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub rows: Vec<AccuracyRow>,
    /// Per split over all probed words.
    pub overall: Vec<AccuracyRow>,
    pub verdicts: Vec<WordVerdict>,
    pub control_texts: Vec<String>,
    pub failed: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeSample {
    /// Probe at most this many composed entries, evenly spaced; 0 = all.
    pub max_words: usize,
}

impl Default for ProbeSample {
    fn default() -> Self {
        Self { max_words: 0 }
    }
}

fn accuracy_row(transform: &str, split: Split, words: &[(&WordVerdict, bool)]) -> AccuracyRow {
    let n = words.len();
    let frac = |f: &dyn Fn(&(&WordVerdict, bool)) -> bool| {
        if n == 0 {
            0.0
        } else {
            words.iter().filter(|w| f(w)).count() as f64 / n as f64
        }
    };
    AccuracyRow {
        transform: transform.to_string(),
        split,
        n,
        embed_accuracy: frac(&|w| w.0.embed_match),
        detok_accuracy: frac(&|w| w.0.detok.any_match),
        control_accuracy: frac(&|w| w.1),
    }
}

/// Embed and detok probes for the composed entries of the attached
/// vocabulary; rows per transformation and in/out-of-vocabulary split.
pub fn accuracy_report(model: &ModelParams, spec: &ProbeSpec, sample: &ProbeSample) -> Result<ProbeResult, ProbeError> {
    let cv: Arc<CompositionalVocab> = model
        .comp
        .clone()
        .ok_or_else(|| ProbeError::InvalidSpec("probing needs a compositional vocabulary".into()))?;
    let vocab = &cv.vocab;
    let prompt = build_prompt(model, vocab, spec)?;
    let mut entries: Vec<usize> = (cv.n_plain()..cv.len()).collect();
    if sample.max_words > 0 && entries.len() > sample.max_words {
        let step = entries.len() as f64 / sample.max_words as f64;
        entries = (0..sample.max_words).map(|i| entries[(i as f64 * step) as usize]).collect();
    }
    let zero = vec![0.0; model.config.dim];
    let control = detok_sweep(model, vocab, &prompt, &zero, "", spec)?;
    let verdicts: Vec<WordVerdict> = entries
        .par_iter()
        .map(|&i| -> Result<WordVerdict, ProbeError> {
            let UnionEntry::Composed { surface, transforms, .. } = cv.entry(i) else {
                unreachable!("composed range")
            };
            let slot = InputSlot::Composed(i as u32);
            let mut emb = vec![0.0; model.config.dim];
            model.slot_embedding_into(slot, &mut emb);
            let embed_text = patchscope_generate(model, vocab, &prompt, &emb, spec.embed_layer, spec)?;
            let detok = detok_sweep(model, vocab, &prompt, &emb, surface, spec)?;
            Ok(WordVerdict {
                surface: surface.clone(),
                transforms: transforms.iter().map(|t| cv.table.labels[t.0 as usize].clone()).collect(),
                in_vocab: cv.orig_id(i).is_some(),
                embed_match: matches_target(&embed_text, surface),
                embed_text,
                detok,
            })
        })
        .collect::<Result<_, _>>()?;
    let control_hit = |surface: &str| control.texts.iter().any(|t| matches_target(t, surface));
    let mut groups: BTreeMap<(usize, Split), Vec<(&WordVerdict, bool)>> = BTreeMap::new();
    let mut overall: BTreeMap<Split, Vec<(&WordVerdict, bool)>> = BTreeMap::new();
    for t in 0..cv.table.len() {
        for split in [Split::InVocab, Split::OutOfVocab] {
            groups.entry((t, split)).or_default();
        }
    }
    for split in [Split::InVocab, Split::OutOfVocab] {
        overall.entry(split).or_default();
    }
    for (v, &i) in verdicts.iter().zip(&entries) {
        let split = if v.in_vocab { Split::InVocab } else { Split::OutOfVocab };
        let c = control_hit(&v.surface);
        for &t in cv.slot_transforms(InputSlot::Composed(i as u32)) {
            groups.get_mut(&(t as usize, split)).unwrap().push((v, c));
        }
        overall.get_mut(&split).unwrap().push((v, c));
    }
    let rows = groups
        .iter()
        .map(|(&(t, split), w)| accuracy_row(&cv.table.labels[t], split, w))
        .collect();
    let overall = overall.iter().map(|(&split, w)| accuracy_row("ALL", split, w)).collect();
    let failed = verdicts.iter().filter(|v| v.failed()).map(|v| v.surface.clone()).collect();
    Ok(ProbeResult {
        rows,
        overall,
        failed,
        control_texts: control.texts,
        verdicts,
    })
}

impl ProbeResult {
    pub fn overall_row(&self, split: Split) -> Option<&AccuracyRow> {
        self.overall.iter().find(|r| r.split == split)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::from("transform\tsplit\tn\tembed\tdetok\tcontrol\n");
        for r in self.rows.iter().chain(&self.overall) {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}",
                r.transform,
                r.split.as_str(),
                r.n,
                r.embed_accuracy,
                r.detok_accuracy,
                r.control_accuracy
            );
        }
        s
    }
}

/// Spearman rank correlation with average ranks for ties; `None` when
/// either side is constant or shorter than two.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        None
    } else {
        Some(cov / (vx * vy).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalingSpec {
    pub language: ToyLanguageSpec,
    pub vocab_sizes: Vec<usize>,
    pub bpe_train_words: usize,
    /// Architecture shared by every size; `vocab_rows` and
    /// `tie_embeddings` are set per run.
    pub model: ModelConfig,
    pub pretrain: TrainSpec,
    pub probe: ProbeSpec,
    pub sample: ProbeSample,
}

impl Default for ScalingSpec {
    fn default() -> Self {
        Self {
            language: ToyLanguageSpec::default(),
            vocab_sizes: vec![300, 450, 600, 800],
            bpe_train_words: 60_000,
            model: ModelConfig {
                dim: 32,
                n_layers: 4,
                n_heads: 2,
                ffn_mult: 4,
                max_seq: 48,
                vocab_rows: 0,
                tie_embeddings: false,
                seed: 11,
            },
            pretrain: TrainSpec {
                n_examples: 3000,
                n_epochs: 2,
                batch: 16,
                ..TrainSpec::default()
            },
            probe: ProbeSpec::default(),
            sample: ProbeSample { max_words: 150 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub vocab_size: usize,
    pub tied: bool,
    pub n_transforms: usize,
    pub n_composed: usize,
    /// Mean over transformations of the detok accuracy.
    pub mean_accuracy: f64,
    pub mean_embed_accuracy: f64,
    pub mean_consistency: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// (tied, spearman(size, accuracy), spearman(size, consistency))
    pub correlations: Vec<(bool, Option<f64>, Option<f64>)>,
}

impl ScalingReport {
    /// Tab-separated curve with one row per (size, tie mode), then the
    /// rank correlations.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("vocab_size\ttied\tn_transforms\tn_composed\tmean_accuracy\tmean_embed_accuracy\tmean_consistency\tfinal_loss\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                r.vocab_size, r.tied, r.n_transforms, r.n_composed, r.mean_accuracy, r.mean_embed_accuracy, r.mean_consistency, r.final_loss
            );
        }
        s.push_str("# tied\tspearman_accuracy\tspearman_consistency\n");
        let f = |x: Option<f64>| x.map_or("nan".to_string(), |v| format!("{v:.6}"));
        for (tied, a, c) in &self.correlations {
            let _ = writeln!(s, "# {tied}\t{}\t{}", f(*a), f(*c));
        }
        s
    }

    /// "inverse", "direct" or "flat" per tie mode.
    pub fn trend(&self, tied: bool) -> &'static str {
        match self.correlations.iter().find(|c| c.0 == tied).and_then(|c| c.1) {
            Some(r) if r < 0.0 => "inverse",
            Some(r) if r > 0.0 => "direct",
            _ => "flat",
        }
    }
}

/// One row of the scaling curve: BPE at `size`, a pretrained toy model,
/// the map and its extracted table, then probes.
pub fn scaling_point(spec: &ScalingSpec, size: usize, tied: bool) -> Result<ScalingRow, ProbeError> {
    let (lex, sampler) = gen_toy_language(&spec.language).map_err(|e| ProbeError::InvalidSpec(e.to_string()))?;
    let mut bpe_sampler = sampler.fork(1);
    let vocab = train_bpe(&mut bpe_sampler, size, spec.bpe_train_words).map_err(LmError::from)?;
    let config = ModelConfig {
        vocab_rows: vocab.len(),
        tie_embeddings: tied,
        ..spec.model.clone()
    };
    let base = init_model(&config)?;
    let mut lm_sampler = sampler.fork(2);
    let examples = make_lm_examples(&mut lm_sampler, &vocab, spec.pretrain.n_examples, config.max_seq)?;
    let (base, report) = train_lm(&base, &examples, &spec.pretrain)?;
    let map = build_map(&vocab, &lex, &BuildOptions::default()).map;
    let (e, u) = base.embedding_matrices();
    let table = extract_table(&map, &vocab, &e, &u).map_err(|x| ProbeError::InvalidSpec(x.to_string()))?;
    let mut consistency = Vec::new();
    for t in 0..map.transforms().len() {
        let pairs = collect_pairs(&map, &vocab, TransformId(t as u32));
        if let Ok((c, _)) = consistency_score(&e, &pairs, table.input_offsets.row(t)) {
            consistency.push(c);
        }
    }
    let cv = Arc::new(CompositionalVocab::new(vocab, map, table).map_err(LmError::from)?);
    let model = base.attach(cv.clone())?;
    let result = accuracy_report(&model, &spec.probe, &spec.sample)?;
    // Pool both splits per transformation, then average transformations.
    let mean_by_t = |f: &dyn Fn(&AccuracyRow) -> f64| {
        let mut by_t: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
        for r in result.rows.iter().filter(|r| r.n > 0) {
            let e = by_t.entry(&r.transform).or_default();
            e.0 += r.n;
            e.1 += f(r) * r.n as f64;
        }
        if by_t.is_empty() {
            0.0
        } else {
            by_t.values().map(|(n, s)| s / *n as f64).sum::<f64>() / by_t.len() as f64
        }
    };
    Ok(ScalingRow {
        vocab_size: size,
        tied,
        n_transforms: cv.table.len(),
        n_composed: cv.n_composed(),
        mean_accuracy: mean_by_t(&|r| r.detok_accuracy),
        mean_embed_accuracy: mean_by_t(&|r| r.embed_accuracy),
        mean_consistency: if consistency.is_empty() { 0.0 } else { consistency.iter().sum::<f64>() / consistency.len() as f64 },
        final_loss: report.final_loss().unwrap_or(f64::NAN),
    })
}

pub fn scaling_study(spec: &ScalingSpec) -> Result<ScalingReport, ProbeError> {
    if spec.vocab_sizes.len() < 2 {
        return Err(ProbeError::InvalidSpec("scaling needs at least two vocabulary sizes".into()));
    }
    let mut rows = Vec::new();
    for tied in [true, false] {
        for &size in &spec.vocab_sizes {
            log::info!("scaling: size {size} tied {tied}");
            rows.push(scaling_point(spec, size, tied)?);
        }
    }
    let correlations = [true, false]
        .into_iter()
        .map(|tied| {
            let r: Vec<&ScalingRow> = rows.iter().filter(|r| r.tied == tied).collect();
            let x: Vec<f64> = r.iter().map(|r| r.vocab_size as f64).collect();
            let a: Vec<f64> = r.iter().map(|r| r.mean_accuracy).collect();
            let c: Vec<f64> = r.iter().map(|r| r.mean_consistency).collect();
            (tied, spearman(&x, &a), spearman(&x, &c))
        })
        .collect();
    Ok(ScalingReport { rows, correlations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn match_needs_word_boundary() {
        assert!(matches_target(" walked, walked", " walked"));
        assert!(matches_target("walked", " walked"));
        assert!(!matches_target(" walkeds", " walked"));
        assert!(!matches_target(" Walked", " walked"));
        assert!(!matches_target(" walk", " walked"));
        assert!(!matches_target(" anything", ""));
    }

    #[test]
    fn spearman_known_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0], &[5.0, 5.0]), None);
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
    }

    #[test]
    fn spec_validation() {
        assert!(ProbeSpec::default().validate().is_ok());
        assert!(ProbeSpec { template: "no slot".into(), ..ProbeSpec::default() }.validate().is_err());
        assert!(ProbeSpec { k_layers: 0, ..ProbeSpec::default() }.validate().is_err());
    }
}
