//! Synthetic concatenative toy language for desk-scale runs.
//!
//! Stems are built from CV syllables; each paradigm slot either appends a
//! suffix or capitalizes the first letter. The corpus sampler emits sentences
//! whose stems follow a Zipf law and whose inflection slots are uniform, with
//! two distributional cues the toy model can learn from: sentences keep to a
//! topic (a fixed cluster of stems) and most words in a sentence share one
//! inflection slot. Optionally a stem is often followed by one of a few
//! fixed successors, so each stem has its own contexts shared by all of its
//! forms. A fraction of lines are copy drills (`w, w, w, w, w.`)
//! that teach the repetition behaviour probes rely on.

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lexicon::{capitalize_first, FeatureTag, LexEntry, Lexicon, LexiconError, Relation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotRule {
    Suffix(String),
    CapFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParadigmSlot {
    pub tag: String,
    pub rule: SlotRule,
    #[serde(default = "default_relation")]
    pub relation: Relation,
}

fn default_relation() -> Relation {
    Relation::Inflection
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StemShape {
    pub min_syllables: usize,
    pub max_syllables: usize,
    pub onsets: String,
    pub nuclei: String,
}

impl Default for StemShape {
    fn default() -> Self {
        Self {
            min_syllables: 2,
            max_syllables: 3,
            onsets: "bdfgklmnprstvz".to_string(),
            nuclei: "aeiou".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SentenceModel {
    /// Mean of the geometric sentence length.
    pub mean_len: f64,
    pub n_topics: usize,
    /// Probability that a word takes the sentence's inflection slot.
    pub slot_agreement: f64,
    /// Fraction of lines that are copy drills.
    pub repetition_rate: f64,
    pub repetitions: usize,
    /// Probability that a word's stem is one of the previous stem's fixed
    /// successors, which gives every stem contexts of its own.
    pub successor_rate: f64,
    pub n_successors: usize,
}

impl Default for SentenceModel {
    fn default() -> Self {
        Self {
            mean_len: 12.0,
            n_topics: 40,
            slot_agreement: 0.8,
            repetition_rate: 0.15,
            repetitions: 5,
            successor_rate: 0.5,
            n_successors: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyLanguageSpec {
    pub n_stems: usize,
    pub stem_shape: StemShape,
    pub paradigm: Vec<ParadigmSlot>,
    pub zipf_exponent: f64,
    pub seed: u64,
    pub sentences: SentenceModel,
}

impl Default for ToyLanguageSpec {
    /// 200 stems, five suffixing inflections and first-letter capitalization.
    fn default() -> Self {
        let suffix = |tag: &str, s: &str| ParadigmSlot {
            tag: tag.to_string(),
            rule: SlotRule::Suffix(s.to_string()),
            relation: Relation::Inflection,
        };
        Self {
            n_stems: 200,
            stem_shape: StemShape::default(),
            paradigm: vec![
                suffix("V;PST", "ed"),
                suffix("V;V.PTCP;PRS", "ing"),
                suffix("N;PL", "s"),
                suffix("ADJ;CMPR", "er"),
                suffix("ADJ;SPRL", "est"),
                ParadigmSlot {
                    tag: "CAP".to_string(),
                    rule: SlotRule::CapFirst,
                    relation: Relation::Inflection,
                },
            ],
            zipf_exponent: 1.1,
            seed: 7,
            sentences: SentenceModel::default(),
        }
    }
}

impl ToyLanguageSpec {
    pub fn from_toml(text: &str) -> Result<Self, LexiconError> {
        toml::from_str(text).map_err(|e| LexiconError::InvalidSpec(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("toy spec serializes")
    }

    pub fn validate(&self) -> Result<(), LexiconError> {
        let bad = |m: &str| Err(LexiconError::InvalidSpec(m.to_string()));
        if self.n_stems == 0 {
            return bad("n_stems must be at least 1");
        }
        if self.paradigm.is_empty() {
            return bad("paradigm is empty");
        }
        if !(self.zipf_exponent > 0.0) {
            return bad("zipf_exponent must be positive");
        }
        let mut seen = HashSet::new();
        let mut caps = 0;
        for slot in &self.paradigm {
            FeatureTag::new(slot.tag.clone()).map_err(|t| LexiconError::InvalidSpec(format!("bad tag {t:?}")))?;
            match &slot.rule {
                SlotRule::Suffix(s) => {
                    if s.is_empty() || !seen.insert(s.clone()) {
                        return bad("paradigm suffixes must be non-empty and pairwise distinct");
                    }
                }
                SlotRule::CapFirst => caps += 1,
            }
        }
        if caps > 1 {
            return bad("at most one capitalization slot");
        }
        let shape = &self.stem_shape;
        if shape.onsets.is_empty() || shape.nuclei.is_empty() || shape.min_syllables == 0 || shape.max_syllables < shape.min_syllables {
            return bad("stem shape needs onsets, nuclei and 1 <= min_syllables <= max_syllables");
        }
        let s = &self.sentences;
        if !(s.mean_len >= 1.0) || !(0.0..=1.0).contains(&s.slot_agreement) || !(0.0..=1.0).contains(&s.repetition_rate)
            || !(0.0..=1.0).contains(&s.successor_rate)
            || s.n_topics == 0
            || s.n_successors == 0
        {
            return bad("sentence model out of range");
        }
        Ok(())
    }
}

/// Applies a slot rule to a stem.
pub fn inflect(stem: &str, rule: &SlotRule) -> String {
    match rule {
        SlotRule::Suffix(s) => format!("{stem}{s}"),
        SlotRule::CapFirst => capitalize_first(stem),
    }
}

/// Deterministic sampler over the toy language.
#[derive(Debug, Clone)]
pub struct CorpusSampler {
    stems: Vec<String>,
    slots: Vec<ParadigmSlot>,
    model: SentenceModel,
    zipf: WeightedIndex<f64>,
    topic_pick: WeightedIndex<f64>,
    topic_members: Vec<Vec<usize>>,
    topic_zipf: Vec<WeightedIndex<f64>>,
    successors: Vec<Vec<usize>>,
    rng: ChaCha8Rng,
    seed: u64,
}

impl CorpusSampler {
    pub fn stems(&self) -> &[String] {
        &self.stems
    }

    pub fn zipf_weights(&self, exponent: f64) -> Vec<f64> {
        zipf_weights(self.stems.len(), exponent)
    }

    /// Independent stream with the same language.
    pub fn fork(&self, stream: u64) -> Self {
        let mut s = self.clone();
        s.rng = ChaCha8Rng::seed_from_u64(self.seed);
        s.rng.set_stream(stream + 1);
        s
    }

    fn non_cap_slots(&self) -> Vec<Option<usize>> {
        std::iter::once(None)
            .chain(
                self.slots
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| s.rule != SlotRule::CapFirst)
                    .map(|(i, _)| Some(i)),
            )
            .collect()
    }

    fn cap_slot(&self) -> Option<usize> {
        self.slots.iter().position(|s| s.rule == SlotRule::CapFirst)
    }

    fn form(&self, stem: usize, slot: Option<usize>) -> String {
        match slot {
            None => self.stems[stem].clone(),
            Some(i) => inflect(&self.stems[stem], &self.slots[i].rule),
        }
    }

    /// Draws a stem index from the global Zipf law.
    pub fn sample_stem(&mut self) -> usize {
        self.zipf.sample(&mut self.rng)
    }

    /// One line of text; every word carries its leading space.
    pub fn sentence(&mut self) -> String {
        let mut out = String::new();
        if self.rng.random::<f64>() < self.model.repetition_rate {
            let stem = self.sample_stem();
            let n_slots = self.slots.len() + 1;
            let pick = self.rng.random_range(0..n_slots);
            let word = self.form(stem, pick.checked_sub(1));
            for r in 0..self.model.repetitions.max(1) {
                out.push(' ');
                out.push_str(&word);
                out.push(if r + 1 == self.model.repetitions.max(1) { '.' } else { ',' });
            }
            return out;
        }
        let plain_slots = self.non_cap_slots();
        let topic = self.topic_pick.sample(&mut self.rng);
        let mood = plain_slots[self.rng.random_range(0..plain_slots.len())];
        // Geometric on {1, 2, ...} with the configured mean.
        let p = 1.0 / self.model.mean_len;
        let mut len = 1;
        while self.rng.random::<f64>() >= p && len < 200 {
            len += 1;
        }
        let cap = self.cap_slot();
        let mut prev: Option<usize> = None;
        for i in 0..len {
            let stem = match prev {
                Some(p) if self.rng.random::<f64>() < self.model.successor_rate => {
                    let next = &self.successors[p];
                    next[self.rng.random_range(0..next.len())]
                }
                _ => self.topic_members[topic][self.topic_zipf[topic].sample(&mut self.rng)],
            };
            prev = Some(stem);
            let slot = if self.rng.random::<f64>() < self.model.slot_agreement {
                mood
            } else {
                plain_slots[self.rng.random_range(0..plain_slots.len())]
            };
            let mut word = self.form(stem, slot);
            if i == 0 && cap.is_some() {
                word = capitalize_first(&word);
            }
            out.push(' ');
            out.push_str(&word);
        }
        out.push('.');
        out
    }

    /// Concatenated sentences totalling at least `n_chars` characters.
    pub fn sample_text(&mut self, n_chars: usize) -> String {
        let mut out = String::with_capacity(n_chars + 128);
        while out.len() < n_chars {
            out.push_str(&self.sentence());
        }
        out
    }

    /// At least `n_words` words, as whole sentences.
    pub fn sample_words(&mut self, n_words: usize) -> String {
        let mut out = String::new();
        let mut count = 0;
        while count < n_words {
            let s = self.sentence();
            count += s.split_whitespace().count();
            out.push_str(&s);
        }
        out
    }
}

pub fn zipf_weights(n: usize, exponent: f64) -> Vec<f64> {
    (0..n).map(|r| 1.0 / ((r + 1) as f64).powf(exponent)).collect()
}

fn gen_stems(spec: &ToyLanguageSpec, rng: &mut ChaCha8Rng) -> Result<Vec<String>, LexiconError> {
    let shape = &spec.stem_shape;
    let onsets: Vec<char> = shape.onsets.chars().collect();
    let nuclei: Vec<char> = shape.nuclei.chars().collect();
    let mut stems = Vec::with_capacity(spec.n_stems);
    let mut taken: HashSet<String> = HashSet::new();
    let mut attempts = 0usize;
    while stems.len() < spec.n_stems {
        attempts += 1;
        if attempts > spec.n_stems * 1000 + 10_000 {
            return Err(LexiconError::InvalidSpec("stem space too small for n_stems".into()));
        }
        let n_syl = rng.random_range(shape.min_syllables..=shape.max_syllables);
        let mut stem = String::new();
        for _ in 0..n_syl {
            stem.push(onsets[rng.random_range(0..onsets.len())]);
            stem.push(nuclei[rng.random_range(0..nuclei.len())]);
        }
        let mut forms = vec![stem.clone()];
        forms.extend(spec.paradigm.iter().map(|s| inflect(&stem, &s.rule)));
        let mut extra: Vec<String> = forms.iter().map(|f| capitalize_first(f)).collect();
        forms.append(&mut extra);
        forms.sort();
        forms.dedup();
        if forms.iter().any(|f| taken.contains(f)) {
            continue;
        }
        taken.extend(forms);
        stems.push(stem);
    }
    Ok(stems)
}

/// Builds the toy lexicon and its corpus sampler.
pub fn gen_toy_language(spec: &ToyLanguageSpec) -> Result<(Lexicon, CorpusSampler), LexiconError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let stems = gen_stems(spec, &mut rng)?;

    let mut entries = Vec::new();
    for stem in &stems {
        for slot in &spec.paradigm {
            entries.push(LexEntry {
                lemma: stem.clone(),
                form: inflect(stem, &slot.rule),
                tag: FeatureTag::new(slot.tag.clone()).expect("validated"),
                relation: slot.relation,
            });
        }
    }
    let lexicon = Lexicon::from_entries(entries);

    let weights = zipf_weights(stems.len(), spec.zipf_exponent);
    let n_topics = spec.sentences.n_topics.min(stems.len());
    let mut topic_members = vec![Vec::new(); n_topics];
    for r in 0..stems.len() {
        topic_members[r % n_topics].push(r);
    }
    let topic_mass: Vec<f64> = topic_members.iter().map(|m| m.iter().map(|&r| weights[r]).sum()).collect();
    let topic_zipf = topic_members
        .iter()
        .map(|m| WeightedIndex::new(m.iter().map(|&r| weights[r])).expect("positive weights"))
        .collect();
    let mut succ_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    succ_rng.set_stream(2);
    let successors = (0..stems.len())
        .map(|_| (0..spec.sentences.n_successors).map(|_| succ_rng.random_range(0..stems.len())).collect())
        .collect();
    let sampler = CorpusSampler {
        successors,
        zipf: WeightedIndex::new(&weights).expect("positive weights"),
        topic_pick: WeightedIndex::new(&topic_mass).expect("positive weights"),
        topic_members,
        topic_zipf,
        stems,
        slots: spec.paradigm.clone(),
        model: spec.sentences.clone(),
        rng: {
            let mut r = ChaCha8Rng::seed_from_u64(spec.seed);
            r.set_stream(1);
            r
        },
        seed: spec.seed,
    };
    Ok((lexicon, sampler))
}
