use std::ops::Range;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::forward::{backward, forward_train, Activations, BackwardOptions, Grads};
use super::infer::{score_text, Head};
use super::kernels::{matmul_bwd, matmul_fwd, softmax_in_place};
use super::{LmError, ModelParams, TrainMask, TrainSpec};
use crate::compose::{CompositionalVocab, InputSlot};
use crate::toy::CorpusSampler;
use crate::vocab::{pre_tokenize, TokenId, Vocabulary};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean loss of every optimisation step.
    pub losses: Vec<f64>,
    pub steps: usize,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// Adam with decoupled weight decay, restricted to parameter ranges.
struct AdamW {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl AdamW {
    const B1: f32 = 0.9;
    const B2: f32 = 0.999;
    const EPS: f32 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f32], grads: &[f32], ranges: &[Range<usize>], lr: f32, wd: f32) {
        self.t += 1;
        let bc1 = 1.0 - Self::B1.powi(self.t);
        let bc2 = 1.0 - Self::B2.powi(self.t);
        for r in ranges {
            for i in r.clone() {
                let g = grads[i];
                self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g;
                self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g * g;
                let mhat = self.m[i] / bc1;
                let vhat = self.v[i] / bc2;
                params[i] -= lr * (mhat / (vhat.sqrt() + Self::EPS) + wd * params[i]);
            }
        }
    }
}

/// Whole sentences packed into sequences of `max_seq + 1` tokens.
pub fn make_lm_examples(sampler: &mut CorpusSampler, vocab: &Vocabulary, n: usize, max_seq: usize) -> Result<Vec<Vec<TokenId>>, LmError> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut ids = Vec::with_capacity(max_seq + 32);
        while ids.len() < max_seq + 1 {
            ids.extend(vocab.encode(&sampler.sentence())?);
        }
        ids.truncate(max_seq + 1);
        out.push(ids);
    }
    Ok(out)
}

fn epoch_order(n: usize, epochs: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = Vec::with_capacity(n * epochs);
    for _ in 0..epochs {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        order.extend(idx);
    }
    order
}

/// Next-token cross-entropy training of a plain model.
pub fn train_lm(params: &ModelParams, examples: &[Vec<TokenId>], spec: &TrainSpec) -> Result<(ModelParams, TrainReport), LmError> {
    if params.comp.is_some() {
        return Err(LmError::InvalidConfig("pretraining expects a plain model".into()));
    }
    spec.validate()?;
    let n = spec.n_examples.min(examples.len());
    let mut p = params.clone();
    let spec = TrainSpec { n_examples: n, ..spec.clone() };
    let order = epoch_order(n, spec.n_epochs, spec.seed);
    let ranges = p.mask_ranges(&TrainMask::All)?;
    let mut opt = AdamW::new(p.layout.len);
    let mut grads = Grads::zeros_like(&p);
    let mut acts = Activations::default();
    let mut report = TrainReport::default();
    let (c, v) = (p.config.dim, p.config.vocab_rows);
    let mut logits = Vec::new();
    let mut dlnf = Vec::new();
    for (step, batch) in order.chunks(spec.batch).enumerate() {
        grads.zero();
        let n_tok: usize = batch.iter().map(|&i| examples[i].len().saturating_sub(1)).sum();
        let mut loss = 0.0f64;
        for &i in batch {
            let ex = &examples[i];
            if ex.len() < 2 {
                continue;
            }
            let slots: Vec<InputSlot> = ex[..ex.len() - 1].iter().map(|&t| InputSlot::Plain(t)).collect();
            let t = slots.len();
            forward_train(&p, &slots, &mut acts)?;
            logits.resize(t * v, 0.0);
            matmul_fwd(&mut logits, &acts.lnf, &p.data[p.layout.unembed.clone()], None, t, c, v);
            for (pos, row) in logits.chunks_exact_mut(v).enumerate() {
                softmax_in_place(row);
                let target = ex[pos + 1] as usize;
                loss -= (row[target].max(1e-30) as f64).ln();
                row[target] -= 1.0;
                for x in row.iter_mut() {
                    *x /= n_tok as f32;
                }
            }
            dlnf.clear();
            dlnf.resize(t * c, 0.0);
            let ur = p.layout.unembed.clone();
            matmul_bwd(Some(&mut dlnf), Some(&mut grads.data[ur.clone()]), None, &logits, &acts.lnf, &p.data[ur], t, c, v);
            backward(&p, &acts, &dlnf, &mut grads, BackwardOptions { param_grads: true, transform_grads: false });
        }
        if !loss.is_finite() {
            return Err(LmError::Numeric(format!("loss diverged at step {step}")));
        }
        opt.step(&mut p.data, &grads.data, &ranges, spec.lr_at(step), spec.weight_decay);
        report.losses.push(loss / n_tok.max(1) as f64);
        if step % 100 == 0 {
            log::info!("pretrain step {step}: loss {:.4}", loss / n_tok.max(1) as f64);
        }
        report.steps += 1;
    }
    Ok((p, report))
}

/// A text seen plainly by the teacher and restructured by the student.
/// `align` pairs student positions with the teacher position whose
/// prediction they must match (a composed word maps to the teacher's last
/// token of that word).
#[derive(Debug, Clone, PartialEq)]
pub struct DistillExample {
    pub text: String,
    pub teacher: Vec<InputSlot>,
    pub student: Vec<InputSlot>,
    pub align: Vec<(usize, usize)>,
}

impl DistillExample {
    pub fn from_text(cv: &CompositionalVocab, text: &str) -> Result<Self, LmError> {
        let mut teacher = Vec::new();
        let mut student = Vec::new();
        let mut align = Vec::new();
        for chunk in pre_tokenize(text) {
            let t = cv.plain_slots(chunk)?;
            let s = cv.restructure_input(chunk)?;
            let (t0, s0) = (teacher.len(), student.len());
            if s.len() == t.len() {
                align.extend((0..s.len()).map(|i| (s0 + i, t0 + i)));
            } else {
                align.extend((0..s.len()).map(|i| (s0 + i, t0 + t.len() - s.len() + i)));
            }
            teacher.extend(t);
            student.extend(s);
        }
        Ok(Self {
            text: text.to_string(),
            teacher,
            student,
            align,
        })
    }
}

/// Packs whole sentences so that the plain encoding fits `max_seq`.
pub fn build_distill_examples(
    cv: &CompositionalVocab,
    sampler: &mut CorpusSampler,
    n: usize,
    max_seq: usize,
) -> Result<Vec<DistillExample>, LmError> {
    let mut out = Vec::with_capacity(n);
    let mut text = String::new();
    let mut len = 0;
    while out.len() < n {
        let s = sampler.sentence();
        let l = cv.vocab.encode(&s)?.len();
        if l > max_seq {
            continue;
        }
        if len + l > max_seq {
            out.push(DistillExample::from_text(cv, &text)?);
            text.clear();
            len = 0;
        }
        text.push_str(&s);
        len += l;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistillStage {
    /// Train input transformation rows against the plain teacher.
    InputTransforms,
    /// Train output transformation rows against the frozen stage-1 model.
    OutputTransforms,
}

impl DistillStage {
    fn mask(self) -> TrainMask {
        match self {
            DistillStage::InputTransforms => TrainMask::InputTransforms,
            DistillStage::OutputTransforms => TrainMask::OutputTransforms,
        }
    }
}

/// `CE(softmax(t/tau), softmax(s/tau))`, without the tau^2 factor, so that
/// equal inputs give exactly the teacher entropy.
pub fn kd_loss(teacher_logits: &[f32], student_logits: &[f32], tau: f32) -> f64 {
    let lse = |z: &[f32]| {
        let m = z.iter().map(|&x| x as f64 / tau as f64).fold(f64::NEG_INFINITY, f64::max);
        m + z.iter().map(|&x| (x as f64 / tau as f64 - m).exp()).sum::<f64>().ln()
    };
    let (lt, ls) = (lse(teacher_logits), lse(student_logits));
    teacher_logits
        .iter()
        .zip(student_logits)
        .map(|(&t, &s)| {
            let p = (t as f64 / tau as f64 - lt).exp();
            -p * (s as f64 / tau as f64 - ls)
        })
        .sum()
}

fn check_pair(student: &ModelParams, teacher: &ModelParams, stage: DistillStage) -> Result<Arc<CompositionalVocab>, LmError> {
    let cv = student
        .comp
        .clone()
        .ok_or_else(|| LmError::InvalidConfig("student needs a compositional vocabulary".into()))?;
    if student.config != teacher.config {
        return Err(LmError::InvalidConfig("student and teacher configurations differ".into()));
    }
    match stage {
        DistillStage::InputTransforms if teacher.comp.is_some() => Err(LmError::StageOrderViolation(
            "input stage distils from the unmodified model".into(),
        )),
        DistillStage::OutputTransforms => match &teacher.comp {
            Some(tcv) if Arc::ptr_eq(tcv, &cv) => Ok(cv),
            Some(_) => Err(LmError::StageOrderViolation("teacher uses a different vocabulary".into())),
            None => Err(LmError::StageOrderViolation("output stage needs the stage-1 model as teacher".into())),
        },
        _ => Ok(cv),
    }
}

struct StageScratch {
    ta: Activations,
    sa: Activations,
    tl: Vec<f32>,
    sl: Vec<f32>,
    dlnf: Vec<f32>,
    base: Vec<f32>,
    tlog: Vec<f32>,
    union: Vec<f32>,
}

impl StageScratch {
    fn new() -> Self {
        Self {
            ta: Activations::default(),
            sa: Activations::default(),
            tl: Vec::new(),
            sl: Vec::new(),
            dlnf: Vec::new(),
            base: Vec::new(),
            tlog: Vec::new(),
            union: Vec::new(),
        }
    }
}

/// Loss of one example; with `grads`, accumulates `scale * dloss`.
fn stage_example(
    student: &ModelParams,
    teacher: &ModelParams,
    cv: &CompositionalVocab,
    stage: DistillStage,
    ex: &DistillExample,
    spec: &TrainSpec,
    scale: f32,
    grads: Option<&mut Grads>,
    s: &mut StageScratch,
) -> Result<(f64, usize), LmError> {
    let (c, v) = (student.config.dim, student.config.vocab_rows);
    let tau = spec.kd_temperature;
    let u = &student.data[student.layout.unembed.clone()];
    match stage {
        DistillStage::InputTransforms => {
            forward_train(teacher, &ex.teacher, &mut s.ta)?;
            forward_train(student, &ex.student, &mut s.sa)?;
            let (tt, ts) = (ex.teacher.len(), ex.student.len());
            s.tl.resize(tt * v, 0.0);
            matmul_fwd(&mut s.tl, &s.ta.lnf, &teacher.data[teacher.layout.unembed.clone()], None, tt, c, v);
            s.sl.resize(ts * v, 0.0);
            matmul_fwd(&mut s.sl, &s.sa.lnf, u, None, ts, c, v);
            let mut dz = vec![0f32; ts * v];
            let mut loss = 0.0;
            for &(ps, pt) in &ex.align {
                let zt = &s.tl[pt * v..(pt + 1) * v];
                let zs = &s.sl[ps * v..(ps + 1) * v];
                loss += kd_loss(zt, zs, tau);
                let mut pt_soft: Vec<f32> = zt.iter().map(|x| x / tau).collect();
                softmax_in_place(&mut pt_soft);
                let mut ps_soft: Vec<f32> = zs.iter().map(|x| x / tau).collect();
                softmax_in_place(&mut ps_soft);
                for ((d, a), b) in dz[ps * v..(ps + 1) * v].iter_mut().zip(&ps_soft).zip(&pt_soft) {
                    *d = (a - b) / tau * scale;
                }
            }
            if let Some(g) = grads {
                s.dlnf.clear();
                s.dlnf.resize(ts * c, 0.0);
                matmul_bwd(Some(&mut s.dlnf), None, None, &dz, &s.sa.lnf, u, ts, c, v);
                backward(student, &s.sa, &s.dlnf, g, BackwardOptions { param_grads: false, transform_grads: true });
            }
            Ok((loss, ex.align.len()))
        }
        DistillStage::OutputTransforms => {
            forward_train(teacher, &ex.student, &mut s.ta)?;
            let ts = ex.student.len();
            let tu = teacher.unembed();
            let mut loss = 0.0;
            let ut_range = student.layout.u_t.clone().expect("compositional layout");
            let mut g = grads;
            for pos in 0..ts {
                let h = &s.ta.lnf[pos * c..(pos + 1) * c];
                s.tlog.resize(v, 0.0);
                crate::compose::dot_rows(tu, h, &mut s.tlog);
                let mut p_t: Vec<f32> = s.tlog.iter().map(|x| x / tau).collect();
                softmax_in_place(&mut p_t);
                cv.score_union_into(student.unembed(), student.u_t(), h, &mut s.base, &mut s.sl, &mut s.union)?;
                let (q, in_support) = stage2_student(cv, &s.union, tau, spec.renormalize_stage2);
                for (i, &qi) in q.iter().enumerate() {
                    let pi = match in_support[i] {
                        Some(id) => p_t[id as usize] as f64,
                        None => 0.0,
                    };
                    if pi > 0.0 {
                        loss -= pi * (qi.max(1e-300)).ln();
                    }
                }
                if let Some(g) = g.as_deref_mut() {
                    for i in cv.n_plain()..cv.len() {
                        let pi = in_support[i].map_or(0.0, |id| p_t[id as usize] as f64);
                        if in_support[i].is_none() && spec.renormalize_stage2 {
                            continue;
                        }
                        let dz = ((q[i] - pi) / tau as f64) as f32 * scale;
                        if dz == 0.0 {
                            continue;
                        }
                        for &t in cv.slot_transforms(InputSlot::Composed(i as u32)) {
                            let o = ut_range.start + t as usize * c;
                            for (gd, hv) in g.data[o..o + c].iter_mut().zip(h) {
                                *gd += dz * hv;
                            }
                        }
                    }
                }
            }
            Ok((loss, ts))
        }
    }
}

/// Student distribution for stage 2: over union entries whose surface is an
/// original token (renormalised), or the whole union. Returns
/// probabilities and the original id of each entry in the support.
fn stage2_student(cv: &CompositionalVocab, scores: &[f32], tau: f32, renormalize: bool) -> (Vec<f64>, Vec<Option<TokenId>>) {
    let support: Vec<Option<TokenId>> = (0..cv.len()).map(|i| cv.orig_id(i)).collect();
    let live = |i: usize| !renormalize || support[i].is_some();
    let m = (0..scores.len())
        .filter(|&i| live(i))
        .map(|i| scores[i] as f64 / tau as f64)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut q: Vec<f64> = (0..scores.len())
        .map(|i| if live(i) { (scores[i] as f64 / tau as f64 - m).exp() } else { 0.0 })
        .collect();
    let z: f64 = q.iter().sum();
    for x in q.iter_mut() {
        *x /= z;
    }
    (q, support)
}

fn stage_grads(
    student: &ModelParams,
    teacher: &ModelParams,
    cv: &CompositionalVocab,
    stage: DistillStage,
    batch: &[&DistillExample],
    spec: &TrainSpec,
    grads: &mut Grads,
    s: &mut StageScratch,
) -> Result<f64, LmError> {
    grads.zero();
    let n_pos: usize = batch
        .iter()
        .map(|e| match stage {
            DistillStage::InputTransforms => e.align.len(),
            DistillStage::OutputTransforms => e.student.len(),
        })
        .sum();
    let scale = 1.0 / n_pos.max(1) as f32;
    let mut loss = 0.0;
    for ex in batch {
        loss += stage_example(student, teacher, cv, stage, ex, spec, scale, Some(grads), s)?.0;
    }
    // Frozen tensors never receive gradient.
    let keep = student.mask_ranges(&stage.mask())?;
    let mut last = 0;
    for r in &keep {
        grads.data[last..r.start].fill(0.0);
        last = r.end;
    }
    let n = grads.data.len();
    grads.data[last..n].fill(0.0);
    Ok(loss / n_pos.max(1) as f64)
}

/// One distillation stage; only the stage's transformation rows change.
pub fn distill_stage(
    student: &ModelParams,
    teacher: &ModelParams,
    stage: DistillStage,
    spec: &TrainSpec,
    examples: &[DistillExample],
) -> Result<(ModelParams, TrainReport), LmError> {
    let cv = check_pair(student, teacher, stage)?;
    spec.validate()?;
    let n = spec.n_examples.min(examples.len());
    let spec = TrainSpec { n_examples: n, ..spec.clone() };
    let mut p = student.clone();
    let ranges = p.mask_ranges(&stage.mask())?;
    let mut opt = AdamW::new(p.layout.len);
    let mut grads = Grads::zeros_like(&p);
    let mut s = StageScratch::new();
    let mut report = TrainReport::default();
    let order = epoch_order(n, spec.n_epochs, spec.seed);
    for (step, idx) in order.chunks(spec.batch).enumerate() {
        let batch: Vec<&DistillExample> = idx.iter().map(|&i| &examples[i]).collect();
        let loss = stage_grads(&p, teacher, &cv, stage, &batch, &spec, &mut grads, &mut s)?;
        if !loss.is_finite() {
            return Err(LmError::Numeric(format!("distillation loss diverged at step {step}")));
        }
        opt.step(&mut p.data, &grads.data, &ranges, spec.lr_at(step), spec.weight_decay);
        report.losses.push(loss);
        if step % 25 == 0 {
            log::info!("{stage:?} step {step}: loss {loss:.4}");
        }
        report.steps += 1;
    }
    Ok((p, report))
}

/// Mean per-position KD loss of a stage on held-out examples.
pub fn stage2_loss(student: &ModelParams, teacher: &ModelParams, examples: &[DistillExample], spec: &TrainSpec) -> Result<f64, LmError> {
    stage_loss(student, teacher, DistillStage::OutputTransforms, examples, spec)
}

pub fn stage_loss(
    student: &ModelParams,
    teacher: &ModelParams,
    stage: DistillStage,
    examples: &[DistillExample],
    spec: &TrainSpec,
) -> Result<f64, LmError> {
    let cv = check_pair(student, teacher, stage)?;
    let mut s = StageScratch::new();
    let (mut total, mut n) = (0.0, 0);
    for ex in examples {
        let (l, k) = stage_example(student, teacher, &cv, stage, ex, spec, 1.0, None, &mut s)?;
        total += l;
        n += k;
    }
    Ok(total / n.max(1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub tensor: String,
    pub trainable: bool,
    pub analytic: Vec<f32>,
    pub numeric: Vec<f64>,
    /// `||a - n|| / max(||a||, ||n||)`; 0 for frozen tensors.
    pub max_rel_error: f64,
}

/// Central finite differences of the stage loss against the analytic
/// gradient of one tensor. Frozen tensors report their (zero) analytic
/// gradient only.
pub fn grad_check(
    student: &ModelParams,
    teacher: &ModelParams,
    stage: DistillStage,
    tensor: &str,
    examples: &[DistillExample],
    spec: &TrainSpec,
    eps: f32,
) -> Result<GradCheck, LmError> {
    let cv = check_pair(student, teacher, stage)?;
    let range = student
        .layout
        .get(tensor)
        .ok_or_else(|| LmError::InvalidConfig(format!("unknown tensor {tensor}")))?
        .range
        .clone();
    let trainable = student.mask_ranges(&stage.mask())?.iter().any(|r| r.start <= range.start && range.end <= r.end);
    let mut s = StageScratch::new();
    let mut grads = Grads::zeros_like(student);
    let batch: Vec<&DistillExample> = examples.iter().collect();
    stage_grads(student, teacher, &cv, stage, &batch, spec, &mut grads, &mut s)?;
    let analytic = grads.data[range.clone()].to_vec();
    if !trainable {
        return Ok(GradCheck {
            tensor: tensor.to_string(),
            trainable,
            analytic,
            numeric: Vec::new(),
            max_rel_error: 0.0,
        });
    }
    let mut p = student.clone();
    let loss_at = |p: &ModelParams, s: &mut StageScratch| -> Result<f64, LmError> {
        let (mut total, mut n) = (0.0, 0);
        for ex in examples {
            let (l, k) = stage_example(p, teacher, &cv, stage, ex, spec, 1.0, None, s)?;
            total += l;
            n += k;
        }
        Ok(total / n.max(1) as f64)
    };
    let mut numeric = Vec::with_capacity(range.len());
    for i in range.clone() {
        let orig = p.data[i];
        p.data[i] = orig + eps;
        let up = loss_at(&p, &mut s)?;
        p.data[i] = orig - eps;
        let down = loss_at(&p, &mut s)?;
        p.data[i] = orig;
        let h = ((orig + eps) as f64) - ((orig - eps) as f64);
        numeric.push((up - down) / h);
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(&a, &n)| (a as f64 - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    let denom = na.max(nn);
    Ok(GradCheck {
        tensor: tensor.to_string(),
        trainable,
        analytic,
        numeric,
        max_rel_error: if denom == 0.0 { 0.0 } else { diff / denom },
    })
}

/// `exp(-sum log p / n_words)` over every word after the first, where words
/// are pre-tokenizer chunks. Compositional models read restructured input.
pub fn per_word_perplexity(model: &ModelParams, vocab: &Vocabulary, texts: &[String], head: Head) -> Result<f64, LmError> {
    let mut total = 0.0;
    let mut words = 0usize;
    for text in texts {
        let chunks = pre_tokenize(text);
        if chunks.len() < 2 {
            continue;
        }
        let (slots, first) = match &model.comp {
            Some(cv) => (cv.restructure_input(text)?, cv.restructure_input(chunks[0])?.len()),
            None => (
                vocab.encode(text)?.into_iter().map(InputSlot::Plain).collect::<Vec<_>>(),
                vocab.encode(chunks[0])?.len(),
            ),
        };
        let lp = score_text(model, &slots, head)?;
        total += lp[first - 1..].iter().sum::<f64>();
        words += chunks.len() - 1;
    }
    Ok((-total / words.max(1) as f64).exp())
}
