use super::forward::{forward_train, Activations};
use super::kernels::*;
use super::{LmError, ModelParams};
use crate::compose::{argmax, dot_rows, InputSlot};
use crate::vocab::Vocabulary;

/// Output head used for scoring and decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// Original vocabulary rows only.
    Plain,
    /// Union of retained plain tokens and composed entries (plain rows when
    /// no compositional vocabulary is attached).
    Union,
    /// Union restricted to composed entries over the top-k bases.
    Pruned(usize),
}

/// Overwrites the residual stream at `positions` after block `layer`
/// (layer 0: the input vector, position embedding still added).
#[derive(Debug, Clone)]
pub struct Patch {
    pub layer: usize,
    pub positions: Vec<usize>,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct KvCache {
    k: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    pub len: usize,
    scratch: Scratch,
}

#[derive(Debug, Clone, Default)]
struct Scratch {
    x: Vec<f32>,
    ln: Vec<f32>,
    qkv: Vec<f32>,
    y: Vec<f32>,
    tmp: Vec<f32>,
    fc: Vec<f32>,
    fcg: Vec<f32>,
    att: Vec<f32>,
    mean: [f32; 1],
    rstd: [f32; 1],
    base: Vec<f32>,
    tl: Vec<f32>,
    keep: Vec<bool>,
}

impl KvCache {
    pub fn new(p: &ModelParams) -> Self {
        let n = p.config.max_seq * p.config.dim;
        Self {
            k: vec![vec![0.0; n]; p.config.n_layers],
            v: vec![vec![0.0; n]; p.config.n_layers],
            len: 0,
            scratch: Scratch::default(),
        }
    }

    pub fn reset(&mut self) {
        self.len = 0;
    }

    /// Runs one position. `capture` receives the layer-0 input and the
    /// residual after every block. Returns the final normalised state.
    pub fn step(
        &mut self,
        p: &ModelParams,
        slot: InputSlot,
        patch: Option<(usize, &[f32])>,
        mut capture: Option<&mut Vec<Vec<f32>>>,
    ) -> Result<Vec<f32>, LmError> {
        let cfg = &p.config;
        let (c, nh, f) = (cfg.dim, cfg.n_heads, cfg.ffn_dim());
        let pos = self.len;
        if pos >= cfg.max_seq {
            return Err(LmError::SequenceTooLong { len: pos + 1, max: cfg.max_seq });
        }
        let d = &p.data;
        let lay = &p.layout;
        let s = &mut self.scratch;
        s.x.resize(c, 0.0);
        match patch {
            Some((0, v)) => s.x.copy_from_slice(v),
            _ => p.slot_embedding_into(slot, &mut s.x),
        }
        if let Some(cap) = capture.as_deref_mut() {
            cap.push(s.x.clone());
        }
        let pe = &d[lay.wpe.start + pos * c..lay.wpe.start + (pos + 1) * c];
        for (x, e) in s.x.iter_mut().zip(pe) {
            *x += e;
        }
        s.ln.resize(c, 0.0);
        s.qkv.resize(3 * c, 0.0);
        s.y.resize(c, 0.0);
        s.tmp.resize(c, 0.0);
        s.fc.resize(f, 0.0);
        s.fcg.resize(f, 0.0);
        s.att.resize(pos + 1, 0.0);
        let hs = c / nh;
        let scale = 1.0 / (hs as f32).sqrt();
        for l in 0..cfg.n_layers {
            let li = &lay.layers[l];
            layernorm_fwd(&mut s.ln, &mut s.mean, &mut s.rstd, &s.x, &d[li.ln1_g.clone()], &d[li.ln1_b.clone()], c);
            matmul_fwd(&mut s.qkv, &s.ln, &d[li.wqkv.clone()], Some(&d[li.bqkv.clone()]), 1, c, 3 * c);
            self.k[l][pos * c..(pos + 1) * c].copy_from_slice(&s.qkv[c..2 * c]);
            self.v[l][pos * c..(pos + 1) * c].copy_from_slice(&s.qkv[2 * c..]);
            for h in 0..nh {
                let q = &s.qkv[h * hs..(h + 1) * hs];
                let mut maxv = f32::NEG_INFINITY;
                for t2 in 0..=pos {
                    let k = &self.k[l][t2 * c + h * hs..t2 * c + (h + 1) * hs];
                    let sc = q.iter().zip(k).map(|(a, b)| a * b).sum::<f32>() * scale;
                    s.att[t2] = sc;
                    maxv = maxv.max(sc);
                }
                let mut sum = 0.0;
                for a in s.att[..=pos].iter_mut() {
                    *a = (*a - maxv).exp();
                    sum += *a;
                }
                let inv = 1.0 / sum;
                let o = &mut s.y[h * hs..(h + 1) * hs];
                o.fill(0.0);
                for t2 in 0..=pos {
                    let w = s.att[t2] * inv;
                    let v = &self.v[l][t2 * c + h * hs..t2 * c + (h + 1) * hs];
                    for (oi, vi) in o.iter_mut().zip(v) {
                        *oi += w * vi;
                    }
                }
            }
            matmul_fwd(&mut s.tmp, &s.y, &d[li.wo.clone()], Some(&d[li.bo.clone()]), 1, c, c);
            for (x, t) in s.x.iter_mut().zip(&s.tmp) {
                *x += t;
            }
            layernorm_fwd(&mut s.ln, &mut s.mean, &mut s.rstd, &s.x, &d[li.ln2_g.clone()], &d[li.ln2_b.clone()], c);
            matmul_fwd(&mut s.fc, &s.ln, &d[li.wfc.clone()], Some(&d[li.bfc.clone()]), 1, c, f);
            gelu_fwd(&mut s.fcg, &s.fc);
            matmul_fwd(&mut s.tmp, &s.fcg, &d[li.wproj.clone()], Some(&d[li.bproj.clone()]), 1, f, c);
            for (x, t) in s.x.iter_mut().zip(&s.tmp) {
                *x += t;
            }
            if let Some((pl, v)) = patch {
                if pl == l + 1 {
                    s.x.copy_from_slice(v);
                }
            }
            if let Some(cap) = capture.as_deref_mut() {
                cap.push(s.x.clone());
            }
        }
        let mut h = vec![0.0; c];
        layernorm_fwd(&mut h, &mut s.mean, &mut s.rstd, &s.x, &d[lay.lnf_g.clone()], &d[lay.lnf_b.clone()], c);
        self.len += 1;
        Ok(h)
    }

    /// Scores of the next slot from a final hidden state.
    pub fn head_scores(&mut self, p: &ModelParams, h: &[f32], head: Head, out: &mut Vec<f32>) -> Result<(), LmError> {
        head_scores_with(p, h, head, &mut self.scratch.base, &mut self.scratch.tl, &mut self.scratch.keep, out)
    }
}

fn head_scores_with(
    p: &ModelParams,
    h: &[f32],
    head: Head,
    base: &mut Vec<f32>,
    tl: &mut Vec<f32>,
    keep: &mut Vec<bool>,
    out: &mut Vec<f32>,
) -> Result<(), LmError> {
    match (&p.comp, head) {
        (None, _) | (Some(_), Head::Plain) => {
            let u = p.unembed();
            out.resize(u.rows, 0.0);
            dot_rows(u, h, out);
        }
        (Some(cv), Head::Union) => cv.score_union_into(p.unembed(), p.u_t(), h, base, tl, out)?,
        (Some(cv), Head::Pruned(k)) => {
            if cv.bases().is_empty() {
                cv.score_union_into(p.unembed(), p.u_t(), h, base, tl, out)?
            } else {
                let k = k.clamp(1, cv.bases().len());
                cv.score_union_pruned_into(p.unembed(), p.u_t(), h, k, base, tl, keep, out)?
            }
        }
    }
    Ok(())
}

/// Input slot that feeds an emitted head index back into the model.
pub fn slot_for_output(p: &ModelParams, head: Head, idx: usize) -> InputSlot {
    match (&p.comp, head) {
        (None, _) => InputSlot::Plain(idx as u32),
        (Some(cv), Head::Plain) => {
            let id = idx as u32;
            if cv.is_removed(id) {
                InputSlot::Composed(cv.union_of_orig(id))
            } else {
                InputSlot::Plain(id)
            }
        }
        (Some(cv), _) => cv.slot_for_entry(idx),
    }
}

/// Text of a head index.
pub fn output_text(p: &ModelParams, vocab: &Vocabulary, head: Head, idx: usize) -> String {
    match (&p.comp, head) {
        (Some(cv), Head::Union | Head::Pruned(_)) => cv.surface(idx).to_string(),
        _ => vocab.token(idx as u32).unwrap_or("").to_string(),
    }
}

/// Greedy decoding. Patches apply to prompt positions. Returns the emitted
/// head indices.
pub fn generate(p: &ModelParams, prompt: &[InputSlot], max_new: usize, head: Head, patches: &[Patch]) -> Result<Vec<usize>, LmError> {
    let mut cache = KvCache::new(p);
    generate_with(p, &mut cache, prompt, max_new, head, patches)
}

pub(crate) fn generate_with(
    p: &ModelParams,
    cache: &mut KvCache,
    prompt: &[InputSlot],
    max_new: usize,
    head: Head,
    patches: &[Patch],
) -> Result<Vec<usize>, LmError> {
    if prompt.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(bad) = patches.iter().find(|pt| pt.vector.len() != p.config.dim || pt.layer > p.config.n_layers) {
        return Err(LmError::InvalidConfig(format!("patch at layer {} with {} values", bad.layer, bad.vector.len())));
    }
    cache.reset();
    let mut h = Vec::new();
    for (i, &s) in prompt.iter().enumerate() {
        let patch = patches.iter().find(|pt| pt.positions.contains(&i)).map(|pt| (pt.layer, pt.vector.as_slice()));
        h = cache.step(p, s, patch, None)?;
    }
    let mut out = Vec::with_capacity(max_new);
    let mut scores = Vec::new();
    for n in 0..max_new {
        cache.head_scores(p, &h, head, &mut scores)?;
        let idx = argmax(&scores);
        out.push(idx);
        if n + 1 == max_new || cache.len >= p.config.max_seq {
            break;
        }
        h = cache.step(p, slot_for_output(p, head, idx), None, None)?;
    }
    Ok(out)
}

/// Per-layer states at the last position: index 0 is the input vector,
/// index l the residual after block l.
pub fn hidden_states(p: &ModelParams, slots: &[InputSlot], layer0_override: Option<&[f32]>) -> Result<Vec<Vec<f32>>, LmError> {
    let mut cache = KvCache::new(p);
    let mut cap = Vec::new();
    for (i, &s) in slots.iter().enumerate() {
        cap.clear();
        let patch = if i + 1 == slots.len() { layer0_override.map(|v| (0, v)) } else { None };
        cache.step(p, s, patch, Some(&mut cap))?;
    }
    Ok(cap)
}

/// Head scores after the whole sequence.
pub fn logits_last(p: &ModelParams, slots: &[InputSlot], head: Head) -> Result<Vec<f32>, LmError> {
    let mut cache = KvCache::new(p);
    let mut h = Vec::new();
    for &s in slots {
        h = cache.step(p, s, None, None)?;
    }
    let mut out = Vec::new();
    cache.head_scores(p, &h, head, &mut out)?;
    Ok(out)
}

/// Log-probability of every slot after the first, given its prefix, under
/// the chosen head.
pub fn score_text(p: &ModelParams, slots: &[InputSlot], head: Head) -> Result<Vec<f64>, LmError> {
    let mut a = Activations::default();
    forward_train(p, slots, &mut a)?;
    let c = p.config.dim;
    let (mut base, mut tl, mut keep, mut scores) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut out = Vec::with_capacity(slots.len().saturating_sub(1));
    for i in 0..slots.len().saturating_sub(1) {
        let h = &a.lnf[i * c..(i + 1) * c];
        head_scores_with(p, h, head, &mut base, &mut tl, &mut keep, &mut scores)?;
        let target = match (&p.comp, head, slots[i + 1]) {
            (None, _, InputSlot::Plain(id)) | (Some(_), Head::Plain, InputSlot::Plain(id)) => id as usize,
            (Some(cv), Head::Plain, InputSlot::Composed(u)) => cv.orig_id(u as usize).ok_or_else(|| {
                LmError::InvalidConfig(format!("{:?} has no plain token", cv.surface(u as usize)))
            })? as usize,
            (Some(cv), _, InputSlot::Plain(id)) => cv.union_of_orig(id) as usize,
            (Some(_), _, InputSlot::Composed(u)) => u as usize,
            (None, _, InputSlot::Composed(_)) => unreachable!("rejected by forward"),
        };
        out.push(log_softmax_at(&scores, target));
    }
    Ok(out)
}
