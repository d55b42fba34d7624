use super::kernels::*;
use super::{LmError, ModelParams};
use crate::compose::InputSlot;

#[derive(Debug, Clone, Default)]
pub struct LayerActs {
    pub ln1: Vec<f32>,
    pub ln1_mean: Vec<f32>,
    pub ln1_rstd: Vec<f32>,
    pub qkv: Vec<f32>,
    pub att: Vec<f32>,
    pub atty: Vec<f32>,
    pub res1: Vec<f32>,
    pub ln2: Vec<f32>,
    pub ln2_mean: Vec<f32>,
    pub ln2_rstd: Vec<f32>,
    pub fch: Vec<f32>,
    pub fch_gelu: Vec<f32>,
    pub res2: Vec<f32>,
}

/// Saved activations of one sequence.
#[derive(Debug, Clone, Default)]
pub struct Activations {
    pub t: usize,
    pub slots: Vec<InputSlot>,
    pub x0: Vec<f32>,
    pub layers: Vec<LayerActs>,
    /// Final normalised hidden states `[T, C]`.
    pub lnf: Vec<f32>,
    pub lnf_mean: Vec<f32>,
    pub lnf_rstd: Vec<f32>,
}

/// Gradient buffer with the parameter layout.
#[derive(Debug, Clone)]
pub struct Grads {
    pub data: Vec<f32>,
}

impl Grads {
    pub fn zeros_like(p: &ModelParams) -> Self {
        Self {
            data: vec![0.0; p.layout.len],
        }
    }

    pub fn zero(&mut self) {
        self.data.fill(0.0);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BackwardOptions {
    /// Gradients for every transformer weight and the base embeddings.
    pub param_grads: bool,
    /// Gradients for input transformation rows.
    pub transform_grads: bool,
}

fn resize(v: &mut Vec<f32>, n: usize) {
    v.clear();
    v.resize(n, 0.0);
}

/// Full causal forward pass over one sequence, saving what backward needs.
pub fn forward_train(p: &ModelParams, slots: &[InputSlot], a: &mut Activations) -> Result<(), LmError> {
    let cfg = &p.config;
    let (t, c, nh, f) = (slots.len(), cfg.dim, cfg.n_heads, cfg.ffn_dim());
    if t > cfg.max_seq {
        return Err(LmError::SequenceTooLong { len: t, max: cfg.max_seq });
    }
    let d = &p.data;
    let lay = &p.layout;
    a.t = t;
    a.slots.clear();
    a.slots.extend_from_slice(slots);
    resize(&mut a.x0, t * c);
    let wpe = &d[lay.wpe.clone()];
    for (i, &s) in slots.iter().enumerate() {
        let row = &mut a.x0[i * c..(i + 1) * c];
        p.slot_embedding_into(s, row);
        for (x, pe) in row.iter_mut().zip(&wpe[i * c..(i + 1) * c]) {
            *x += pe;
        }
    }
    a.layers.resize_with(cfg.n_layers, LayerActs::default);
    for l in 0..cfg.n_layers {
        let li = &lay.layers[l];
        let (before, rest) = a.layers.split_at_mut(l);
        let la = &mut rest[0];
        let inp: &[f32] = if l == 0 { &a.x0 } else { &before[l - 1].res2 };
        resize(&mut la.ln1, t * c);
        resize(&mut la.ln1_mean, t);
        resize(&mut la.ln1_rstd, t);
        layernorm_fwd(&mut la.ln1, &mut la.ln1_mean, &mut la.ln1_rstd, inp, &d[li.ln1_g.clone()], &d[li.ln1_b.clone()], c);
        resize(&mut la.qkv, t * 3 * c);
        matmul_fwd(&mut la.qkv, &la.ln1, &d[li.wqkv.clone()], Some(&d[li.bqkv.clone()]), t, c, 3 * c);
        resize(&mut la.att, nh * t * t);
        resize(&mut la.atty, t * c);
        attention_fwd(&mut la.atty, &mut la.att, &la.qkv, t, c, nh);
        resize(&mut la.res1, t * c);
        matmul_fwd(&mut la.res1, &la.atty, &d[li.wo.clone()], Some(&d[li.bo.clone()]), t, c, c);
        for (r, x) in la.res1.iter_mut().zip(inp) {
            *r += x;
        }
        resize(&mut la.ln2, t * c);
        resize(&mut la.ln2_mean, t);
        resize(&mut la.ln2_rstd, t);
        layernorm_fwd(&mut la.ln2, &mut la.ln2_mean, &mut la.ln2_rstd, &la.res1, &d[li.ln2_g.clone()], &d[li.ln2_b.clone()], c);
        resize(&mut la.fch, t * f);
        matmul_fwd(&mut la.fch, &la.ln2, &d[li.wfc.clone()], Some(&d[li.bfc.clone()]), t, c, f);
        resize(&mut la.fch_gelu, t * f);
        gelu_fwd(&mut la.fch_gelu, &la.fch);
        resize(&mut la.res2, t * c);
        matmul_fwd(&mut la.res2, &la.fch_gelu, &d[li.wproj.clone()], Some(&d[li.bproj.clone()]), t, f, c);
        for (r, x) in la.res2.iter_mut().zip(&la.res1) {
            *r += x;
        }
    }
    let last: &[f32] = if cfg.n_layers == 0 { &a.x0 } else { &a.layers[cfg.n_layers - 1].res2 };
    resize(&mut a.lnf, t * c);
    resize(&mut a.lnf_mean, t);
    resize(&mut a.lnf_rstd, t);
    layernorm_fwd(&mut a.lnf, &mut a.lnf_mean, &mut a.lnf_rstd, last, &d[lay.lnf_g.clone()], &d[lay.lnf_b.clone()], c);
    Ok(())
}

/// Backpropagates `dlnf` (gradient w.r.t. the final hidden states) and
/// accumulates into `g`. The output head is the caller's business.
pub fn backward(p: &ModelParams, a: &Activations, dlnf: &[f32], g: &mut Grads, opts: BackwardOptions) {
    let cfg = &p.config;
    let (t, c, nh, f) = (a.t, cfg.dim, cfg.n_heads, cfg.ffn_dim());
    let d = &p.data;
    let lay = &p.layout;
    let pg = opts.param_grads;

    let mut dres = vec![0f32; t * c];
    {
        let last: &[f32] = if cfg.n_layers == 0 { &a.x0 } else { &a.layers[cfg.n_layers - 1].res2 };
        let (gg, gb) = split2(&mut g.data, lay.lnf_g.clone(), lay.lnf_b.clone());
        layernorm_bwd(
            &mut dres,
            pg.then_some(gg),
            pg.then_some(gb),
            dlnf,
            last,
            &d[lay.lnf_g.clone()],
            &a.lnf_mean,
            &a.lnf_rstd,
            c,
        );
    }
    let mut dbuf_c = vec![0f32; t * c];
    let mut dbuf_f = vec![0f32; t * f];
    let mut dbuf_f2 = vec![0f32; t * f];
    let mut dqkv = vec![0f32; t * 3 * c];
    for l in (0..cfg.n_layers).rev() {
        let li = &lay.layers[l];
        let la = &a.layers[l];
        let inp: &[f32] = if l == 0 { &a.x0 } else { &a.layers[l - 1].res2 };
        // MLP: res2 = res1 + proj(gelu(fc(ln2(res1))))
        dbuf_f.fill(0.0);
        {
            let (dw, db) = split2(&mut g.data, li.wproj.clone(), li.bproj.clone());
            matmul_bwd(Some(&mut dbuf_f), pg.then_some(dw), pg.then_some(db), &dres, &la.fch_gelu, &d[li.wproj.clone()], t, f, c);
        }
        dbuf_f2.fill(0.0);
        gelu_bwd(&mut dbuf_f2, &la.fch, &dbuf_f);
        dbuf_c.fill(0.0);
        {
            let (dw, db) = split2(&mut g.data, li.wfc.clone(), li.bfc.clone());
            matmul_bwd(Some(&mut dbuf_c), pg.then_some(dw), pg.then_some(db), &dbuf_f2, &la.ln2, &d[li.wfc.clone()], t, c, f);
        }
        // dres now holds d(res1) from the residual path
        {
            let (gg, gb) = split2(&mut g.data, li.ln2_g.clone(), li.ln2_b.clone());
            layernorm_bwd(
                &mut dres,
                pg.then_some(gg),
                pg.then_some(gb),
                &dbuf_c,
                &la.res1,
                &d[li.ln2_g.clone()],
                &la.ln2_mean,
                &la.ln2_rstd,
                c,
            );
        }
        // attention: res1 = inp + wo(attn(qkv(ln1(inp))))
        dbuf_c.fill(0.0);
        {
            let (dw, db) = split2(&mut g.data, li.wo.clone(), li.bo.clone());
            matmul_bwd(Some(&mut dbuf_c), pg.then_some(dw), pg.then_some(db), &dres, &la.atty, &d[li.wo.clone()], t, c, c);
        }
        dqkv.fill(0.0);
        attention_bwd(&mut dqkv, &dbuf_c, &la.qkv, &la.att, t, c, nh);
        dbuf_c.fill(0.0);
        {
            let (dw, db) = split2(&mut g.data, li.wqkv.clone(), li.bqkv.clone());
            matmul_bwd(Some(&mut dbuf_c), pg.then_some(dw), pg.then_some(db), &dqkv, &la.ln1, &d[li.wqkv.clone()], t, c, 3 * c);
        }
        {
            let (gg, gb) = split2(&mut g.data, li.ln1_g.clone(), li.ln1_b.clone());
            layernorm_bwd(
                &mut dres,
                pg.then_some(gg),
                pg.then_some(gb),
                &dbuf_c,
                inp,
                &d[li.ln1_g.clone()],
                &la.ln1_mean,
                &la.ln1_rstd,
                c,
            );
        }
    }
    // dres is now the gradient of x0 = slot embedding + position embedding
    for (i, &slot) in a.slots.iter().enumerate() {
        let dx = &dres[i * c..(i + 1) * c];
        if pg {
            let pe = lay.wpe.start + i * c;
            add(&mut g.data[pe..pe + c], dx);
        }
        let base = match (&p.comp, slot) {
            (_, InputSlot::Plain(id)) => id,
            (Some(cv), s) => {
                if opts.transform_grads {
                    let et = lay.e_t.as_ref().expect("compositional layout").start;
                    for &tid in cv.slot_transforms(s) {
                        let o = et + tid as usize * c;
                        add(&mut g.data[o..o + c], dx);
                    }
                }
                cv.slot_base(s)
            }
            (None, InputSlot::Composed(_)) => unreachable!("checked in forward"),
        };
        if pg {
            let o = lay.wte.start + base as usize * c;
            add(&mut g.data[o..o + c], dx);
        }
    }
}

fn add(dst: &mut [f32], src: &[f32]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Two disjoint mutable sub-slices; `a` must come before `b`.
fn split2(data: &mut [f32], a: std::ops::Range<usize>, b: std::ops::Range<usize>) -> (&mut [f32], &mut [f32]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = data.split_at_mut(b.start);
    (&mut lo[a], &mut hi[..b.end - b.start])
}
