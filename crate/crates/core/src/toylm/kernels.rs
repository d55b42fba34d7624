//! Dense kernels for one sequence. Row-major throughout; weights are
//! `[out, in]`.

/// `out[T,O] = inp[T,I] @ w[O,I]^T (+ bias)`.
pub fn matmul_fwd(out: &mut [f32], inp: &[f32], w: &[f32], bias: Option<&[f32]>, t: usize, i: usize, o: usize) {
    debug_assert_eq!(out.len(), t * o);
    debug_assert_eq!(inp.len(), t * i);
    debug_assert_eq!(w.len(), o * i);
    match bias {
        Some(b) => {
            for row in out.chunks_exact_mut(o) {
                row.copy_from_slice(b);
            }
        }
        None => out.fill(0.0),
    }
    unsafe {
        matrixmultiply::sgemm(
            t,
            i,
            o,
            1.0,
            inp.as_ptr(),
            i as isize,
            1,
            w.as_ptr(),
            1,
            i as isize,
            1.0,
            out.as_mut_ptr(),
            o as isize,
            1,
        );
    }
}

/// Accumulates `dinp += dout @ w`, and when given, `dw += dout^T @ inp` and
/// `db += colsum(dout)`.
#[allow(clippy::too_many_arguments)]
pub fn matmul_bwd(
    dinp: Option<&mut [f32]>,
    dw: Option<&mut [f32]>,
    db: Option<&mut [f32]>,
    dout: &[f32],
    inp: &[f32],
    w: &[f32],
    t: usize,
    i: usize,
    o: usize,
) {
    if let Some(dinp) = dinp {
        unsafe {
            matrixmultiply::sgemm(
                t,
                o,
                i,
                1.0,
                dout.as_ptr(),
                o as isize,
                1,
                w.as_ptr(),
                i as isize,
                1,
                1.0,
                dinp.as_mut_ptr(),
                i as isize,
                1,
            );
        }
    }
    if let Some(dw) = dw {
        unsafe {
            matrixmultiply::sgemm(
                o,
                t,
                i,
                1.0,
                dout.as_ptr(),
                1,
                o as isize,
                inp.as_ptr(),
                i as isize,
                1,
                1.0,
                dw.as_mut_ptr(),
                i as isize,
                1,
            );
        }
    }
    if let Some(db) = db {
        for row in dout.chunks_exact(o) {
            for (b, x) in db.iter_mut().zip(row) {
                *b += x;
            }
        }
    }
}

pub const LN_EPS: f32 = 1e-5;

/// Returns per-row mean and reciprocal std via the output slices.
pub fn layernorm_fwd(out: &mut [f32], mean: &mut [f32], rstd: &mut [f32], inp: &[f32], g: &[f32], b: &[f32], c: usize) {
    for (r, (x, y)) in inp.chunks_exact(c).zip(out.chunks_exact_mut(c)).enumerate() {
        let m = x.iter().sum::<f32>() / c as f32;
        let v = x.iter().map(|&xi| (xi - m) * (xi - m)).sum::<f32>() / c as f32;
        let s = 1.0 / (v + LN_EPS).sqrt();
        for j in 0..c {
            y[j] = (x[j] - m) * s * g[j] + b[j];
        }
        mean[r] = m;
        rstd[r] = s;
    }
}

#[allow(clippy::too_many_arguments)]
pub fn layernorm_bwd(
    dinp: &mut [f32],
    mut dg: Option<&mut [f32]>,
    mut db: Option<&mut [f32]>,
    dout: &[f32],
    inp: &[f32],
    g: &[f32],
    mean: &[f32],
    rstd: &[f32],
    c: usize,
) {
    for r in 0..inp.len() / c {
        let x = &inp[r * c..(r + 1) * c];
        let dy = &dout[r * c..(r + 1) * c];
        let dx = &mut dinp[r * c..(r + 1) * c];
        let (m, s) = (mean[r], rstd[r]);
        let mut dnorm_mean = 0.0f32;
        let mut dnorm_norm_mean = 0.0f32;
        for j in 0..c {
            let norm = (x[j] - m) * s;
            let dnorm = g[j] * dy[j];
            dnorm_mean += dnorm;
            dnorm_norm_mean += dnorm * norm;
        }
        dnorm_mean /= c as f32;
        dnorm_norm_mean /= c as f32;
        for j in 0..c {
            let norm = (x[j] - m) * s;
            let dnorm = g[j] * dy[j];
            if let Some(db) = db.as_deref_mut() {
                db[j] += dy[j];
            }
            if let Some(dg) = dg.as_deref_mut() {
                dg[j] += norm * dy[j];
            }
            dx[j] += s * (dnorm - dnorm_mean - norm * dnorm_norm_mean);
        }
    }
}

const GELU_SCALE: f32 = 0.797_884_6; // sqrt(2/pi)

pub fn gelu_fwd(out: &mut [f32], inp: &[f32]) {
    for (y, &x) in out.iter_mut().zip(inp) {
        let cube = 0.044715 * x * x * x;
        *y = 0.5 * x * (1.0 + (GELU_SCALE * (x + cube)).tanh());
    }
}

pub fn gelu_bwd(dinp: &mut [f32], inp: &[f32], dout: &[f32]) {
    for ((dx, &x), &dy) in dinp.iter_mut().zip(inp).zip(dout) {
        let cube = 0.044715 * x * x * x;
        let arg = GELU_SCALE * (x + cube);
        let th = arg.tanh();
        let sech2 = 1.0 - th * th;
        let local = 0.5 * (1.0 + th) + x * 0.5 * sech2 * GELU_SCALE * (1.0 + 3.0 * 0.044715 * x * x);
        *dx += local * dy;
    }
}

/// Causal multi-head attention over a packed `qkv[T, 3C]`.
/// `att` holds the `[NH, T, T]` post-softmax weights.
pub fn attention_fwd(out: &mut [f32], att: &mut [f32], qkv: &[f32], t_len: usize, c: usize, nh: usize) {
    let hs = c / nh;
    let scale = 1.0 / (hs as f32).sqrt();
    let c3 = 3 * c;
    for h in 0..nh {
        for t in 0..t_len {
            let q = &qkv[t * c3 + h * hs..t * c3 + (h + 1) * hs];
            let a = &mut att[(h * t_len + t) * t_len..(h * t_len + t + 1) * t_len];
            let mut maxv = f32::NEG_INFINITY;
            for t2 in 0..=t {
                let k = &qkv[t2 * c3 + c + h * hs..t2 * c3 + c + (h + 1) * hs];
                let s = q.iter().zip(k).map(|(x, y)| x * y).sum::<f32>() * scale;
                a[t2] = s;
                maxv = maxv.max(s);
            }
            let mut sum = 0.0;
            for x in a[..=t].iter_mut() {
                *x = (*x - maxv).exp();
                sum += *x;
            }
            let inv = 1.0 / sum;
            for x in a[..=t].iter_mut() {
                *x *= inv;
            }
            a[t + 1..].fill(0.0);
            let o = &mut out[t * c + h * hs..t * c + (h + 1) * hs];
            o.fill(0.0);
            for t2 in 0..=t {
                let v = &qkv[t2 * c3 + 2 * c + h * hs..t2 * c3 + 2 * c + (h + 1) * hs];
                let w = a[t2];
                for (oi, vi) in o.iter_mut().zip(v) {
                    *oi += w * vi;
                }
            }
        }
    }
}

pub fn attention_bwd(dqkv: &mut [f32], dout: &[f32], qkv: &[f32], att: &[f32], t_len: usize, c: usize, nh: usize) {
    let hs = c / nh;
    let scale = 1.0 / (hs as f32).sqrt();
    let c3 = 3 * c;
    let mut datt = vec![0f32; t_len];
    for h in 0..nh {
        for t in 0..t_len {
            let a = &att[(h * t_len + t) * t_len..(h * t_len + t + 1) * t_len];
            let dy = &dout[t * c + h * hs..t * c + (h + 1) * hs];
            for t2 in 0..=t {
                let vo = t2 * c3 + 2 * c + h * hs;
                let v = &qkv[vo..vo + hs];
                datt[t2] = dy.iter().zip(v).map(|(x, y)| x * y).sum();
                let w = a[t2];
                for (dv, g) in dqkv[vo..vo + hs].iter_mut().zip(dy) {
                    *dv += w * g;
                }
            }
            let dot: f32 = (0..=t).map(|j| a[j] * datt[j]).sum();
            let qo = t * c3 + h * hs;
            for t2 in 0..=t {
                let dpre = a[t2] * (datt[t2] - dot) * scale;
                if dpre == 0.0 {
                    continue;
                }
                let ko = t2 * c3 + c + h * hs;
                for j in 0..hs {
                    let kj = qkv[ko + j];
                    let qj = qkv[qo + j];
                    dqkv[qo + j] += dpre * kj;
                    dqkv[ko + j] += dpre * qj;
                }
            }
        }
    }
}

/// In-place softmax; returns log of the normaliser (after max shift).
pub fn softmax_in_place(x: &mut [f32]) -> f32 {
    let m = x.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut s = 0.0f64;
    for v in x.iter_mut() {
        *v = (*v - m).exp();
        s += *v as f64;
    }
    let inv = (1.0 / s) as f32;
    for v in x.iter_mut() {
        *v *= inv;
    }
    m + (s as f32).ln()
}

/// `log softmax(x)[i]` computed in f64.
pub fn log_softmax_at(x: &[f32], i: usize) -> f64 {
    let m = x.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let s: f64 = x.iter().map(|&v| (v as f64 - m).exp()).sum();
    x[i] as f64 - m - s.ln()
}
