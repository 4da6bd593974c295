//! Forward and backward passes of the tiny causal self-attention network.
//!
//! All parameters live in one flat `f64` slice addressed through [`Layout`].
//! The full-sequence forward keeps an activation trace for backprop; the
//! incremental [`DecodeState`] path reproduces the exact same arithmetic
//! position by position, so cached generation is bit-identical to re-running
//! the full forward at every step.

use super::ModelConfig;

pub(crate) const RMS_EPS: f64 = 1e-6;

const GELU_K: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_C: f64 = 0.044715;

#[derive(Debug, Clone)]
pub(crate) struct BlockOffsets {
    pub ln1_g: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub ln2_g: usize,
    pub fc1: usize,
    pub fc2: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub v: usize,
    pub d: usize,
    pub t: usize,
    pub blocks: usize,
    pub heads: usize,
    pub hd: usize,
    pub hidden: usize,
    pub wte: usize,
    pub wpe: usize,
    pub blk: Vec<BlockOffsets>,
    pub ln_f_g: usize,
    pub lm_head: usize,
    pub total: usize,
}

pub(crate) fn layout(cfg: &ModelConfig) -> Layout {
    let (v, d, t) = (cfg.vocab_size, cfg.embed_dim, cfg.context_len);
    let hidden = 4 * d;
    let mut off = 0;
    let mut advance = |len: usize| {
        let at = off;
        off += len;
        at
    };
    let wte = advance(v * d);
    let wpe = advance(t * d);
    let mut blk = Vec::with_capacity(cfg.block_count);
    for _ in 0..cfg.block_count {
        blk.push(BlockOffsets {
            ln1_g: advance(d),
            wq: advance(d * d),
            wk: advance(d * d),
            wv: advance(d * d),
            wo: advance(d * d),
            ln2_g: advance(d),
            fc1: advance(hidden * d),
            fc2: advance(d * hidden),
        });
    }
    let ln_f_g = advance(d);
    let lm_head = advance(v * d);
    Layout {
        v,
        d,
        t,
        blocks: cfg.block_count,
        heads: cfg.head_count,
        hd: d / cfg.head_count,
        hidden,
        wte,
        wpe,
        blk,
        ln_f_g,
        lm_head,
        total: off,
    }
}

/// Ordered (name, len) pairs matching [`layout`] offsets exactly.
pub(crate) fn segment_layout(cfg: &ModelConfig) -> Vec<(String, usize)> {
    let (v, d, t) = (cfg.vocab_size, cfg.embed_dim, cfg.context_len);
    let hidden = 4 * d;
    let mut segs = vec![("wte".to_string(), v * d), ("wpe".to_string(), t * d)];
    for b in 0..cfg.block_count {
        segs.push((format!("blk{b}.ln1.g"), d));
        segs.push((format!("blk{b}.attn.wq"), d * d));
        segs.push((format!("blk{b}.attn.wk"), d * d));
        segs.push((format!("blk{b}.attn.wv"), d * d));
        segs.push((format!("blk{b}.attn.wo"), d * d));
        segs.push((format!("blk{b}.ln2.g"), d));
        segs.push((format!("blk{b}.mlp.fc1"), hidden * d));
        segs.push((format!("blk{b}.mlp.fc2"), d * hidden));
    }
    segs.push(("ln_f.g".to_string(), d));
    segs.push(("lm_head".to_string(), v * d));
    segs
}

// Fixed-order 4-accumulator dot product. The summation order is identical on
// every call, which the bit-exact determinism contracts rely on.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// y = W x with W row-major (rows, cols).
#[inline]
fn matvec(w: &[f64], x: &[f64], y: &mut [f64], rows: usize, cols: usize) {
    for (o, yo) in y.iter_mut().enumerate().take(rows) {
        *yo = dot(&w[o * cols..(o + 1) * cols], x);
    }
}

/// dx += W^T dy, dW += dy x^T.
#[inline]
fn matvec_backward(
    w: &[f64],
    dw: &mut [f64],
    x: &[f64],
    dx: &mut [f64],
    dy: &[f64],
    rows: usize,
    cols: usize,
) {
    for o in 0..rows {
        let g = dy[o];
        if g != 0.0 {
            axpy(&mut dw[o * cols..(o + 1) * cols], g, x);
            axpy(dx, g, &w[o * cols..(o + 1) * cols]);
        }
    }
}

#[inline]
fn rmsnorm(x: &[f64], g: &[f64], out: &mut [f64]) -> f64 {
    let d = x.len();
    let rms = (dot(x, x) / d as f64 + RMS_EPS).sqrt();
    for i in 0..d {
        out[i] = g[i] * x[i] / rms;
    }
    rms
}

#[inline]
fn rmsnorm_backward(dy: &[f64], x: &[f64], g: &[f64], rms: f64, dx: &mut [f64], dg: &mut [f64]) {
    let d = x.len();
    let mut s = 0.0;
    for i in 0..d {
        s += dy[i] * g[i] * x[i];
    }
    let k = s / (d as f64 * rms * rms * rms);
    for i in 0..d {
        dx[i] += g[i] * dy[i] / rms - x[i] * k;
        dg[i] += dy[i] * x[i] / rms;
    }
}

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

#[inline]
fn gelu_prime(x: f64) -> f64 {
    let u = GELU_K * (x + GELU_C * x * x * x);
    let th = u.tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

#[derive(Debug, Default)]
pub(crate) struct BlockTrace {
    a_in: Vec<f64>,
    n1: Vec<f64>,
    rms1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>, // heads * t * t, lower-triangular rows
    mix: Vec<f64>,
    b_in: Vec<f64>,
    n2: Vec<f64>,
    rms2: Vec<f64>,
    u: Vec<f64>,
    gu: Vec<f64>,
}

#[derive(Debug, Default)]
pub(crate) struct Trace {
    t: usize,
    blocks: Vec<BlockTrace>,
    f_in: Vec<f64>,
    nf: Vec<f64>,
    rms_f: Vec<f64>,
}

/// Full-sequence forward. Returns per-position logits (t * v, row-major) and
/// the activation trace used by [`backward`].
pub(crate) fn forward(p: &[f64], lay: &Layout, ids: &[u32]) -> (Vec<f64>, Trace) {
    let t = ids.len();
    let (d, hd, heads, hidden) = (lay.d, lay.hd, lay.heads, lay.hidden);
    let scale = 1.0 / (hd as f64).sqrt();

    let mut x = vec![0.0; t * d];
    for (i, &id) in ids.iter().enumerate() {
        let wte = &p[lay.wte + id as usize * d..lay.wte + (id as usize + 1) * d];
        let wpe = &p[lay.wpe + i * d..lay.wpe + (i + 1) * d];
        for c in 0..d {
            x[i * d + c] = wte[c] + wpe[c];
        }
    }

    let mut trace = Trace {
        t,
        blocks: Vec::with_capacity(lay.blocks),
        ..Default::default()
    };

    for bo in &lay.blk {
        let mut bt = BlockTrace {
            a_in: x.clone(),
            n1: vec![0.0; t * d],
            rms1: vec![0.0; t],
            q: vec![0.0; t * d],
            k: vec![0.0; t * d],
            v: vec![0.0; t * d],
            probs: vec![0.0; heads * t * t],
            mix: vec![0.0; t * d],
            ..Default::default()
        };
        let g1 = &p[bo.ln1_g..bo.ln1_g + d];
        for i in 0..t {
            bt.rms1[i] = rmsnorm(&bt.a_in[i * d..(i + 1) * d], g1, &mut bt.n1[i * d..(i + 1) * d]);
            let n1 = &bt.n1[i * d..(i + 1) * d];
            matvec(&p[bo.wq..bo.wq + d * d], n1, &mut bt.q[i * d..(i + 1) * d], d, d);
            matvec(&p[bo.wk..bo.wk + d * d], n1, &mut bt.k[i * d..(i + 1) * d], d, d);
            matvec(&p[bo.wv..bo.wv + d * d], n1, &mut bt.v[i * d..(i + 1) * d], d, d);
        }
        for h in 0..heads {
            let hoff = h * hd;
            for i in 0..t {
                let q_i = &bt.q[i * d + hoff..i * d + hoff + hd];
                let row = &mut bt.probs[h * t * t + i * t..h * t * t + i * t + i + 1];
                let mut max = f64::NEG_INFINITY;
                for (j, r) in row.iter_mut().enumerate() {
                    *r = dot(q_i, &bt.k[j * d + hoff..j * d + hoff + hd]) * scale;
                    max = max.max(*r);
                }
                let mut sum = 0.0;
                for r in row.iter_mut() {
                    *r = (*r - max).exp();
                    sum += *r;
                }
                for r in row.iter_mut() {
                    *r /= sum;
                }
                let (head_rows, mix) = (&bt.probs[h * t * t + i * t..], &mut bt.mix);
                for j in 0..=i {
                    axpy(
                        &mut mix[i * d + hoff..i * d + hoff + hd],
                        head_rows[j],
                        &bt.v[j * d + hoff..j * d + hoff + hd],
                    );
                }
            }
        }
        bt.b_in = vec![0.0; t * d];
        for i in 0..t {
            let mut att = vec![0.0; d];
            matvec(&p[bo.wo..bo.wo + d * d], &bt.mix[i * d..(i + 1) * d], &mut att, d, d);
            for c in 0..d {
                bt.b_in[i * d + c] = bt.a_in[i * d + c] + att[c];
            }
        }
        bt.n2 = vec![0.0; t * d];
        bt.rms2 = vec![0.0; t];
        bt.u = vec![0.0; t * hidden];
        bt.gu = vec![0.0; t * hidden];
        let g2 = &p[bo.ln2_g..bo.ln2_g + d];
        for i in 0..t {
            bt.rms2[i] = rmsnorm(&bt.b_in[i * d..(i + 1) * d], g2, &mut bt.n2[i * d..(i + 1) * d]);
            matvec(
                &p[bo.fc1..bo.fc1 + hidden * d],
                &bt.n2[i * d..(i + 1) * d],
                &mut bt.u[i * hidden..(i + 1) * hidden],
                hidden,
                d,
            );
            for c in 0..hidden {
                bt.gu[i * hidden + c] = gelu(bt.u[i * hidden + c]);
            }
            let mut m = vec![0.0; d];
            matvec(
                &p[bo.fc2..bo.fc2 + d * hidden],
                &bt.gu[i * hidden..(i + 1) * hidden],
                &mut m,
                d,
                hidden,
            );
            for c in 0..d {
                x[i * d + c] = bt.b_in[i * d + c] + m[c];
            }
        }
        trace.blocks.push(bt);
    }

    trace.f_in = x;
    trace.nf = vec![0.0; t * d];
    trace.rms_f = vec![0.0; t];
    let gf = &p[lay.ln_f_g..lay.ln_f_g + d];
    let mut logits = vec![0.0; t * lay.v];
    for i in 0..t {
        trace.rms_f[i] = rmsnorm(
            &trace.f_in[i * d..(i + 1) * d],
            gf,
            &mut trace.nf[i * d..(i + 1) * d],
        );
        matvec(
            &p[lay.lm_head..lay.lm_head + lay.v * d],
            &trace.nf[i * d..(i + 1) * d],
            &mut logits[i * lay.v..(i + 1) * lay.v],
            lay.v,
            d,
        );
    }
    (logits, trace)
}

/// Accumulate dL/dp into `grad` given dL/dlogits. Positions with an all-zero
/// logit gradient row still flow through (their contribution is zero).
pub(crate) fn backward(
    p: &[f64],
    lay: &Layout,
    ids: &[u32],
    d_logits: &[f64],
    trace: &Trace,
    grad: &mut [f64],
) {
    let t = trace.t;
    let (d, hd, heads, hidden) = (lay.d, lay.hd, lay.heads, lay.hidden);
    let scale = 1.0 / (hd as f64).sqrt();

    // final norm + lm head
    let mut dx = vec![0.0; t * d];
    {
        let gf = &p[lay.ln_f_g..lay.ln_f_g + d];
        let mut d_nf = vec![0.0; t * d];
        for i in 0..t {
            let (head_w, head_g) = (
                &p[lay.lm_head..lay.lm_head + lay.v * d],
                &mut grad[lay.lm_head..lay.lm_head + lay.v * d],
            );
            matvec_backward(
                head_w,
                head_g,
                &trace.nf[i * d..(i + 1) * d],
                &mut d_nf[i * d..(i + 1) * d],
                &d_logits[i * lay.v..(i + 1) * lay.v],
                lay.v,
                d,
            );
        }
        for i in 0..t {
            rmsnorm_backward(
                &d_nf[i * d..(i + 1) * d],
                &trace.f_in[i * d..(i + 1) * d],
                gf,
                trace.rms_f[i],
                &mut dx[i * d..(i + 1) * d],
                &mut grad[lay.ln_f_g..lay.ln_f_g + d],
            );
        }
    }

    for (bo, bt) in lay.blk.iter().zip(&trace.blocks).rev() {
        // x_out = b_in + fc2(gelu(fc1(n2)))
        let mut d_b_in = dx.clone();
        let mut d_n1 = vec![0.0; t * d];
        {
            let mut d_gu = vec![0.0; hidden];
            let mut d_u = vec![0.0; hidden];
            let mut d_n2 = vec![0.0; t * d];
            for i in 0..t {
                d_gu.fill(0.0);
                {
                    let (w, g) = (
                        &p[bo.fc2..bo.fc2 + d * hidden],
                        &mut grad[bo.fc2..bo.fc2 + d * hidden],
                    );
                    matvec_backward(
                        w,
                        g,
                        &bt.gu[i * hidden..(i + 1) * hidden],
                        &mut d_gu,
                        &dx[i * d..(i + 1) * d],
                        d,
                        hidden,
                    );
                }
                for c in 0..hidden {
                    d_u[c] = d_gu[c] * gelu_prime(bt.u[i * hidden + c]);
                }
                let (w, g) = (
                    &p[bo.fc1..bo.fc1 + hidden * d],
                    &mut grad[bo.fc1..bo.fc1 + hidden * d],
                );
                matvec_backward(
                    w,
                    g,
                    &bt.n2[i * d..(i + 1) * d],
                    &mut d_n2[i * d..(i + 1) * d],
                    &d_u,
                    hidden,
                    d,
                );
            }
            let g2 = &p[bo.ln2_g..bo.ln2_g + d];
            for i in 0..t {
                rmsnorm_backward(
                    &d_n2[i * d..(i + 1) * d],
                    &bt.b_in[i * d..(i + 1) * d],
                    g2,
                    bt.rms2[i],
                    &mut d_b_in[i * d..(i + 1) * d],
                    &mut grad[bo.ln2_g..bo.ln2_g + d],
                );
            }
        }

        // b_in = a_in + wo(mix)
        let mut d_a_in = d_b_in.clone();
        let mut d_mix = vec![0.0; t * d];
        for i in 0..t {
            let (w, g) = (&p[bo.wo..bo.wo + d * d], &mut grad[bo.wo..bo.wo + d * d]);
            matvec_backward(
                w,
                g,
                &bt.mix[i * d..(i + 1) * d],
                &mut d_mix[i * d..(i + 1) * d],
                &d_b_in[i * d..(i + 1) * d],
                d,
                d,
            );
        }

        // attention
        let mut d_q = vec![0.0; t * d];
        let mut d_k = vec![0.0; t * d];
        let mut d_v = vec![0.0; t * d];
        for h in 0..heads {
            let hoff = h * hd;
            let mut d_row = vec![0.0; t];
            for i in 0..t {
                let d_mix_i = &d_mix[i * d + hoff..i * d + hoff + hd];
                let probs = &bt.probs[h * t * t + i * t..h * t * t + i * t + i + 1];
                let mut dot_pd = 0.0;
                for (j, &pj) in probs.iter().enumerate() {
                    axpy(&mut d_v[j * d + hoff..j * d + hoff + hd], pj, d_mix_i);
                    d_row[j] = dot(d_mix_i, &bt.v[j * d + hoff..j * d + hoff + hd]);
                    dot_pd += pj * d_row[j];
                }
                let q_i = &bt.q[i * d + hoff..i * d + hoff + hd];
                for (j, &pj) in probs.iter().enumerate() {
                    let ds = pj * (d_row[j] - dot_pd) * scale;
                    axpy(
                        &mut d_q[i * d + hoff..i * d + hoff + hd],
                        ds,
                        &bt.k[j * d + hoff..j * d + hoff + hd],
                    );
                    axpy(&mut d_k[j * d + hoff..j * d + hoff + hd], ds, q_i);
                }
            }
        }

        // q/k/v projections back to n1
        for i in 0..t {
            for (w_off, dy) in [(bo.wq, &d_q), (bo.wk, &d_k), (bo.wv, &d_v)] {
                let (w, g) = (&p[w_off..w_off + d * d], &mut grad[w_off..w_off + d * d]);
                matvec_backward(
                    w,
                    g,
                    &bt.n1[i * d..(i + 1) * d],
                    &mut d_n1[i * d..(i + 1) * d],
                    &dy[i * d..(i + 1) * d],
                    d,
                    d,
                );
            }
        }
        let g1 = &p[bo.ln1_g..bo.ln1_g + d];
        for i in 0..t {
            rmsnorm_backward(
                &d_n1[i * d..(i + 1) * d],
                &bt.a_in[i * d..(i + 1) * d],
                g1,
                bt.rms1[i],
                &mut d_a_in[i * d..(i + 1) * d],
                &mut grad[bo.ln1_g..bo.ln1_g + d],
            );
        }
        dx = d_a_in;
    }

    // embeddings
    for (i, &id) in ids.iter().enumerate().take(t) {
        axpy(
            &mut grad[lay.wte + id as usize * d..lay.wte + (id as usize + 1) * d],
            1.0,
            &dx[i * d..(i + 1) * d],
        );
        axpy(
            &mut grad[lay.wpe + i * d..lay.wpe + (i + 1) * d],
            1.0,
            &dx[i * d..(i + 1) * d],
        );
    }
}

/// Key/value cache for incremental decoding.
pub(crate) struct DecodeState {
    pos: usize,
    k_cache: Vec<Vec<f64>>, // per block, t * d
    v_cache: Vec<Vec<f64>>,
}

impl DecodeState {
    pub fn new(lay: &Layout) -> Self {
        Self {
            pos: 0,
            k_cache: vec![vec![0.0; lay.t * lay.d]; lay.blocks],
            v_cache: vec![vec![0.0; lay.t * lay.d]; lay.blocks],
        }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }
}

/// Advance the decode state by one token and return this position's logits.
/// Arithmetic matches the full forward exactly, term for term.
pub(crate) fn decode_step(p: &[f64], lay: &Layout, state: &mut DecodeState, id: u32) -> Vec<f64> {
    let (d, hd, heads, hidden) = (lay.d, lay.hd, lay.heads, lay.hidden);
    let scale = 1.0 / (hd as f64).sqrt();
    let i = state.pos;
    assert!(i < lay.t, "decode past context window");

    let mut x = vec![0.0; d];
    {
        let wte = &p[lay.wte + id as usize * d..lay.wte + (id as usize + 1) * d];
        let wpe = &p[lay.wpe + i * d..lay.wpe + (i + 1) * d];
        for c in 0..d {
            x[c] = wte[c] + wpe[c];
        }
    }

    let mut n1 = vec![0.0; d];
    let mut q = vec![0.0; d];
    let mut mix = vec![0.0; d];
    let mut att = vec![0.0; d];
    let mut n2 = vec![0.0; d];
    let mut u = vec![0.0; hidden];
    let mut gu = vec![0.0; hidden];
    let mut m = vec![0.0; d];

    for (b, bo) in lay.blk.iter().enumerate() {
        rmsnorm(&x, &p[bo.ln1_g..bo.ln1_g + d], &mut n1);
        matvec(&p[bo.wq..bo.wq + d * d], &n1, &mut q, d, d);
        {
            let kc = &mut state.k_cache[b][i * d..(i + 1) * d];
            matvec(&p[bo.wk..bo.wk + d * d], &n1, kc, d, d);
        }
        {
            let vc = &mut state.v_cache[b][i * d..(i + 1) * d];
            matvec(&p[bo.wv..bo.wv + d * d], &n1, vc, d, d);
        }
        mix.fill(0.0);
        for h in 0..heads {
            let hoff = h * hd;
            let q_i = &q[hoff..hoff + hd];
            let mut row = vec![0.0; i + 1];
            let mut max = f64::NEG_INFINITY;
            for (j, r) in row.iter_mut().enumerate() {
                *r = dot(q_i, &state.k_cache[b][j * d + hoff..j * d + hoff + hd]) * scale;
                max = max.max(*r);
            }
            let mut sum = 0.0;
            for r in row.iter_mut() {
                *r = (*r - max).exp();
                sum += *r;
            }
            for r in row.iter_mut() {
                *r /= sum;
            }
            for (j, &pj) in row.iter().enumerate() {
                axpy(
                    &mut mix[hoff..hoff + hd],
                    pj,
                    &state.v_cache[b][j * d + hoff..j * d + hoff + hd],
                );
            }
        }
        matvec(&p[bo.wo..bo.wo + d * d], &mix, &mut att, d, d);
        for c in 0..d {
            x[c] += att[c];
        }
        rmsnorm(&x, &p[bo.ln2_g..bo.ln2_g + d], &mut n2);
        matvec(&p[bo.fc1..bo.fc1 + hidden * d], &n2, &mut u, hidden, d);
        for c in 0..hidden {
            gu[c] = gelu(u[c]);
        }
        matvec(&p[bo.fc2..bo.fc2 + d * hidden], &gu, &mut m, d, hidden);
        for c in 0..d {
            x[c] += m[c];
        }
    }

    let mut nf = vec![0.0; d];
    rmsnorm(&x, &p[lay.ln_f_g..lay.ln_f_g + d], &mut nf);
    let mut logits = vec![0.0; lay.v];
    matvec(&p[lay.lm_head..lay.lm_head + lay.v * d], &nf, &mut logits, lay.v, d);
    state.pos += 1;
    logits
}
