//! Pre-norm transformer forward and backward passes, generic over the
//! float type so gradients can be checked in double precision.
//!
//! Tokens of every sequence in a batch are packed row-wise into one matrix
//! for the dense layers; attention runs per sequence and head.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, Range};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use super::{Layout, ModelConfig};
use crate::noise::KernelVariant;

pub trait Real: Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + Sum + AddAssign + 'static {
    /// `C = alpha A B + beta C` with explicit strides (matrixmultiply).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: usize,
        csa: usize,
        b: &[Self],
        rsb: usize,
        csb: usize,
        beta: Self,
        c: &mut [Self],
        rsc: usize,
    );
}

fn span(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

macro_rules! impl_real {
    ($t:ty, $f:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                rsa: usize,
                csa: usize,
                b: &[Self],
                rsb: usize,
                csb: usize,
                beta: Self,
                c: &mut [Self],
                rsc: usize,
            ) {
                assert!(span(m, k, rsa, csa) <= a.len(), "gemm: A out of bounds");
                assert!(span(k, n, rsb, csb) <= b.len(), "gemm: B out of bounds");
                assert!(span(m, n, rsc, 1) <= c.len(), "gemm: C out of bounds");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: the asserts above keep every strided access in bounds
                // and `c` is borrowed mutably, so it cannot alias `a` or `b`.
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        beta,
                        c.as_mut_ptr(),
                        rsc as isize,
                        1,
                    )
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

pub(crate) fn c<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("representable constant")
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044715;

/// One batch of token sequences, with per-sequence times when the model is
/// time conditioned.
pub struct Batch<'a> {
    pub ids: Vec<usize>,
    pub starts: Vec<Range<usize>>,
    pub times: Option<&'a [f64]>,
}

impl<'a> Batch<'a> {
    pub fn new(seqs: &[&[usize]], times: Option<&'a [f64]>) -> Self {
        let mut ids = Vec::new();
        let mut starts = Vec::with_capacity(seqs.len());
        for s in seqs {
            let begin = ids.len();
            ids.extend_from_slice(s);
            starts.push(begin..ids.len());
        }
        Self { ids, starts, times }
    }

    pub fn tokens(&self) -> usize {
        self.ids.len()
    }
}

struct LnCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

struct BlockCache<T> {
    ln1: LnCache<T>,
    a: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    attn: Vec<T>,
    ln2: LnCache<T>,
    b: Vec<T>,
    u: Vec<T>,
    g: Vec<T>,
}

pub struct Cache<T> {
    time_features: Vec<T>,
    blocks: Vec<BlockCache<T>>,
    lnf: LnCache<T>,
    lnf_out: Vec<T>,
    /// Log-probabilities, kept when the head is normalized.
    normalized: Option<Vec<T>>,
}

/// In-place log-softmax.
fn log_softmax<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
    for v in row {
        *v = *v - lse;
    }
}

fn layer_norm<T: Real>(x: &[T], g: &[T], b: &[T], e: usize, out: &mut [T]) -> LnCache<T> {
    let rows = x.len() / e;
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    let inv_e = c::<T>(1.0 / e as f64);
    for r in 0..rows {
        let row = &x[r * e..(r + 1) * e];
        let mean = row.iter().copied().sum::<T>() * inv_e;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_e;
        let rs = (var + c(LN_EPS)).sqrt().recip();
        rstd[r] = rs;
        for j in 0..e {
            let h = (row[j] - mean) * rs;
            xhat[r * e + j] = h;
            out[r * e + j] = h * g[j] + b[j];
        }
    }
    LnCache { xhat, rstd }
}

/// Accumulates `dg`, `db` and writes (or adds) `dx`.
fn layer_norm_backward<T: Real>(
    cache: &LnCache<T>,
    g: &[T],
    dy: &[T],
    e: usize,
    dg: &mut [T],
    db: &mut [T],
    dx: &mut [T],
) {
    let rows = dy.len() / e;
    let inv_e = c::<T>(1.0 / e as f64);
    let mut dxhat = vec![T::zero(); e];
    for r in 0..rows {
        let xh = &cache.xhat[r * e..(r + 1) * e];
        let dyr = &dy[r * e..(r + 1) * e];
        let mut mean_d = T::zero();
        let mut mean_dx = T::zero();
        for j in 0..e {
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
            dxhat[j] = dyr[j] * g[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xh[j];
        }
        mean_d = mean_d * inv_e;
        mean_dx = mean_dx * inv_e;
        for j in 0..e {
            dx[r * e + j] += cache.rstd[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
    }
}

/// `out = x W + b` for `x: rows x fan_in`, `W: fan_in x fan_out`.
fn linear<T: Real>(x: &[T], w: &[T], b: &[T], fan_in: usize, fan_out: usize, out: &mut [T]) {
    let rows = x.len() / fan_in;
    for r in 0..rows {
        out[r * fan_out..(r + 1) * fan_out].copy_from_slice(b);
    }
    T::gemm(rows, fan_in, fan_out, x, fan_in, 1, w, fan_out, 1, T::one(), out, fan_out);
}

/// Accumulates `dW += x^T dy`, `db += sum dy` and `dx += dy W^T`.
#[allow(clippy::too_many_arguments)]
fn linear_backward<T: Real>(
    x: &[T],
    w: &[T],
    dy: &[T],
    fan_in: usize,
    fan_out: usize,
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    let rows = x.len() / fan_in;
    T::gemm(fan_in, rows, fan_out, x, 1, fan_in, dy, fan_out, 1, T::one(), dw, fan_out);
    for r in 0..rows {
        for (d, &v) in db.iter_mut().zip(&dy[r * fan_out..(r + 1) * fan_out]) {
            *d += v;
        }
    }
    if let Some(dx) = dx {
        T::gemm(rows, fan_out, fan_in, dy, fan_out, 1, w, 1, fan_out, T::one(), dx, fan_in);
    }
}

fn gelu<T: Real>(u: T) -> T {
    let inner = c::<T>(GELU_C) * (u + c::<T>(GELU_K) * u * u * u);
    c::<T>(0.5) * u * (T::one() + inner.tanh())
}

fn gelu_grad<T: Real>(u: T) -> T {
    let inner = c::<T>(GELU_C) * (u + c::<T>(GELU_K) * u * u * u);
    let th = inner.tanh();
    let dinner = c::<T>(GELU_C) * (T::one() + c::<T>(3.0 * GELU_K) * u * u);
    c::<T>(0.5) * (T::one() + th) + c::<T>(0.5) * u * (T::one() - th * th) * dinner
}

fn time_features<T: Real>(freq: &[T], t: f64) -> Vec<T> {
    let half = freq.len();
    let tt: T = c(t);
    let mut f = vec![T::zero(); 2 * half];
    for k in 0..half {
        let arg = freq[k] * tt;
        f[k] = arg.sin();
        f[half + k] = arg.cos();
    }
    f
}

/// Time embedding added to every position: learned projection of
/// sinusoidal features with learnable frequencies.
pub(crate) fn time_embedding<T: Real>(layout: &Layout, params: &[T], t: f64) -> Vec<T> {
    let e = layout.config.embed_dim;
    let feat = time_features(&params[layout.time_freq.clone()], t);
    let mut out = vec![T::zero(); e];
    linear(&feat, &params[layout.time_w.clone()], &params[layout.time_b.clone()], e, e, &mut out);
    out
}

/// Raw outputs (`tokens x n`) and the activations needed for backward.
pub fn forward<T: Real>(layout: &Layout, params: &[T], batch: &Batch<'_>) -> (Vec<T>, Cache<T>) {
    let cfg: &ModelConfig = &layout.config;
    let (e, f, n, heads) = (cfg.embed_dim, cfg.feedforward_dim, cfg.alphabet_size, cfg.heads);
    let dh = e / heads;
    let tokens = batch.tokens();
    let p = |r: &Range<usize>| &params[r.clone()];

    let mut h = vec![T::zero(); tokens * e];
    let tok = p(&layout.tok_emb);
    let pos = p(&layout.pos_emb);
    let mut time_features_all = Vec::new();
    for (s, range) in batch.starts.iter().enumerate() {
        let te = if cfg.time_conditioned {
            let t = batch.times.expect("time-conditioned batch carries times")[s];
            time_features_all.extend(time_features(p(&layout.time_freq), t));
            Some(time_embedding(layout, params, t))
        } else {
            None
        };
        for (i, row) in range.clone().enumerate() {
            let x = batch.ids[row];
            for j in 0..e {
                let mut v = tok[x * e + j] + pos[i * e + j];
                if let Some(te) = &te {
                    v += te[j];
                }
                h[row * e + j] = v;
            }
        }
    }

    let scale = c::<T>(1.0 / (dh as f64).sqrt());
    let mut blocks = Vec::with_capacity(cfg.layers);
    for bl in &layout.blocks {
        let mut a = vec![T::zero(); tokens * e];
        let ln1 = layer_norm(&h, p(&bl.ln1_g), p(&bl.ln1_b), e, &mut a);
        let mut q = vec![T::zero(); tokens * e];
        let mut k = vec![T::zero(); tokens * e];
        let mut v = vec![T::zero(); tokens * e];
        linear(&a, p(&bl.wq), p(&bl.bq), e, e, &mut q);
        linear(&a, p(&bl.wk), p(&bl.bk), e, e, &mut k);
        linear(&a, p(&bl.wv), p(&bl.bv), e, e, &mut v);
        let prob_len: usize = batch.starts.iter().map(|r| r.len() * r.len()).sum::<usize>() * heads;
        let mut probs = vec![T::zero(); prob_len];
        let mut attn = vec![T::zero(); tokens * e];
        let mut po = 0;
        for range in &batch.starts {
            let (o, l) = (range.start, range.len());
            for hd in 0..heads {
                let col = o * e + hd * dh;
                let pr = &mut probs[po..po + l * l];
                // scores = Q K^T
                T::gemm(l, dh, l, &q[col..], e, 1, &k[col..], 1, e, T::zero(), pr, l);
                for r in 0..l {
                    let row = &mut pr[r * l..(r + 1) * l];
                    let mx = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x * scale));
                    let mut total = T::zero();
                    for x in row.iter_mut() {
                        *x = (*x * scale - mx).exp();
                        total += *x;
                    }
                    row.iter_mut().for_each(|x| *x = *x / total);
                }
                T::gemm(l, l, dh, pr, l, 1, &v[col..], e, 1, T::zero(), &mut attn[col..], e);
                po += l * l;
            }
        }
        let mut proj = vec![T::zero(); tokens * e];
        linear(&attn, p(&bl.wo), p(&bl.bo), e, e, &mut proj);
        h.iter_mut().zip(&proj).for_each(|(x, &y)| *x += y);

        let mut b = vec![T::zero(); tokens * e];
        let ln2 = layer_norm(&h, p(&bl.ln2_g), p(&bl.ln2_b), e, &mut b);
        let mut u = vec![T::zero(); tokens * f];
        linear(&b, p(&bl.w1), p(&bl.b1), e, f, &mut u);
        let g: Vec<T> = u.iter().map(|&x| gelu(x)).collect();
        let mut ff = vec![T::zero(); tokens * e];
        linear(&g, p(&bl.w2), p(&bl.b2), f, e, &mut ff);
        h.iter_mut().zip(&ff).for_each(|(x, &y)| *x += y);
        blocks.push(BlockCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            attn,
            ln2,
            b,
            u,
            g,
        });
    }
    let mut lnf_out = vec![T::zero(); tokens * e];
    let lnf = layer_norm(&h, p(&layout.lnf_g), p(&layout.lnf_b), e, &mut lnf_out);
    let mut out = vec![T::zero(); tokens * n];
    linear(&lnf_out, p(&layout.head_w), p(&layout.head_b), e, n, &mut out);
    // mask variant: residue columns are log-probabilities, the mask
    // token being the last column
    let normalized = (cfg.variant == KernelVariant::Mask).then(|| {
        for row in out.chunks_mut(n) {
            log_softmax(&mut row[..n - 1]);
        }
        out.clone()
    });
    (
        out,
        Cache {
            time_features: time_features_all,
            blocks,
            lnf,
            lnf_out,
            normalized,
        },
    )
}

/// Gradient of a scalar loss with respect to every parameter, given its
/// gradient `d_out` with respect to the raw outputs.
pub fn backward<T: Real>(layout: &Layout, params: &[T], batch: &Batch<'_>, cache: &Cache<T>, d_out: &[T]) -> Vec<T> {
    let cfg = &layout.config;
    let (e, f, n, heads) = (cfg.embed_dim, cfg.feedforward_dim, cfg.alphabet_size, cfg.heads);
    let dh = e / heads;
    let tokens = batch.tokens();
    let mut grad = vec![T::zero(); params.len()];
    let p = |r: &Range<usize>| &params[r.clone()];

    // Disjoint mutable views into `grad` for a set of tensors.
    macro_rules! grads {
        ($($r:expr),+) => {{
            let ranges = [$($r.clone()),+];
            split_ranges(&mut grad, &ranges)
        }};
    }

    let mut dh_buf = vec![T::zero(); tokens * e];
    {
        let [dw, db] = grads!(layout.head_w, layout.head_b);
        let mut dln = vec![T::zero(); tokens * e];
        let mut d_logits = d_out.to_vec();
        if let Some(outputs) = &cache.normalized {
            for (d, o) in d_logits.chunks_mut(n).zip(outputs.chunks(n)) {
                let total: T = d[..n - 1].iter().copied().sum();
                for (dj, &oj) in d[..n - 1].iter_mut().zip(&o[..n - 1]) {
                    *dj = *dj - oj.exp() * total;
                }
            }
        }
        linear_backward(&cache.lnf_out, p(&layout.head_w), &d_logits, e, n, dw, db, Some(&mut dln));
        let [dg, dbb] = grads!(layout.lnf_g, layout.lnf_b);
        layer_norm_backward(&cache.lnf, p(&layout.lnf_g), &dln, e, dg, dbb, &mut dh_buf);
    }

    let scale = c::<T>(1.0 / (dh as f64).sqrt());
    for (bl, bc) in layout.blocks.iter().zip(&cache.blocks).rev() {
        // feed-forward branch
        let mut dg_act = vec![T::zero(); tokens * f];
        {
            let [dw2, db2] = grads!(bl.w2, bl.b2);
            linear_backward(&bc.g, p(&bl.w2), &dh_buf, f, e, dw2, db2, Some(&mut dg_act));
        }
        let du: Vec<T> = dg_act.iter().zip(&bc.u).map(|(&d, &u)| d * gelu_grad(u)).collect();
        let mut db_in = vec![T::zero(); tokens * e];
        {
            let [dw1, db1] = grads!(bl.w1, bl.b1);
            linear_backward(&bc.b, p(&bl.w1), &du, e, f, dw1, db1, Some(&mut db_in));
            let [dg, dbb] = grads!(bl.ln2_g, bl.ln2_b);
            layer_norm_backward(&bc.ln2, p(&bl.ln2_g), &db_in, e, dg, dbb, &mut dh_buf);
        }

        // attention branch
        let mut dattn = vec![T::zero(); tokens * e];
        {
            let [dwo, dbo] = grads!(bl.wo, bl.bo);
            linear_backward(&bc.attn, p(&bl.wo), &dh_buf, e, e, dwo, dbo, Some(&mut dattn));
        }
        let mut dq = vec![T::zero(); tokens * e];
        let mut dk = vec![T::zero(); tokens * e];
        let mut dv = vec![T::zero(); tokens * e];
        let mut po = 0;
        let mut dp = Vec::new();
        for range in &batch.starts {
            let (o, l) = (range.start, range.len());
            dp.resize(l * l, T::zero());
            for hd in 0..heads {
                let col = o * e + hd * dh;
                let pr = &bc.probs[po..po + l * l];
                // dV = P^T dO
                T::gemm(l, l, dh, pr, 1, l, &dattn[col..], e, 1, T::one(), &mut dv[col..], e);
                // dP = dO V^T
                T::gemm(l, dh, l, &dattn[col..], e, 1, &bc.v[col..], 1, e, T::zero(), &mut dp, l);
                // softmax backward, with the 1/sqrt(dh) scale folded in
                for r in 0..l {
                    let prow = &pr[r * l..(r + 1) * l];
                    let drow = &mut dp[r * l..(r + 1) * l];
                    let dot: T = prow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum();
                    for (d, &pv) in drow.iter_mut().zip(prow) {
                        *d = pv * (*d - dot) * scale;
                    }
                }
                // dQ = dS K, dK = dS^T Q
                T::gemm(l, l, dh, &dp, l, 1, &bc.k[col..], e, 1, T::one(), &mut dq[col..], e);
                T::gemm(l, l, dh, &dp, 1, l, &bc.q[col..], e, 1, T::one(), &mut dk[col..], e);
                po += l * l;
            }
        }
        let mut da = vec![T::zero(); tokens * e];
        for (w, b, d) in [(&bl.wq, &bl.bq, &dq), (&bl.wk, &bl.bk, &dk), (&bl.wv, &bl.bv, &dv)] {
            let [dw, db] = grads!(w, b);
            linear_backward(&bc.a, p(w), d, e, e, dw, db, Some(&mut da));
        }
        let [dg, dbb] = grads!(bl.ln1_g, bl.ln1_b);
        layer_norm_backward(&bc.ln1, p(&bl.ln1_g), &da, e, dg, dbb, &mut dh_buf);
    }

    // embeddings
    {
        let [dtok, dpos] = grads!(layout.tok_emb, layout.pos_emb);
        for range in &batch.starts {
            for (i, row) in range.clone().enumerate() {
                let x = batch.ids[row];
                for j in 0..e {
                    let d = dh_buf[row * e + j];
                    dtok[x * e + j] += d;
                    dpos[i * e + j] += d;
                }
            }
        }
    }
    if cfg.time_conditioned {
        let half = e / 2;
        let times = batch.times.expect("time-conditioned batch carries times");
        let freq = p(&layout.time_freq);
        let [dfreq, dw, db] = grads!(layout.time_freq, layout.time_w, layout.time_b);
        for (s, range) in batch.starts.iter().enumerate() {
            let mut dte = vec![T::zero(); e];
            for row in range.clone() {
                for j in 0..e {
                    dte[j] += dh_buf[row * e + j];
                }
            }
            let feat = &cache.time_features[s * e..(s + 1) * e];
            let mut dfeat = vec![T::zero(); e];
            linear_backward(feat, p(&layout.time_w), &dte, e, e, dw, db, Some(&mut dfeat));
            let t: T = c(times[s]);
            for k in 0..half {
                let arg = freq[k] * t;
                dfreq[k] += dfeat[k] * t * arg.cos() - dfeat[half + k] * t * arg.sin();
            }
        }
    }
    grad
}

/// Split `buf` into mutable slices for pairwise disjoint ranges.
fn split_ranges<'a, T, const K: usize>(buf: &'a mut [T], ranges: &[Range<usize>; K]) -> [&'a mut [T]; K] {
    let mut order: Vec<usize> = (0..K).collect();
    order.sort_by_key(|&i| ranges[i].start);
    let mut slots: Vec<Option<&'a mut [T]>> = (0..K).map(|_| None).collect();
    let mut rest: &'a mut [T] = buf;
    let mut consumed = 0;
    for &i in &order {
        let r = &ranges[i];
        assert!(r.start >= consumed, "ranges overlap");
        let (_, tail) = std::mem::take(&mut rest).split_at_mut(r.start - consumed);
        let (mid, tail) = tail.split_at_mut(r.len());
        slots[i] = Some(mid);
        rest = tail;
        consumed = r.end;
    }
    slots
        .into_iter()
        .map(|s| s.expect("every range assigned"))
        .collect::<Vec<_>>()
        .try_into()
        .unwrap_or_else(|_| unreachable!())
}
