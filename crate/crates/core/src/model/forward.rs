use super::ModelParams;
use crate::error::{Error, Result};
use crate::linalg::{gemm, matmul, matmul_nt, matmul_tn_acc, MatMut, MatRef, Scalar};
use crate::seqbuild::IclSequence;

const LN_EPS: f64 = 1e-5;
const ROPE_BASE: f64 = 10_000.0;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

struct LnCache<S> {
    xhat: Vec<S>,
    rstd: Vec<S>,
}

struct LayerCache<S> {
    ln1: LnCache<S>,
    a: Vec<S>,
    q: Vec<S>,
    k: Vec<S>,
    v: Vec<S>,
    p: Vec<S>,
    o: Vec<S>,
    ln2: LnCache<S>,
    bn: Vec<S>,
    /// Pre-activation of the feed-forward layer.
    u: Vec<S>,
    /// `tanh` term of the GELU at each pre-activation.
    u_tanh: Vec<S>,
    gu: Vec<S>,
}

/// Activations kept for the backward pass.
pub struct ForwardCache<S> {
    t: usize,
    x0: Vec<S>,
    ln_in: Option<LnCache<S>>,
    cos: Vec<S>,
    sin: Vec<S>,
    layers: Vec<LayerCache<S>>,
    lnf: LnCache<S>,
    f: Vec<S>,
    logits: Vec<S>,
}

impl<S: Scalar> ForwardCache<S> {
    /// Readout logits, one per prediction token.
    pub fn logits(&self) -> &[S] {
        &self.logits
    }

    pub fn probabilities(&self) -> Vec<S> {
        self.logits.iter().map(|&z| sigmoid(z)).collect()
    }
}

fn sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}

/// Binary cross-entropy of a logit against a 0/1 target.
fn bce_with_logit<S: Scalar>(z: S, y: u8) -> S {
    let softplus = z.max(S::zero()) + (-z.abs()).exp().ln_1p();
    if y == 1 {
        softplus - z
    } else {
        softplus
    }
}

fn tanh<S: Scalar>(x: S) -> S {
    // libm's tanh dominates the profile; this form costs one exp
    let e = (x + x).exp();
    if e.is_infinite() {
        S::one()
    } else {
        S::one() - S::of(2.0) / (e + S::one())
    }
}

/// Returns `gelu(u)` and the inner `tanh`, which the backward pass reuses.
fn gelu<S: Scalar>(u: S) -> (S, S) {
    let c = S::of(GELU_C);
    let a = S::of(GELU_A);
    let th = tanh(c * (u + a * u * u * u));
    (S::of(0.5) * u * (S::one() + th), th)
}

fn gelu_grad<S: Scalar>(u: S, th: S) -> S {
    let c = S::of(GELU_C);
    let a = S::of(GELU_A);
    let half = S::of(0.5);
    half * (S::one() + th) + half * u * (S::one() - th * th) * c * (S::one() + S::of(3.0) * a * u * u)
}

fn layer_norm<S: Scalar>(x: &[S], dim: usize, g: &[S], b: &[S], out: &mut [S]) -> LnCache<S> {
    let rows = x.len() / dim;
    let mut xhat = vec![S::zero(); x.len()];
    let mut rstd = vec![S::zero(); rows];
    let n = S::of(dim as f64);
    for r in 0..rows {
        let row = &x[r * dim..(r + 1) * dim];
        let mean = row.iter().copied().sum::<S>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
        let rs = S::one() / (var + S::of(LN_EPS)).sqrt();
        rstd[r] = rs;
        for c in 0..dim {
            let xh = (row[c] - mean) * rs;
            xhat[r * dim + c] = xh;
            out[r * dim + c] = g[c] * xh + b[c];
        }
    }
    LnCache { xhat, rstd }
}

/// Accumulates parameter gradients into `dg`/`db` and the input gradient into `dx`.
fn layer_norm_backward<S: Scalar>(dy: &[S], cache: &LnCache<S>, g: &[S], dg: &mut [S], db: &mut [S], dx: &mut [S]) {
    let dim = g.len();
    let n = S::of(dim as f64);
    for (r, &rs) in cache.rstd.iter().enumerate() {
        let dyr = &dy[r * dim..(r + 1) * dim];
        let xh = &cache.xhat[r * dim..(r + 1) * dim];
        let mut sum = S::zero();
        let mut sum_xh = S::zero();
        for c in 0..dim {
            let d = dyr[c] * g[c];
            dg[c] = dg[c] + dyr[c] * xh[c];
            db[c] = db[c] + dyr[c];
            sum = sum + d;
            sum_xh = sum_xh + d * xh[c];
        }
        let (m1, m2) = (sum / n, sum_xh / n);
        for c in 0..dim {
            let d = dyr[c] * g[c];
            dx[r * dim + c] = dx[r * dim + c] + rs * (d - m1 - xh[c] * m2);
        }
    }
}

fn rope_tables<S: Scalar>(positions: &[u32], head_dim: usize) -> (Vec<S>, Vec<S>) {
    let half = head_dim / 2;
    let mut cos = Vec::with_capacity(positions.len() * half);
    let mut sin = Vec::with_capacity(positions.len() * half);
    for &p in positions {
        for i in 0..half {
            let freq = ROPE_BASE.powf(-((2 * i) as f64) / head_dim as f64);
            let angle = f64::from(p) * freq;
            cos.push(S::of(angle.cos()));
            sin.push(S::of(angle.sin()));
        }
    }
    (cos, sin)
}

/// Rotates interleaved pairs of every head in place; `inverse` applies the
/// transposed rotation.
fn rotate<S: Scalar>(x: &mut [S], d_model: usize, head_dim: usize, cos: &[S], sin: &[S], inverse: bool) {
    let half = head_dim / 2;
    for (r, row) in x.chunks_exact_mut(d_model).enumerate() {
        let (cr, sr) = (&cos[r * half..(r + 1) * half], &sin[r * half..(r + 1) * half]);
        for head in row.chunks_exact_mut(head_dim) {
            for i in 0..half {
                let (x0, x1) = (head[2 * i], head[2 * i + 1]);
                let s = if inverse { -sr[i] } else { sr[i] };
                head[2 * i] = x0 * cr[i] - x1 * s;
                head[2 * i + 1] = x0 * s + x1 * cr[i];
            }
        }
    }
}

fn masked_softmax<S: Scalar>(p: &mut [S], seq: &IclSequence) {
    let t = seq.len();
    for (i, row) in p.chunks_exact_mut(t).enumerate() {
        let allowed = seq.mask.row(i);
        let mut max = S::neg_infinity();
        for (v, &ok) in row.iter().zip(allowed) {
            if ok && *v > max {
                max = *v;
            }
        }
        let mut sum = S::zero();
        for (v, &ok) in row.iter_mut().zip(allowed) {
            *v = if ok { (*v - max).exp() } else { S::zero() };
            sum = sum + *v;
        }
        let inv = S::one() / sum;
        for v in row.iter_mut() {
            *v = *v * inv;
        }
    }
}

fn add_bias<S: Scalar>(x: &mut [S], bias: &[S]) {
    for row in x.chunks_exact_mut(bias.len()) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v = *v + b;
        }
    }
}

fn add_colsum<S: Scalar>(dst: &mut [S], x: &[S]) {
    for row in x.chunks_exact(dst.len()) {
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = *d + v;
        }
    }
}

fn all_finite<S: Scalar>(x: &[S]) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// Disjoint mutable views of two gradient ranges with `a < b`.
fn pair_mut<S>(grad: &mut [S], a: usize, b: usize, len: usize) -> (&mut [S], &mut [S]) {
    let (lo, hi) = grad.split_at_mut(b);
    (&mut lo[a..a + len], &mut hi[..len])
}

fn check_sequence<S: Scalar>(params: &ModelParams<S>, seq: &IclSequence) -> Result<()> {
    let cfg = &params.config;
    let t = seq.len();
    if seq.d != cfg.d_in {
        return Err(Error::DimensionMismatch { expected: cfg.d_in, got: seq.d });
    }
    if seq.tokens.len() != t * seq.d || seq.positions.len() != t || seq.mask.len() != t {
        return Err(Error::Shape(format!("inconsistent sequence of {t} tokens")));
    }
    if seq.predict_at.len() != seq.targets.len() || seq.predict_at.iter().any(|&i| i >= t) {
        return Err(Error::Shape("prediction indices or targets are inconsistent".into()));
    }
    if let Some(&p) = seq.positions.iter().max() {
        if p as usize >= cfg.max_positions {
            return Err(Error::LengthExtrapolation { requested: p as usize, trained: cfg.max_positions - 1 });
        }
    }
    for i in 0..t {
        if !seq.mask.row(i).iter().any(|&a| a) {
            return Err(Error::EmptyMaskRow { row: i });
        }
    }
    Ok(())
}

/// Runs the model and keeps every activation needed by [`backward`].
pub fn forward_cached<S: Scalar>(params: &ModelParams<S>, seq: &IclSequence) -> Result<ForwardCache<S>> {
    check_sequence(params, seq)?;
    let cfg = &params.config;
    let lay = &params.layout;
    let th = &params.theta;
    let (t, di, dm, dff, nh, dh) = (seq.len(), cfg.d_in, cfg.d_model, cfg.d_ff, cfg.n_heads, cfg.head_dim());

    let x: Vec<S> = seq.tokens.iter().map(|&v| S::of(f64::from(v))).collect();
    let (x0, ln_in) = match lay.ln_in {
        Some((g, b)) => {
            let mut out = vec![S::zero(); t * di];
            let cache = layer_norm(&x, di, &th[g..g + di], &th[b..b + di], &mut out);
            (out, Some(cache))
        }
        None => (x, None),
    };
    let mut h = vec![S::zero(); t * dm];
    matmul(&x0, &th[lay.w_in..lay.w_in + di * dm], &mut h, t, di, dm, false);
    add_bias(&mut h, &th[lay.b_in..lay.b_in + dm]);

    let (cos, sin) = rope_tables::<S>(&seq.positions, dh);
    let scale = S::one() / S::of(dh as f64).sqrt();
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for (l, off) in lay.layers.iter().enumerate() {
        let mut a = vec![S::zero(); t * dm];
        let ln1 = layer_norm(&h, dm, &th[off.ln1_g..off.ln1_g + dm], &th[off.ln1_b..off.ln1_b + dm], &mut a);
        let mut q = vec![S::zero(); t * dm];
        let mut k = vec![S::zero(); t * dm];
        let mut v = vec![S::zero(); t * dm];
        matmul(&a, &th[off.wq..off.wq + dm * dm], &mut q, t, dm, dm, false);
        matmul(&a, &th[off.wk..off.wk + dm * dm], &mut k, t, dm, dm, false);
        matmul(&a, &th[off.wv..off.wv + dm * dm], &mut v, t, dm, dm, false);
        rotate(&mut q, dm, dh, &cos, &sin, false);
        rotate(&mut k, dm, dh, &cos, &sin, false);

        let mut p = vec![S::zero(); nh * t * t];
        let mut o = vec![S::zero(); t * dm];
        for (hd, ph) in p.chunks_exact_mut(t * t).enumerate() {
            let c0 = hd * dh;
            gemm(
                MatRef::cols_of(&q, t, dm, c0, dh),
                MatRef::cols_of(&k, t, dm, c0, dh).t(),
                MatMut::new(ph, t, t),
                scale,
                false,
            );
            masked_softmax(ph, seq);
            gemm(
                MatRef::new(ph, t, t),
                MatRef::cols_of(&v, t, dm, c0, dh),
                MatMut::cols_of(&mut o, t, dm, c0, dh),
                S::one(),
                false,
            );
        }
        matmul(&o, &th[off.wo..off.wo + dm * dm], &mut h, t, dm, dm, true);
        add_bias(&mut h, &th[off.bo..off.bo + dm]);

        let mut bn = vec![S::zero(); t * dm];
        let ln2 = layer_norm(&h, dm, &th[off.ln2_g..off.ln2_g + dm], &th[off.ln2_b..off.ln2_b + dm], &mut bn);
        let mut u = vec![S::zero(); t * dff];
        matmul(&bn, &th[off.w1..off.w1 + dm * dff], &mut u, t, dm, dff, false);
        add_bias(&mut u, &th[off.b1..off.b1 + dff]);
        let mut gu = vec![S::zero(); t * dff];
        let mut u_tanh = vec![S::zero(); t * dff];
        for ((&x, g), th) in u.iter().zip(gu.iter_mut()).zip(u_tanh.iter_mut()) {
            (*g, *th) = gelu(x);
        }
        matmul(&gu, &th[off.w2..off.w2 + dff * dm], &mut h, t, dff, dm, true);
        add_bias(&mut h, &th[off.b2..off.b2 + dm]);
        if !all_finite(&h) {
            return Err(Error::NonFinite { layer: l });
        }
        layers.push(LayerCache { ln1, a, q, k, v, p, o, ln2, bn, u, u_tanh, gu });
    }

    let np = seq.predict_at.len();
    let mut rows = Vec::with_capacity(np * dm);
    for &i in &seq.predict_at {
        rows.extend_from_slice(&h[i * dm..(i + 1) * dm]);
    }
    let mut f = vec![S::zero(); np * dm];
    let lnf = layer_norm(&rows, dm, &th[lay.lnf_g..lay.lnf_g + dm], &th[lay.lnf_b..lay.lnf_b + dm], &mut f);
    let w_out = &th[lay.w_out..lay.w_out + dm];
    let b_out = th[lay.b_out];
    let logits: Vec<S> =
        f.chunks_exact(dm).map(|row| row.iter().zip(w_out).map(|(&a, &w)| a * w).sum::<S>() + b_out).collect();
    if !all_finite(&logits) {
        return Err(Error::NonFinite { layer: cfg.n_layers });
    }
    Ok(ForwardCache { t, x0, ln_in, cos, sin, layers, lnf, f, logits })
}

/// Probabilities at the prediction tokens.
pub fn forward<S: Scalar>(params: &ModelParams<S>, seq: &IclSequence) -> Result<Vec<S>> {
    Ok(forward_cached(params, seq)?.probabilities())
}

fn mean_loss<S: Scalar>(logits: &[S], targets: &[u8]) -> S {
    if logits.is_empty() {
        return S::zero();
    }
    let total: S = logits.iter().zip(targets).map(|(&z, &y)| bce_with_logit(z, y)).sum();
    total / S::of(logits.len() as f64)
}

/// Mean cross-entropy over the prediction tokens.
pub fn loss<S: Scalar>(params: &ModelParams<S>, seq: &IclSequence) -> Result<S> {
    let cache = forward_cached(params, seq)?;
    Ok(mean_loss(&cache.logits, &seq.targets))
}

/// Adds `weight` times the gradient of the sequence loss to `grad`.
pub fn backward<S: Scalar>(
    params: &ModelParams<S>,
    seq: &IclSequence,
    cache: &ForwardCache<S>,
    weight: S,
    grad: &mut [S],
) -> Result<()> {
    let cfg = &params.config;
    let lay = &params.layout;
    let th = &params.theta;
    assert_eq!(grad.len(), th.len(), "gradient buffer has the wrong length");
    let np = seq.predict_at.len();
    if np == 0 {
        return Ok(());
    }
    let (t, di, dm, dff, hd_dim) = (cache.t, cfg.d_in, cfg.d_model, cfg.d_ff, cfg.head_dim());
    let inv = weight / S::of(np as f64);

    let w_out = &th[lay.w_out..lay.w_out + dm];
    let mut df = vec![S::zero(); np * dm];
    for (j, (&z, &y)) in cache.logits.iter().zip(&seq.targets).enumerate() {
        let dz = (sigmoid(z) - S::of(f64::from(y))) * inv;
        grad[lay.b_out] = grad[lay.b_out] + dz;
        for c in 0..dm {
            grad[lay.w_out + c] = grad[lay.w_out + c] + dz * cache.f[j * dm + c];
            df[j * dm + c] = dz * w_out[c];
        }
    }
    let mut drows = vec![S::zero(); np * dm];
    {
        let (dg, db) = pair_mut(grad, lay.lnf_g, lay.lnf_b, dm);
        layer_norm_backward(&df, &cache.lnf, &th[lay.lnf_g..lay.lnf_g + dm], dg, db, &mut drows);
    }
    let mut dres = vec![S::zero(); t * dm];
    for (j, &i) in seq.predict_at.iter().enumerate() {
        for c in 0..dm {
            dres[i * dm + c] = dres[i * dm + c] + drows[j * dm + c];
        }
    }

    let scale = S::one() / S::of(hd_dim as f64).sqrt();
    let mut dgu = vec![S::zero(); t * dff];
    let mut dbn = vec![S::zero(); t * dm];
    let mut d_o = vec![S::zero(); t * dm];
    let mut dq = vec![S::zero(); t * dm];
    let mut dk = vec![S::zero(); t * dm];
    let mut dv = vec![S::zero(); t * dm];
    let mut da = vec![S::zero(); t * dm];
    let mut dp = vec![S::zero(); t * t];
    for (l, (off, c)) in lay.layers.iter().zip(&cache.layers).enumerate().rev() {
        // feed-forward sublayer
        matmul_nt(&dres, &th[off.w2..off.w2 + dff * dm], &mut dgu, t, dm, dff, false);
        matmul_tn_acc(&c.gu, &dres, &mut grad[off.w2..off.w2 + dff * dm], t, dff, dm);
        add_colsum(&mut grad[off.b2..off.b2 + dm], &dres);
        for ((d, &u), &th) in dgu.iter_mut().zip(&c.u).zip(&c.u_tanh) {
            *d = *d * gelu_grad(u, th);
        }
        matmul_tn_acc(&c.bn, &dgu, &mut grad[off.w1..off.w1 + dm * dff], t, dm, dff);
        add_colsum(&mut grad[off.b1..off.b1 + dff], &dgu);
        matmul_nt(&dgu, &th[off.w1..off.w1 + dm * dff], &mut dbn, t, dff, dm, false);
        {
            let (dg, db) = pair_mut(grad, off.ln2_g, off.ln2_b, dm);
            layer_norm_backward(&dbn, &c.ln2, &th[off.ln2_g..off.ln2_g + dm], dg, db, &mut dres);
        }

        // attention sublayer
        matmul_nt(&dres, &th[off.wo..off.wo + dm * dm], &mut d_o, t, dm, dm, false);
        matmul_tn_acc(&c.o, &dres, &mut grad[off.wo..off.wo + dm * dm], t, dm, dm);
        add_colsum(&mut grad[off.bo..off.bo + dm], &dres);
        for (hd, ph) in c.p.chunks_exact(t * t).enumerate() {
            let c0 = hd * hd_dim;
            gemm(
                MatRef::cols_of(&d_o, t, dm, c0, hd_dim),
                MatRef::cols_of(&c.v, t, dm, c0, hd_dim).t(),
                MatMut::new(&mut dp, t, t),
                S::one(),
                false,
            );
            gemm(
                MatRef::new(ph, t, t).t(),
                MatRef::cols_of(&d_o, t, dm, c0, hd_dim),
                MatMut::cols_of(&mut dv, t, dm, c0, hd_dim),
                S::one(),
                false,
            );
            for (prow, dprow) in ph.chunks_exact(t).zip(dp.chunks_exact_mut(t)) {
                let dot: S = prow.iter().zip(dprow.iter()).map(|(&a, &b)| a * b).sum();
                for (d, &pv) in dprow.iter_mut().zip(prow) {
                    *d = pv * (*d - dot);
                }
            }
            gemm(
                MatRef::new(&dp, t, t),
                MatRef::cols_of(&c.k, t, dm, c0, hd_dim),
                MatMut::cols_of(&mut dq, t, dm, c0, hd_dim),
                scale,
                false,
            );
            gemm(
                MatRef::new(&dp, t, t).t(),
                MatRef::cols_of(&c.q, t, dm, c0, hd_dim),
                MatMut::cols_of(&mut dk, t, dm, c0, hd_dim),
                scale,
                false,
            );
        }
        rotate(&mut dq, dm, hd_dim, &cache.cos, &cache.sin, true);
        rotate(&mut dk, dm, hd_dim, &cache.cos, &cache.sin, true);
        matmul_tn_acc(&c.a, &dq, &mut grad[off.wq..off.wq + dm * dm], t, dm, dm);
        matmul_tn_acc(&c.a, &dk, &mut grad[off.wk..off.wk + dm * dm], t, dm, dm);
        matmul_tn_acc(&c.a, &dv, &mut grad[off.wv..off.wv + dm * dm], t, dm, dm);
        matmul_nt(&dq, &th[off.wq..off.wq + dm * dm], &mut da, t, dm, dm, false);
        matmul_nt(&dk, &th[off.wk..off.wk + dm * dm], &mut da, t, dm, dm, true);
        matmul_nt(&dv, &th[off.wv..off.wv + dm * dm], &mut da, t, dm, dm, true);
        {
            let (dg, db) = pair_mut(grad, off.ln1_g, off.ln1_b, dm);
            layer_norm_backward(&da, &c.ln1, &th[off.ln1_g..off.ln1_g + dm], dg, db, &mut dres);
        }
        if !all_finite(&dres) {
            return Err(Error::NonFinite { layer: l });
        }
    }

    matmul_tn_acc(&cache.x0, &dres, &mut grad[lay.w_in..lay.w_in + di * dm], t, di, dm);
    add_colsum(&mut grad[lay.b_in..lay.b_in + dm], &dres);
    if let (Some((g, b)), Some(ln)) = (lay.ln_in, &cache.ln_in) {
        let mut dx0 = vec![S::zero(); t * di];
        matmul_nt(&dres, &th[lay.w_in..lay.w_in + di * dm], &mut dx0, t, dm, di, false);
        let mut dx = vec![S::zero(); t * di];
        let (dg, db) = pair_mut(grad, g, b, di);
        layer_norm_backward(&dx0, ln, &th[g..g + di], dg, db, &mut dx);
    }
    Ok(())
}

/// Loss of one sequence; adds `weight` times its gradient to `grad`.
pub fn loss_and_grad<S: Scalar>(params: &ModelParams<S>, seq: &IclSequence, weight: S, grad: &mut [S]) -> Result<S> {
    let cache = forward_cached(params, seq)?;
    backward(params, seq, &cache, weight, grad)?;
    Ok(mean_loss(&cache.logits, &seq.targets))
}
