//! Differentiable layers with hand-written reverse-mode passes.
//!
//! Forward functions return whatever intermediate state the matching
//! backward needs; backward functions accumulate parameter gradients
//! into a [`Grads`] buffer and return input cotangents. Activations are
//! `tanh` throughout — smooth everywhere, so finite-difference checks
//! converge cleanly.

use super::params::{Grads, Params, TensorId};
use ndarray::{Array1, Array2, Axis, s};

/// `y = x·W + b` for row-major batches `x: (n, in)`.
pub fn linear(p: &Params, w: TensorId, b: TensorId, x: &Array2<f64>) -> Array2<f64> {
    x.dot(&p.view(w)) + &p.view(b)
}

/// Backward of [`linear`]: accumulates `dW += xᵀ·dy`, `db += Σ_rows dy`
/// and returns `dx = dy·Wᵀ`.
pub fn linear_bwd(
    p: &Params,
    w: TensorId,
    b: TensorId,
    x: &Array2<f64>,
    dy: &Array2<f64>,
    grads: &mut Grads,
) -> Array2<f64> {
    {
        let mut gw = p.grad_view(grads, w);
        gw += &x.t().dot(dy);
    }
    {
        let mut gb = p.grad_view(grads, b);
        let sums = dy.sum_axis(Axis(0));
        gb += &sums.insert_axis(Axis(0));
    }
    dy.dot(&p.view(w).t())
}

pub fn tanh(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(f64::tanh)
}

/// Backward of [`tanh`] given the forward *output* `y`.
pub fn tanh_bwd(y: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    dy * &y.mapv(|v| 1.0 - v * v)
}

/// Two-layer perceptron `linear → tanh → linear`.
#[derive(Debug, Clone, Copy)]
pub struct Mlp2 {
    pub w1: TensorId,
    pub b1: TensorId,
    pub w2: TensorId,
    pub b2: TensorId,
}

impl Mlp2 {
    pub fn alloc(
        p: &mut Params,
        prefix: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
        rng: &mut crate::geom::rng::Rng,
    ) -> Self {
        Mlp2 {
            w1: p.alloc_weight(&format!("{prefix}.w1"), d_in, d_hidden, rng),
            b1: p.alloc_bias(&format!("{prefix}.b1"), d_hidden),
            w2: p.alloc_weight(&format!("{prefix}.w2"), d_hidden, d_out, rng),
            b2: p.alloc_bias(&format!("{prefix}.b2"), d_out),
        }
    }
}

pub struct Mlp2Cache {
    pub x: Array2<f64>,
    pub h: Array2<f64>,
}

pub fn mlp2_fwd(p: &Params, m: &Mlp2, x: &Array2<f64>) -> (Array2<f64>, Mlp2Cache) {
    let h = tanh(&linear(p, m.w1, m.b1, x));
    let y = linear(p, m.w2, m.b2, &h);
    (
        y,
        Mlp2Cache {
            x: x.clone(),
            h,
        },
    )
}

pub fn mlp2_bwd(
    p: &Params,
    m: &Mlp2,
    cache: &Mlp2Cache,
    dy: &Array2<f64>,
    grads: &mut Grads,
) -> Array2<f64> {
    let dh = linear_bwd(p, m.w2, m.b2, &cache.h, dy, grads);
    let da = tanh_bwd(&cache.h, &dh);
    linear_bwd(p, m.w1, m.b1, &cache.x, &da, grads)
}

/// Three-layer perceptron `linear → tanh → linear → tanh → linear`.
#[derive(Debug, Clone, Copy)]
pub struct Mlp3 {
    pub w1: TensorId,
    pub b1: TensorId,
    pub w2: TensorId,
    pub b2: TensorId,
    pub w3: TensorId,
    pub b3: TensorId,
}

impl Mlp3 {
    #[allow(clippy::too_many_arguments)]
    pub fn alloc(
        p: &mut Params,
        prefix: &str,
        d_in: usize,
        d_h1: usize,
        d_h2: usize,
        d_out: usize,
        rng: &mut crate::geom::rng::Rng,
    ) -> Self {
        Mlp3 {
            w1: p.alloc_weight(&format!("{prefix}.w1"), d_in, d_h1, rng),
            b1: p.alloc_bias(&format!("{prefix}.b1"), d_h1),
            w2: p.alloc_weight(&format!("{prefix}.w2"), d_h1, d_h2, rng),
            b2: p.alloc_bias(&format!("{prefix}.b2"), d_h2),
            w3: p.alloc_weight(&format!("{prefix}.w3"), d_h2, d_out, rng),
            b3: p.alloc_bias(&format!("{prefix}.b3"), d_out),
        }
    }
}

pub struct Mlp3Cache {
    pub x: Array2<f64>,
    pub h1: Array2<f64>,
    pub h2: Array2<f64>,
}

pub fn mlp3_fwd(p: &Params, m: &Mlp3, x: &Array2<f64>) -> (Array2<f64>, Mlp3Cache) {
    let h1 = tanh(&linear(p, m.w1, m.b1, x));
    let h2 = tanh(&linear(p, m.w2, m.b2, &h1));
    let y = linear(p, m.w3, m.b3, &h2);
    (
        y,
        Mlp3Cache {
            x: x.clone(),
            h1,
            h2,
        },
    )
}

pub fn mlp3_bwd(
    p: &Params,
    m: &Mlp3,
    cache: &Mlp3Cache,
    dy: &Array2<f64>,
    grads: &mut Grads,
) -> Array2<f64> {
    let dh2 = linear_bwd(p, m.w3, m.b3, &cache.h2, dy, grads);
    let da2 = tanh_bwd(&cache.h2, &dh2);
    let dh1 = linear_bwd(p, m.w2, m.b2, &cache.h1, &da2, grads);
    let da1 = tanh_bwd(&cache.h1, &dh1);
    linear_bwd(p, m.w1, m.b1, &cache.x, &da1, grads)
}

pub const LN_EPS: f64 = 1e-5;

pub struct LnCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

/// Row-wise layer normalization with gain and bias rows.
pub fn layernorm_fwd(
    p: &Params,
    gain: TensorId,
    bias: TensorId,
    x: &Array2<f64>,
) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mean = x.mean_axis(Axis(1)).expect("non-empty rows");
    let mut xhat = x.clone();
    for (mut row, &m) in xhat.rows_mut().into_iter().zip(mean.iter()) {
        row -= m;
    }
    let var = xhat.mapv(|v| v * v).sum_axis(Axis(1)) / d;
    let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    for (mut row, &s) in xhat.rows_mut().into_iter().zip(inv_std.iter()) {
        row *= s;
    }
    let y = &xhat * &p.view(gain) + &p.view(bias);
    (y, LnCache { xhat, inv_std })
}

pub fn layernorm_bwd(
    p: &Params,
    gain: TensorId,
    bias: TensorId,
    cache: &LnCache,
    dy: &Array2<f64>,
    grads: &mut Grads,
) -> Array2<f64> {
    {
        let mut gg = p.grad_view(grads, gain);
        gg += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    {
        let mut gb = p.grad_view(grads, bias);
        gb += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    let dxhat = dy * &p.view(gain);
    let mean_dxhat = dxhat.mean_axis(Axis(1)).expect("non-empty rows");
    let mean_dxhat_xhat = (&dxhat * &cache.xhat)
        .mean_axis(Axis(1))
        .expect("non-empty rows");
    let mut dx = dxhat;
    for ((mut row, xhat_row), ((&m1, &m2), &istd)) in dx
        .rows_mut()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(mean_dxhat.iter().zip(mean_dxhat_xhat.iter()).zip(cache.inv_std.iter()))
    {
        for (v, &xh) in row.iter_mut().zip(xhat_row.iter()) {
            *v = istd * (*v - m1 - xh * m2);
        }
    }
    dx
}

/// Numerically stable row-wise softmax; `−∞` entries become exact
/// zeros.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    y
}

/// Backward of [`softmax_rows`] given the forward output `y`.
pub fn softmax_rows_bwd(y: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let dot = (y * dy).sum_axis(Axis(1));
    let mut dx = dy.clone();
    for ((mut row, yrow), &s) in dx
        .rows_mut()
        .into_iter()
        .zip(y.rows())
        .zip(dot.iter())
    {
        for (v, &yv) in row.iter_mut().zip(yrow.iter()) {
            *v = yv * (*v - s);
        }
    }
    dx
}

/// Projection tensors of one attention layer.
#[derive(Debug, Clone, Copy)]
pub struct AttnParams {
    pub wq: TensorId,
    pub bq: TensorId,
    pub wk: TensorId,
    pub bk: TensorId,
    pub wv: TensorId,
    pub bv: TensorId,
    pub wo: TensorId,
    pub bo: TensorId,
}

impl AttnParams {
    pub fn alloc(p: &mut Params, prefix: &str, d: usize, rng: &mut crate::geom::rng::Rng) -> Self {
        AttnParams {
            wq: p.alloc_weight(&format!("{prefix}.wq"), d, d, rng),
            bq: p.alloc_bias(&format!("{prefix}.bq"), d),
            wk: p.alloc_weight(&format!("{prefix}.wk"), d, d, rng),
            bk: p.alloc_bias(&format!("{prefix}.bk"), d),
            wv: p.alloc_weight(&format!("{prefix}.wv"), d, d, rng),
            bv: p.alloc_bias(&format!("{prefix}.bv"), d),
            wo: p.alloc_weight(&format!("{prefix}.wo"), d, d, rng),
            bo: p.alloc_bias(&format!("{prefix}.bo"), d),
        }
    }
}

pub struct AttnCache {
    pub x_q: Array2<f64>,
    pub x_kv: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Softmax output per head, `(n_q, n_kv)` each.
    pub probs: Vec<Array2<f64>>,
    pub concat: Array2<f64>,
}

/// Multi-head scaled dot-product attention. `mask`, when given, marks
/// which memory rows are attendable; masked rows receive exactly zero
/// attention weight. At least one row must be attendable.
pub fn attention_fwd(
    p: &Params,
    ap: &AttnParams,
    x_q: &Array2<f64>,
    x_kv: &Array2<f64>,
    n_heads: usize,
    mask: Option<&[bool]>,
) -> (Array2<f64>, AttnCache) {
    let d = x_q.ncols();
    debug_assert_eq!(d % n_heads, 0);
    if let Some(m) = mask {
        debug_assert_eq!(m.len(), x_kv.nrows());
        debug_assert!(m.iter().any(|&b| b), "attention mask excludes every row");
    }
    let dh = d / n_heads;
    let alpha = 1.0 / (dh as f64).sqrt();

    let q = linear(p, ap.wq, ap.bq, x_q);
    let k = linear(p, ap.wk, ap.bk, x_kv);
    let v = linear(p, ap.wv, ap.bv, x_kv);

    let mut concat = Array2::zeros((x_q.nrows(), d));
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let qh = q.slice(cols);
        let kh = k.slice(cols);
        let vh = v.slice(cols);
        let mut scores = qh.dot(&kh.t()) * alpha;
        if let Some(m) = mask {
            for (j, &keep) in m.iter().enumerate() {
                if !keep {
                    scores.column_mut(j).fill(f64::NEG_INFINITY);
                }
            }
        }
        let ph = softmax_rows(&scores);
        concat.slice_mut(cols).assign(&ph.dot(&vh));
        probs.push(ph);
    }
    let y = linear(p, ap.wo, ap.bo, &concat);
    (
        y,
        AttnCache {
            x_q: x_q.clone(),
            x_kv: x_kv.clone(),
            q,
            k,
            v,
            probs,
            concat,
        },
    )
}

/// Backward of [`attention_fwd`]; returns `(dx_q, dx_kv)`. For
/// self-attention (same input twice) the caller adds the two.
pub fn attention_bwd(
    p: &Params,
    ap: &AttnParams,
    cache: &AttnCache,
    n_heads: usize,
    dy: &Array2<f64>,
    grads: &mut Grads,
) -> (Array2<f64>, Array2<f64>) {
    let d = cache.q.ncols();
    let dh = d / n_heads;
    let alpha = 1.0 / (dh as f64).sqrt();

    let dconcat = linear_bwd(p, ap.wo, ap.bo, &cache.concat, dy, grads);

    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dk = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    for h in 0..n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let qh = cache.q.slice(cols);
        let kh = cache.k.slice(cols);
        let vh = cache.v.slice(cols);
        let ph = &cache.probs[h];
        let doh = dconcat.slice(cols);

        let dp = doh.dot(&vh.t());
        dv.slice_mut(cols).assign(&ph.t().dot(&doh));
        // Masked columns have p == 0 exactly, so ds vanishes there and
        // no gradient leaks through masked memory rows.
        let ds = softmax_rows_bwd(ph, &dp) * alpha;
        dq.slice_mut(cols).assign(&ds.dot(&kh));
        dk.slice_mut(cols).assign(&ds.t().dot(&qh));
    }

    let dx_q = linear_bwd(p, ap.wq, ap.bq, &cache.x_q, &dq, grads);
    let mut dx_kv = linear_bwd(p, ap.wk, ap.bk, &cache.x_kv, &dk, grads);
    dx_kv += &linear_bwd(p, ap.wv, ap.bv, &cache.x_kv, &dv, grads);
    (dx_q, dx_kv)
}

/// Max over consecutive blocks of `k` rows: `(n·k, f) → (n, f)`.
/// Returns the winning global row per output cell (first row wins
/// ties, deterministically).
pub fn blockmax_fwd(x: &Array2<f64>, k: usize) -> (Array2<f64>, Vec<usize>) {
    assert!(k > 0 && x.nrows() % k == 0, "rows must split into blocks of k");
    let n = x.nrows() / k;
    let f = x.ncols();
    let mut y = Array2::zeros((n, f));
    let mut argmax = vec![0usize; n * f];
    for g in 0..n {
        for c in 0..f {
            let mut best = f64::NEG_INFINITY;
            let mut best_row = g * k;
            for r in g * k..(g + 1) * k {
                let v = x[[r, c]];
                if v > best {
                    best = v;
                    best_row = r;
                }
            }
            y[[g, c]] = best;
            argmax[g * f + c] = best_row;
        }
    }
    (y, argmax)
}

pub fn blockmax_bwd(argmax: &[usize], n_rows_in: usize, dy: &Array2<f64>) -> Array2<f64> {
    let f = dy.ncols();
    let mut dx = Array2::zeros((n_rows_in, f));
    for g in 0..dy.nrows() {
        for c in 0..f {
            dx[[argmax[g * f + c], c]] += dy[[g, c]];
        }
    }
    dx
}

/// Column-wise max over all rows (optionally restricted to masked-in
/// rows): `(n, f) → (1, f)` plus winning rows.
pub fn rowmax_fwd(x: &Array2<f64>, mask: Option<&[bool]>) -> (Array2<f64>, Vec<usize>) {
    let f = x.ncols();
    let mut y = Array2::zeros((1, f));
    let mut argmax = vec![0usize; f];
    for c in 0..f {
        let mut best = f64::NEG_INFINITY;
        let mut best_row = usize::MAX;
        for r in 0..x.nrows() {
            if let Some(m) = mask {
                if !m[r] {
                    continue;
                }
            }
            let v = x[[r, c]];
            if v > best {
                best = v;
                best_row = r;
            }
        }
        assert!(best_row != usize::MAX, "max-pool over zero rows");
        y[[0, c]] = best;
        argmax[c] = best_row;
    }
    (y, argmax)
}

pub fn rowmax_bwd(argmax: &[usize], n_rows_in: usize, dy: &Array2<f64>) -> Array2<f64> {
    let f = dy.ncols();
    let mut dx = Array2::zeros((n_rows_in, f));
    for c in 0..f {
        dx[[argmax[c], c]] += dy[[0, c]];
    }
    dx
}
