//! Dense row-major building blocks with hand-written backward passes.

use std::ops::Range;

pub(super) const LN_EPS: f64 = 1e-5;

/// `y = x W + b` for `rows` inputs of width `n_in`; `w` is `n_in x n_out`.
pub(super) fn affine(x: &[f64], w: &[f64], b: Option<&[f64]>, n_in: usize, n_out: usize) -> Vec<f64> {
    let rows = x.len() / n_in;
    let mut y = vec![0.0; rows * n_out];
    for (xr, yr) in x.chunks_exact(n_in).zip(y.chunks_exact_mut(n_out)) {
        if let Some(b) = b {
            yr.copy_from_slice(b);
        }
        for (xi, wr) in xr.iter().zip(w.chunks_exact(n_out)) {
            for (yo, wo) in yr.iter_mut().zip(wr) {
                *yo += xi * wo;
            }
        }
    }
    y
}

/// Accumulates `dW += x^T dy`, `db += sum(dy)` and returns `dy W^T`.
pub(super) fn affine_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    n_in: usize,
    n_out: usize,
    dw: &mut [f64],
    db: Option<&mut [f64]>,
) -> Vec<f64> {
    let mut dx = vec![0.0; x.len()];
    for ((xr, dyr), dxr) in x.chunks_exact(n_in).zip(dy.chunks_exact(n_out)).zip(dx.chunks_exact_mut(n_in)) {
        for ((xi, wr), (dwr, dxi)) in xr.iter().zip(w.chunks_exact(n_out)).zip(dw.chunks_exact_mut(n_out).zip(dxr)) {
            let mut acc = 0.0;
            for ((wo, dwo), dyo) in wr.iter().zip(dwr.iter_mut()).zip(dyr) {
                *dwo += xi * dyo;
                acc += wo * dyo;
            }
            *dxi = acc;
        }
    }
    if let Some(db) = db {
        for dyr in dy.chunks_exact(n_out) {
            for (b, d) in db.iter_mut().zip(dyr) {
                *b += d;
            }
        }
    }
    dx
}

/// Disjoint mutable views of two ranges with `a` ending before `b` starts.
pub(super) fn pair_mut(v: &mut [f64], a: Range<usize>, b: Range<usize>) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (head, tail) = v.split_at_mut(b.start);
    (&mut head[a], &mut tail[..b.len()])
}

pub(super) struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(super) fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64]) -> (Vec<f64>, LayerNormCache) {
    let d = gamma.len();
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(x.len() / d);
    for ((xr, yr), hr) in x.chunks_exact(d).zip(y.chunks_exact_mut(d)).zip(xhat.chunks_exact_mut(d)) {
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(is);
        for k in 0..d {
            hr[k] = (xr[k] - mean) * is;
            yr[k] = hr[k] * gamma[k] + beta[k];
        }
    }
    (y, LayerNormCache { xhat, inv_std })
}

pub(super) fn layer_norm_backward(
    cache: &LayerNormCache,
    gamma: &[f64],
    dy: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let d = gamma.len();
    let n = d as f64;
    let mut dx = vec![0.0; dy.len()];
    for (r, ((dyr, hr), dxr)) in dy
        .chunks_exact(d)
        .zip(cache.xhat.chunks_exact(d))
        .zip(dx.chunks_exact_mut(d))
        .enumerate()
    {
        let mut sum = 0.0;
        let mut sum_h = 0.0;
        for k in 0..d {
            dgamma[k] += dyr[k] * hr[k];
            dbeta[k] += dyr[k];
            let g = dyr[k] * gamma[k];
            sum += g;
            sum_h += g * hr[k];
        }
        let is = cache.inv_std[r];
        for k in 0..d {
            let g = dyr[k] * gamma[k];
            dxr[k] = is / n * (n * g - sum - hr[k] * sum_h);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub(super) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

pub(super) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

pub(super) fn sigmoid(x: f64) -> f64 {
    crate::stats::sigmoid(x)
}

pub(super) fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

/// Cross-entropy of `logits` against class `target`, with gradient
/// `softmax - onehot` scaled by `weight` written into `dlogits`.
pub(super) fn cross_entropy(logits: &[f64], target: usize, weight: f64, dlogits: &mut [f64]) -> f64 {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    for (k, (d, pk)) in dlogits.iter_mut().zip(&p).enumerate() {
        *d = weight * (pk - if k == target { 1.0 } else { 0.0 });
    }
    lse - logits[target]
}
