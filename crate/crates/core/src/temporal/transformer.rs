//! Pre-norm Transformer encoder over the unmasked prefix of a sequence.
//!
//! Only real steps enter attention, so padded keys never receive weight.
//! The key projection has no bias: a per-query constant shift of the scores
//! leaves the softmax unchanged.

use std::ops::Range;

use rand::Rng;

use super::ops::{
    affine, affine_backward, gelu, gelu_grad, layer_norm, layer_norm_backward, pair_mut, softmax_in_place,
    LayerNormCache,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(super) struct TransformerShape {
    pub f: usize,
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff: usize,
    pub causal: bool,
}

#[derive(Debug, Clone)]
struct BlockLayout {
    ln1_g: Range<usize>,
    ln1_b: Range<usize>,
    wq: Range<usize>,
    bq: Range<usize>,
    wk: Range<usize>,
    wv: Range<usize>,
    bv: Range<usize>,
    wo: Range<usize>,
    bo: Range<usize>,
    ln2_g: Range<usize>,
    ln2_b: Range<usize>,
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
}

#[derive(Debug, Clone)]
pub(super) struct Layout {
    win: Range<usize>,
    bin: Range<usize>,
    blocks: Vec<BlockLayout>,
    lnf_g: Range<usize>,
    lnf_b: Range<usize>,
    len: usize,
}

impl TransformerShape {
    pub fn layout(&self) -> Layout {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let (d, ff) = (self.d, self.ff);
        let win = take(self.f * d);
        let bin = take(d);
        let blocks = (0..self.layers)
            .map(|_| BlockLayout {
                ln1_g: take(d),
                ln1_b: take(d),
                wq: take(d * d),
                bq: take(d),
                wk: take(d * d),
                wv: take(d * d),
                bv: take(d),
                wo: take(d * d),
                bo: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
                w1: take(d * ff),
                b1: take(ff),
                w2: take(ff * d),
                b2: take(d),
            })
            .collect();
        let lnf_g = take(d);
        let lnf_b = take(d);
        Layout {
            win,
            bin,
            blocks,
            lnf_g,
            lnf_b,
            len: at,
        }
    }

    pub fn len(&self) -> usize {
        self.layout().len
    }

    pub fn init<R: Rng>(&self, p: &mut [f64], rng: &mut R) {
        let l = self.layout();
        let mut uniform = |r: Range<usize>, fan_in: usize, p: &mut [f64]| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut p[r] {
                *v = rng.gen_range(-bound..bound);
            }
        };
        p.fill(0.0);
        uniform(l.win.clone(), self.f, p);
        for b in &l.blocks {
            for w in [&b.wq, &b.wk, &b.wv, &b.wo, &b.w1] {
                uniform(w.clone(), self.d, p);
            }
            uniform(b.w2.clone(), self.ff, p);
            p[b.ln1_g.clone()].fill(1.0);
            p[b.ln2_g.clone()].fill(1.0);
        }
        p[l.lnf_g.clone()].fill(1.0);
    }
}

/// Sinusoidal encoding of position `t`, width `d`.
pub fn positional_encoding(t: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|i| {
            let angle = t as f64 / 10000f64.powf((i - i % 2) as f64 / d as f64);
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

struct BlockCache {
    ln1: LayerNormCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `heads x len x len` attention weights (zero where disallowed).
    probs: Vec<f64>,
    ctx: Vec<f64>,
    ln2: LayerNormCache,
    b: Vec<f64>,
    pre1: Vec<f64>,
    act1: Vec<f64>,
}

pub(super) struct TransformerCache {
    len: usize,
    x: Vec<f64>,
    blocks: Vec<BlockCache>,
    lnf: LayerNormCache,
}

impl TransformerShape {
    fn visible(&self, t: usize, len: usize) -> usize {
        if self.causal {
            t + 1
        } else {
            len
        }
    }
}

/// Encodes `len` steps of `x` (`len x F`) into `len x D` states.
pub(super) fn forward(s: &TransformerShape, p: &[f64], x: &[f64]) -> (Vec<f64>, TransformerCache) {
    let l = s.layout();
    let (d, nh) = (s.d, s.heads);
    let dh = d / nh;
    let scale = 1.0 / (dh as f64).sqrt();
    let len = x.len() / s.f.max(1);

    let mut h = affine(x, &p[l.win.clone()], Some(&p[l.bin.clone()]), s.f, d);
    for t in 0..len {
        for (v, e) in h[t * d..(t + 1) * d].iter_mut().zip(positional_encoding(t, d)) {
            *v += e;
        }
    }
    let mut blocks = Vec::with_capacity(s.layers);
    for bl in &l.blocks {
        let (a, ln1) = layer_norm(&h, &p[bl.ln1_g.clone()], &p[bl.ln1_b.clone()]);
        let q = affine(&a, &p[bl.wq.clone()], Some(&p[bl.bq.clone()]), d, d);
        let k = affine(&a, &p[bl.wk.clone()], None, d, d);
        let v = affine(&a, &p[bl.wv.clone()], Some(&p[bl.bv.clone()]), d, d);
        let mut probs = vec![0.0; nh * len * len];
        let mut ctx = vec![0.0; len * d];
        for head in 0..nh {
            let cols = head * dh..(head + 1) * dh;
            for t in 0..len {
                let vis = s.visible(t, len);
                let row = &mut probs[(head * len + t) * len..(head * len + t) * len + vis];
                let qt = &q[t * d + cols.start..t * d + cols.end];
                for (sidx, r) in row.iter_mut().enumerate() {
                    let ks = &k[sidx * d + cols.start..sidx * d + cols.end];
                    *r = qt.iter().zip(ks).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                softmax_in_place(row);
                let out = &mut ctx[t * d + cols.start..t * d + cols.end];
                for (sidx, &w) in row.iter().enumerate() {
                    for (o, vv) in out.iter_mut().zip(&v[sidx * d + cols.start..sidx * d + cols.end]) {
                        *o += w * vv;
                    }
                }
            }
        }
        let attn = affine(&ctx, &p[bl.wo.clone()], Some(&p[bl.bo.clone()]), d, d);
        for (hv, av) in h.iter_mut().zip(&attn) {
            *hv += av;
        }
        let (b, ln2) = layer_norm(&h, &p[bl.ln2_g.clone()], &p[bl.ln2_b.clone()]);
        let pre1 = affine(&b, &p[bl.w1.clone()], Some(&p[bl.b1.clone()]), d, s.ff);
        let act1: Vec<f64> = pre1.iter().map(|&z| gelu(z)).collect();
        let out = affine(&act1, &p[bl.w2.clone()], Some(&p[bl.b2.clone()]), s.ff, d);
        for (hv, ov) in h.iter_mut().zip(&out) {
            *hv += ov;
        }
        blocks.push(BlockCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            ctx,
            ln2,
            b,
            pre1,
            act1,
        });
    }
    let (y, lnf) = layer_norm(&h, &p[l.lnf_g.clone()], &p[l.lnf_b.clone()]);
    (
        y,
        TransformerCache {
            len,
            x: x.to_vec(),
            blocks,
            lnf,
        },
    )
}

pub(super) fn backward(s: &TransformerShape, p: &[f64], cache: &TransformerCache, dy: &[f64], grad: &mut [f64]) {
    let l = s.layout();
    let (d, nh, len) = (s.d, s.heads, cache.len);
    let dh = d / nh;
    let scale = 1.0 / (dh as f64).sqrt();

    let (dg, db) = pair_mut(grad, l.lnf_g.clone(), l.lnf_b.clone());
    let mut dx = layer_norm_backward(&cache.lnf, &p[l.lnf_g.clone()], dy, dg, db);

    for (bl, c) in l.blocks.iter().zip(&cache.blocks).rev() {
        // feed-forward branch
        let (dw, db) = pair_mut(grad, bl.w2.clone(), bl.b2.clone());
        let mut dact = affine_backward(&c.act1, &p[bl.w2.clone()], &dx, s.ff, d, dw, Some(db));
        for (g, &z) in dact.iter_mut().zip(&c.pre1) {
            *g *= gelu_grad(z);
        }
        let (dw, db) = pair_mut(grad, bl.w1.clone(), bl.b1.clone());
        let db_in = affine_backward(&c.b, &p[bl.w1.clone()], &dact, d, s.ff, dw, Some(db));
        let (dg, dbeta) = pair_mut(grad, bl.ln2_g.clone(), bl.ln2_b.clone());
        for (g, v) in dx.iter_mut().zip(layer_norm_backward(&c.ln2, &p[bl.ln2_g.clone()], &db_in, dg, dbeta)) {
            *g += v;
        }

        // attention branch
        let (dw, db) = pair_mut(grad, bl.wo.clone(), bl.bo.clone());
        let dctx = affine_backward(&c.ctx, &p[bl.wo.clone()], &dx, d, d, dw, Some(db));
        let mut dq = vec![0.0; len * d];
        let mut dk = vec![0.0; len * d];
        let mut dv = vec![0.0; len * d];
        for head in 0..nh {
            let cols = head * dh..(head + 1) * dh;
            for t in 0..len {
                let vis = s.visible(t, len);
                let row = &c.probs[(head * len + t) * len..(head * len + t) * len + vis];
                let dct = &dctx[t * d + cols.start..t * d + cols.end];
                let dp: Vec<f64> = (0..vis)
                    .map(|si| {
                        let vs = &c.v[si * d + cols.start..si * d + cols.end];
                        dct.iter().zip(vs).map(|(a, b)| a * b).sum()
                    })
                    .collect();
                let dot: f64 = row.iter().zip(&dp).map(|(a, b)| a * b).sum();
                for si in 0..vis {
                    for (o, g) in dv[si * d + cols.start..si * d + cols.end].iter_mut().zip(dct) {
                        *o += row[si] * g;
                    }
                    let ds = row[si] * (dp[si] - dot) * scale;
                    for j in cols.clone() {
                        dq[t * d + j] += ds * c.k[si * d + j];
                        dk[si * d + j] += ds * c.q[t * d + j];
                    }
                }
            }
        }
        let (dw, db) = pair_mut(grad, bl.wq.clone(), bl.bq.clone());
        let mut da = affine_backward(&c.a, &p[bl.wq.clone()], &dq, d, d, dw, Some(db));
        let from_k = affine_backward(&c.a, &p[bl.wk.clone()], &dk, d, d, &mut grad[bl.wk.clone()], None);
        let (dw, db) = pair_mut(grad, bl.wv.clone(), bl.bv.clone());
        let from_v = affine_backward(&c.a, &p[bl.wv.clone()], &dv, d, d, dw, Some(db));
        for ((a, k), v) in da.iter_mut().zip(from_k).zip(from_v) {
            *a += k + v;
        }
        let (dg, dbeta) = pair_mut(grad, bl.ln1_g.clone(), bl.ln1_b.clone());
        for (g, v) in dx.iter_mut().zip(layer_norm_backward(&c.ln1, &p[bl.ln1_g.clone()], &da, dg, dbeta)) {
            *g += v;
        }
    }
    let (dw, db) = pair_mut(grad, l.win.clone(), l.bin.clone());
    affine_backward(&cache.x, &p[l.win.clone()], &dx, s.f, d, dw, Some(db));
}
