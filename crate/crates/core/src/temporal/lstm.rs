//! LSTM backbone, optionally time-aware: before each step the cell memory's
//! short-term part `tanh(c Wd + bd)` is discounted by `g(dt)`.

use std::ops::Range;

use rand::Rng;

use super::ops::{affine, affine_backward, sigmoid};
use super::Decay;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(super) struct LstmShape {
    pub f: usize,
    pub h: usize,
    pub time_aware: bool,
}

impl LstmShape {
    fn gates(&self) -> usize {
        4 * self.h
    }

    pub fn w(&self) -> Range<usize> {
        0..(self.f + self.h) * self.gates()
    }

    pub fn b(&self) -> Range<usize> {
        let s = self.w().end;
        s..s + self.gates()
    }

    pub fn wd(&self) -> Range<usize> {
        let s = self.b().end;
        s..s + if self.time_aware { self.h * self.h } else { 0 }
    }

    pub fn bd(&self) -> Range<usize> {
        let s = self.wd().end;
        s..s + if self.time_aware { self.h } else { 0 }
    }

    pub fn len(&self) -> usize {
        self.bd().end
    }

    /// Uniform `±1/sqrt(fan_in)` weights, zero biases except the forget
    /// gate's, which start at 1.
    pub fn init<R: Rng>(&self, p: &mut [f64], rng: &mut R) {
        let bound = 1.0 / ((self.f + self.h) as f64).sqrt();
        for v in &mut p[self.w()] {
            *v = rng.gen_range(-bound..bound);
        }
        let b = self.b();
        p[b.clone()].fill(0.0);
        p[b.start + self.h..b.start + 2 * self.h].fill(1.0);
        let bound = 1.0 / (self.h as f64).sqrt();
        for v in &mut p[self.wd()] {
            *v = rng.gen_range(-bound..bound);
        }
        p[self.bd()].fill(0.0);
    }
}

pub(super) struct LstmCache {
    len: usize,
    /// `[x_t, h_{t-1}]` per step.
    z: Vec<f64>,
    /// Activated gates `i, f, g, o` per step.
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    c_star: Vec<f64>,
    short: Vec<f64>,
    discount: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Runs the recurrence over `len` steps of `x` (`len x F`); returns the
/// hidden states (`len x H`).
pub(super) fn forward(s: &LstmShape, p: &[f64], x: &[f64], deltas: &[f64], decay: Decay) -> (Vec<f64>, LstmCache) {
    let (f, h) = (s.f, s.h);
    let len = x.len() / f.max(1);
    let mut hs = vec![0.0; len * h];
    let mut cache = LstmCache {
        len,
        z: vec![0.0; len * (f + h)],
        gates: vec![0.0; len * 4 * h],
        c_prev: vec![0.0; len * h],
        c_star: vec![0.0; len * h],
        short: vec![0.0; if s.time_aware { len * h } else { 0 }],
        discount: vec![1.0; len],
        tanh_c: vec![0.0; len * h],
    };
    let mut c = vec![0.0; h];
    let mut hprev = vec![0.0; h];
    for t in 0..len {
        cache.c_prev[t * h..(t + 1) * h].copy_from_slice(&c);
        let mut c_star = c.clone();
        if s.time_aware {
            let g = decay.apply(deltas[t]);
            cache.discount[t] = g;
            let short = affine(&c, &p[s.wd()], Some(&p[s.bd()]), h, h);
            for k in 0..h {
                let cs = short[k].tanh();
                cache.short[t * h + k] = cs;
                c_star[k] = c[k] + cs * (g - 1.0);
            }
        }
        cache.c_star[t * h..(t + 1) * h].copy_from_slice(&c_star);

        let z = &mut cache.z[t * (f + h)..(t + 1) * (f + h)];
        z[..f].copy_from_slice(&x[t * f..(t + 1) * f]);
        z[f..].copy_from_slice(&hprev);
        let pre = affine(z, &p[s.w()], Some(&p[s.b()]), f + h, 4 * h);
        let gates = &mut cache.gates[t * 4 * h..(t + 1) * 4 * h];
        for k in 0..h {
            let i = sigmoid(pre[k]);
            let fg = sigmoid(pre[h + k]);
            let g = pre[2 * h + k].tanh();
            let o = sigmoid(pre[3 * h + k]);
            gates[k] = i;
            gates[h + k] = fg;
            gates[2 * h + k] = g;
            gates[3 * h + k] = o;
            c[k] = fg * c_star[k] + i * g;
            let tc = c[k].tanh();
            cache.tanh_c[t * h + k] = tc;
            hprev[k] = o * tc;
        }
        hs[t * h..(t + 1) * h].copy_from_slice(&hprev);
    }
    (hs, cache)
}

/// Back-propagates `dh` (`len x H`, gradient w.r.t. each hidden state) and
/// accumulates parameter gradients into `grad`.
pub(super) fn backward(s: &LstmShape, p: &[f64], cache: &LstmCache, dh: &[f64], grad: &mut [f64]) {
    let (f, h) = (s.f, s.h);
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    for t in (0..cache.len).rev() {
        let gates = &cache.gates[t * 4 * h..(t + 1) * 4 * h];
        let mut dpre = vec![0.0; 4 * h];
        let mut dc_star = vec![0.0; h];
        for k in 0..h {
            let (i, fg, g, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
            let tc = cache.tanh_c[t * h + k];
            let dht = dh[t * h + k] + dh_next[k];
            let dc = dc_next[k] + dht * o * (1.0 - tc * tc);
            dpre[k] = dc * g * i * (1.0 - i);
            dpre[h + k] = dc * cache.c_star[t * h + k] * fg * (1.0 - fg);
            dpre[2 * h + k] = dc * i * (1.0 - g * g);
            dpre[3 * h + k] = dht * tc * o * (1.0 - o);
            dc_star[k] = dc * fg;
        }
        let (w, rest) = grad.split_at_mut(s.b().start);
        let dz = affine_backward(
            &cache.z[t * (f + h)..(t + 1) * (f + h)],
            &p[s.w()],
            &dpre,
            f + h,
            4 * h,
            &mut w[s.w()],
            Some(&mut rest[..4 * h]),
        );
        dh_next.copy_from_slice(&dz[f..]);

        if s.time_aware {
            let gm1 = cache.discount[t] - 1.0;
            let da: Vec<f64> = (0..h)
                .map(|k| {
                    let cs = cache.short[t * h + k];
                    dc_star[k] * gm1 * (1.0 - cs * cs)
                })
                .collect();
            let (head, tail) = grad.split_at_mut(s.bd().start);
            let dc_prev = affine_backward(
                &cache.c_prev[t * h..(t + 1) * h],
                &p[s.wd()],
                &da,
                h,
                h,
                &mut head[s.wd()],
                Some(&mut tail[..h]),
            );
            for k in 0..h {
                dc_next[k] = dc_star[k] + dc_prev[k];
            }
        } else {
            dc_next = dc_star;
        }
    }
}
