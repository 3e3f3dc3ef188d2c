//! Reference implementations written as plain loops over `Vec<f64>`, sharing
//! nothing with the library kernels beyond the parameter structs.

#![allow(dead_code)]

use coopfuse::cache::CoopTensor;
use coopfuse::mata::MhsaParams;
use coopfuse::nn::{LayerNorm, LN_EPS};
use coopfuse::rng::CounterRng;
use coopfuse::Tensor;

pub fn rand_tensor(shape: &[usize], rng: &mut CounterRng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.normal())
}

/// `max |a - b| / max(max |b|, tiny)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// MHSA parameters with random layer norms and enlarged attention weights so
/// that attention maps are far from uniform.
pub fn random_mhsa(c: usize, m: usize, dk: usize, ff: usize, rng: &mut CounterRng) -> MhsaParams {
    let mut p = MhsaParams::init(c, m, dk, ff, rng);
    for w in p.wq.iter_mut().chain(p.wk.iter_mut()) {
        *w = w.scale(25.0);
    }
    for w in p.wv.iter_mut() {
        *w = w.scale(10.0);
    }
    p.w_out = p.w_out.scale(10.0);
    p.mlp_w1 = p.mlp_w1.scale(20.0);
    p.mlp_w2 = p.mlp_w2.scale(20.0);
    p.mlp_b1 = rand_tensor(&[ff], rng).scale(0.1);
    p.mlp_b2 = rand_tensor(&[c], rng).scale(0.1);
    p.ln_in = LayerNorm { gamma: rand_tensor(&[c], rng).map(|v| 1.0 + 0.3 * v), beta: rand_tensor(&[c], rng).scale(0.2) };
    p.ln_ffn = LayerNorm { gamma: rand_tensor(&[c], rng).map(|v| 1.0 + 0.3 * v), beta: rand_tensor(&[c], rng).scale(0.2) };
    p
}

fn ln_vec(x: &[f64], ln: &LayerNorm) -> Vec<f64> {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - mu) * inv * ln.gamma.data()[i] + ln.beta.data()[i])
        .collect()
}

/// `x (len C)` times a row-major `C x K` matrix.
fn vecmat(x: &[f64], w: &Tensor) -> Vec<f64> {
    let k = w.shape()[1];
    let mut out = vec![0.0; k];
    for (i, xi) in x.iter().enumerate() {
        for j in 0..k {
            out[j] += xi * w.data()[i * k + j];
        }
    }
    out
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// One fusion step for a single query position, head by head.
///
/// `query` and `seq` are already layer-normed; `reference` is raw.
pub fn naive_fuse(query: &[f64], seq: &[Vec<f64>], reference: &[f64], p: &MhsaParams) -> Vec<f64> {
    let dk = p.head_dim;
    let mut cat = Vec::with_capacity(p.heads * dk);
    for h in 0..p.heads {
        let q = vecmat(query, &p.wq[h]);
        let ks: Vec<Vec<f64>> = seq.iter().map(|x| vecmat(x, &p.wk[h])).collect();
        let vs: Vec<Vec<f64>> = seq.iter().map(|x| vecmat(x, &p.wv[h])).collect();
        let scores: Vec<f64> = ks
            .iter()
            .map(|k| q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / (dk as f64).sqrt())
            .collect();
        let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        for d in 0..dk {
            cat.push(e.iter().zip(&vs).map(|(w, v)| w / z * v[d]).sum());
        }
    }
    let fused: Vec<f64> = vecmat(&cat, &p.w_out).iter().zip(reference).map(|(a, r)| a + r).collect();
    let normed = ln_vec(&fused, &p.ln_ffn);
    let hidden: Vec<f64> = vecmat(&normed, &p.mlp_w1)
        .iter()
        .zip(p.mlp_b1.data())
        .map(|(a, b)| gelu(a + b))
        .collect();
    let out = vecmat(&hidden, &p.mlp_w2);
    fused
        .iter()
        .zip(out.iter().zip(p.mlp_b2.data()))
        .map(|(f, (o, b))| f + o + b)
        .collect()
}

/// Inter-agent block, one `(t, pixel)` at a time. Returns `T x D x C` data.
pub fn naive_iat(coop: &CoopTensor, p: &MhsaParams) -> Vec<f64> {
    let s = coop.data.shape();
    let (n, t, d, c) = (s[0], s[1], s[2] * s[3], s[4]);
    let feat = |j: usize, tt: usize, px: usize| {
        let base = ((j * t + tt) * d + px) * c;
        coop.data.data()[base..base + c].to_vec()
    };
    let mut out = Vec::with_capacity(t * d * c);
    for tt in 0..t {
        for px in 0..d {
            let seq: Vec<Vec<f64>> = (0..n).map(|j| ln_vec(&feat(j, tt, px), &p.ln_in)).collect();
            let ego = coop.ego_index;
            out.extend(naive_fuse(&seq[ego], &seq, &feat(ego, tt, px), p));
        }
    }
    out
}

/// Temporal block over a `T x D x C` input. Returns `D x C` data.
pub fn naive_tat(x: &Tensor, p: &MhsaParams) -> Vec<f64> {
    let s = x.shape();
    let (t, d, c) = (s[0], s[1], s[2]);
    let feat = |tt: usize, px: usize| {
        let base = (tt * d + px) * c;
        x.data()[base..base + c].to_vec()
    };
    let mut out = Vec::with_capacity(d * c);
    for px in 0..d {
        let seq: Vec<Vec<f64>> = (0..t).map(|tt| ln_vec(&feat(tt, px), &p.ln_in)).collect();
        out.extend(naive_fuse(&seq[t - 1], &seq, &feat(t - 1, px), p));
    }
    out
}

/// Full 2-D attention over all `H*W` positions where every pair outside the
/// same row (`rows = true`) or column is masked out. Inputs `H x W x (M*Ch)`.
pub fn masked_full_attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize, ch: usize, scale: f64, rows: bool) -> Vec<f64> {
    let s = q.shape();
    let (h, w, c) = (s[0], s[1], s[2]);
    let at = |t: &Tensor, y: usize, x: usize, m: usize, i: usize| t.data()[(y * w + x) * c + m * ch + i];
    let mut out = vec![0.0; h * w * c];
    for m in 0..heads {
        for y in 0..h {
            for x in 0..w {
                let mut scores = Vec::with_capacity(h * w);
                for y2 in 0..h {
                    for x2 in 0..w {
                        let allowed = if rows { y2 == y } else { x2 == x };
                        let sc = if allowed {
                            (0..ch).map(|i| at(q, y, x, m, i) * at(k, y2, x2, m, i)).sum::<f64>() / scale
                        } else {
                            f64::NEG_INFINITY
                        };
                        scores.push(sc);
                    }
                }
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                for i in 0..ch {
                    let mut acc = 0.0;
                    for (idx, wgt) in e.iter().enumerate() {
                        if *wgt > 0.0 {
                            acc += wgt / z * at(v, idx / w, idx % w, m, i);
                        }
                    }
                    out[(y * w + x) * c + m * ch + i] = acc;
                }
            }
        }
    }
    out
}

/// Same-padded cross-correlation. `depthwise` kernels are `k x k x C x 1`,
/// dense ones `k x k x Cin x Cout`.
pub fn naive_conv(x: &Tensor, kernel: &Tensor, depthwise: bool) -> Vec<f64> {
    let s = x.shape();
    let (h, w, cin) = (s[0], s[1], s[2]);
    let ks = kernel.shape();
    let (kk, cout) = (ks[0], if depthwise { cin } else { ks[3] });
    let r = (kk / 2) as isize;
    let mut out = vec![0.0; h * w * cout];
    for y in 0..h {
        for xx in 0..w {
            for co in 0..cout {
                let mut acc = 0.0;
                for dy in 0..kk {
                    for dx in 0..kk {
                        let yy = y as isize + dy as isize - r;
                        let xs = xx as isize + dx as isize - r;
                        if yy < 0 || xs < 0 || yy >= h as isize || xs >= w as isize {
                            continue;
                        }
                        let base = (yy as usize * w + xs as usize) * cin;
                        if depthwise {
                            acc += x.data()[base + co] * kernel.data()[(dy * kk + dx) * cin + co];
                        } else {
                            for ci in 0..cin {
                                acc += x.data()[base + ci] * kernel.data()[((dy * kk + dx) * cin + ci) * cout + co];
                            }
                        }
                    }
                }
                out[(y * w + xx) * cout + co] = acc;
            }
        }
    }
    out
}
