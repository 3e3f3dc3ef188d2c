//! Multi-agent and temporal aggregation.
//!
//! Both blocks use the same fusion step: per-head scaled dot-product
//! attention of a single query position against `L` keys, head concatenation,
//! output projection, a residual onto an un-normalized reference, and a
//! pre-norm MLP with its own residual. The inter-agent block attends over the
//! `N` agents at every `(t, pixel)`, querying with the ego feature; the
//! temporal block attends over the `T` frames at every pixel, querying with
//! the current frame. No positional or agent encoding is added, so both are
//! invariant to joint reordering of their keys and values.

use crate::cache::CoopTensor;
use crate::error::{dim_err, Result};
use crate::nn::{gaussian, gelu, LayerNorm};
use crate::rng::CounterRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct MhsaParams {
    pub heads: usize,
    pub head_dim: usize,
    /// Per-head `C x d_k` projections.
    pub wq: Vec<Tensor>,
    pub wk: Vec<Tensor>,
    pub wv: Vec<Tensor>,
    /// `(M * d_k) x C`
    pub w_out: Tensor,
    /// Applied to the input sequence before projection.
    pub ln_in: LayerNorm,
    /// Applied before the MLP.
    pub ln_ffn: LayerNorm,
    pub mlp_w1: Tensor,
    pub mlp_b1: Tensor,
    pub mlp_w2: Tensor,
    pub mlp_b2: Tensor,
}

impl MhsaParams {
    /// Gaussian weights (std 0.02), zero biases, identity layer norms.
    pub fn init(channels: usize, heads: usize, head_dim: usize, ff_dim: usize, rng: &mut CounterRng) -> Self {
        let proj = |rng: &mut CounterRng| (0..heads).map(|_| gaussian(&[channels, head_dim], rng)).collect();
        let wq = proj(rng);
        let wk = proj(rng);
        let wv = proj(rng);
        Self {
            heads,
            head_dim,
            wq,
            wk,
            wv,
            w_out: gaussian(&[heads * head_dim, channels], rng),
            ln_in: LayerNorm::identity(channels),
            ln_ffn: LayerNorm::identity(channels),
            mlp_w1: gaussian(&[channels, ff_dim], rng),
            mlp_b1: Tensor::zeros(&[ff_dim]),
            mlp_w2: gaussian(&[ff_dim, channels], rng),
            mlp_b2: Tensor::zeros(&[channels]),
        }
    }

    pub fn channels(&self) -> usize {
        self.w_out.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        let (m, dk, c) = (self.heads, self.head_dim, self.channels());
        let heads_ok = [&self.wq, &self.wk, &self.wv]
            .iter()
            .all(|ws| ws.len() == m && ws.iter().all(|w| w.shape() == [c, dk]));
        let ff = self.mlp_w1.shape().get(1).copied().unwrap_or(0);
        let ok = m >= 1
            && dk >= 1
            && heads_ok
            && self.w_out.shape() == [m * dk, c]
            && self.ln_in.gamma.numel() == c
            && self.ln_ffn.gamma.numel() == c
            && self.mlp_w1.shape() == [c, ff]
            && self.mlp_b1.numel() == ff
            && self.mlp_w2.shape() == [ff, c]
            && self.mlp_b2.numel() == c;
        if !ok {
            return dim_err(format!("inconsistent MHSA parameters for M={m}, d_k={dk}, C={c}"));
        }
        Ok(())
    }

    /// Two-layer GELU MLP over the last axis.
    fn mlp(&self, x: &Tensor) -> Result<Tensor> {
        let h = x.matmul(&self.mlp_w1)?.add(&self.mlp_b1)?.map(gelu);
        h.matmul(&self.mlp_w2)?.add(&self.mlp_b2)
    }

    fn project(&self, x: &Tensor, w: &[Tensor]) -> Result<Vec<Tensor>> {
        w.iter().map(|wm| x.matmul(wm)).collect()
    }
}

/// Inter-agent and temporal outputs of the cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct MataOutput {
    /// `T x D x C`
    pub inter_agent: Tensor,
    /// `D x C`
    pub unified: Tensor,
}

/// `softmax(Q K^T / sqrt(d_k))` over the last axis.
pub fn attention_weights(q: &Tensor, k: &Tensor, head_dim: usize) -> Result<Tensor> {
    let r = k.rank();
    let scores = q.matmul(&k.transpose(r - 2, r - 1)?)?;
    scores.scale(1.0 / (head_dim as f64).sqrt()).softmax(r - 1)
}

/// Fuses per-head queries `(.. x 1 x d_k)` against keys/values
/// `(.. x L x d_k)` and adds the result onto `reference` (`.. x C`).
pub fn mhsa_fuse(q: &[Tensor], k: &[Tensor], v: &[Tensor], reference: &Tensor, params: &MhsaParams) -> Result<Tensor> {
    params.validate()?;
    let m = params.heads;
    if q.len() != m || k.len() != m || v.len() != m {
        return dim_err(format!(
            "expected {m} heads, got q={} k={} v={}",
            q.len(),
            k.len(),
            v.len()
        ));
    }
    let heads: Vec<Tensor> = (0..m)
        .map(|h| attention_weights(&q[h], &k[h], params.head_dim)?.matmul(&v[h]))
        .collect::<Result<_>>()?;
    let refs: Vec<&Tensor> = heads.iter().collect();
    let cat = Tensor::concat(&refs, heads[0].rank() - 1)?;
    let projected = cat.matmul(&params.w_out)?;
    let squeezed = projected.squeeze(projected.rank() - 2)?;
    if squeezed.shape() != reference.shape() {
        return dim_err(format!(
            "fused shape {:?} does not match reference {:?}",
            squeezed.shape(),
            reference.shape()
        ));
    }
    let fused = squeezed.add(reference)?;
    let refined = params.mlp(&params.ln_ffn.forward(&fused)?)?;
    fused.add(&refined)
}

/// Inter-agent block: `N x T x H x W x C` to `T x (H*W) x C`.
pub fn iat(coop: &CoopTensor, params: &MhsaParams) -> Result<Tensor> {
    let s = coop.data.shape();
    if s.len() != 5 || coop.ego_index >= s[0] {
        return dim_err(format!("bad cooperative tensor {s:?} with ego {}", coop.ego_index));
    }
    let (n, t, d, c) = (s[0], s[1], s[2] * s[3], s[4]);
    let seq = coop.data.reshape(&[n, t, d, c])?;
    let normed = params.ln_in.forward(&seq)?;
    let ego_normed = normed.select(0, coop.ego_index)?;
    let ego_raw = seq.select(0, coop.ego_index)?;
    let dk = params.head_dim;
    let q = params
        .project(&ego_normed, &params.wq)?
        .into_iter()
        .map(|x| x.reshape(&[t, d, 1, dk]))
        .collect::<Result<Vec<_>>>()?;
    let to_kv = |x: Tensor| x.permute(&[1, 2, 0, 3]);
    let k = params.project(&normed, &params.wk)?.into_iter().map(to_kv).collect::<Result<Vec<_>>>()?;
    let v = params.project(&normed, &params.wv)?.into_iter().map(to_kv).collect::<Result<Vec<_>>>()?;
    mhsa_fuse(&q, &k, &v, &ego_raw, params)
}

/// Temporal block: `T x D x C` to `D x C`, the last frame being current.
pub fn tat(inter_agent: &Tensor, params: &MhsaParams) -> Result<Tensor> {
    let s = inter_agent.shape();
    if s.len() != 3 {
        return dim_err(format!("temporal block expects T x D x C, got {s:?}"));
    }
    let (t, d) = (s[0], s[1]);
    let normed = params.ln_in.forward(inter_agent)?;
    let current = normed.select(0, t - 1)?;
    let reference = inter_agent.select(0, t - 1)?;
    let dk = params.head_dim;
    let q = params
        .project(&current, &params.wq)?
        .into_iter()
        .map(|x| x.reshape(&[d, 1, dk]))
        .collect::<Result<Vec<_>>>()?;
    let to_kv = |x: Tensor| x.permute(&[1, 0, 2]);
    let k = params.project(&normed, &params.wk)?.into_iter().map(to_kv).collect::<Result<Vec<_>>>()?;
    let v = params.project(&normed, &params.wv)?.into_iter().map(to_kv).collect::<Result<Vec<_>>>()?;
    mhsa_fuse(&q, &k, &v, &reference, params)
}

pub fn mata_forward(coop: &CoopTensor, iat_params: &MhsaParams, tat_params: &MhsaParams) -> Result<MataOutput> {
    let inter_agent = iat(coop, iat_params)?;
    let unified = tat(&inter_agent, tat_params)?;
    Ok(MataOutput { inter_agent, unified })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand(shape: &[usize], seed: u64) -> Tensor {
        let mut r = CounterRng::new(seed);
        Tensor::from_fn(shape, |_| r.normal())
    }

    fn params(c: usize, m: usize, seed: u64) -> MhsaParams {
        let mut p = MhsaParams::init(c, m, c / m, 2 * c, &mut CounterRng::new(seed));
        // larger weights than the default init so attention is far from uniform
        for w in p.wq.iter_mut().chain(p.wk.iter_mut()) {
            *w = w.scale(30.0);
        }
        p
    }

    fn zero_weights(c: usize, m: usize) -> MhsaParams {
        let mut p = MhsaParams::init(c, m, c / m, 2 * c, &mut CounterRng::new(0));
        for w in p.wq.iter_mut().chain(p.wk.iter_mut()).chain(p.wv.iter_mut()) {
            *w = w.scale(0.0);
        }
        p.w_out = p.w_out.scale(0.0);
        p.mlp_w2 = p.mlp_w2.scale(0.0);
        p
    }

    #[test]
    fn single_key_ignores_query() {
        let p = params(8, 2, 1);
        let v: Vec<Tensor> = (0..2).map(|h| rand(&[5, 1, 4], 10 + h)).collect();
        let k: Vec<Tensor> = (0..2).map(|h| rand(&[5, 1, 4], 20 + h)).collect();
        let q1: Vec<Tensor> = (0..2).map(|h| rand(&[5, 1, 4], 30 + h)).collect();
        let q2: Vec<Tensor> = (0..2).map(|h| rand(&[5, 1, 4], 40 + h)).collect();
        let r = rand(&[5, 8], 50);
        let a = mhsa_fuse(&q1, &k, &v, &r, &p).unwrap();
        let b = mhsa_fuse(&q2, &k, &v, &r, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicated_keys_match_single() {
        let p = params(8, 2, 2);
        let q: Vec<Tensor> = (0..2).map(|h| rand(&[3, 1, 4], 60 + h)).collect();
        let k1: Vec<Tensor> = (0..2).map(|h| rand(&[3, 1, 4], 70 + h)).collect();
        let v1: Vec<Tensor> = (0..2).map(|h| rand(&[3, 1, 4], 80 + h)).collect();
        let dup = |x: &Tensor| Tensor::concat(&[x, x, x], 1).unwrap();
        let k3: Vec<Tensor> = k1.iter().map(dup).collect();
        let v3: Vec<Tensor> = v1.iter().map(dup).collect();
        let r = rand(&[3, 8], 90);
        let a = mhsa_fuse(&q, &k1, &v1, &r, &p).unwrap();
        let b = mhsa_fuse(&q, &k3, &v3, &r, &p).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn head_count_mismatch() {
        let p = params(8, 2, 3);
        let q = vec![rand(&[3, 1, 4], 1)];
        let r = rand(&[3, 8], 2);
        assert!(mhsa_fuse(&q, &q, &q, &r, &p).is_err());
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let q = rand(&[7, 1, 4], 3).scale(5.0);
        let k = rand(&[7, 5, 4], 4).scale(5.0);
        let w = attention_weights(&q, &k, 4).unwrap();
        for s in w.sum_axis(2).unwrap().data() {
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    fn coop(n: usize, t: usize, h: usize, w: usize, c: usize, seed: u64) -> CoopTensor {
        CoopTensor { data: rand(&[n, t, h, w, c], seed), ego_index: 0 }
    }

    #[test]
    fn cascade_shapes() {
        let x = coop(3, 2, 2, 3, 8, 5);
        let out = mata_forward(&x, &params(8, 2, 6), &params(8, 2, 7)).unwrap();
        assert_eq!(out.inter_agent.shape(), &[2, 6, 8]);
        assert_eq!(out.unified.shape(), &[6, 8]);
        assert!(out.unified.is_finite());
    }

    #[test]
    fn zero_weights_pass_the_ego_current_frame() {
        let x = coop(3, 3, 2, 2, 8, 8);
        let z = zero_weights(8, 2);
        let out = mata_forward(&x, &z, &z).unwrap();
        let ego_now = x.data.select(0, 0).unwrap().select(0, 2).unwrap().reshape(&[4, 8]).unwrap();
        assert_eq!(out.unified, ego_now);
    }

    #[test]
    fn single_agent_single_frame() {
        let x = coop(1, 1, 2, 2, 4, 9);
        let p = params(4, 2, 10);
        let out = iat(&x, &p).unwrap();
        // with one key the attention weight is one: fused = v W + R
        let seq = x.data.reshape(&[1, 1, 4, 4]).unwrap();
        let normed = p.ln_in.forward(&seq).unwrap().select(0, 0).unwrap();
        let v: Vec<Tensor> = p.wv.iter().map(|w| normed.matmul(w).unwrap()).collect();
        let cat = Tensor::concat(&v.iter().collect::<Vec<_>>(), 2).unwrap();
        let fused = cat.matmul(&p.w_out).unwrap().add(&seq.select(0, 0).unwrap()).unwrap();
        let want = fused.add(&p.mlp(&p.ln_ffn.forward(&fused).unwrap()).unwrap()).unwrap();
        for (a, b) in out.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_init() {
        let a = MhsaParams::init(8, 2, 4, 32, &mut CounterRng::keyed(5, &[1]));
        let b = MhsaParams::init(8, 2, 4, 32, &mut CounterRng::keyed(5, &[1]));
        assert_eq!(a, b);
        a.validate().unwrap();
    }
}
