//! The complete fusion stack: inter-agent/temporal attention, decomposed
//! spatial attention and entropy-weighted branch fusion.

use std::collections::BTreeMap;

use crate::cache::CoopTensor;
use crate::dualsa::{dualsa_forward, BranchParams, DualsaOutput, DualsaParams, GdfnParams};
use crate::error::{dim_err, Error, Result};
use crate::mata::{mata_forward, MataOutput, MhsaParams};
use crate::nn::LayerNorm;
use crate::rng::{tag, CounterRng};
use crate::tensor::Tensor;
use crate::ugf::{ugf_forward, ContextKernels, UgfOutput, UgfParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionDims {
    pub channels: usize,
    pub mata_heads: usize,
    pub mata_head_dim: usize,
    pub mata_ff_dim: usize,
    pub dualsa_heads: usize,
    pub dualsa_head_dim: usize,
    pub gdfn_hidden: usize,
    pub tau: f64,
}

impl FusionDims {
    /// 8 attention heads of `C/8` for aggregation, 4 heads of `C/4` for the
    /// spatial branches, MLP width `4C`, GDFN hidden width `2C`, `tau = 1`.
    pub fn for_channels(channels: usize) -> Self {
        Self {
            channels,
            mata_heads: 8,
            mata_head_dim: (channels / 8).max(1),
            mata_ff_dim: 4 * channels,
            dualsa_heads: 4,
            dualsa_head_dim: (channels / 4).max(1),
            gdfn_hidden: 2 * channels,
            tau: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.channels,
            self.mata_heads,
            self.mata_head_dim,
            self.mata_ff_dim,
            self.dualsa_heads,
            self.dualsa_head_dim,
            self.gdfn_hidden,
        ];
        if sizes.contains(&0) {
            return Err(Error::Config(format!("fusion dimensions must be positive: {self:?}")));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("ugf.tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub iat: MhsaParams,
    pub tat: MhsaParams,
    pub dualsa: DualsaParams,
    pub ugf: UgfParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    pub mata: MataOutput,
    pub spatial: DualsaOutput,
    pub ugf: UgfOutput,
}

impl FusionOutput {
    /// Final `H x W x C` fused feature.
    pub fn fused(&self) -> &Tensor {
        &self.ugf.fused
    }
}

impl FusionParams {
    /// Deterministic initialization from `seed`.
    pub fn init(dims: &FusionDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let c = dims.channels;
        let mut rng = CounterRng::keyed(seed, &[tag::PARAMS]);
        let iat = MhsaParams::init(c, dims.mata_heads, dims.mata_head_dim, dims.mata_ff_dim, &mut rng);
        let tat = MhsaParams::init(c, dims.mata_heads, dims.mata_head_dim, dims.mata_ff_dim, &mut rng);
        let dualsa = DualsaParams::init(c, dims.dualsa_heads, dims.dualsa_head_dim, dims.gdfn_hidden, &mut rng);
        let ugf = UgfParams::init(c, dims.tau, &mut rng);
        Ok(Self { iat, tat, dualsa, ugf })
    }

    pub fn forward(&self, coop: &CoopTensor) -> Result<FusionOutput> {
        let s = coop.data.shape();
        if s.len() != 5 {
            return dim_err(format!("cooperative tensor must be N x T x H x W x C, got {s:?}"));
        }
        let (h, w, c) = (s[2], s[3], s[4]);
        let mata = mata_forward(coop, &self.iat, &self.tat)?;
        let u = mata.unified.reshape(&[h, w, c])?;
        let spatial = dualsa_forward(&u, &self.dualsa)?;
        let ugf = ugf_forward(&spatial.width, &spatial.height, &self.ugf)?;
        Ok(FusionOutput { mata, spatial, ugf })
    }

    /// Flattens every parameter into `(name, tensor)` pairs; scalars become
    /// one-element tensors.
    pub fn to_named(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        named_mhsa(&mut out, "iat", &self.iat);
        named_mhsa(&mut out, "tat", &self.tat);
        named_branch(&mut out, "dualsa.width", &self.dualsa.width);
        named_branch(&mut out, "dualsa.height", &self.dualsa.height);
        named_context(&mut out, "ugf.width", &self.ugf.width);
        named_context(&mut out, "ugf.height", &self.ugf.height);
        out.push(("ugf.tau".into(), scalar(self.ugf.tau)));
        out
    }

    pub fn from_named(entries: Vec<(String, Tensor)>) -> Result<Self> {
        let mut map: BTreeMap<String, Tensor> = entries.into_iter().collect();
        let params = Self {
            iat: take_mhsa(&mut map, "iat")?,
            tat: take_mhsa(&mut map, "tat")?,
            dualsa: DualsaParams {
                width: take_branch(&mut map, "dualsa.width")?,
                height: take_branch(&mut map, "dualsa.height")?,
            },
            ugf: UgfParams {
                width: take_context(&mut map, "ugf.width")?,
                height: take_context(&mut map, "ugf.height")?,
                tau: take_scalar(&mut map, "ugf.tau")?,
            },
        };
        if let Some(extra) = map.keys().next() {
            return Err(Error::Config(format!("unexpected checkpoint entry {extra}")));
        }
        params.iat.validate()?;
        params.tat.validate()?;
        Ok(params)
    }
}

fn scalar(v: f64) -> Tensor {
    Tensor::full(&[1], v)
}

fn named_ln(out: &mut Vec<(String, Tensor)>, prefix: &str, ln: &LayerNorm) {
    out.push((format!("{prefix}.gamma"), ln.gamma.clone()));
    out.push((format!("{prefix}.beta"), ln.beta.clone()));
}

fn named_mhsa(out: &mut Vec<(String, Tensor)>, p: &str, m: &MhsaParams) {
    for (kind, ws) in [("wq", &m.wq), ("wk", &m.wk), ("wv", &m.wv)] {
        for (h, w) in ws.iter().enumerate() {
            out.push((format!("{p}.{kind}.{h}"), w.clone()));
        }
    }
    out.push((format!("{p}.w_out"), m.w_out.clone()));
    named_ln(out, &format!("{p}.ln_in"), &m.ln_in);
    named_ln(out, &format!("{p}.ln_ffn"), &m.ln_ffn);
    out.push((format!("{p}.mlp_w1"), m.mlp_w1.clone()));
    out.push((format!("{p}.mlp_b1"), m.mlp_b1.clone()));
    out.push((format!("{p}.mlp_w2"), m.mlp_w2.clone()));
    out.push((format!("{p}.mlp_b2"), m.mlp_b2.clone()));
}

fn named_branch(out: &mut Vec<(String, Tensor)>, p: &str, b: &BranchParams) {
    out.push((format!("{p}.heads"), scalar(b.heads as f64)));
    out.push((format!("{p}.scale"), scalar(b.scale)));
    named_ln(out, &format!("{p}.ln_attn"), &b.ln_attn);
    out.push((format!("{p}.qkv_pointwise"), b.qkv_pointwise.clone()));
    out.push((format!("{p}.qkv_depthwise"), b.qkv_depthwise.clone()));
    out.push((format!("{p}.proj"), b.proj.clone()));
    named_ln(out, &format!("{p}.ln_ffn"), &b.ln_ffn);
    out.push((format!("{p}.gdfn.expand"), b.gdfn.expand.clone()));
    out.push((format!("{p}.gdfn.depthwise"), b.gdfn.depthwise.clone()));
    out.push((format!("{p}.gdfn.project"), b.gdfn.project.clone()));
}

fn named_context(out: &mut Vec<(String, Tensor)>, p: &str, k: &ContextKernels) {
    out.push((format!("{p}.k1"), k.k1.clone()));
    out.push((format!("{p}.k3"), k.k3.clone()));
    out.push((format!("{p}.k5"), k.k5.clone()));
}

fn take(map: &mut BTreeMap<String, Tensor>, name: &str) -> Result<Tensor> {
    map.remove(name).ok_or_else(|| Error::Config(format!("checkpoint is missing {name}")))
}

fn take_scalar(map: &mut BTreeMap<String, Tensor>, name: &str) -> Result<f64> {
    let t = take(map, name)?;
    if t.numel() != 1 {
        return dim_err(format!("{name} must hold one value, has shape {:?}", t.shape()));
    }
    Ok(t.data()[0])
}

fn take_ln(map: &mut BTreeMap<String, Tensor>, p: &str) -> Result<LayerNorm> {
    Ok(LayerNorm { gamma: take(map, &format!("{p}.gamma"))?, beta: take(map, &format!("{p}.beta"))? })
}

fn take_heads(map: &mut BTreeMap<String, Tensor>, p: &str, kind: &str) -> Result<Vec<Tensor>> {
    let mut ws = Vec::new();
    while let Some(w) = map.remove(&format!("{p}.{kind}.{}", ws.len())) {
        ws.push(w);
    }
    if ws.is_empty() {
        return Err(Error::Config(format!("checkpoint has no {p}.{kind} heads")));
    }
    Ok(ws)
}

fn take_mhsa(map: &mut BTreeMap<String, Tensor>, p: &str) -> Result<MhsaParams> {
    let wq = take_heads(map, p, "wq")?;
    let wk = take_heads(map, p, "wk")?;
    let wv = take_heads(map, p, "wv")?;
    let head_dim = wq[0].shape().last().copied().unwrap_or(0);
    Ok(MhsaParams {
        heads: wq.len(),
        head_dim,
        wq,
        wk,
        wv,
        w_out: take(map, &format!("{p}.w_out"))?,
        ln_in: take_ln(map, &format!("{p}.ln_in"))?,
        ln_ffn: take_ln(map, &format!("{p}.ln_ffn"))?,
        mlp_w1: take(map, &format!("{p}.mlp_w1"))?,
        mlp_b1: take(map, &format!("{p}.mlp_b1"))?,
        mlp_w2: take(map, &format!("{p}.mlp_w2"))?,
        mlp_b2: take(map, &format!("{p}.mlp_b2"))?,
    })
}

fn take_branch(map: &mut BTreeMap<String, Tensor>, p: &str) -> Result<BranchParams> {
    let heads = take_scalar(map, &format!("{p}.heads"))?.round() as usize;
    let scale = take_scalar(map, &format!("{p}.scale"))?;
    let ln_attn = take_ln(map, &format!("{p}.ln_attn"))?;
    let qkv_pointwise = take(map, &format!("{p}.qkv_pointwise"))?;
    let inner = qkv_pointwise.shape()[3] / 3;
    if heads == 0 || inner % heads != 0 {
        return dim_err(format!("{p}: {inner} inner channels do not split into {heads} heads"));
    }
    Ok(BranchParams {
        heads,
        head_dim: inner / heads,
        scale,
        ln_attn,
        qkv_pointwise,
        qkv_depthwise: take(map, &format!("{p}.qkv_depthwise"))?,
        proj: take(map, &format!("{p}.proj"))?,
        ln_ffn: take_ln(map, &format!("{p}.ln_ffn"))?,
        gdfn: GdfnParams {
            expand: take(map, &format!("{p}.gdfn.expand"))?,
            depthwise: take(map, &format!("{p}.gdfn.depthwise"))?,
            project: take(map, &format!("{p}.gdfn.project"))?,
        },
    })
}

fn take_context(map: &mut BTreeMap<String, Tensor>, p: &str) -> Result<ContextKernels> {
    Ok(ContextKernels {
        k1: take(map, &format!("{p}.k1"))?,
        k3: take(map, &format!("{p}.k3"))?,
        k5: take(map, &format!("{p}.k5"))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_roundtrip() {
        let p = FusionParams::init(&FusionDims::for_channels(8), 3).unwrap();
        let back = FusionParams::from_named(p.to_named()).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn missing_entry_is_reported() {
        let p = FusionParams::init(&FusionDims::for_channels(8), 3).unwrap();
        let mut named = p.to_named();
        named.retain(|(n, _)| n != "tat.w_out");
        let err = FusionParams::from_named(named).unwrap_err();
        assert!(err.to_string().contains("tat.w_out"));
    }

    #[test]
    fn forward_shapes() {
        let dims = FusionDims::for_channels(8);
        let p = FusionParams::init(&dims, 1).unwrap();
        let mut r = CounterRng::new(2);
        let coop = CoopTensor { data: Tensor::from_fn(&[2, 2, 3, 4, 8], |_| r.normal()), ego_index: 0 };
        let out = p.forward(&coop).unwrap();
        assert_eq!(out.fused().shape(), &[3, 4, 8]);
        assert!(out.fused().is_finite());
    }
}
