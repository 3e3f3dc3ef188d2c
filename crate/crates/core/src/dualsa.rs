//! Decomposed spatial attention over the width and height axes.
//!
//! Each branch normalizes its input, derives Q/K/V with a pointwise then a
//! depthwise 3x3 convolution, attends along one spatial axis per head and
//! row, projects back with a 1x1 convolution onto a residual, and refines the
//! result with a gated depthwise-convolutional feed-forward network (GDFN).
//! The height branch is the width branch run on the `W x H` transpose.

use serde::Serialize;

use crate::error::{dim_err, Error, Result};
use crate::nn::{gaussian, gelu, LayerNorm};
use crate::rng::CounterRng;
use crate::tensor::{ConvMode, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct GdfnParams {
    /// `1 x 1 x C x 2C_g`
    pub expand: Tensor,
    /// `3 x 3 x 2C_g x 1`
    pub depthwise: Tensor,
    /// `1 x 1 x C_g x C`
    pub project: Tensor,
}

impl GdfnParams {
    pub fn init(channels: usize, hidden: usize, rng: &mut CounterRng) -> Self {
        Self {
            expand: gaussian(&[1, 1, channels, 2 * hidden], rng),
            depthwise: gaussian(&[3, 3, 2 * hidden, 1], rng),
            project: gaussian(&[1, 1, hidden, channels], rng),
        }
    }
}

/// Parameters of one spatial-attention branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchParams {
    pub heads: usize,
    pub head_dim: usize,
    /// Attention temperature; scores are divided by it.
    pub scale: f64,
    pub ln_attn: LayerNorm,
    /// `1 x 1 x C x 3C'`
    pub qkv_pointwise: Tensor,
    /// `3 x 3 x 3C' x 1`
    pub qkv_depthwise: Tensor,
    /// `1 x 1 x C' x C`
    pub proj: Tensor,
    pub ln_ffn: LayerNorm,
    pub gdfn: GdfnParams,
}

impl BranchParams {
    /// Scale starts at `sqrt(head_dim)`.
    pub fn init(channels: usize, heads: usize, head_dim: usize, gdfn_hidden: usize, rng: &mut CounterRng) -> Self {
        let inner = heads * head_dim;
        Self {
            heads,
            head_dim,
            scale: (head_dim as f64).sqrt(),
            ln_attn: LayerNorm::identity(channels),
            qkv_pointwise: gaussian(&[1, 1, channels, 3 * inner], rng),
            qkv_depthwise: gaussian(&[3, 3, 3 * inner, 1], rng),
            proj: gaussian(&[1, 1, inner, channels], rng),
            ln_ffn: LayerNorm::identity(channels),
            gdfn: GdfnParams::init(channels, gdfn_hidden, rng),
        }
    }

    pub fn inner_channels(&self) -> usize {
        self.heads * self.head_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualsaParams {
    pub width: BranchParams,
    pub height: BranchParams,
}

impl DualsaParams {
    pub fn init(channels: usize, heads: usize, head_dim: usize, gdfn_hidden: usize, rng: &mut CounterRng) -> Self {
        let width = BranchParams::init(channels, heads, head_dim, gdfn_hidden, rng);
        let height = BranchParams::init(channels, heads, head_dim, gdfn_hidden, rng);
        Self { width, height }
    }

    /// Both branches share one parameter set. Only used to check the
    /// transpose symmetry of the two branches.
    pub fn tied(branch: BranchParams) -> Self {
        Self { width: branch.clone(), height: branch }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualsaOutput {
    pub width: Tensor,
    pub height: Tensor,
}

/// Pointwise conv, depthwise 3x3 conv, then a three-way channel split.
pub fn qkv_project(x: &Tensor, params: &BranchParams) -> Result<(Tensor, Tensor, Tensor)> {
    let mixed = x
        .conv2d(&params.qkv_pointwise, ConvMode::Pointwise)?
        .conv2d(&params.qkv_depthwise, ConvMode::Depthwise)?;
    let mut parts = mixed.chunk(3)?.into_iter();
    let (q, k, v) = (parts.next().unwrap(), parts.next().unwrap(), parts.next().unwrap());
    Ok((q, k, v))
}

/// Multi-head attention along the width axis of `H x W x C'` inputs: for each
/// head and row, `softmax(Q K^T / scale) V` over the `W` positions.
pub fn axis_attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize, head_dim: usize, scale: f64) -> Result<Tensor> {
    if !(scale > 0.0) {
        return Err(Error::Domain(format!("attention scale must be positive, got {scale}")));
    }
    let s = q.shape();
    if s.len() != 3 || s[2] != heads * head_dim || k.shape() != s || v.shape() != s {
        return dim_err(format!(
            "axis attention needs matching H x W x (M*C_head) inputs with M={heads}, C_head={head_dim}; got {:?}, {:?}, {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        ));
    }
    let (h, w) = (s[0], s[1]);
    // H x W x M x Ch  ->  M x H x W x Ch
    let split = |x: &Tensor| x.reshape(&[h, w, heads, head_dim])?.permute(&[2, 0, 1, 3]);
    let (qh, kh, vh) = (split(q)?, split(k)?, split(v)?);
    let weights = qh.matmul(&kh.transpose(2, 3)?)?.scale(1.0 / scale).softmax(3)?;
    let out = weights.matmul(&vh)?;
    out.permute(&[1, 2, 0, 3])?.reshape(&[h, w, heads * head_dim])
}

/// Expansion, depthwise 3x3, GELU-gated product of the two halves, and a
/// pointwise projection back to `C` channels.
pub fn gdfn(x: &Tensor, params: &GdfnParams) -> Result<Tensor> {
    let hidden = x
        .conv2d(&params.expand, ConvMode::Pointwise)?
        .conv2d(&params.depthwise, ConvMode::Depthwise)?;
    let halves = hidden.chunk(2)?;
    let gated = halves[0].map(gelu).mul(&halves[1])?;
    gated.conv2d(&params.project, ConvMode::Pointwise)
}

/// One branch, attending along the second spatial axis of `u`.
pub fn branch_forward(u: &Tensor, params: &BranchParams) -> Result<Tensor> {
    let normed = params.ln_attn.forward(u)?;
    let (q, k, v) = qkv_project(&normed, params)?;
    let attended = axis_attention(&q, &k, &v, params.heads, params.head_dim, params.scale)?;
    let residual = attended.conv2d(&params.proj, ConvMode::Pointwise)?.add(u)?;
    let refined = gdfn(&params.ln_ffn.forward(&residual)?, &params.gdfn)?;
    refined.add(&residual)
}

pub fn dualsa_forward(u: &Tensor, params: &DualsaParams) -> Result<DualsaOutput> {
    if u.rank() != 3 {
        return dim_err(format!("spatial attention expects H x W x C, got {:?}", u.shape()));
    }
    let (width, height) = rayon::join(
        || branch_forward(u, &params.width),
        || {
            let t = u.transpose(0, 1)?;
            branch_forward(&t, &params.height)?.transpose(0, 1)
        },
    );
    Ok(DualsaOutput { width: width?, height: height? })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AttentionMode {
    Full2d,
    DualSa,
}

/// FLOPs of the attention score and value products only, two per
/// multiply-accumulate. Full attention compares all `(HW)^2` pixel pairs; the
/// decomposed form compares pixels within a row (`H W^2`) and within a column
/// (`W H^2`).
pub fn count_attention_flops(h: u64, w: u64, c_inner: u64, mode: AttentionMode) -> u64 {
    let macs_per_product = match mode {
        AttentionMode::Full2d => (h * w) * (h * w) * c_inner,
        AttentionMode::DualSa => h * w * w * c_inner + w * h * h * c_inner,
    };
    2 * macs_per_product * 2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FlopShape {
    pub height: u64,
    pub width: u64,
    pub channels: u64,
    pub heads: u64,
    pub head_dim: u64,
    pub gdfn_hidden: u64,
}

/// Attention-only counts and whole-module counts.
///
/// The whole-module figure adds every convolution of a branch (QKV pointwise
/// and depthwise, output projection, GDFN) to the attention products. The
/// full-attention module is a single branch with global attention; the
/// decomposed module runs two branches. Normalization and elementwise work
/// are not counted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlopReport {
    pub shape: FlopShape,
    pub full2d_flops: u64,
    pub dualsa_flops: u64,
    pub ratio: f64,
    pub full_module_flops: u64,
    pub dualsa_module_flops: u64,
    pub module_reduction: f64,
}

fn branch_conv_flops(s: &FlopShape) -> u64 {
    let px = s.height * s.width;
    let (c, ci, g) = (s.channels, s.heads * s.head_dim, s.gdfn_hidden);
    let macs = c * 3 * ci + 9 * 3 * ci + ci * c + c * 2 * g + 9 * 2 * g + g * c;
    2 * px * macs
}

pub fn flop_report(shape: FlopShape) -> FlopReport {
    let ci = shape.heads * shape.head_dim;
    let full2d = count_attention_flops(shape.height, shape.width, ci, AttentionMode::Full2d);
    let dual = count_attention_flops(shape.height, shape.width, ci, AttentionMode::DualSa);
    let convs = branch_conv_flops(&shape);
    let full_module = convs + full2d;
    let dual_module = 2 * convs + dual;
    FlopReport {
        shape,
        full2d_flops: full2d,
        dualsa_flops: dual,
        ratio: dual as f64 / full2d as f64,
        full_module_flops: full_module,
        dualsa_module_flops: dual_module,
        module_reduction: 1.0 - dual_module as f64 / full_module as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand(shape: &[usize], seed: u64) -> Tensor {
        let mut r = CounterRng::new(seed);
        Tensor::from_fn(shape, |_| r.normal())
    }

    #[test]
    fn identity_qkv_kernels_triplicate() {
        let c = 4;
        let x = rand(&[3, 5, c], 1);
        let mut p = BranchParams::init(c, 2, 2, 8, &mut CounterRng::new(2));
        let stacked = Tensor::concat(&[&Tensor::eye(c), &Tensor::eye(c), &Tensor::eye(c)], 1).unwrap();
        p.qkv_pointwise = stacked.reshape(&[1, 1, c, 3 * c]).unwrap();
        p.qkv_depthwise = Tensor::from_fn(&[3, 3, 3 * c, 1], |i| if i / (3 * c) == 4 { 1.0 } else { 0.0 });
        let (q, k, v) = qkv_project(&x, &p).unwrap();
        assert_eq!(q, x);
        assert_eq!(k, x);
        assert_eq!(v, x);
    }

    #[test]
    fn single_column_returns_values() {
        let q = rand(&[4, 1, 6], 3);
        let k = rand(&[4, 1, 6], 4);
        let v = rand(&[4, 1, 6], 5);
        let out = axis_attention(&q, &k, &v, 2, 3, 1.0).unwrap();
        for (a, b) in out.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_keys_average_values() {
        let q = rand(&[3, 5, 4], 6);
        let k = Tensor::full(&[3, 5, 4], 0.7);
        let v = rand(&[3, 5, 4], 7);
        let out = axis_attention(&q, &k, &v, 2, 2, 2.0).unwrap();
        let mean = v.mean_axis(1).unwrap();
        for y in 0..3 {
            for x in 0..5 {
                for c in 0..4 {
                    assert!((out.at(&[y, x, c]) - mean.at(&[y, 0, c])).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn scale_must_be_positive() {
        let q = rand(&[2, 2, 2], 8);
        assert!(matches!(axis_attention(&q, &q, &q, 1, 2, 0.0), Err(Error::Domain(_))));
        assert!(axis_attention(&q, &q, &q, 2, 2, 1.0).is_err());
    }

    #[test]
    fn gdfn_zero_expansion_is_zero() {
        let x = rand(&[3, 4, 4], 9);
        let mut p = GdfnParams::init(4, 8, &mut CounterRng::new(10));
        p.expand = p.expand.scale(0.0);
        let y = gdfn(&x, &p).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tied_branches_are_transpose_conjugate() {
        let u = rand(&[4, 6, 8], 11);
        let branch = BranchParams::init(8, 2, 4, 16, &mut CounterRng::new(12));
        let out = dualsa_forward(&u, &DualsaParams::tied(branch.clone())).unwrap();
        let want = branch_forward(&u.transpose(0, 1).unwrap(), &branch).unwrap().transpose(0, 1).unwrap();
        for (a, b) in out.height.data().iter().zip(want.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert_eq!(out.width.shape(), &[4, 6, 8]);
        assert_eq!(out.height.shape(), &[4, 6, 8]);
    }

    #[test]
    fn single_pixel_branches_agree_when_tied() {
        let u = rand(&[1, 1, 8], 13);
        let branch = BranchParams::init(8, 2, 4, 16, &mut CounterRng::new(14));
        let out = dualsa_forward(&u, &DualsaParams::tied(branch)).unwrap();
        assert_eq!(out.width, out.height);
    }

    #[test]
    fn flop_hand_counts() {
        use AttentionMode::*;
        assert_eq!(count_attention_flops(1, 1, 7, Full2d), 28);
        assert_eq!(count_attention_flops(1, 1, 7, DualSa), 56);
        assert_eq!(count_attention_flops(2, 2, 1, Full2d), 64);
        assert_eq!(count_attention_flops(2, 2, 1, DualSa), 64);
        let r = count_attention_flops(48, 176, 64, DualSa) as f64 / count_attention_flops(48, 176, 64, Full2d) as f64;
        assert!((r - 224.0 / 8448.0).abs() < 1e-15);
        assert!((r - 0.0265).abs() < 1e-4);
    }

    #[test]
    fn module_counts_reduce_at_bev_shape() {
        let shape = FlopShape { height: 48, width: 176, channels: 64, heads: 4, head_dim: 16, gdfn_hidden: 128 };
        let rep = flop_report(shape);
        assert!(rep.module_reduction >= 0.6, "{rep:?}");
        assert!(rep.dualsa_module_flops < rep.full_module_flops);
    }
}
