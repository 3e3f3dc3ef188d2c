//! Entropy-weighted fusion of the width and height branches.
//!
//! Per branch: a 1x1 + 3x3 + 5x5 convolutional context, a per-pixel channel
//! softmax at temperature `tau`, its Shannon entropy (natural log), min-max
//! normalization of that entropy map, and `exp(-x)` decay into an importance
//! map in `[1/e, 1]`. The two importance maps are broadcast over channels and
//! turned into convex weights by a two-way softmax.

use crate::error::{dim_err, Error, Result};
use crate::nn::gaussian;
use crate::rng::CounterRng;
use crate::tensor::{ConvMode, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ContextKernels {
    pub k1: Tensor,
    pub k3: Tensor,
    pub k5: Tensor,
}

impl ContextKernels {
    pub fn init(channels: usize, rng: &mut CounterRng) -> Self {
        Self {
            k1: gaussian(&[1, 1, channels, channels], rng),
            k3: gaussian(&[3, 3, channels, channels], rng),
            k5: gaussian(&[5, 5, channels, channels], rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UgfParams {
    pub width: ContextKernels,
    pub height: ContextKernels,
    pub tau: f64,
}

impl UgfParams {
    pub fn init(channels: usize, tau: f64, rng: &mut CounterRng) -> Self {
        let width = ContextKernels::init(channels, rng);
        let height = ContextKernels::init(channels, rng);
        Self { width, height, tau }
    }
}

/// Intermediate maps of one branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchMaps {
    /// `H x W x 1`
    pub entropy: Tensor,
    /// `H x W x 1`
    pub importance: Tensor,
    /// `H x W x C`
    pub weight: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UgfOutput {
    pub fused: Tensor,
    pub width: BranchMaps,
    pub height: BranchMaps,
}

pub fn multi_scale_context(s: &Tensor, kernels: &ContextKernels) -> Result<Tensor> {
    let a = s.conv2d(&kernels.k1, ConvMode::Pointwise)?;
    let b = s.conv2d(&kernels.k3, ConvMode::Dense)?;
    let c = s.conv2d(&kernels.k5, ConvMode::Dense)?;
    a.add(&b)?.add(&c)
}

/// Per-pixel channel softmax of `s / tau`.
pub fn channel_distribution(s: &Tensor, tau: f64) -> Result<Tensor> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("temperature must be positive, got {tau}")));
    }
    s.scale(1.0 / tau).softmax(s.rank() - 1)
}

/// Shannon entropy over the last axis, keeping it as length 1; `0 ln 0 = 0`.
pub fn entropy_map(p: &Tensor) -> Result<Tensor> {
    if p.data().iter().any(|&v| v < 0.0 || v.is_nan()) {
        return Err(Error::Domain("probabilities must be nonnegative".into()));
    }
    p.map(|v| if v > 0.0 { -v * v.ln() } else { 0.0 }).sum_axis(p.rank() - 1)
}

/// `exp(-(E - min) / (max - min))`; a constant map gets weight 1 everywhere.
pub fn importance_map(entropy: &Tensor) -> Result<Tensor> {
    if !entropy.is_finite() {
        return Err(Error::Numeric("entropy map is not finite".into()));
    }
    let (lo, hi) = (entropy.min(), entropy.max());
    let span = hi - lo;
    Ok(entropy.map(|e| {
        let norm = if span > 0.0 { ((e - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
        (-norm).exp()
    }))
}

/// Broadcasts both `H x W x 1` maps to `channels` and applies the two-way
/// softmax. Returns `(xi_w, xi_h)`.
pub fn cross_branch_weights(w_width: &Tensor, w_height: &Tensor, channels: usize) -> Result<(Tensor, Tensor)> {
    if w_width.shape() != w_height.shape() {
        return dim_err(format!(
            "importance maps differ in shape: {:?} vs {:?}",
            w_width.shape(),
            w_height.shape()
        ));
    }
    let mut shape = w_width.shape().to_vec();
    *shape.last_mut().unwrap() = channels;
    let a = w_width.broadcast_to(&shape)?;
    let b = w_height.broadcast_to(&shape)?;
    // two-way softmax written as a logistic of the difference
    let xi_w = b.sub(&a)?.map(|d| 1.0 / (1.0 + d.exp()));
    let xi_h = xi_w.map(|x| 1.0 - x);
    Ok((xi_w, xi_h))
}

fn branch_importance(s: &Tensor, kernels: &ContextKernels, tau: f64) -> Result<(Tensor, Tensor)> {
    let ctx = multi_scale_context(s, kernels)?;
    let p = channel_distribution(&ctx, tau)?;
    let entropy = entropy_map(&p)?;
    let importance = importance_map(&entropy)?;
    Ok((entropy, importance))
}

pub fn ugf_forward(s_width: &Tensor, s_height: &Tensor, params: &UgfParams) -> Result<UgfOutput> {
    if s_width.shape() != s_height.shape() || s_width.rank() != 3 {
        return dim_err(format!(
            "branch outputs must share an H x W x C shape: {:?} vs {:?}",
            s_width.shape(),
            s_height.shape()
        ));
    }
    let (ew, iw) = branch_importance(s_width, &params.width, params.tau)?;
    let (eh, ih) = branch_importance(s_height, &params.height, params.tau)?;
    let (xi_w, xi_h) = cross_branch_weights(&iw, &ih, s_width.shape()[2])?;
    let fused = xi_w.mul(s_width)?.add(&xi_h.mul(s_height)?)?;
    Ok(UgfOutput {
        fused,
        width: BranchMaps { entropy: ew, importance: iw, weight: xi_w },
        height: BranchMaps { entropy: eh, importance: ih, weight: xi_h },
    })
}
