//! Detection and distillation loss evaluators (no gradients).
//!
//! Each term is a mean over elements (or positions); the per-agent terms are
//! summed over agents. Logarithms clamp their argument at [`CLAMP_EPS`].

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

pub const CLAMP_EPS: f64 = 1e-7;

/// Classification probabilities and box regression values for one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMaps {
    pub cls: Tensor,
    pub reg: Tensor,
}

impl PredictionMaps {
    pub fn new(cls: Tensor, reg: Tensor) -> Result<Self> {
        if cls.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain("classification probabilities must lie in [0, 1]".into()));
        }
        Ok(Self { cls, reg })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 2.0, gamma: 10_000.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlMode {
    /// Inputs already are distributions along the last axis.
    Distribution,
    /// Softmax both inputs along the last axis first.
    ChannelSoftmax,
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return dim_err(format!("{what}: shapes {:?} and {:?} differ", a.shape(), b.shape()));
    }
    Ok(())
}

/// Mean binary cross-entropy with predictions clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn bce(pred: &Tensor, target: &Tensor) -> Result<f64> {
    same_shape(pred, target, "bce")?;
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = p.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / pred.numel() as f64)
}

pub fn smooth_l1(pred: &Tensor, target: &Tensor) -> Result<f64> {
    same_shape(pred, target, "smooth_l1")?;
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let e = (p - t).abs();
            if e < 1.0 {
                0.5 * e * e
            } else {
                e - 0.5
            }
        })
        .sum();
    Ok(total / pred.numel() as f64)
}

fn check_distribution(p: &Tensor, what: &str) -> Result<()> {
    let c = *p.shape().last().unwrap();
    for row in p.data().chunks_exact(c) {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Domain(format!("{what} is not a distribution along its last axis")));
        }
    }
    Ok(())
}

/// `KL(teacher || student)` along the last axis, averaged over the leading
/// positions.
pub fn kl_div(teacher: &Tensor, student: &Tensor, mode: KlMode) -> Result<f64> {
    same_shape(teacher, student, "kl_div")?;
    let last = teacher.rank() - 1;
    let (pt, ps) = match mode {
        KlMode::Distribution => {
            check_distribution(teacher, "teacher")?;
            check_distribution(student, "student")?;
            (teacher.clone(), student.clone())
        }
        KlMode::ChannelSoftmax => (teacher.softmax(last)?, student.softmax(last)?),
    };
    let c = teacher.shape()[last];
    let positions = teacher.numel() / c;
    let total: f64 = pt
        .data()
        .iter()
        .zip(ps.data())
        .map(|(&t, &s)| if t > 0.0 { t * (t / s.max(CLAMP_EPS)).ln() } else { 0.0 })
        .sum();
    Ok(total / positions as f64)
}

/// Each probability `p` becomes the two-class distribution `[p, 1 - p]`.
fn bernoulli_pairs(p: &Tensor) -> Tensor {
    let mut shape = p.shape().to_vec();
    shape.push(2);
    let data = p.data().iter().flat_map(|&v| [v, 1.0 - v]).collect();
    Tensor::from_parts(shape, data)
}

/// `sum_i (alpha * bce(cls) + beta * smooth_l1(reg))` over agents.
pub fn detection_loss(preds: &[PredictionMaps], truth: &[PredictionMaps], w: &LossWeights) -> Result<f64> {
    if preds.len() != truth.len() {
        return dim_err(format!("{} predictions for {} targets", preds.len(), truth.len()));
    }
    preds.iter().zip(truth).try_fold(0.0, |acc, (p, t)| {
        Ok(acc + w.alpha * bce(&p.cls, &t.cls)? + w.beta * smooth_l1(&p.reg, &t.reg)?)
    })
}

/// Teacher objective; same form as the student's detection term.
pub fn teacher_loss(preds: &[PredictionMaps], truth: &[PredictionMaps], w: &LossWeights) -> Result<f64> {
    detection_loss(preds, truth, w)
}

/// Fused features and detection outputs of one agent, as seen by the
/// distillation objective.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillTarget {
    pub features: Tensor,
    pub preds: PredictionMaps,
}

/// Per-agent sum of KL over features (channel softmax), classification
/// (two-class) and regression (channel softmax).
pub fn kd_loss(teacher: &[DistillTarget], student: &[DistillTarget]) -> Result<f64> {
    if teacher.len() != student.len() {
        return dim_err(format!("{} teacher entries for {} students", teacher.len(), student.len()));
    }
    teacher.iter().zip(student).try_fold(0.0, |acc, (t, s)| {
        let feat = kl_div(&t.features, &s.features, KlMode::ChannelSoftmax)?;
        let cls = kl_div(
            &bernoulli_pairs(&t.preds.cls),
            &bernoulli_pairs(&s.preds.cls),
            KlMode::Distribution,
        )?;
        let reg = kl_div(&t.preds.reg, &s.preds.reg, KlMode::ChannelSoftmax)?;
        Ok(acc + feat + cls + reg)
    })
}

pub fn student_loss(kd: f64, det: f64, gamma: f64) -> f64 {
    gamma * kd + det
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn bce_cases() {
        let target = t(&[4], &[0.0, 1.0, 1.0, 0.0]);
        assert!(bce(&target, &target).unwrap() <= 1e-6);
        assert!((bce(&Tensor::full(&[4], 0.5), &target).unwrap() - LN_2).abs() < 1e-15);
        assert!(bce(&Tensor::full(&[3], 0.5), &target).is_err());
    }

    #[test]
    fn smooth_l1_cases() {
        let z = Tensor::zeros(&[3]);
        assert_eq!(smooth_l1(&z, &z).unwrap(), 0.0);
        assert_eq!(smooth_l1(&Tensor::full(&[2], 0.5), &Tensor::zeros(&[2])).unwrap(), 0.125);
        assert_eq!(smooth_l1(&Tensor::full(&[2], -2.0), &Tensor::zeros(&[2])).unwrap(), 1.5);
    }

    #[test]
    fn smooth_l1_is_c1_at_one() {
        let f = |e: f64| smooth_l1(&t(&[1], &[e]), &t(&[1], &[0.0])).unwrap();
        assert!((f(1.0) - 0.5).abs() < 1e-15);
        assert!((f(1.0 - 1e-12) - 0.5).abs() < 1e-11);
        let h = 1e-6;
        let left = (f(1.0) - f(1.0 - h)) / h;
        let right = (f(1.0 + h) - f(1.0)) / h;
        assert!((left - 1.0).abs() < 1e-5 && (right - 1.0).abs() < 1e-5);
    }

    #[test]
    fn kl_cases() {
        let p = t(&[2, 3], &[0.2, 0.3, 0.5, 0.1, 0.1, 0.8]);
        assert_eq!(kl_div(&p, &p, KlMode::Distribution).unwrap(), 0.0);
        let a = t(&[2], &[1.0, 0.0]);
        let b = t(&[2], &[0.5, 0.5]);
        assert!((kl_div(&a, &b, KlMode::Distribution).unwrap() - LN_2).abs() < 1e-15);
        let bad = t(&[2], &[0.7, 0.7]);
        assert!(matches!(kl_div(&bad, &b, KlMode::Distribution), Err(Error::Domain(_))));
        let x = t(&[2, 2], &[3.0, -1.0, 0.5, 0.5]);
        assert!(kl_div(&x, &x, KlMode::ChannelSoftmax).unwrap().abs() < 1e-15);
    }

    fn agent(cls: &[f64], reg: &[f64]) -> PredictionMaps {
        PredictionMaps::new(t(&[cls.len()], cls), t(&[1, reg.len()], reg)).unwrap()
    }

    #[test]
    fn teacher_loss_cases() {
        let w = LossWeights::default();
        let truth = vec![agent(&[1.0, 0.0], &[0.0, 0.0])];
        assert!(teacher_loss(&truth, &truth, &w).unwrap() < 1e-6);

        let preds = vec![agent(&[0.5, 0.5], &[0.5, -0.5])];
        let got = teacher_loss(&preds, &truth, &w).unwrap();
        assert!((got - (LN_2 + 2.0 * 0.125)).abs() < 1e-12);
        assert!((got - 0.9431).abs() < 1e-4);

        let reg_only = LossWeights { alpha: 0.0, ..w };
        assert!((teacher_loss(&preds, &truth, &reg_only).unwrap() - 0.25).abs() < 1e-15);
        assert!(teacher_loss(&preds, &[], &w).is_err());
    }

    #[test]
    fn cls_probabilities_validated() {
        assert!(PredictionMaps::new(t(&[1], &[1.2]), t(&[1], &[0.0])).is_err());
    }

    #[test]
    fn student_loss_arithmetic() {
        assert_eq!(student_loss(0.3, 0.5, 0.0), 0.5);
        assert!((student_loss(1e-4, 0.5, 10_000.0) - 1.5).abs() < 1e-12);
        assert_eq!(student_loss(0.0, 0.7, 10_000.0), 0.7);
    }

    #[test]
    fn kd_terms_are_independent() {
        let base = DistillTarget { features: t(&[2, 2], &[0.1, 0.4, -0.3, 0.2]), preds: agent(&[0.3, 0.9], &[0.2, 0.1]) };
        assert_eq!(kd_loss(&[base.clone()], &[base.clone()]).unwrap(), 0.0);
        let mut moved = base.clone();
        moved.features = t(&[2, 2], &[0.9, 0.4, -0.3, 0.2]);
        let total = kd_loss(&[base.clone()], &[moved.clone()]).unwrap();
        let feat_only = kl_div(&base.features, &moved.features, KlMode::ChannelSoftmax).unwrap();
        assert!(total > 0.0);
        assert!((total - feat_only).abs() < 1e-15);
    }
}
