//! Fast invariant checks run by `coopfuse selftest`.

use crate::channel::{
    corrupt_at_fixed_snr, noise_power_dbm, path_loss_db, sample_fading, ChannelStreams, FadingModel, LinkBudget,
    PathLossModel,
};
use crate::config::ScenarioConfig;
use crate::dualsa::{count_attention_flops, AttentionMode};
use crate::harness::{run_pipeline, PipelineMode};
use crate::io::{decode_tensor, encode_tensor};
use crate::losses::{kl_div, KlMode};
use crate::rng::CounterRng;
use crate::tensor::Tensor;
use crate::ugf::{cross_branch_weights, entropy_map, importance_map};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> crate::Result<(bool, String)>) -> Check {
    match f() {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check { name, passed: false, detail: e.to_string() },
    }
}

fn rand(shape: &[usize], rng: &mut CounterRng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.normal())
}

pub fn run_all() -> Vec<Check> {
    let mut rng = CounterRng::new(0x5e1f);
    let mut out = Vec::new();

    let x = rand(&[5, 7], &mut rng);
    out.push(check("softmax rows sum to one", || {
        let s = x.softmax(1)?.sum_axis(1)?;
        let err = s.data().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
        Ok((err < 1e-12, format!("max error {err:.2e}")))
    }));
    out.push(check("matmul by identity", || {
        let y = x.matmul(&Tensor::eye(7))?;
        Ok((y == x, String::new()))
    }));
    out.push(check("noise power with default budget", || {
        let p = noise_power_dbm(&LinkBudget::vehicle_default());
        Ok(((p + 98.0).abs() < 1e-9, format!("{p} dBm")))
    }));
    out.push(check("free-space loss at 1 m", || {
        let pl = path_loss_db(&PathLossModel::Fspl, 1.0, 5.9e9)?;
        Ok(((pl - 47.86).abs() < 0.01, format!("{pl:.4} dB")))
    }));
    out.push(check("fading unit power", || {
        let mut r = CounterRng::new(7);
        let n = 200_000;
        let mut worst: f64 = 0.0;
        for m in [FadingModel::Rayleigh, FadingModel::Rician { k: 0.0 }, FadingModel::rician_db(6.0)] {
            let p = (0..n).map(|_| sample_fading(&m, &mut r).powi(2)).sum::<f64>() / n as f64;
            worst = worst.max((p - 1.0).abs());
        }
        Ok((worst < 0.01, format!("max deviation {worst:.4}")))
    }));
    out.push(check("noise variance identity", || {
        let f = rand(&[8, 8, 4], &mut rng);
        let mut s = ChannelStreams::for_frame(1, 1, 0, true);
        let (_, d) = corrupt_at_fixed_snr(&f, 17.0, &FadingModel::Rayleigh, &mut s)?;
        let rel = (d.sigma2 * 10f64.powf(1.7) - d.p_s).abs() / d.p_s;
        Ok((rel < 1e-12, format!("relative error {rel:.2e}")))
    }));
    out.push(check("flop ratio law", || {
        let (h, w) = (13u64, 29u64);
        let r = count_attention_flops(h, w, 16, AttentionMode::DualSa) as f64
            / count_attention_flops(h, w, 16, AttentionMode::Full2d) as f64;
        let want = (h + w) as f64 / (h * w) as f64;
        Ok(((r - want).abs() < 1e-15, format!("{r} vs {want}")))
    }));
    out.push(check("entropy and importance bounds", || {
        let p = rand(&[4, 6, 9], &mut rng).softmax(2)?;
        let e = entropy_map(&p)?;
        let imp = importance_map(&e)?;
        let ok_e = e.data().iter().all(|&v| (-1e-12..=9f64.ln() + 1e-12).contains(&v));
        let ok_i = imp.data().iter().all(|&v| v >= (-1f64).exp() - 1e-15 && v <= 1.0);
        Ok((ok_e && ok_i, String::new()))
    }));
    out.push(check("branch weights are convex", || {
        let a = rand(&[3, 3, 1], &mut rng);
        let b = rand(&[3, 3, 1], &mut rng);
        let (xw, xh) = cross_branch_weights(&a, &b, 4)?;
        let err = xw.add(&xh)?.data().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
        Ok((err < 1e-12, format!("max error {err:.2e}")))
    }));
    out.push(check("kl of a distribution with itself", || {
        let p = rand(&[6, 5], &mut rng).softmax(1)?;
        let k = kl_div(&p, &p, KlMode::Distribution)?;
        Ok((k == 0.0, format!("{k}")))
    }));
    out.push(check("tensor file round trip", || {
        let t = rand(&[2, 3, 4], &mut rng);
        let back = decode_tensor(&encode_tensor(&t)?)?;
        let ok = back.shape() == t.shape() && back.data().iter().zip(t.data()).all(|(a, b)| *a == *b as f32 as f64);
        Ok((ok, String::new()))
    }));
    out.push(check("ideal pipeline matches itself", || {
        let cfg = ScenarioConfig::parse("height = 6\nwidth = 8\nchannels = 8\nwindow = 2")?;
        let (_, row) = run_pipeline(&cfg, PipelineMode::Ideal)?;
        Ok((row.mse_vs_ideal == 0.0, format!("mse {}", row.mse_vs_ideal)))
    }));
    out
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run_all() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
