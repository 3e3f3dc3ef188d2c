//! Feature-domain wireless channel.
//!
//! A transmitted feature map is scaled by a relative large-scale attenuation
//! and a per-frame small-scale fading magnitude, then receives element-wise
//! AWGN whose variance is set from the mean received feature power and the
//! link SNR:
//!
//! ```text
//! P_rx  = P_tx + G_tx + G_rx - PL(d, f_c)          [dBm]
//! P_n   = N0 + 10 log10(B) + NF                    [dBm]
//! SNR   = P_rx - P_n                               [dB]
//! g_rel = 10^(-(PL(d) - PL(d0)) / 20)
//! s     = g_rel * |h| * f
//! P_s   = mean(s^2)
//! sigma2 = P_s / 10^(SNR / 10)
//! f_hat = s + N(0, sigma2)
//! ```

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::rng::{tag, CounterRng};
use crate::tensor::Tensor;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Distances below this are clamped before taking logarithms.
pub const MIN_DISTANCE_M: f64 = 1.0;

/// Static radio parameters of one link direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub fc_hz: f64,
    pub bandwidth_hz: f64,
    pub ptx_dbm: f64,
    pub gtx_dbi: f64,
    pub grx_dbi: f64,
    pub nf_db: f64,
    pub n0_dbm_hz: f64,
}

impl LinkBudget {
    /// 5.9 GHz ITS band, 10 MHz, 23 dBm, 3 dBi / 3 dBi, NF 6 dB, -174 dBm/Hz.
    pub fn vehicle_default() -> Self {
        Self {
            fc_hz: 5.9e9,
            bandwidth_hz: 10e6,
            ptx_dbm: 23.0,
            gtx_dbi: 3.0,
            grx_dbi: 3.0,
            nf_db: 6.0,
            n0_dbm_hz: -174.0,
        }
    }

    /// Same as [`vehicle_default`](Self::vehicle_default) with the 6 dBi RSU
    /// transmit antenna.
    pub fn rsu_default() -> Self {
        Self { gtx_dbi: 6.0, ..Self::vehicle_default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_hz > 0.0) || !(self.fc_hz > 0.0) {
            return Err(Error::Domain(format!(
                "carrier {} Hz and bandwidth {} Hz must be positive",
                self.fc_hz, self.bandwidth_hz
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathLossModel {
    /// Free-space path loss, used for vehicle-to-infrastructure links.
    Fspl,
    /// Log-distance model `PL(d_ref) + 10 n log10(d / d_ref)` with optional
    /// log-normal shadowing; used for vehicle-to-vehicle links.
    WinnerII { exponent: f64, intercept_db: f64, dref_m: f64, shadow_sigma_db: f64 },
}

impl PathLossModel {
    /// B1 line-of-sight style parameterization: exponent 2.27, 10 m reference,
    /// intercept FSPL(10 m) + 1.84 dB, 3 dB shadowing.
    pub fn winner_ii_default(fc_hz: f64) -> Self {
        Self::WinnerII {
            exponent: 2.27,
            intercept_db: fspl_db(10.0, fc_hz) + 1.84,
            dref_m: 10.0,
            shadow_sigma_db: 3.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Self::WinnerII { exponent, dref_m, shadow_sigma_db, .. } = *self {
            if !(exponent > 0.0) || !(dref_m > 0.0) || !(shadow_sigma_db >= 0.0) {
                return Err(Error::Domain(format!("invalid WINNER II parameters {self:?}")));
            }
        }
        Ok(())
    }

    fn shadow_sigma_db(&self) -> f64 {
        match *self {
            Self::Fspl => 0.0,
            Self::WinnerII { shadow_sigma_db, .. } => shadow_sigma_db,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FadingModel {
    /// Line-of-sight plus scatter with linear K-factor; `K = inf` is pure LOS.
    Rician { k: f64 },
    Rayleigh,
}

impl FadingModel {
    pub fn rician_db(k_db: f64) -> Self {
        Self::Rician { k: 10f64.powf(k_db / 10.0) }
    }

    pub fn validate(&self) -> Result<()> {
        if let Self::Rician { k } = *self {
            if !(k >= 0.0) {
                return Err(Error::Domain(format!("Rician K must be >= 0, got {k}")));
            }
        }
        Ok(())
    }
}

/// One link realization, with every intermediate of the corruption.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ChannelDraw {
    pub d: f64,
    pub pl_db: f64,
    pub snr_db: f64,
    pub h_mag: f64,
    pub g_rel: f64,
    pub sigma2: f64,
    pub p_s: f64,
}

/// Everything needed to corrupt frames on one link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkConfig {
    pub budget: LinkBudget,
    pub path_loss: PathLossModel,
    pub fading: FadingModel,
    pub d0_m: f64,
}

/// Independent random streams consumed by one frame's corruption.
#[derive(Debug, Clone)]
pub struct ChannelStreams {
    pub shadow: CounterRng,
    pub fading: CounterRng,
    pub noise: CounterRng,
}

impl ChannelStreams {
    /// Streams for the frame sent by `agent` at `timestep`. With
    /// `shadow_per_frame = false` the shadowing draw depends on the agent only.
    pub fn for_frame(seed: u64, agent: u64, timestep: u64, shadow_per_frame: bool) -> Self {
        let shadow = if shadow_per_frame {
            CounterRng::keyed(seed, &[tag::SHADOW, agent, timestep])
        } else {
            CounterRng::keyed(seed, &[tag::SHADOW, agent])
        };
        Self {
            shadow,
            fading: CounterRng::keyed(seed, &[tag::FADING, agent, timestep]),
            noise: CounterRng::keyed(seed, &[tag::NOISE, agent, timestep]),
        }
    }
}

fn check_distance(d: f64) -> Result<f64> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::Domain(format!("distance must be positive and finite, got {d}")));
    }
    Ok(d.max(MIN_DISTANCE_M))
}

fn fspl_db(d: f64, fc_hz: f64) -> f64 {
    20.0 * d.log10() + 20.0 * fc_hz.log10() + 20.0 * (4.0 * PI / SPEED_OF_LIGHT).log10()
}

/// Deterministic large-scale path loss in dB (no shadowing).
pub fn path_loss_db(model: &PathLossModel, d: f64, fc_hz: f64) -> Result<f64> {
    let d = check_distance(d)?;
    Ok(match *model {
        PathLossModel::Fspl => fspl_db(d, fc_hz),
        PathLossModel::WinnerII { exponent, intercept_db, dref_m, .. } => {
            intercept_db + 10.0 * exponent * (d / dref_m).log10()
        }
    })
}

/// Path loss plus a zero-mean Gaussian shadowing term when the model has
/// `shadow_sigma_db > 0` and a stream is given.
pub fn path_loss_db_shadowed(
    model: &PathLossModel,
    d: f64,
    fc_hz: f64,
    shadow: Option<&mut CounterRng>,
) -> Result<f64> {
    let pl = path_loss_db(model, d, fc_hz)?;
    let sigma = model.shadow_sigma_db();
    Ok(match shadow {
        Some(rng) if sigma > 0.0 => pl + sigma * rng.normal(),
        _ => pl,
    })
}

pub fn noise_power_dbm(lb: &LinkBudget) -> f64 {
    lb.n0_dbm_hz + 10.0 * lb.bandwidth_hz.log10() + lb.nf_db
}

pub fn snr_db(lb: &LinkBudget, pl_db: f64) -> f64 {
    (lb.ptx_dbm + lb.gtx_dbi + lb.grx_dbi - pl_db) - noise_power_dbm(lb)
}

/// Attenuation relative to the reference distance `d0`, as an amplitude
/// factor.
pub fn g_rel(model: &PathLossModel, d: f64, d0: f64, fc_hz: f64) -> Result<f64> {
    let pl = path_loss_db(model, d, fc_hz)?;
    let pl0 = path_loss_db(model, d0, fc_hz)?;
    Ok(g_rel_from_db(pl, pl0))
}

fn g_rel_from_db(pl_db: f64, pl0_db: f64) -> f64 {
    10f64.powf(-(pl_db - pl0_db) / 20.0)
}

/// Draws the fading magnitude `|h|`, normalized so `E[|h|^2] = 1`.
pub fn sample_fading(model: &FadingModel, rng: &mut CounterRng) -> f64 {
    let x = rng.normal();
    let y = rng.normal();
    match *model {
        FadingModel::Rayleigh => ((x * x + y * y) / 2.0).sqrt(),
        FadingModel::Rician { k } => {
            // written so that k = inf gives nu = 1, sigma = 0
            let nu = (1.0 / (1.0 + 1.0 / k)).sqrt();
            let sigma = (1.0 / (2.0 * (k + 1.0))).sqrt();
            let (re, im) = (nu + sigma * x, sigma * y);
            (re * re + im * im).sqrt()
        }
    }
}

/// Noise variance matching `snr_db` for received power `p_s`.
pub fn noise_variance(p_s: f64, snr_db: f64) -> f64 {
    p_s / 10f64.powf(snr_db / 10.0)
}

fn mean_square(t: &Tensor) -> f64 {
    t.data().iter().map(|v| v * v).sum::<f64>() / t.numel() as f64
}

fn inject(s: Tensor, sigma2: f64, noise: &mut CounterRng) -> Tensor {
    if sigma2 == 0.0 {
        return s;
    }
    let std = sigma2.sqrt();
    let shape = s.shape().to_vec();
    let data = s.into_data().into_iter().map(|v| v + std * noise.normal()).collect();
    Tensor::from_parts(shape, data)
}

fn check_finite(f: &Tensor) -> Result<()> {
    if !f.is_finite() {
        return Err(Error::Numeric("feature map contains non-finite values".into()));
    }
    Ok(())
}

/// Passes a feature map through the full link-budget channel at distance `d`.
pub fn corrupt_feature(
    f: &Tensor,
    link: &LinkConfig,
    d: f64,
    streams: &mut ChannelStreams,
) -> Result<(Tensor, ChannelDraw)> {
    check_finite(f)?;
    link.budget.validate()?;
    link.path_loss.validate()?;
    link.fading.validate()?;
    let d = check_distance(d)?;
    let fc = link.budget.fc_hz;
    let pl_db = path_loss_db_shadowed(&link.path_loss, d, fc, Some(&mut streams.shadow))?;
    let pl0_db = path_loss_db(&link.path_loss, link.d0_m, fc)?;
    let snr = snr_db(&link.budget, pl_db);
    let g_rel = g_rel_from_db(pl_db, pl0_db);
    let h_mag = sample_fading(&link.fading, &mut streams.fading);
    let s = f.scale(g_rel * h_mag);
    let p_s = mean_square(&s);
    let sigma2 = noise_variance(p_s, snr);
    let out = inject(s, sigma2, &mut streams.noise);
    let draw = ChannelDraw { d, pl_db, snr_db: snr, h_mag, g_rel, sigma2, p_s };
    Ok((out, draw))
}

/// Corrupts with a prescribed SNR instead of the link-budget one; no
/// large-scale attenuation (`g_rel = 1`).
pub fn corrupt_at_fixed_snr(
    f: &Tensor,
    snr_db: f64,
    fading: &FadingModel,
    streams: &mut ChannelStreams,
) -> Result<(Tensor, ChannelDraw)> {
    check_finite(f)?;
    fading.validate()?;
    if snr_db.is_nan() {
        return Err(Error::Domain("SNR is NaN".into()));
    }
    let h_mag = sample_fading(fading, &mut streams.fading);
    let s = f.scale(h_mag);
    let p_s = mean_square(&s);
    let sigma2 = noise_variance(p_s, snr_db);
    let out = inject(s, sigma2, &mut streams.noise);
    let draw = ChannelDraw { d: f64::NAN, pl_db: f64::NAN, snr_db, h_mag, g_rel: 1.0, sigma2, p_s };
    Ok((out, draw))
}

/// `10 log10(mean(clean^2) / mean((noisy - clean)^2))`.
pub fn empirical_snr_db(clean: &Tensor, noisy: &Tensor) -> Result<f64> {
    let noise = noisy.sub(clean)?;
    Ok(10.0 * (mean_square(clean) / mean_square(&noise)).log10())
}
