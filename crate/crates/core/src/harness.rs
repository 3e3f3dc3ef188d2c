//! Synthetic scenes, end-to-end pipeline runs and SNR sweeps.
//!
//! Every run on a given config shares one scene and one parameter set; the
//! channel draws come from streams keyed by `(seed, agent, timestep)`, so the
//! SNR levels of a sweep see the same fading and the same unit noise pattern
//! and differ only in its scale.
//!
//! JSON report layout:
//!
//! ```text
//! {
//!   "metadata": { "seed", "config_hash", "version", "agents", "window",
//!                 "height", "width", "channels" },
//!   "rows": [ { "mode", "snr_db", "mse_vs_ideal",
//!               "cosine_similarity_vs_ideal",
//!               "entropy_stats": { "width_mean", "width_min", "width_max",
//!                                  "height_mean", "height_min", "height_max",
//!                                  "xi_width_mean" },
//!               "loss_values": { "kd_feature", "gamma_kd",
//!                                "smooth_l1_vs_ideal" } } ],
//!   "flops": [ { "shape": {...}, "full2d_flops", "dualsa_flops", "ratio",
//!                "full_module_flops", "dualsa_module_flops",
//!                "module_reduction" } ]
//! }
//! ```
//!
//! Rows are the ideal baseline (`snr_db = null`) followed by the impaired
//! runs in ascending SNR. The CSV has one line per row with the columns of
//! [`CSV_COLUMNS`].

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::cache::{FeatureCache, FeatureMap};
use crate::channel::{corrupt_at_fixed_snr, corrupt_feature, ChannelDraw, ChannelStreams};
use crate::config::{ScenarioConfig, Sweep};
use crate::dualsa::{flop_report, FlopReport, FlopShape};
use crate::error::{Error, Result};
use crate::fusion::{FusionOutput, FusionParams};
use crate::io::save_tensor;
use crate::losses::{kl_div, smooth_l1, KlMode, LossWeights};
use crate::rng::{tag, CounterRng};
use crate::tensor::Tensor;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Feature shape of the reference BEV backbone.
pub const REFERENCE_HEIGHT: u64 = 48;
pub const REFERENCE_WIDTH: u64 = 176;

pub const CSV_COLUMNS: [&str; 14] = [
    "mode",
    "snr_db",
    "mse_vs_ideal",
    "cosine_similarity_vs_ideal",
    "entropy_width_mean",
    "entropy_width_min",
    "entropy_width_max",
    "entropy_height_mean",
    "entropy_height_min",
    "entropy_height_max",
    "xi_width_mean",
    "kd_feature",
    "gamma_kd",
    "smooth_l1_vs_ideal",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PipelineMode {
    Ideal,
    /// Link-budget channel at the configured geometry.
    Impaired,
    /// Prescribed SNR in dB, no large-scale attenuation.
    FixedSnr(f64),
}

impl PipelineMode {
    fn name(self) -> &'static str {
        match self {
            Self::Ideal => "ideal",
            Self::Impaired => "impaired",
            Self::FixedSnr(_) => "fixed-snr",
        }
    }

    /// Short label used for dumped file names.
    pub fn label(self) -> String {
        match self {
            Self::FixedSnr(v) => format!("snr_{v}"),
            other => other.name().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropyStats {
    pub width_mean: f64,
    pub width_min: f64,
    pub width_max: f64,
    pub height_mean: f64,
    pub height_min: f64,
    pub height_max: f64,
    pub xi_width_mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossValues {
    /// Channel-softmax KL from the ideal fused feature to this one.
    pub kd_feature: f64,
    /// `kd_feature` scaled by the distillation weight.
    pub gamma_kd: f64,
    pub smooth_l1_vs_ideal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub mode: String,
    pub snr_db: Option<f64>,
    pub mse_vs_ideal: f64,
    pub cosine_similarity_vs_ideal: f64,
    pub entropy_stats: EntropyStats,
    pub loss_values: LossValues,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportMetadata {
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
    pub agents: usize,
    pub window: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub metadata: ReportMetadata,
    pub rows: Vec<ReportRow>,
    pub flops: Vec<FlopReport>,
}

/// `T` frames for each of the `N` agents, indexed `[agent][t]`.
///
/// Blobs live in a shared grid and drift by at most one cell per frame. Each
/// agent sees a random subset of them (probability `scene.visibility`) at an
/// agent-specific gain, plus its own background noise.
pub fn synth_scene(cfg: &ScenarioConfig) -> Result<Vec<Vec<FeatureMap>>> {
    cfg.validate()?;
    let (n, t_len, h, w, c) = (cfg.agents, cfg.window, cfg.height, cfg.width, cfg.channels);
    let sc = &cfg.scene;
    let mut rng = CounterRng::keyed(cfg.seed, &[tag::SCENE]);

    struct Blob {
        cy: f64,
        cx: f64,
        vy: f64,
        vx: f64,
        sigma: f64,
        profile: Vec<f64>,
    }
    let blobs: Vec<Blob> = (0..sc.blobs)
        .map(|_| {
            let cy = rng.uniform_range(0.0, h as f64);
            let cx = rng.uniform_range(0.0, w as f64);
            let heading = rng.uniform_range(0.0, std::f64::consts::TAU);
            let speed = rng.uniform();
            let sigma = rng.uniform_range(sc.sigma_min, sc.sigma_max.max(sc.sigma_min));
            let profile = (0..c).map(|_| sc.amplitude * rng.uniform()).collect();
            Blob { cy, cx, vy: speed * heading.sin(), vx: speed * heading.cos(), sigma, profile }
        })
        .collect();
    let seen: Vec<Vec<bool>> = (0..n)
        .map(|_| (0..sc.blobs).map(|_| rng.uniform() < sc.visibility).collect())
        .collect();
    let gains: Vec<f64> = (0..n).map(|_| rng.uniform_range(0.7, 1.0)).collect();

    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let mut frames = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let mut bg = CounterRng::keyed(cfg.seed, &[tag::SCENE, j as u64 + 1, t as u64]);
            let mut data: Vec<f64> = (0..h * w * c).map(|_| sc.background_std * bg.normal()).collect();
            for (b, blob) in blobs.iter().enumerate() {
                if !seen[j][b] {
                    continue;
                }
                let cy = blob.cy + blob.vy * t as f64;
                let cx = blob.cx + blob.vx * t as f64;
                let inv = 1.0 / (2.0 * blob.sigma * blob.sigma);
                for y in 0..h {
                    let dy = y as f64 - cy;
                    for x in 0..w {
                        let dx = x as f64 - cx;
                        let g = gains[j] * (-(dy * dy + dx * dx) * inv).exp();
                        if g < 1e-12 {
                            continue;
                        }
                        let base = (y * w + x) * c;
                        for (v, p) in data[base..base + c].iter_mut().zip(&blob.profile) {
                            *v += g * p;
                        }
                    }
                }
            }
            frames.push(FeatureMap { agent_id: j, timestep: t as u64, data: Tensor::new(vec![h, w, c], data)? });
        }
        out.push(frames);
    }
    Ok(out)
}

/// A scene, its parameters and the ideal-channel reference output.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub cfg: ScenarioConfig,
    pub scene: Vec<Vec<FeatureMap>>,
    pub params: FusionParams,
    pub ideal: FusionOutput,
}

/// Fused output of one mode together with the channel draws of every
/// received frame.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output: FusionOutput,
    pub draws: Vec<ChannelDraw>,
    pub row: ReportRow,
}

impl Prepared {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let params = FusionParams::init(&cfg.fusion_dims(), cfg.seed)?;
        Self::with_params(cfg, params)
    }

    pub fn with_params(cfg: &ScenarioConfig, params: FusionParams) -> Result<Self> {
        cfg.validate()?;
        let scene = synth_scene(cfg)?;
        let (ideal, _) = fuse(cfg, &scene, &params, PipelineMode::Ideal)?;
        Ok(Self { cfg: cfg.clone(), scene, params, ideal })
    }

    pub fn run(&self, mode: PipelineMode) -> Result<RunOutcome> {
        let (output, draws) = if mode == PipelineMode::Ideal {
            (self.ideal.clone(), Vec::new())
        } else {
            fuse(&self.cfg, &self.scene, &self.params, mode)?
        };
        let snr_db = match mode {
            PipelineMode::Ideal => None,
            PipelineMode::FixedSnr(v) => Some(v),
            PipelineMode::Impaired => {
                let mean = draws.iter().map(|d| d.snr_db).sum::<f64>() / draws.len().max(1) as f64;
                mean.is_finite().then_some(mean)
            }
        };
        let row = make_row(mode, snr_db, self.ideal.fused(), &output)?;
        Ok(RunOutcome { output, draws, row })
    }
}

fn fuse(
    cfg: &ScenarioConfig,
    scene: &[Vec<FeatureMap>],
    params: &FusionParams,
    mode: PipelineMode,
) -> Result<(FusionOutput, Vec<ChannelDraw>)> {
    let ego = cfg.ego;
    let mut cache = FeatureCache::new((0..cfg.agents).collect(), ego, cfg.window, [cfg.height, cfg.width, cfg.channels])?;
    let mut draws = Vec::new();
    for t in 0..cfg.window {
        let mut received = Vec::with_capacity(cfg.agents - 1);
        for (j, frames) in scene.iter().enumerate() {
            if j == ego {
                continue;
            }
            let frame = &frames[t];
            let data = match mode {
                PipelineMode::Ideal => frame.data.clone(),
                PipelineMode::Impaired | PipelineMode::FixedSnr(_) => {
                    let link = cfg.link_to_ego(j);
                    let mut streams =
                        ChannelStreams::for_frame(cfg.seed, j as u64, frame.timestep, cfg.channel.shadow_per_frame);
                    let (data, draw) = match mode {
                        PipelineMode::FixedSnr(v) => corrupt_at_fixed_snr(&frame.data, v, &link.fading, &mut streams)?,
                        _ => corrupt_feature(&frame.data, &link, cfg.distance_to_ego(j), &mut streams)?,
                    };
                    draws.push(draw);
                    data
                }
            };
            received.push(FeatureMap { agent_id: j, timestep: frame.timestep, data });
        }
        cache.push_frame(scene[ego][t].clone(), received)?;
    }
    let output = params.forward(&cache.assemble()?)?;
    if !output.fused().is_finite() {
        return Err(Error::Numeric(format!("fused output of {} run contains NaN or infinity", mode.label())));
    }
    Ok((output, draws))
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    let d = a.sub(b)?;
    Ok(d.data().iter().map(|v| v * v).sum::<f64>() / d.numel() as f64)
}

/// Cosine of the angle between the flattened tensors; two zero tensors count
/// as identical.
pub fn cosine_similarity(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!("cosine of {:?} and {:?}", a.shape(), b.shape())));
    }
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.data().iter().zip(b.data()) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 && bb == 0.0 {
        return Ok(1.0);
    }
    if aa == 0.0 || bb == 0.0 {
        return Ok(0.0);
    }
    Ok((ab / (aa * bb).sqrt()).clamp(-1.0, 1.0))
}

fn entropy_stats(out: &FusionOutput) -> EntropyStats {
    let (ew, eh) = (&out.ugf.width.entropy, &out.ugf.height.entropy);
    EntropyStats {
        width_mean: ew.mean(),
        width_min: ew.min(),
        width_max: ew.max(),
        height_mean: eh.mean(),
        height_min: eh.min(),
        height_max: eh.max(),
        xi_width_mean: out.ugf.width.weight.mean(),
    }
}

fn make_row(mode: PipelineMode, snr_db: Option<f64>, ideal: &Tensor, out: &FusionOutput) -> Result<ReportRow> {
    let fused = out.fused();
    let kd_feature = kl_div(ideal, fused, KlMode::ChannelSoftmax)?;
    let row = ReportRow {
        mode: mode.name().to_string(),
        snr_db,
        mse_vs_ideal: mse(fused, ideal)?,
        cosine_similarity_vs_ideal: cosine_similarity(fused, ideal)?,
        entropy_stats: entropy_stats(out),
        loss_values: LossValues {
            kd_feature,
            gamma_kd: LossWeights::default().gamma * kd_feature,
            smooth_l1_vs_ideal: smooth_l1(fused, ideal)?,
        },
    };
    let e = &row.entropy_stats;
    let l = &row.loss_values;
    let values = [
        row.mse_vs_ideal,
        row.cosine_similarity_vs_ideal,
        e.width_mean,
        e.width_min,
        e.width_max,
        e.height_mean,
        e.height_min,
        e.height_max,
        e.xi_width_mean,
        l.kd_feature,
        l.gamma_kd,
        l.smooth_l1_vs_ideal,
    ];
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite metric in {} row", mode.label())));
    }
    Ok(row)
}

/// One pipeline run; returns the fused feature and its report row.
pub fn run_pipeline(cfg: &ScenarioConfig, mode: PipelineMode) -> Result<(Tensor, ReportRow)> {
    let outcome = Prepared::new(cfg)?.run(mode)?;
    Ok((outcome.output.ugf.fused, outcome.row))
}

/// Attention FLOPs at the configured feature shape and at the reference
/// 48 x 176 shape, both with the configured channel widths.
pub fn flop_rows(cfg: &ScenarioConfig) -> Vec<FlopReport> {
    let d = cfg.fusion_dims();
    let shape = |height, width| FlopShape {
        height,
        width,
        channels: cfg.channels as u64,
        heads: d.dualsa_heads as u64,
        head_dim: d.dualsa_head_dim as u64,
        gdfn_hidden: d.gdfn_hidden as u64,
    };
    vec![
        flop_report(shape(cfg.height as u64, cfg.width as u64)),
        flop_report(shape(REFERENCE_HEIGHT, REFERENCE_WIDTH)),
    ]
}

pub fn sweep_modes(cfg: &ScenarioConfig) -> Vec<PipelineMode> {
    let mut modes = vec![PipelineMode::Ideal];
    match &cfg.sweep {
        Sweep::LinkBudget => modes.push(PipelineMode::Impaired),
        Sweep::Snr(levels) => {
            let mut levels = levels.clone();
            levels.sort_by(f64::total_cmp);
            modes.extend(levels.into_iter().map(PipelineMode::FixedSnr));
        }
    }
    modes
}

/// Sweep keeping every fused output, labelled for dumping.
pub fn sweep_detailed(cfg: &ScenarioConfig) -> Result<(SweepReport, Vec<(String, FusionOutput)>)> {
    let prepared = Prepared::new(cfg)?;
    let modes = sweep_modes(cfg);
    let outcomes: Vec<RunOutcome> = modes.par_iter().map(|&m| prepared.run(m)).collect::<Result<_>>()?;
    let mut rows: Vec<(PipelineMode, RunOutcome)> = modes.into_iter().zip(outcomes).collect();
    rows.sort_by(|(_, a), (_, b)| match (a.row.snr_db, b.row.snr_db) {
        (None, None) => std::cmp::Ordering::Equal,
        (None, Some(_)) => std::cmp::Ordering::Less,
        (Some(_), None) => std::cmp::Ordering::Greater,
        (Some(x), Some(y)) => x.total_cmp(&y),
    });
    let report = SweepReport {
        metadata: ReportMetadata {
            seed: cfg.seed,
            config_hash: cfg.hash(),
            version: VERSION.to_string(),
            agents: cfg.agents,
            window: cfg.window,
            height: cfg.height,
            width: cfg.width,
            channels: cfg.channels,
        },
        rows: rows.iter().map(|(_, o)| o.row.clone()).collect(),
        flops: flop_rows(cfg),
    };
    let outputs = rows.into_iter().map(|(m, o)| (m.label(), o.output)).collect();
    Ok((report, outputs))
}

pub fn sweep(cfg: &ScenarioConfig) -> Result<SweepReport> {
    Ok(sweep_detailed(cfg)?.0)
}

pub fn report_json(report: &SweepReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report).map_err(|e| Error::Numeric(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_csv<W: Write>(report: &SweepReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for r in &report.rows {
        let e = &r.entropy_stats;
        let l = &r.loss_values;
        let mut rec = vec![r.mode.clone(), r.snr_db.map(|v| v.to_string()).unwrap_or_default()];
        rec.extend(
            [
                r.mse_vs_ideal,
                r.cosine_similarity_vs_ideal,
                e.width_mean,
                e.width_min,
                e.width_max,
                e.height_mean,
                e.height_min,
                e.height_max,
                e.xi_width_mean,
                l.kd_feature,
                l.gamma_kd,
                l.smooth_l1_vs_ideal,
            ]
            .iter()
            .map(|v| v.to_string()),
        );
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes fused features, entropy and importance maps and the width-branch
/// weight of each run as tensor files named `<label>.<map>.aff`.
pub fn dump_maps(dir: impl AsRef<Path>, outputs: &[(String, FusionOutput)]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for (label, out) in outputs {
        let maps = [
            ("fused", &out.ugf.fused),
            ("entropy_width", &out.ugf.width.entropy),
            ("entropy_height", &out.ugf.height.entropy),
            ("importance_width", &out.ugf.width.importance),
            ("importance_height", &out.ugf.height.importance),
            ("xi_width", &out.ugf.width.weight),
        ];
        for (name, t) in maps {
            save_tensor(dir.join(format!("{label}.{name}.aff")), t)?;
        }
    }
    Ok(())
}
