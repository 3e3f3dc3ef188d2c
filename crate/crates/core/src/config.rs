//! Scenario configuration: a flat `key = value` text format.
//!
//! Blank lines are ignored and `#` starts a comment. Every key has a default,
//! so an empty file is a valid configuration. Values given on the command
//! line go through [`ScenarioConfig::set`] after the file is read and win
//! over it.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `agents` | 3 | number of agents N |
//! | `window` | 3 | frames per agent T |
//! | `height`, `width`, `channels` | 24, 88, 32 | feature map H, W, C |
//! | `ego` | 0 | index of the ego agent |
//! | `positions` | line along x, 20 m apart | `x,y; x,y; ...` in meters |
//! | `kinds` | all `vehicle` | `vehicle` or `rsu` per agent, comma separated |
//! | `seed` | 0 | master seed |
//! | `sweep` | `-10,0,10,20,30` | SNR grid in dB, or `link-budget` |
//! | `mata.heads`, `mata.head_dim`, `mata.ff_dim` | 8, C/8, 4C | aggregation attention |
//! | `dualsa.heads`, `dualsa.head_dim`, `dualsa.gdfn_hidden` | 4, C/4, 2C | spatial branches |
//! | `ugf.tau` | 1 | channel softmax temperature |
//! | `scene.blobs` | 6 | Gaussian blobs per scene |
//! | `scene.sigma_min`, `scene.sigma_max` | 1.5, 4 | blob widths in cells |
//! | `scene.amplitude` | 1 | blob amplitude scale |
//! | `scene.visibility` | 0.8 | chance an agent observes a given blob |
//! | `scene.background_std` | 0.05 | per-element background noise |
//! | `fc_hz` | 5.9e9 | carrier |
//! | `bandwidth_hz` | 1e7 | bandwidth |
//! | `ptx_dbm` | 23 | transmit power |
//! | `gtx_dbi_vehicle`, `gtx_dbi_rsu`, `grx_dbi` | 3, 6, 3 | antenna gains |
//! | `nf_db`, `n0_dbm_hz` | 6, -174 | noise figure, noise density |
//! | `path_loss.model` | `auto` | `auto`, `fspl` or `winner2` |
//! | `path_loss.exponent` | 2.27 | log-distance exponent |
//! | `path_loss.intercept_db` | FSPL(dref) + 1.84 | loss at `dref_m` |
//! | `path_loss.dref_m` | 10 | reference distance |
//! | `path_loss.shadow_sigma_db` | 3 | log-normal shadowing |
//! | `path_loss.shadowing` | `per-frame` | `per-frame` or `fixed` |
//! | `fading.model` | `auto` | `auto`, `rician`, `rayleigh` or `none` |
//! | `fading.k_db` | 6 | Rician K-factor |
//! | `d0_m` | 10 | reference distance of the relative gain |
//!
//! With `auto`, a link touching an RSU uses free-space loss and Rician
//! fading; a vehicle-to-vehicle link uses the log-distance model and
//! Rayleigh fading.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::channel::{path_loss_db, FadingModel, LinkBudget, LinkConfig, PathLossModel};
use crate::error::{Error, Result};
use crate::fusion::FusionDims;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentKind {
    Vehicle,
    Rsu,
}

impl AgentKind {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "vehicle" | "v" => Ok(Self::Vehicle),
            "rsu" | "infrastructure" => Ok(Self::Rsu),
            _ => Err(Error::Config(format!("unknown agent kind {s:?}"))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Vehicle => "vehicle",
            Self::Rsu => "rsu",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    Snr(Vec<f64>),
    /// One impaired run at the SNR the link budget gives each sender.
    LinkBudget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathLossChoice {
    Auto,
    Fspl,
    Winner2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FadingChoice {
    Auto,
    Rician,
    Rayleigh,
    /// `|h| = 1`.
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub blobs: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub amplitude: f64,
    pub visibility: f64,
    pub background_std: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self { blobs: 6, sigma_min: 1.5, sigma_max: 4.0, amplitude: 1.0, visibility: 0.8, background_std: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub fc_hz: f64,
    pub bandwidth_hz: f64,
    pub ptx_dbm: f64,
    pub gtx_dbi_vehicle: f64,
    pub gtx_dbi_rsu: f64,
    pub grx_dbi: f64,
    pub nf_db: f64,
    pub n0_dbm_hz: f64,
    pub path_loss: PathLossChoice,
    pub exponent: f64,
    /// `None` means FSPL at `dref_m` plus 1.84 dB.
    pub intercept_db: Option<f64>,
    pub dref_m: f64,
    pub shadow_sigma_db: f64,
    pub shadow_per_frame: bool,
    pub fading: FadingChoice,
    pub k_db: f64,
    pub d0_m: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        let lb = LinkBudget::vehicle_default();
        Self {
            fc_hz: lb.fc_hz,
            bandwidth_hz: lb.bandwidth_hz,
            ptx_dbm: lb.ptx_dbm,
            gtx_dbi_vehicle: lb.gtx_dbi,
            gtx_dbi_rsu: LinkBudget::rsu_default().gtx_dbi,
            grx_dbi: lb.grx_dbi,
            nf_db: lb.nf_db,
            n0_dbm_hz: lb.n0_dbm_hz,
            path_loss: PathLossChoice::Auto,
            exponent: 2.27,
            intercept_db: None,
            dref_m: 10.0,
            shadow_sigma_db: 3.0,
            shadow_per_frame: true,
            fading: FadingChoice::Auto,
            k_db: 6.0,
            d0_m: 10.0,
        }
    }
}

impl ChannelConfig {
    /// Link from a sender of kind `tx` to a receiver of kind `rx`.
    pub fn link(&self, tx: AgentKind, rx: AgentKind) -> LinkConfig {
        let infra = tx == AgentKind::Rsu || rx == AgentKind::Rsu;
        let budget = LinkBudget {
            fc_hz: self.fc_hz,
            bandwidth_hz: self.bandwidth_hz,
            ptx_dbm: self.ptx_dbm,
            gtx_dbi: if tx == AgentKind::Rsu { self.gtx_dbi_rsu } else { self.gtx_dbi_vehicle },
            grx_dbi: self.grx_dbi,
            nf_db: self.nf_db,
            n0_dbm_hz: self.n0_dbm_hz,
        };
        let path_loss = match self.path_loss {
            PathLossChoice::Fspl => PathLossModel::Fspl,
            PathLossChoice::Winner2 => self.winner_model(),
            PathLossChoice::Auto if infra => PathLossModel::Fspl,
            PathLossChoice::Auto => self.winner_model(),
        };
        LinkConfig { budget, path_loss, fading: self.fading_for(infra), d0_m: self.d0_m }
    }

    /// Log-distance model; without an explicit intercept, FSPL at `dref_m`
    /// plus 1.84 dB.
    pub fn winner_model(&self) -> PathLossModel {
        let intercept_db = self.intercept_db.unwrap_or_else(|| {
            path_loss_db(&PathLossModel::Fspl, self.dref_m, self.fc_hz).unwrap_or(f64::NAN) + 1.84
        });
        PathLossModel::WinnerII {
            exponent: self.exponent,
            intercept_db,
            dref_m: self.dref_m,
            shadow_sigma_db: self.shadow_sigma_db,
        }
    }

    fn fading_for(&self, infra: bool) -> FadingModel {
        match self.fading {
            FadingChoice::Rician => FadingModel::rician_db(self.k_db),
            FadingChoice::Rayleigh => FadingModel::Rayleigh,
            FadingChoice::None => FadingModel::Rician { k: f64::INFINITY },
            FadingChoice::Auto if infra => FadingModel::rician_db(self.k_db),
            FadingChoice::Auto => FadingModel::Rayleigh,
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("fc_hz", self.fc_hz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("path_loss.exponent", self.exponent),
            ("path_loss.dref_m", self.dref_m),
            ("d0_m", self.d0_m),
        ];
        for (k, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{k} must be positive and finite, got {v}")));
            }
        }
        if !(self.shadow_sigma_db >= 0.0) {
            return Err(Error::Config(format!("path_loss.shadow_sigma_db must be >= 0, got {}", self.shadow_sigma_db)));
        }
        if self.k_db.is_nan() {
            return Err(Error::Config("fading.k_db is NaN".into()));
        }
        let finite = [
            ("ptx_dbm", self.ptx_dbm),
            ("gtx_dbi_vehicle", self.gtx_dbi_vehicle),
            ("gtx_dbi_rsu", self.gtx_dbi_rsu),
            ("grx_dbi", self.grx_dbi),
            ("nf_db", self.nf_db),
            ("n0_dbm_hz", self.n0_dbm_hz),
        ];
        for (k, v) in finite {
            // +inf transmit power is allowed as a noise-free proxy
            if v.is_nan() || (k != "ptx_dbm" && v.is_infinite()) {
                return Err(Error::Config(format!("{k} must be finite, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub agents: usize,
    pub window: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub ego: usize,
    /// Empty means the default layout.
    pub positions: Vec<[f64; 2]>,
    /// Empty means all vehicles.
    pub kinds: Vec<AgentKind>,
    pub seed: u64,
    pub sweep: Sweep,
    pub mata_heads: Option<usize>,
    pub mata_head_dim: Option<usize>,
    pub mata_ff_dim: Option<usize>,
    pub dualsa_heads: Option<usize>,
    pub dualsa_head_dim: Option<usize>,
    pub gdfn_hidden: Option<usize>,
    pub tau: f64,
    pub scene: SceneConfig,
    pub channel: ChannelConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            agents: 3,
            window: 3,
            height: 24,
            width: 88,
            channels: 32,
            ego: 0,
            positions: Vec::new(),
            kinds: Vec::new(),
            seed: 0,
            sweep: Sweep::Snr(vec![-10.0, 0.0, 10.0, 20.0, 30.0]),
            mata_heads: None,
            mata_head_dim: None,
            mata_ff_dim: None,
            dualsa_heads: None,
            dualsa_head_dim: None,
            gdfn_hidden: None,
            tau: 1.0,
            scene: SceneConfig::default(),
            channel: ChannelConfig::default(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|s| parse_num(key, s.trim())).collect()
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", lineno + 1)));
            }
            cfg.set(key, value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", lineno + 1, strip_prefix(&e))))?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let ch = &mut self.channel;
        let sc = &mut self.scene;
        match key {
            "agents" => self.agents = parse_num(key, value)?,
            "window" => self.window = parse_num(key, value)?,
            "height" => self.height = parse_num(key, value)?,
            "width" => self.width = parse_num(key, value)?,
            "channels" => self.channels = parse_num(key, value)?,
            "ego" => self.ego = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "positions" => {
                self.positions = value
                    .split(';')
                    .filter(|p| !p.trim().is_empty())
                    .map(|p| {
                        let xy = parse_list(key, p)?;
                        match xy[..] {
                            [x, y] => Ok([x, y]),
                            _ => Err(Error::Config(format!("positions: expected `x,y`, got {p:?}"))),
                        }
                    })
                    .collect::<Result<_>>()?
            }
            "kinds" => {
                self.kinds = value.split(',').map(|s| AgentKind::parse(s.trim())).collect::<Result<_>>()?
            }
            "sweep" => {
                self.sweep = if value == "link-budget" {
                    Sweep::LinkBudget
                } else {
                    Sweep::Snr(parse_list(key, value)?)
                }
            }
            "mata.heads" => self.mata_heads = Some(parse_num(key, value)?),
            "mata.head_dim" => self.mata_head_dim = Some(parse_num(key, value)?),
            "mata.ff_dim" => self.mata_ff_dim = Some(parse_num(key, value)?),
            "dualsa.heads" => self.dualsa_heads = Some(parse_num(key, value)?),
            "dualsa.head_dim" => self.dualsa_head_dim = Some(parse_num(key, value)?),
            "dualsa.gdfn_hidden" => self.gdfn_hidden = Some(parse_num(key, value)?),
            "ugf.tau" => self.tau = parse_num(key, value)?,
            "scene.blobs" => sc.blobs = parse_num(key, value)?,
            "scene.sigma_min" => sc.sigma_min = parse_num(key, value)?,
            "scene.sigma_max" => sc.sigma_max = parse_num(key, value)?,
            "scene.amplitude" => sc.amplitude = parse_num(key, value)?,
            "scene.visibility" => sc.visibility = parse_num(key, value)?,
            "scene.background_std" => sc.background_std = parse_num(key, value)?,
            "fc_hz" => ch.fc_hz = parse_num(key, value)?,
            "bandwidth_hz" => ch.bandwidth_hz = parse_num(key, value)?,
            "ptx_dbm" => ch.ptx_dbm = parse_num(key, value)?,
            "gtx_dbi_vehicle" => ch.gtx_dbi_vehicle = parse_num(key, value)?,
            "gtx_dbi_rsu" => ch.gtx_dbi_rsu = parse_num(key, value)?,
            "grx_dbi" => ch.grx_dbi = parse_num(key, value)?,
            "nf_db" => ch.nf_db = parse_num(key, value)?,
            "n0_dbm_hz" => ch.n0_dbm_hz = parse_num(key, value)?,
            "path_loss.model" => {
                ch.path_loss = match value {
                    "auto" => PathLossChoice::Auto,
                    "fspl" => PathLossChoice::Fspl,
                    "winner2" | "winner-ii" => PathLossChoice::Winner2,
                    _ => return Err(Error::Config(format!("path_loss.model: unknown model {value:?}"))),
                }
            }
            "path_loss.exponent" => ch.exponent = parse_num(key, value)?,
            "path_loss.intercept_db" => ch.intercept_db = Some(parse_num(key, value)?),
            "path_loss.dref_m" => ch.dref_m = parse_num(key, value)?,
            "path_loss.shadow_sigma_db" => ch.shadow_sigma_db = parse_num(key, value)?,
            "path_loss.shadowing" => {
                ch.shadow_per_frame = match value {
                    "per-frame" => true,
                    "fixed" => false,
                    _ => return Err(Error::Config(format!("path_loss.shadowing: expected per-frame or fixed, got {value:?}"))),
                }
            }
            "fading.model" => {
                ch.fading = match value {
                    "auto" => FadingChoice::Auto,
                    "rician" => FadingChoice::Rician,
                    "rayleigh" => FadingChoice::Rayleigh,
                    "none" => FadingChoice::None,
                    _ => return Err(Error::Config(format!("fading.model: unknown model {value:?}"))),
                }
            }
            "fading.k_db" => ch.k_db = parse_num(key, value)?,
            "d0_m" => ch.d0_m = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key=value` and applies it.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("agents", self.agents),
            ("window", self.window),
            ("height", self.height),
            ("width", self.width),
            ("channels", self.channels),
        ];
        for (k, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be at least 1")));
            }
        }
        if self.ego >= self.agents {
            return Err(Error::Config(format!("ego index {} out of range for {} agents", self.ego, self.agents)));
        }
        if !self.positions.is_empty() && self.positions.len() != self.agents {
            return Err(Error::Config(format!("{} positions given for {} agents", self.positions.len(), self.agents)));
        }
        if self.positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("positions must be finite".into()));
        }
        if !self.kinds.is_empty() && self.kinds.len() != self.agents {
            return Err(Error::Config(format!("{} kinds given for {} agents", self.kinds.len(), self.agents)));
        }
        if let Sweep::Snr(v) = &self.sweep {
            if v.is_empty() || v.iter().any(|s| s.is_nan()) {
                return Err(Error::Config("sweep needs at least one SNR value, none NaN".into()));
            }
        }
        let sc = &self.scene;
        if !(sc.sigma_min > 0.0 && sc.sigma_max >= sc.sigma_min) {
            return Err(Error::Config(format!(
                "scene blob widths need 0 < sigma_min <= sigma_max, got {} and {}",
                sc.sigma_min, sc.sigma_max
            )));
        }
        if !(0.0..=1.0).contains(&sc.visibility) {
            return Err(Error::Config(format!("scene.visibility must lie in [0, 1], got {}", sc.visibility)));
        }
        if !(sc.amplitude.is_finite() && sc.background_std >= 0.0 && sc.background_std.is_finite()) {
            return Err(Error::Config("scene.amplitude and scene.background_std must be finite, std >= 0".into()));
        }
        self.channel.validate()?;
        self.fusion_dims()
            .validate()
            .map_err(|e| Error::Config(strip_prefix(&e)))?;
        let positions = self.positions();
        let ego = positions[self.ego];
        for (j, p) in positions.iter().enumerate() {
            if j != self.ego && p == &ego {
                return Err(Error::Config(format!("agent {j} shares the ego position; distance must be positive")));
            }
        }
        Ok(())
    }

    pub fn fusion_dims(&self) -> FusionDims {
        let d = FusionDims::for_channels(self.channels);
        FusionDims {
            channels: self.channels,
            mata_heads: self.mata_heads.unwrap_or(d.mata_heads),
            mata_head_dim: self.mata_head_dim.unwrap_or(d.mata_head_dim),
            mata_ff_dim: self.mata_ff_dim.unwrap_or(d.mata_ff_dim),
            dualsa_heads: self.dualsa_heads.unwrap_or(d.dualsa_heads),
            dualsa_head_dim: self.dualsa_head_dim.unwrap_or(d.dualsa_head_dim),
            gdfn_hidden: self.gdfn_hidden.unwrap_or(d.gdfn_hidden),
            tau: self.tau,
        }
    }

    /// Agent positions, defaulting to a line along x with 20 m spacing
    /// starting at the ego.
    pub fn positions(&self) -> Vec<[f64; 2]> {
        if !self.positions.is_empty() {
            return self.positions.clone();
        }
        (0..self.agents)
            .map(|j| [20.0 * (j as f64 - self.ego as f64), 0.0])
            .collect()
    }

    pub fn kinds(&self) -> Vec<AgentKind> {
        if self.kinds.is_empty() {
            vec![AgentKind::Vehicle; self.agents]
        } else {
            self.kinds.clone()
        }
    }

    /// Distance from agent `j` to the ego.
    pub fn distance_to_ego(&self, j: usize) -> f64 {
        let p = self.positions();
        let (a, b) = (p[j], p[self.ego]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }

    /// Link used by agent `j` to reach the ego.
    pub fn link_to_ego(&self, j: usize) -> LinkConfig {
        let kinds = self.kinds();
        self.channel.link(kinds[j], kinds[self.ego])
    }

    /// Every setting with defaults resolved, one `key = value` per line in a
    /// fixed order. Parsing this text gives back an equivalent config.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        let d = self.fusion_dims();
        let ch = &self.channel;
        let sc = &self.scene;
        let positions: Vec<String> = self.positions().iter().map(|p| format!("{:?},{:?}", p[0], p[1])).collect();
        let kinds: Vec<&str> = self.kinds().iter().map(|k| k.name()).collect();
        let sweep = match &self.sweep {
            Sweep::LinkBudget => "link-budget".to_string(),
            Sweep::Snr(v) => v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(","),
        };
        let intercept = match ch.winner_model() {
            PathLossModel::WinnerII { intercept_db, .. } => format!("{intercept_db:?}"),
            PathLossModel::Fspl => unreachable!(),
        };
        let entries: Vec<(&str, String)> = vec![
            ("agents", self.agents.to_string()),
            ("window", self.window.to_string()),
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("channels", self.channels.to_string()),
            ("ego", self.ego.to_string()),
            ("positions", positions.join("; ")),
            ("kinds", kinds.join(",")),
            ("seed", self.seed.to_string()),
            ("sweep", sweep),
            ("mata.heads", d.mata_heads.to_string()),
            ("mata.head_dim", d.mata_head_dim.to_string()),
            ("mata.ff_dim", d.mata_ff_dim.to_string()),
            ("dualsa.heads", d.dualsa_heads.to_string()),
            ("dualsa.head_dim", d.dualsa_head_dim.to_string()),
            ("dualsa.gdfn_hidden", d.gdfn_hidden.to_string()),
            ("ugf.tau", format!("{:?}", d.tau)),
            ("scene.blobs", sc.blobs.to_string()),
            ("scene.sigma_min", format!("{:?}", sc.sigma_min)),
            ("scene.sigma_max", format!("{:?}", sc.sigma_max)),
            ("scene.amplitude", format!("{:?}", sc.amplitude)),
            ("scene.visibility", format!("{:?}", sc.visibility)),
            ("scene.background_std", format!("{:?}", sc.background_std)),
            ("fc_hz", format!("{:?}", ch.fc_hz)),
            ("bandwidth_hz", format!("{:?}", ch.bandwidth_hz)),
            ("ptx_dbm", format!("{:?}", ch.ptx_dbm)),
            ("gtx_dbi_vehicle", format!("{:?}", ch.gtx_dbi_vehicle)),
            ("gtx_dbi_rsu", format!("{:?}", ch.gtx_dbi_rsu)),
            ("grx_dbi", format!("{:?}", ch.grx_dbi)),
            ("nf_db", format!("{:?}", ch.nf_db)),
            ("n0_dbm_hz", format!("{:?}", ch.n0_dbm_hz)),
            (
                "path_loss.model",
                match ch.path_loss {
                    PathLossChoice::Auto => "auto",
                    PathLossChoice::Fspl => "fspl",
                    PathLossChoice::Winner2 => "winner2",
                }
                .into(),
            ),
            ("path_loss.exponent", format!("{:?}", ch.exponent)),
            ("path_loss.intercept_db", intercept),
            ("path_loss.dref_m", format!("{:?}", ch.dref_m)),
            ("path_loss.shadow_sigma_db", format!("{:?}", ch.shadow_sigma_db)),
            ("path_loss.shadowing", if ch.shadow_per_frame { "per-frame" } else { "fixed" }.into()),
            (
                "fading.model",
                match ch.fading {
                    FadingChoice::Auto => "auto",
                    FadingChoice::Rician => "rician",
                    FadingChoice::Rayleigh => "rayleigh",
                    FadingChoice::None => "none",
                }
                .into(),
            ),
            ("fading.k_db", format!("{:?}", ch.k_db)),
            ("d0_m", format!("{:?}", ch.d0_m)),
        ];
        for (k, v) in entries {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }

    /// Hex SHA-256 of [`canonical_text`](Self::canonical_text).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) | Error::Domain(m) | Error::Dimension(m) => m.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::noise_power_dbm;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = ScenarioConfig::parse("# nothing\n\n").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        cfg.validate().unwrap();
        assert_eq!((cfg.agents, cfg.window, cfg.height, cfg.width, cfg.channels), (3, 3, 24, 88, 32));
        assert_eq!(cfg.fusion_dims(), FusionDims::for_channels(32));
    }

    #[test]
    fn parses_every_kind_of_value() {
        let text = "
            agents = 2   # two of them
            positions = 0,0; 35.5,-2
            kinds = vehicle, rsu
            sweep = -5, 5
            path_loss.model = winner2
            path_loss.shadowing = fixed
            fading.model = none
            mata.heads = 4
            ugf.tau = 0.5
        ";
        let cfg = ScenarioConfig::parse(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.positions, vec![[0.0, 0.0], [35.5, -2.0]]);
        assert_eq!(cfg.kinds, vec![AgentKind::Vehicle, AgentKind::Rsu]);
        assert_eq!(cfg.sweep, Sweep::Snr(vec![-5.0, 5.0]));
        assert!(!cfg.channel.shadow_per_frame);
        assert_eq!(cfg.fusion_dims().mata_heads, 4);
        assert!((cfg.distance_to_ego(1) - (35.5f64.powi(2) + 4.0).sqrt()).abs() < 1e-12);
        assert_eq!(cfg.link_to_ego(1).fading, FadingModel::Rician { k: f64::INFINITY });
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ScenarioConfig::parse("agents 3").is_err());
        assert!(ScenarioConfig::parse("bogus = 1").is_err());
        assert!(ScenarioConfig::parse("agents = x").is_err());
        assert!(ScenarioConfig::parse("agents = 2\nagents = 3").is_err());
        assert!(ScenarioConfig::parse("fading.model = nakagami").is_err());
        for bad in ["agents = 0", "ego = 3", "sweep = ", "positions = 0,0; 1,1", "ugf.tau = 0", "bandwidth_hz = -1"] {
            let r = ScenarioConfig::parse(bad).and_then(|c| c.validate());
            assert!(matches!(r, Err(Error::Config(_))), "{bad}: {r:?}");
        }
    }

    #[test]
    fn auto_link_selection() {
        let ch = ChannelConfig::default();
        let v2v = ch.link(AgentKind::Vehicle, AgentKind::Vehicle);
        assert!(matches!(v2v.path_loss, PathLossModel::WinnerII { .. }));
        assert_eq!(v2v.fading, FadingModel::Rayleigh);
        assert_eq!(v2v.path_loss, PathLossModel::winner_ii_default(5.9e9));
        let i2v = ch.link(AgentKind::Rsu, AgentKind::Vehicle);
        assert_eq!(i2v.path_loss, PathLossModel::Fspl);
        assert_eq!(i2v.fading, FadingModel::rician_db(6.0));
        assert_eq!(i2v.budget.gtx_dbi, 6.0);
        assert!((noise_power_dbm(&i2v.budget) + 98.0).abs() < 1e-9);
    }

    #[test]
    fn overrides_win_and_change_hash() {
        let mut cfg = ScenarioConfig::parse("seed = 3").unwrap();
        let h = cfg.hash();
        assert_eq!(h.len(), 64);
        cfg.set_assignment("seed=4").unwrap();
        assert_eq!(cfg.seed, 4);
        assert_ne!(cfg.hash(), h);
        assert!(cfg.set_assignment("seed").is_err());
    }

    #[test]
    fn canonical_text_reparses() {
        let cfg = ScenarioConfig::parse("kinds = rsu, vehicle, vehicle\nsweep = link-budget\nfading.k_db = 9").unwrap();
        let again = ScenarioConfig::parse(&cfg.canonical_text()).unwrap();
        assert_eq!(again.canonical_text(), cfg.canonical_text());
        assert_eq!(again.hash(), cfg.hash());
        assert_eq!(again.link_to_ego(1), cfg.link_to_ego(1));
    }
}
