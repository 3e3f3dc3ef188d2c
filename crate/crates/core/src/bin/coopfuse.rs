use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use coopfuse::config::ScenarioConfig;
use coopfuse::dualsa::{flop_report, FlopShape};
use coopfuse::fusion::{FusionDims, FusionParams};
use coopfuse::harness::{dump_maps, report_json, sweep_detailed, write_csv, PipelineMode, Prepared};
use coopfuse::io::{load_checkpoint, save_checkpoint, save_tensor};
use coopfuse::{Error, Result};

#[derive(Parser)]
#[command(name = "coopfuse", version, about = "Cooperative feature fusion under simulated V2X channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Ideal,
    Impaired,
    FixedSnr,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Scenario file (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the file's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::Io(std::io::Error::new(e.kind(), format!("cannot read {}: {e}", p.display())))
                })?;
                ScenarioConfig::parse(&text)?
            }
            None => ScenarioConfig::default(),
        };
        for s in &self.set {
            cfg.set_assignment(s)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Ideal baseline plus one run per SNR level.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// JSON report path; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Directory for fused, entropy and importance maps of every run.
        #[arg(long)]
        dump_maps: Option<PathBuf>,
    },
    /// A single pipeline run; prints its report row as JSON.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value = "ideal")]
        mode: Mode,
        #[arg(long, allow_hyphen_values = true)]
        snr_db: Option<f64>,
        /// Writes the fused feature as a tensor file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Loads fusion parameters from a checkpoint directory.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Saves the fusion parameters used to a checkpoint directory.
        #[arg(long)]
        save_params: Option<PathBuf>,
    },
    /// Attention and module FLOP counts for a feature shape.
    Flops {
        #[arg(long)]
        height: u64,
        #[arg(long)]
        width: u64,
        #[arg(long)]
        channels: u64,
        #[arg(long)]
        heads: Option<u64>,
    },
    /// Runs the built-in invariant checks.
    Selftest,
}

fn write_or_print(path: Option<&PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map(|s| s + "\n").map_err(|e| Error::Numeric(e.to_string()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Sweep { cfg, out, csv, dump_maps: dump } => {
            let cfg = cfg.load()?;
            let (report, outputs) = sweep_detailed(&cfg)?;
            write_or_print(out.as_ref(), &report_json(&report)?)?;
            if let Some(p) = csv {
                write_csv(&report, std::fs::File::create(p)?)?;
            }
            if let Some(dir) = dump {
                dump_maps(dir, &outputs)?;
            }
        }
        Command::Run { cfg, mode, snr_db, out, params, save_params } => {
            let cfg = cfg.load()?;
            let mode = match (mode, snr_db) {
                (Mode::Ideal, _) => PipelineMode::Ideal,
                (Mode::Impaired, _) => PipelineMode::Impaired,
                (Mode::FixedSnr, Some(v)) => PipelineMode::FixedSnr(v),
                (Mode::FixedSnr, None) => return Err(Error::Config("--mode fixed-snr needs --snr-db".into())),
            };
            let prepared = match params {
                Some(dir) => Prepared::with_params(&cfg, FusionParams::from_named(load_checkpoint(dir)?)?)?,
                None => Prepared::new(&cfg)?,
            };
            if let Some(dir) = save_params {
                save_checkpoint(dir, &prepared.params.to_named())?;
            }
            let outcome = prepared.run(mode)?;
            if let Some(p) = out {
                save_tensor(p, outcome.output.fused())?;
            }
            print!("{}", to_json(&outcome.row)?);
        }
        Command::Flops { height, width, channels, heads } => {
            if height == 0 || width == 0 || channels == 0 {
                return Err(Error::Config("height, width and channels must be positive".into()));
            }
            let d = FusionDims::for_channels(channels as usize);
            let heads = heads.unwrap_or(d.dualsa_heads as u64);
            if heads == 0 {
                return Err(Error::Config("heads must be positive".into()));
            }
            let shape = FlopShape {
                height,
                width,
                channels,
                heads,
                head_dim: (channels / heads).max(1),
                gdfn_hidden: d.gdfn_hidden as u64,
            };
            print!("{}", to_json(&flop_report(shape))?);
        }
        Command::Selftest => {
            let checks = coopfuse::selftest::run_all();
            let failed = checks.iter().filter(|c| !c.passed).count();
            for c in &checks {
                let status = if c.passed { "ok  " } else { "FAIL" };
                if c.detail.is_empty() {
                    println!("{status} {}", c.name);
                } else {
                    println!("{status} {} ({})", c.name, c.detail);
                }
            }
            println!("{} checks, {failed} failed", checks.len());
            if failed > 0 {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
