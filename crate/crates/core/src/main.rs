//! Command-line interface: train the RL planners, evaluate any planner,
//! sweep noise/risk axes, build localization heatmaps, and compare planners.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use riskloc::config::FileConfig;
use riskloc::harness::{
    self, apply_axis, compare, evaluate, heatmap, make_planner, sweep, HarnessError, RunConfig,
    SweepAxis, SweepPoint,
};
use riskloc::policy::Planner;
use riskloc::risk::{EpisodePoint, PrimalMode};
use riskloc::sac::{save_checkpoint, SacHyper};

#[derive(Parser)]
#[command(name = "riskloc", about = "Risk-bounded active localization planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an RL planner and write a checkpoint plus training curves.
    Train(TrainArgs),
    /// Evaluate one planner over an episode campaign.
    Eval(EvalArgs),
    /// Evaluate along a noise or risk axis.
    Sweep(SweepArgs),
    /// Localization-probability heatmap over the belief mean.
    Heatmap(HeatmapArgs),
    /// Evaluate several planners under identical seeds.
    Compare(CompareArgs),
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Map file (overrides the config's map).
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Episode count (training budget for `train`, campaign size elsewhere).
    #[arg(long)]
    episodes: Option<usize>,
    /// Allowed failure probability (risk knob).
    #[arg(long)]
    risk: Option<f64>,
    /// Forward-motion probability; drift splits the remainder.
    #[arg(long)]
    forward: Option<f64>,
    /// Center mass of the localize-observation kernel.
    #[arg(long)]
    localize_center: Option<f64>,
    /// Randomize start/goal per episode.
    #[arg(long)]
    randomize: bool,
    #[arg(long)]
    min_separation: Option<usize>,
}

impl CommonArgs {
    fn file(&self) -> Result<FileConfig> {
        Ok(match &self.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        })
    }

    fn run_config(&self) -> Result<(RunConfig, FileConfig)> {
        let file = self.file()?;
        let mut cfg = file.to_run_config(self.map.as_deref())?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.episodes {
            cfg.episodes = e;
        }
        if let Some(c) = self.risk {
            cfg.risk.c_hat = c;
        }
        if let Some(f) = self.forward {
            cfg.transition = riskloc::grid::TransitionNoise::with_forward(f)
                .map_err(HarnessError::from)?;
        }
        if let Some(c) = self.localize_center {
            cfg.localize_observation =
                riskloc::grid::ObservationNoise::peaked(c).map_err(HarnessError::from)?;
        }
        if self.randomize {
            cfg.randomize_endpoints = true;
        }
        if let Some(m) = self.min_separation {
            cfg.min_separation = m;
        }
        Ok((cfg, file))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Which planner to train: riskrl or baserl.
    #[arg(long, default_value = "riskrl")]
    planner: String,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Training-curve CSV output path.
    #[arg(long)]
    curves: Option<PathBuf>,
    /// Primal update rule: sac or score-function.
    #[arg(long)]
    primal: Option<String>,
    /// Gradient updates per collected episode.
    #[arg(long, default_value_t = 12)]
    updates_per_episode: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Planner spec: static:<k>, threshold:<tau>, riskrl:<ckpt>,
    /// baserl:<ckpt>, move-only, localize-only.
    #[arg(long)]
    planner: Option<String>,
    /// Metrics CSV output (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Episode traces as line-delimited JSON.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Axis: transition, observation, or risk.
    #[arg(long)]
    axis: String,
    /// Comma-separated axis values.
    #[arg(long)]
    values: String,
    /// Planner spec (transition/observation axes).
    #[arg(long)]
    planner: Option<String>,
    /// Training budget per value (risk axis trains a fresh planner).
    #[arg(long, default_value_t = 200)]
    train_episodes: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HeatmapArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    planner: Option<String>,
    #[arg(long, default_value_t = 250)]
    runs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated planner specs.
    #[arg(long)]
    planners: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn out_writer(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn resolve_planner(
    flag: &Option<String>,
    file: &FileConfig,
) -> Result<Box<dyn Planner>> {
    let spec = flag
        .clone()
        .or_else(|| file.planner.clone())
        .context("no planner given (use --planner or the `planner` config key)")?;
    Ok(make_planner(&spec)?)
}

fn write_curves(curves: &[EpisodePoint], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "episode,success,n_localize,lambda,U_estimate,actor_loss,critic_loss"
    )?;
    for c in curves {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            c.episode,
            c.success as u8,
            c.n_localize,
            c.lambda,
            c.u_estimate,
            c.actor_loss,
            c.critic_loss
        )?;
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let (cfg, file) = args.common.run_config()?;
    let kind = args.planner.as_str();
    if kind != "riskrl" && kind != "baserl" {
        bail!("--planner must be riskrl or baserl, got {kind:?}");
    }
    let mut hyper = match &file.sac {
        Some(h) => h.clone(),
        None if kind == "baserl" => SacHyper::baserl(),
        None => SacHyper::riskrl(),
    };
    let train_section = file.train.clone().unwrap_or_default();
    let train_episodes = args
        .common
        .episodes
        .or(train_section.episodes)
        .unwrap_or(200);
    let primal = match args.primal.as_deref() {
        Some("sac") | None => train_section.primal.unwrap_or(PrimalMode::Sac),
        Some("score-function") => PrimalMode::ScoreFunction,
        Some(other) => bail!("--primal must be sac or score-function, got {other:?}"),
    };
    hyper.updates_per_episode = args.updates_per_episode;

    eprintln!(
        "training {kind} on {}x{} map for {train_episodes} episodes (seed {}, c_hat {})",
        cfg.map.width(),
        cfg.map.height(),
        cfg.seed,
        cfg.risk.c_hat
    );
    let (out, meta) = harness::train_planner(&cfg, kind, hyper, train_episodes, primal)?;
    save_checkpoint(&args.out, &out.nets, &meta)?;
    eprintln!(
        "saved checkpoint to {} (lambda {:.4})",
        args.out.display(),
        out.dual.lambda
    );
    if let Some(curves) = &args.curves {
        write_curves(&out.curves, curves)?;
        eprintln!("wrote curves to {}", curves.display());
    }
    let tail: Vec<_> = out.curves.iter().rev().take(50).collect();
    if !tail.is_empty() {
        let succ = tail.iter().filter(|c| c.success).count() as f64 / tail.len() as f64;
        let nloc: f64 =
            tail.iter().map(|c| c.n_localize as f64).sum::<f64>() / tail.len() as f64;
        eprintln!("last {} episodes: success {succ:.2}, mean localizations {nloc:.1}", tail.len());
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (cfg, file) = args.common.run_config()?;
    let mut planner = resolve_planner(&args.planner, &file)?;
    let (metrics, runs) = evaluate(&cfg, planner.as_mut())?;
    if let Some(trace_path) = &args.trace {
        let mut w = BufWriter::new(File::create(trace_path)?);
        for run in &runs {
            harness::write_trace(&run.trace, &mut w)?;
        }
    }
    let rows = vec![(planner.name(), metrics)];
    harness::write_comparison_csv(&rows, out_writer(&args.out)?)?;
    Ok(())
}

fn parse_values(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| anyhow::anyhow!("{e}: {v:?}")))
        .collect()
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let (cfg, file) = args.common.run_config()?;
    let axis = SweepAxis::parse(&args.axis)?;
    let values = parse_values(&args.values)?;
    let points: Vec<SweepPoint> = match axis {
        SweepAxis::Risk => {
            // Each value trains a fresh risk-aware planner at that c_hat,
            // sharing the seed so comparisons are paired.
            let hyper = file.sac.clone().unwrap_or_else(SacHyper::riskrl);
            let train_episodes = args.train_episodes;
            let mut out = Vec::new();
            for &value in &values {
                let point_cfg = apply_axis(&cfg, axis, value)?;
                eprintln!("training riskrl at c_hat = {value}");
                let (trained, meta) = harness::train_planner(
                    &point_cfg,
                    "riskrl",
                    hyper.clone(),
                    train_episodes,
                    PrimalMode::Sac,
                )?;
                let mut planner = riskloc::sac::RlPlanner::new(
                    &meta.planner_kind,
                    trained.nets.actor,
                    meta.hyper.clone(),
                    riskloc::sac::Mode::Greedy,
                );
                let (metrics, _) = evaluate(&point_cfg, &mut planner)?;
                out.push(SweepPoint { value, metrics });
            }
            out
        }
        _ => {
            let spec = args
                .planner
                .clone()
                .or_else(|| file.planner.clone())
                .context("sweep needs --planner for this axis")?;
            sweep(&cfg, axis, &values, &mut |_cfg| make_planner(&spec))?
        }
    };
    harness::write_sweep_csv(&points, out_writer(&args.out)?)?;
    Ok(())
}

fn cmd_heatmap(args: HeatmapArgs) -> Result<()> {
    let (cfg, file) = args.common.run_config()?;
    let mut planner = resolve_planner(&args.planner, &file)?;
    let grid = heatmap(&cfg, planner.as_mut(), args.runs)?;
    grid.write_csv(out_writer(&args.out)?)?;
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let (cfg, _file) = args.common.run_config()?;
    let mut planners: Vec<Box<dyn Planner>> = Vec::new();
    for spec in args.planners.split(',') {
        planners.push(make_planner(spec.trim())?);
    }
    let rows = compare(&cfg, &mut planners)?;
    harness::write_comparison_csv(&rows, out_writer(&args.out)?)?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Heatmap(args) => cmd_heatmap(args),
        Command::Compare(args) => cmd_compare(args),
    }
}
