//! Command-line surface of `collusion-lab`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use collusion_core::additive::AdditiveConfig;
use collusion_core::qlearn::UpdateTarget;

use crate::commands;
use crate::config::{ExperimentConfig, MarketBlock, Overrides, Preset};
use crate::error::{Result, RunnerError};
use crate::results::write_bytes;
use crate::sweep::{run_sweep, ExecOptions, SweepOutcome};

#[derive(Debug, Parser)]
#[command(name = "collusion-lab", version, about = "Q-learning platforms in two-sided markets")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output root for run/sweep, output directory for fit-additive, output
    /// file for report.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; available parallelism by default.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub preset: Option<Preset>,
    /// Base seed of every run stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `next-state` or `current-state`.
    #[arg(long, global = true)]
    pub update_target: Option<UpdateTarget>,
    /// Suppress per-run progress on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print an example configuration for the chosen preset.
    Template,
    /// Solve the competitive and collusive benchmarks of one market.
    SolveEq(SolveEqArgs),
    /// Run the base point of a configuration (its sweep is ignored).
    Run,
    /// Run every point of a configuration's sweep.
    Sweep,
    /// Audit the runs stored in a results directory.
    Analyze {
        /// Results directory `<out>/<config-hash>`.
        dir: PathBuf,
    },
    /// Fit the additive model of the collusive level on Φ.
    FitAdditive(FitArgs),
    /// Join the summaries of several sweeps into one CSV.
    Report {
        /// Results directories, or parents holding them.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct SolveEqArgs {
    /// `φ_bb,φ_bs,φ_sb,φ_ss`.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub phi: Option<Vec<f64>>,
    /// β of both sides.
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    /// u⁰ of both sides.
    #[arg(long, allow_negative_numbers = true)]
    pub u0: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Results directories, or parents holding them.
    #[arg(required = true)]
    pub dirs: Vec<PathBuf>,
    /// Orderings of the univariate terms averaged (at most 24).
    #[arg(long)]
    pub univariate_perms: Option<usize>,
    /// Orderings of the pair terms averaged; all 720 by default.
    #[arg(long)]
    pub bivariate_perms: Option<usize>,
}

impl GlobalArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            preset: self.preset,
            seed: self.seed,
            update_target: self.update_target,
            out: self.out.clone(),
        }
    }

    fn load_config(&self) -> Result<ExperimentConfig> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| RunnerError::Config("--config: required by this command".into()))?;
        let mut cfg = ExperimentConfig::load(path)?;
        cfg.apply(&self.overrides());
        Ok(cfg)
    }
}

fn print_outcome(outcome: &SweepOutcome) {
    println!("results: {}", outcome.dir.display());
    for p in &outcome.points {
        let coords = p
            .coords
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ");
        match (p.mean, p.ci_lo, p.ci_hi) {
            (Some(m), Some(lo), Some(hi)) => println!(
                "point {} {coords}: mean {m:.4} [{lo:.4}, {hi:.4}] ok {}/{}",
                p.point, p.n_ok, p.n_runs
            ),
            _ => println!(
                "point {} {coords}: {}",
                p.point,
                p.reason.clone().unwrap_or_default()
            ),
        }
    }
    let m = outcome.manifest;
    println!(
        "points {} = ok {} + rejected {} + skipped {}",
        m.points, m.ok, m.rejected, m.skipped
    );
}

fn execute_sweep(global: &GlobalArgs, base_only: bool) -> Result<()> {
    let cfg = global.load_config()?;
    let mut resolved = cfg.resolve()?;
    if base_only {
        resolved = resolved.without_sweep();
    }
    let opts = ExecOptions {
        workers: global.workers,
        save_qdumps: cfg.output.save_qdumps,
        save_traces: cfg.output.save_traces,
        progress: !global.quiet,
    };
    let outcome = run_sweep(&resolved, &cfg.output.dir, &opts)?;
    print_outcome(&outcome);
    if outcome.all_failed() {
        return Err(RunnerError::AllPointsFailed(outcome.manifest.points));
    }
    Ok(())
}

/// Runs one parsed command line.
pub fn execute(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Template => {
            let cfg = ExperimentConfig::template(g.preset.unwrap_or_default());
            println!("{}", serde_json::to_string_pretty(&cfg).expect("serializable"));
            Ok(())
        }
        Command::SolveEq(args) => {
            let mut market = match &g.config {
                Some(_) => g.load_config()?.market,
                None => MarketBlock::baseline(),
            };
            if let Some(phi) = &args.phi {
                market.phi = phi
                    .as_slice()
                    .try_into()
                    .map_err(|_| RunnerError::Config(format!("--phi: need 4 entries, got {}", phi.len())))?;
            }
            if let Some(b) = args.beta {
                market.beta = [b, b];
            }
            if let Some(u) = args.u0 {
                market.u0 = [u, u];
            }
            if let Some(d) = args.delta {
                market.delta = d;
            }
            let report = commands::solve_eq(&market)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
            Ok(())
        }
        Command::Run => execute_sweep(g, true),
        Command::Sweep => execute_sweep(g, false),
        Command::Analyze { dir } => {
            let reports = commands::analyze(dir, g.workers)?;
            for r in &reports {
                println!("point {}", r.point);
                print!("{}", r.report.to_csv());
            }
            println!("analysis: {}", dir.join("analysis").display());
            Ok(())
        }
        Command::FitAdditive(args) => {
            let dirs = commands::expand_result_dirs(&args.dirs)?;
            let mut cfg = AdditiveConfig {
                seed: g.seed.unwrap_or(0),
                n_bivariate_perms: args.bivariate_perms,
                ..AdditiveConfig::default()
            };
            if let Some(n) = args.univariate_perms {
                cfg.n_univariate_perms = n;
            }
            let out = g.out.clone().unwrap_or_else(|| dirs[0].join("additive"));
            let (_, summary) = commands::fit_additive(&dirs, &cfg, &out)?;
            println!(
                "fitted {} samples: delta0 {:.4}, R^2 {:.4}",
                summary.n_samples, summary.delta0, summary.r_squared
            );
            println!("model: {}", out.display());
            Ok(())
        }
        Command::Report { dirs } => {
            let dirs = commands::expand_result_dirs(dirs)?;
            let csv = commands::report(&dirs)?;
            match &g.out {
                Some(path) => write_bytes(path, csv.as_bytes()),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
    }
}
