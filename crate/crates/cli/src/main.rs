//! Operator surface: track generation, two-stage training, variant
//! evaluation, single rollouts and report comparison.
//!
//! Every command reads the TOML run config (flags override file values)
//! and writes a run-metadata file next to its outputs. Exit status is
//! zero only when all requested work succeeded.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use driftrl::config::RunConfig;
use driftrl::pipeline::{
    cmd_compare, cmd_eval, cmd_gen_tracks, cmd_rollout, cmd_train, EvalArgs, RolloutArgs,
    TrainArgs, Variant,
};

#[derive(Parser)]
#[command(name = "driftrl", version, about = "Drift-capable vehicle simulator with a soft actor-critic trajectory controller")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigOpts {
    /// Run configuration file (TOML).
    #[arg(long, default_value = "configs/default.toml")]
    config: PathBuf,
    /// Override the root seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory from the config file.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override the tracks directory from the config file.
    #[arg(long)]
    tracks_dir: Option<PathBuf>,
}

impl ConfigOpts {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)
            .with_context(|| format!("loading config {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            cfg.run.root_seed = seed;
        }
        if let Some(dir) = &self.out_dir {
            cfg.run.out_dir = dir.clone();
        }
        if let Some(dir) = &self.tracks_dir {
            cfg.training.tracks_dir = dir.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate tracks from a spec file.
    GenTracks {
        /// Track specification file (JSON).
        #[arg(long, default_value = "tracks/specs.json")]
        specs: PathBuf,
        /// Output directory for the generated track files.
        #[arg(long, default_value = "tracks")]
        out: PathBuf,
    },
    /// Train the controller (stage 1 from scratch, stage 2 resumes).
    Train {
        #[command(flatten)]
        config: ConfigOpts,
        /// Training stage: 1 (simple map) or 2 (harder maps, randomized
        /// friction and mass, resumed weights).
        #[arg(long, default_value_t = 1)]
        stage: u32,
        /// Checkpoint to resume from.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the number of episodes for this stage.
        #[arg(long)]
        episodes: Option<usize>,
        /// Validate the configuration and inputs, then exit without
        /// stepping the simulator.
        #[arg(long)]
        dry_run: bool,
    },
    /// Evaluate a checkpoint under one or more variants.
    Eval {
        #[command(flatten)]
        config: ConfigOpts,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Variants to run: sac, sac-wos, sac-30, app-test (repeatable).
        #[arg(long = "variant", default_values_t = [String::from("sac")])]
        variants: Vec<String>,
        /// Tire friction override (unseen-condition tests).
        #[arg(long)]
        friction: Option<f64>,
        /// Vehicle mass override [kg].
        #[arg(long)]
        mass: Option<f64>,
        /// Vehicle preset override: trainer, light_coupe,
        /// high_moi_compact, heavy_awd_truck.
        #[arg(long)]
        preset: Option<String>,
        /// Track name override (defaults to the config's evaluation track).
        #[arg(long)]
        track: Option<String>,
        /// Run evaluation repetitions sequentially on one thread.
        #[arg(long)]
        single_thread: bool,
    },
    /// Roll one deterministic episode and export the log and plot data.
    Rollout {
        #[command(flatten)]
        config: ConfigOpts,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Track name override.
        #[arg(long)]
        track: Option<String>,
        /// Variant to roll: sac, sac-wos, sac-30, app-test.
        #[arg(long, default_value = "sac")]
        variant: String,
        /// Lateral spawn offset [m].
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
    },
    /// Render a comparison table from saved metrics files.
    Compare {
        /// label=path pairs of saved *_metrics.json files (repeatable).
        #[arg(long = "report", required = true, num_args = 1..)]
        reports: Vec<String>,
        /// Where to write the table (also printed to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenTracks { specs, out } => {
            let result = cmd_gen_tracks(&specs, &out)?;
            for path in &result.written {
                println!("wrote {}", path.display());
            }
            for (name, err) in &result.failures {
                eprintln!("failed to generate '{name}': {err}");
            }
            if !result.failures.is_empty() {
                bail!("{} track(s) failed to generate", result.failures.len());
            }
            Ok(())
        }
        Command::Train { config, stage, resume, episodes, dry_run } => {
            let cfg = config.load()?;
            let out = cmd_train(
                &cfg,
                &TrainArgs { stage, resume, episodes_override: episodes, dry_run },
            )?;
            if dry_run {
                println!("configuration and inputs are valid (dry run)");
            } else {
                let arrivals = out
                    .episodes
                    .iter()
                    .filter(|e| e.end == driftrl::eval::EndKind::Arrival)
                    .count();
                println!(
                    "stage {stage}: {} episodes ({arrivals} arrivals), checkpoint at {}",
                    out.episodes.len(),
                    out.checkpoint.display()
                );
                if let Some(last) = out.evals.last() {
                    println!(
                        "final eval: return {:.0}, avg speed {:.1} m/s, mean |e_psi| {:.1} deg, {}",
                        last.ret,
                        last.avg_speed,
                        last.avg_abs_epsi_deg,
                        last.end.name()
                    );
                }
            }
            Ok(())
        }
        Command::Eval { config, checkpoint, variants, friction, mass, preset, track, single_thread } => {
            let cfg = config.load()?;
            let variants = variants
                .iter()
                .map(|v| Variant::parse(v))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let out = cmd_eval(
                &cfg,
                &EvalArgs { checkpoint, variants, friction, mass, preset, track, single_thread },
            )?;
            for r in &out.results {
                let ends: Vec<&str> = r.ends.iter().map(|e| e.name()).collect();
                println!("{}: repetitions ended {:?}", r.variant.name(), ends);
            }
            if let Some(table) = &out.table_text {
                println!("\n{table}");
            }
            Ok(())
        }
        Command::Rollout { config, checkpoint, track, variant, jitter } => {
            let cfg = config.load()?;
            let variant = Variant::parse(&variant)?;
            let out = cmd_rollout(&cfg, &RolloutArgs { checkpoint, track, variant, jitter })?;
            println!(
                "rollout ended with {}; log {}, plot data {}",
                out.end.name(),
                out.log_path.display(),
                out.plot_path.display()
            );
            Ok(())
        }
        Command::Compare { reports, out } => {
            let labeled = reports
                .iter()
                .map(|s| {
                    s.split_once('=')
                        .map(|(l, p)| (l.to_string(), PathBuf::from(p)))
                        .ok_or_else(|| anyhow::anyhow!("--report expects label=path, got '{s}'"))
                })
                .collect::<Result<Vec<_>>>()?;
            let (text, csv) = cmd_compare(&labeled)?;
            print!("{text}");
            if let Some(out) = out {
                std::fs::write(&out, csv)?;
                println!("wrote {}", out.display());
            }
            Ok(())
        }
    }
}
