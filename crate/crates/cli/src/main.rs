use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use swarmtrack::commands::{self, HeatmapSource};
use swarmtrack::metrics::summarize;
use swarmtrack::{ExperimentConfig, RewardMode};

#[derive(Parser)]
#[command(
    name = "swarmtrack",
    version,
    about = "Multi-agent target tracking with tile-coded Q-learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train independent learners and write weights, a training curve and a manifest.
    Train(Common),
    /// Greedy evaluation of trained weights against the planner baseline.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Weight file, or a directory produced by `train`.
        #[arg(long)]
        weights: PathBuf,
        /// Write per-episode traces for `trace-replay` and `heatmap`.
        #[arg(long)]
        trace: bool,
    },
    /// Planner baseline with full knowledge of target trajectories.
    Oracle(Common),
    /// Agent visit counts, from traces or by rolling out weights.
    Heatmap {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "traces")]
        weights: Option<PathBuf>,
        /// Directory containing `*.jsonl` traces.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Re-simulate traced episodes of an `eval` directory and check they match.
    TraceReplay {
        /// Output directory of an `eval --trace` invocation.
        dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Reward {
    Global,
    Difference,
}

#[derive(Args)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    runs: Option<usize>,
    /// Training episodes for `train`, evaluated episodes elsewhere.
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, value_enum)]
    reward: Option<Reward>,
    #[arg(long)]
    agents: Option<usize>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.base_seed = s;
        }
        if let Some(r) = self.runs {
            cfg.num_runs = r;
        }
        if let Some(n) = self.agents {
            cfg.world.num_agents = n;
        }
        if let Some(r) = self.reward {
            cfg.reward_mode = match r {
                Reward::Global => RewardMode::Global,
                Reward::Difference => RewardMode::Difference,
            };
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("expected KEY=VALUE, got `{kv}`"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn eval_episodes(&self, cfg: &ExperimentConfig) -> usize {
        self.episodes.unwrap_or(cfg.eval_episodes)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let mut cfg = common.config()?;
            if let Some(e) = common.episodes {
                cfg.num_episodes = e;
            }
            let out = commands::train(&cfg, &common.out)?;
            let final_mean = out
                .curve
                .final_window_mean(cfg.median_window.min(cfg.num_episodes));
            println!(
                "trained {} run(s) x {} episodes; final mean F {:.2} ({:.2}% of planner {:.2})",
                cfg.num_runs,
                cfg.num_episodes,
                final_mean,
                100.0 * final_mean / out.oracle_mean,
                out.oracle_mean
            );
            println!("wrote {}", common.out.display());
        }
        Command::Eval {
            common,
            weights,
            trace,
        } => {
            let cfg = common.config()?;
            let files = commands::weight_files(&weights)?;
            let out = commands::eval(
                &cfg,
                &files,
                common.eval_episodes(&cfg),
                cfg.base_seed,
                trace,
                &common.out,
            )?;
            let s = &out.summary;
            let table = summarize(
                &[(s.agents, s.reward_mode, s.mean, s.std)],
                &[(s.agents, out.oracle.mean, out.oracle.std)],
            );
            print!("{}", table.render());
        }
        Command::Oracle(common) => {
            let cfg = common.config()?;
            let runs = common.runs.unwrap_or(1);
            let stats = commands::oracle(
                &cfg,
                runs,
                common.eval_episodes(&cfg),
                cfg.base_seed,
                &common.out,
            )?;
            println!(
                "planner, {} agents: mean F {:.2}, std {:.2}",
                cfg.world.num_agents, stats.mean, stats.std
            );
        }
        Command::Heatmap {
            common,
            weights,
            traces,
        } => {
            let cfg = common.config()?;
            let source = match (weights, traces) {
                (Some(w), None) => HeatmapSource::Weights {
                    files: commands::weight_files(&w)?,
                    episodes: common.eval_episodes(&cfg),
                    seed: cfg.base_seed,
                },
                (None, Some(t)) => HeatmapSource::Traces(t),
                _ => bail!("give exactly one of --weights or --traces"),
            };
            let h = commands::heatmap(&cfg, &source, &common.out)?;
            println!("{} visits over {}x{} cells", h.total(), h.cols, h.rows);
        }
        Command::TraceReplay { dir } => {
            let n = commands::trace_replay(&dir)?;
            println!("{n} episode(s) replayed identically");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
