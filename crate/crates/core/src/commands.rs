//! End-to-end commands behind the CLI. Each writes its outputs into an
//! output directory and returns what it wrote.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::env::ActionSet;
use crate::error::{Error, Result};
use crate::io::{self, RunEntry, RunManifest, WeightsHeader, TOOL_VERSION};
use crate::learner::QFunction;
use crate::metrics::{self, Heatmap, SummaryRow};
use crate::oracle::{self, OracleStats};
use crate::seeding::{EpisodeRngs, PHASE_EVAL, PHASE_TRAIN};
use crate::trainer::{self, mean_std, EvalStats, Harness, TrainingCurve};

pub const MANIFEST: &str = "manifest.json";
pub const TRAINING_CURVE: &str = "training_curve.csv";
pub const SUMMARY: &str = "summary.csv";
pub const ORACLE: &str = "oracle.csv";
pub const ORACLE_EPISODES: &str = "oracle_episodes.csv";
pub const HEATMAP: &str = "heatmap.csv";

fn weights_name(run: usize) -> String {
    format!("weights/run{run:03}.stqw")
}

fn trace_name(run: usize, episode: usize) -> String {
    format!("traces/run{run:03}_ep{episode:05}.jsonl")
}

/// Planner mean used to normalise training curves: configured value,
/// else the `oracle_file`, else computed on the evaluation seeds.
pub fn resolve_oracle_mean(cfg: &ExperimentConfig) -> Result<f64> {
    if let Some(m) = cfg.oracle_mean {
        return Ok(m);
    }
    if let Some(path) = &cfg.oracle_file {
        return io::read_oracle_mean(path, cfg.world.num_agents);
    }
    Ok(oracle::oracle_f(&cfg.world, cfg.base_seed, 1, cfg.eval_episodes)?.mean)
}

#[derive(Debug)]
pub struct TrainOutput {
    pub curve: TrainingCurve,
    pub oracle_mean: f64,
    pub manifest: RunManifest,
}

/// Trains every run, writing `training_curve.csv`, one weight file per run
/// and `manifest.json`. Runs are trained in parallel and dropped as soon as
/// their weights are on disk.
pub fn train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainOutput> {
    cfg.validate()?;
    let oracle_mean = resolve_oracle_mean(cfg)?;
    let actions = ActionSet::for_world(&cfg.world)?;
    let curves: Vec<Vec<u32>> = (0..cfg.num_runs)
        .into_par_iter()
        .map(|run| {
            let r = trainer::train_run(cfg, run)?;
            let header = WeightsHeader {
                tool_version: TOOL_VERSION.into(),
                num_agents: cfg.world.num_agents,
                actions: actions.as_slice().to_vec(),
                coder: cfg.coder.clone(),
                schedule: r.team.schedule,
                episodes_trained: r.team.episodes_trained,
                reward_mode: cfg.reward_mode,
                base_seed: cfg.base_seed,
                run,
            };
            io::write_weights(&out.join(weights_name(run)), &header, &r.team.learners)?;
            Ok(r.curve)
        })
        .collect::<Result<_>>()?;
    let curve = TrainingCurve { runs: curves };
    io::write_atomic(
        &out.join(TRAINING_CURVE),
        io::training_curve_csv(&curve, oracle_mean).as_bytes(),
    )?;

    let manifest = RunManifest {
        tool_version: TOOL_VERSION.into(),
        command: "train".into(),
        config: cfg.to_text(),
        base_seed: cfg.base_seed,
        oracle_mean: Some(oracle_mean),
        episodes: cfg.num_episodes,
        runs: (0..cfg.num_runs)
            .map(|run| RunEntry {
                run,
                seed_path: format!("{}/{PHASE_TRAIN}/{run}/<episode>/<stream>", cfg.base_seed),
                weights: Some(weights_name(run)),
                traces: Vec::new(),
            })
            .collect(),
        artifacts: std::iter::once(TRAINING_CURVE.to_string())
            .chain((0..cfg.num_runs).map(weights_name))
            .collect(),
    };
    manifest.write(&out.join(MANIFEST))?;
    Ok(TrainOutput {
        curve,
        oracle_mean,
        manifest,
    })
}

/// Weight files named by `path`: a single file, or every `*.stqw` under a
/// directory (also looking in its `weights/` subdirectory), sorted by name.
pub fn weight_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let dir = if path.join("weights").is_dir() {
        path.join("weights")
    } else {
        path.to_path_buf()
    };
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "stqw"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Incompatible(format!(
            "no weight files in {}",
            dir.display()
        )));
    }
    Ok(files)
}

pub fn load_team(path: &Path, cfg: &ExperimentConfig) -> Result<Vec<QFunction>> {
    let (header, learners) = io::read_weights(path)?;
    header.check_compatible(cfg)?;
    Ok(learners)
}

#[derive(Debug)]
pub struct EvalOutput {
    pub per_run: Vec<EvalStats>,
    pub oracle: OracleStats,
    pub summary: SummaryRow,
}

/// Greedy evaluation of each weight file on `n_episodes` evaluation worlds
/// (file `k` uses evaluation set `k`), normalised by the planner on the same
/// worlds. Writes `summary.csv`, optional per-episode traces and `manifest.json`.
pub fn eval(
    cfg: &ExperimentConfig,
    weights: &[PathBuf],
    n_episodes: usize,
    seed: u64,
    trace: bool,
    out: &Path,
) -> Result<EvalOutput> {
    cfg.validate()?;
    if n_episodes == 0 {
        return Err(Error::config(
            "episodes",
            "must evaluate at least one episode",
        ));
    }
    if weights.is_empty() {
        return Err(Error::config("weights", "no weight files given"));
    }
    let mut per_run = Vec::new();
    let mut entries = Vec::new();
    let mut artifacts = vec![SUMMARY.to_string()];
    for (run, path) in weights.iter().enumerate() {
        let learners = load_team(path, cfg)?;
        let results = trainer::evaluate_logs(&learners, cfg, seed, run, n_episodes, 0.0, |log| {
            trace.then(|| io::trace_jsonl(&log.steps))
        })?;
        let mut traces = Vec::new();
        let mut utilities = Vec::with_capacity(n_episodes);
        for (e, (u, t)) in results.into_iter().enumerate() {
            utilities.push(u);
            if let Some(text) = t {
                let name = trace_name(run, e);
                io::write_atomic(&out.join(&name), text?.as_bytes())?;
                traces.push(name);
            }
        }
        artifacts.extend(traces.iter().cloned());
        entries.push(RunEntry {
            run,
            seed_path: format!("{seed}/{PHASE_EVAL}/{run}/<episode>/<stream>"),
            weights: Some(std::fs::canonicalize(path)?.display().to_string()),
            traces,
        });
        per_run.push(EvalStats::from_utilities(utilities));
    }
    let oracle = oracle::oracle_f(&cfg.world, seed, weights.len(), n_episodes)?;
    let (mean, std) = run_mean_std(&per_run);
    let summary = SummaryRow {
        agents: cfg.world.num_agents,
        reward_mode: cfg.reward_mode,
        mean,
        std,
        normalized: Some(metrics::normalized_score(mean, oracle.mean)?),
    };
    io::write_atomic(
        &out.join(SUMMARY),
        io::summary_csv(std::slice::from_ref(&summary)).as_bytes(),
    )?;
    RunManifest {
        tool_version: TOOL_VERSION.into(),
        command: "eval".into(),
        config: cfg.to_text(),
        base_seed: seed,
        oracle_mean: Some(oracle.mean),
        episodes: n_episodes,
        runs: entries,
        artifacts,
    }
    .write(&out.join(MANIFEST))?;
    Ok(EvalOutput {
        per_run,
        oracle,
        summary,
    })
}

/// Mean over runs; std of the per-run means, or per-episode std for a single run.
pub fn run_mean_std(per_run: &[EvalStats]) -> (f64, f64) {
    let (mean, std) = mean_std(per_run.iter().map(|s| s.mean));
    match per_run {
        [single] => (single.mean, single.std),
        _ => (mean, std),
    }
}

/// Planner baseline on evaluation runs `0..runs`, episodes `0..n_episodes`.
pub fn oracle(
    cfg: &ExperimentConfig,
    runs: usize,
    n_episodes: usize,
    seed: u64,
    out: &Path,
) -> Result<OracleStats> {
    cfg.validate()?;
    if n_episodes == 0 || runs == 0 {
        return Err(Error::config("episodes", "must plan at least one episode"));
    }
    let stats = oracle::oracle_f(&cfg.world, seed, runs, n_episodes)?;
    io::write_atomic(
        &out.join(ORACLE),
        io::oracle_csv(cfg.world.num_agents, &stats).as_bytes(),
    )?;
    io::write_atomic(
        &out.join(ORACLE_EPISODES),
        io::oracle_episodes_csv(&stats).as_bytes(),
    )?;
    RunManifest {
        tool_version: TOOL_VERSION.into(),
        command: "oracle".into(),
        config: cfg.to_text(),
        base_seed: seed,
        oracle_mean: Some(stats.mean),
        episodes: n_episodes,
        runs: (0..runs)
            .map(|run| RunEntry {
                run,
                seed_path: format!("{seed}/{PHASE_EVAL}/{run}/<episode>/0"),
                weights: None,
                traces: Vec::new(),
            })
            .collect(),
        artifacts: vec![ORACLE.into(), ORACLE_EPISODES.into()],
    }
    .write(&out.join(MANIFEST))?;
    Ok(stats)
}

pub enum HeatmapSource {
    /// A directory of `*.jsonl` traces (searched recursively one level).
    Traces(PathBuf),
    /// Weight files, each rolled out greedily for `episodes` evaluation worlds.
    Weights {
        files: Vec<PathBuf>,
        episodes: usize,
        seed: u64,
    },
}

pub fn heatmap(cfg: &ExperimentConfig, source: &HeatmapSource, out: &Path) -> Result<Heatmap> {
    let mut h = Heatmap::new(&cfg.world);
    let mut runs = Vec::new();
    let episodes;
    let mut base_seed = cfg.base_seed;
    match source {
        HeatmapSource::Traces(dir) => {
            let mut files = Vec::new();
            for d in [dir.clone(), dir.join("traces")] {
                if d.is_dir() {
                    for e in std::fs::read_dir(&d)? {
                        let p = e?.path();
                        if p.extension().is_some_and(|x| x == "jsonl") {
                            files.push(p);
                        }
                    }
                }
            }
            files.sort();
            for f in &files {
                for s in io::read_trace(f)? {
                    for p in s.agents {
                        h.add(p);
                    }
                }
            }
            episodes = files.len();
            runs.push(RunEntry {
                run: 0,
                seed_path: String::new(),
                weights: None,
                traces: files.iter().map(|f| f.display().to_string()).collect(),
            });
        }
        HeatmapSource::Weights {
            files,
            episodes: n,
            seed,
        } => {
            for (run, path) in files.iter().enumerate() {
                let learners = load_team(path, cfg)?;
                h.merge(&policy_heatmap(&learners, cfg, *seed, run, *n, 0.0)?);
                runs.push(RunEntry {
                    run,
                    seed_path: format!("{seed}/{PHASE_EVAL}/{run}/<episode>/<stream>"),
                    weights: Some(path.display().to_string()),
                    traces: Vec::new(),
                });
            }
            episodes = *n;
            base_seed = *seed;
        }
    }
    io::write_atomic(&out.join(HEATMAP), io::heatmap_csv(&h).as_bytes())?;
    RunManifest {
        tool_version: TOOL_VERSION.into(),
        command: "heatmap".into(),
        config: cfg.to_text(),
        base_seed,
        oracle_mean: None,
        episodes,
        runs,
        artifacts: vec![HEATMAP.into()],
    }
    .write(&out.join(MANIFEST))?;
    Ok(h)
}

/// Visit counts of `episodes` frozen rollouts on evaluation set `run`.
pub fn policy_heatmap(
    learners: &[QFunction],
    cfg: &ExperimentConfig,
    seed: u64,
    run: usize,
    episodes: usize,
    epsilon: f64,
) -> Result<Heatmap> {
    let world = cfg.world.clone();
    let maps = trainer::evaluate_logs(learners, cfg, seed, run, episodes, epsilon, |log| {
        let mut h = Heatmap::new(&world);
        h.add_log(log);
        h
    })?;
    let mut h = Heatmap::new(&cfg.world);
    for (_, m) in &maps {
        h.merge(m);
    }
    Ok(h)
}

/// Re-simulates every traced episode of an `eval` output directory and
/// checks it against the trace on disk. Returns the number of episodes replayed.
pub fn trace_replay(dir: &Path) -> Result<usize> {
    let manifest_path = dir.join(MANIFEST);
    let manifest = RunManifest::read(&manifest_path)?;
    if manifest.command != "eval" {
        return Err(Error::Replay(format!(
            "{} was written by `{}`, not `eval`",
            manifest_path.display(),
            manifest.command
        )));
    }
    let cfg = manifest.experiment_config(&manifest_path)?;
    let harness = Harness::new(&cfg)?;
    let mut replayed = 0;
    for entry in &manifest.runs {
        let Some(weights) = &entry.weights else {
            continue;
        };
        let learners = load_team(Path::new(weights), &cfg)?;
        for name in &entry.traces {
            let episode = parse_episode(name)
                .ok_or_else(|| Error::Replay(format!("cannot tell the episode of `{name}`")))?;
            let mut rngs = EpisodeRngs::new(
                manifest.base_seed,
                PHASE_EVAL,
                entry.run as u64,
                episode as u64,
                cfg.world.num_agents,
            );
            let log = harness.run_frozen(&learners, 0.0, &mut rngs)?;
            let expected = io::trace_jsonl(&log.steps)?;
            let found = std::fs::read_to_string(dir.join(name))?;
            if expected != found {
                return Err(Error::Replay(format!(
                    "{name} differs from its re-simulation"
                )));
            }
            replayed += 1;
        }
    }
    Ok(replayed)
}

fn parse_episode(name: &str) -> Option<usize> {
    let stem = Path::new(name).file_stem()?.to_str()?;
    stem.rsplit_once("_ep")?.1.parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn episode_from_trace_name() {
        assert_eq!(parse_episode(&trace_name(3, 42)), Some(42));
        assert_eq!(parse_episode("traces/foo.jsonl"), None);
    }
}
