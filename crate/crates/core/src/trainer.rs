//! Episode rollouts, training runs and greedy evaluation.
//!
//! Within a timestep every agent observes the pre-move snapshot, all agents
//! move simultaneously, targets advance, and detections and rewards are
//! scored on the post-move state. Learners bootstrap from the post-move
//! observation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::env::{Action, ActionMask, ActionSet, DetectionMatrix, World, WorldConfig};
use crate::error::{Error, Result};
use crate::features::{build_observation, TileCoder};
use crate::geom::Vec2;
use crate::learner::{LearnerSchedule, QFunction};
use crate::rewards::{self, RewardMode};
use crate::seeding::{EpisodeRngs, PHASE_EVAL, PHASE_TRAIN};

/// How agents act during a rollout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Phase {
    /// Epsilon-greedy with Q-learning updates.
    Train { alpha: f64, epsilon: f64 },
    /// No updates; `epsilon` is 0 for purely greedy play.
    Eval { epsilon: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based timestep.
    pub t: usize,
    pub agents: Vec<Vec2>,
    pub targets: Vec<Vec2>,
    pub detections: DetectionMatrix,
    pub actions: Vec<usize>,
    pub rewards: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub initial: World,
    pub steps: Vec<StepRecord>,
    /// Team utility of the episode.
    pub utility: u32,
}

impl EpisodeLog {
    /// Utility recomputed from the logged detection matrices.
    pub fn recomputed_utility(&self) -> u32 {
        rewards::episode_utility(self.steps.iter().map(|s| &s.detections))
    }
}

/// Everything a rollout needs besides the learners.
#[derive(Clone, Debug)]
pub struct Harness {
    pub world: WorldConfig,
    pub coder: TileCoder,
    pub actions: ActionSet,
    pub reward_mode: RewardMode,
    pub gamma: f64,
}

enum Learners<'a> {
    Frozen(&'a [QFunction]),
    Learning(&'a mut [QFunction]),
}

impl Learners<'_> {
    fn get(&self, j: usize) -> &QFunction {
        match self {
            Learners::Frozen(l) => &l[j],
            Learners::Learning(l) => &l[j],
        }
    }
}

impl Harness {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Harness {
            world: cfg.world.clone(),
            coder: cfg.coder.build()?,
            actions: ActionSet::for_world(&cfg.world)?,
            reward_mode: cfg.reward_mode,
            gamma: cfg.schedule.gamma,
        })
    }

    pub fn fresh_learners(&self) -> Vec<QFunction> {
        (0..self.world.num_agents)
            .map(|_| QFunction::new(self.coder.table_size(), self.actions.len()))
            .collect()
    }

    pub fn check_learners(&self, learners: &[QFunction]) -> Result<()> {
        if learners.len() != self.world.num_agents {
            return Err(Error::Incompatible(format!(
                "{} learners for {} agents",
                learners.len(),
                self.world.num_agents
            )));
        }
        for q in learners {
            if q.table_size() != self.coder.table_size() || q.num_actions() != self.actions.len() {
                return Err(Error::Incompatible(format!(
                    "learner has {} slots x {} actions, harness needs {} x {}",
                    q.table_size(),
                    q.num_actions(),
                    self.coder.table_size(),
                    self.actions.len()
                )));
            }
        }
        Ok(())
    }

    /// One episode from a freshly spawned world. Learners are updated only
    /// in [`Phase::Train`].
    pub fn run_episode(
        &self,
        learners: &mut [QFunction],
        phase: Phase,
        rngs: &mut EpisodeRngs,
    ) -> Result<EpisodeLog> {
        self.check_learners(learners)?;
        let world = World::spawn(&self.world, &mut rngs.world);
        let learners = match phase {
            Phase::Train { .. } => Learners::Learning(learners),
            Phase::Eval { .. } => Learners::Frozen(learners),
        };
        Ok(self.rollout(world, learners, phase, &mut rngs.agents))
    }

    /// Greedy (or `epsilon`-greedy) episode with frozen learners.
    pub fn run_frozen(
        &self,
        learners: &[QFunction],
        epsilon: f64,
        rngs: &mut EpisodeRngs,
    ) -> Result<EpisodeLog> {
        self.check_learners(learners)?;
        let world = World::spawn(&self.world, &mut rngs.world);
        Ok(self.rollout(
            world,
            Learners::Frozen(learners),
            Phase::Eval { epsilon },
            &mut rngs.agents,
        ))
    }

    /// Frozen rollout from a given initial world.
    pub fn run_from(
        &self,
        world: World,
        learners: &[QFunction],
        epsilon: f64,
        agent_rngs: &mut [crate::seeding::Rng],
    ) -> Result<EpisodeLog> {
        self.check_learners(learners)?;
        if world.agents.len() != self.world.num_agents {
            return Err(Error::Incompatible(
                "world agent count differs from config".into(),
            ));
        }
        Ok(self.rollout(
            world,
            Learners::Frozen(learners),
            Phase::Eval { epsilon },
            agent_rngs,
        ))
    }

    fn observe(
        &self,
        world: &World,
        det: &DetectionMatrix,
        tiles: &mut [u32],
        masks: &mut [ActionMask],
    ) {
        let k = self.coder.num_tilings();
        for (j, agent) in world.agents.iter().enumerate() {
            let obs = build_observation(j, &world.agents, &world.targets, det);
            self.coder
                .active_tiles_into(&obs, &mut tiles[j * k..(j + 1) * k]);
            masks[j] = self.actions.admissible(agent.pos, &self.world);
        }
    }

    fn rollout(
        &self,
        mut world: World,
        mut learners: Learners<'_>,
        phase: Phase,
        agent_rngs: &mut [crate::seeding::Rng],
    ) -> EpisodeLog {
        let n = self.world.num_agents;
        let k = self.coder.num_tilings();
        let initial = world.clone();
        let epsilon = match phase {
            Phase::Train { epsilon, .. } | Phase::Eval { epsilon } => epsilon,
        };

        let mut tiles = vec![0u32; n * k];
        let mut next_tiles = vec![0u32; n * k];
        let mut masks = vec![ActionMask::EMPTY; n];
        let mut next_masks = vec![ActionMask::EMPTY; n];
        let mut det = world.detections(&self.world);
        self.observe(&world, &det, &mut tiles, &mut masks);

        let mut steps = Vec::with_capacity(self.world.episode_length);
        let mut chosen = vec![0usize; n];
        let mut joint = vec![Action { dx: 0.0, dy: 0.0 }; n];
        for t in 1..=self.world.episode_length {
            for j in 0..n {
                let a = learners.get(j).select_action(
                    &tiles[j * k..(j + 1) * k],
                    masks[j],
                    epsilon,
                    &mut agent_rngs[j],
                );
                chosen[j] = a;
                joint[j] = self.actions.get(a);
            }
            world.step(&joint, &self.world);
            det = world.detections(&self.world);
            let r = rewards::rewards(&det, self.reward_mode);
            self.observe(&world, &det, &mut next_tiles, &mut next_masks);

            if let (Learners::Learning(ls), Phase::Train { alpha, .. }) = (&mut learners, phase) {
                for (j, q) in ls.iter_mut().enumerate() {
                    q.td_update(
                        &tiles[j * k..(j + 1) * k],
                        chosen[j],
                        r[j] as f64,
                        &next_tiles[j * k..(j + 1) * k],
                        next_masks[j],
                        alpha,
                        self.gamma,
                    );
                }
            }

            steps.push(StepRecord {
                t,
                agents: world.agents.iter().map(|a| a.pos).collect(),
                targets: world.targets.iter().map(|x| x.pos).collect(),
                detections: det.clone(),
                actions: chosen.clone(),
                rewards: r,
            });
            std::mem::swap(&mut tiles, &mut next_tiles);
            std::mem::swap(&mut masks, &mut next_masks);
        }
        let utility = rewards::episode_utility(steps.iter().map(|s| &s.detections));
        EpisodeLog {
            initial,
            steps,
            utility,
        }
    }
}

/// Learners and schedule of one agent team.
#[derive(Clone, Debug)]
pub struct Team {
    pub learners: Vec<QFunction>,
    pub schedule: LearnerSchedule,
    pub episodes_trained: usize,
}

/// Result of one independent training run.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub run: usize,
    /// Utility of every training episode, in order.
    pub curve: Vec<u32>,
    pub team: Team,
}

/// Per-episode utilities of every run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub runs: Vec<Vec<u32>>,
}

impl TrainingCurve {
    /// Utility per episode averaged across runs.
    pub fn mean_across_runs(&self) -> Vec<f64> {
        let len = self.runs.iter().map(Vec::len).min().unwrap_or(0);
        (0..len)
            .map(|e| self.runs.iter().map(|r| r[e] as f64).sum::<f64>() / self.runs.len() as f64)
            .collect()
    }

    /// Mean utility over the last `window` episodes of all runs.
    pub fn final_window_mean(&self, window: usize) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for r in &self.runs {
            let tail = &r[r.len().saturating_sub(window)..];
            sum += tail.iter().map(|&f| f as f64).sum::<f64>();
            count += tail.len();
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }
}

/// Trains one run from zero-initialised learners.
pub fn train_run(cfg: &ExperimentConfig, run: usize) -> Result<RunResult> {
    train_run_with(cfg, run, |_, _| {})
}

/// Like [`train_run`], calling `on_episode(episode, &log)` after every episode.
pub fn train_run_with(
    cfg: &ExperimentConfig,
    run: usize,
    mut on_episode: impl FnMut(usize, &EpisodeLog),
) -> Result<RunResult> {
    let harness = Harness::new(cfg)?;
    let mut learners = harness.fresh_learners();
    let mut schedule = cfg.schedule;
    let mut curve = Vec::with_capacity(cfg.num_episodes);
    for ep in 0..cfg.num_episodes {
        let mut rngs = EpisodeRngs::new(
            cfg.base_seed,
            PHASE_TRAIN,
            run as u64,
            ep as u64,
            cfg.world.num_agents,
        );
        let phase = Phase::Train {
            alpha: schedule.alpha,
            epsilon: schedule.epsilon,
        };
        let log = harness.run_episode(&mut learners, phase, &mut rngs)?;
        curve.push(log.utility);
        on_episode(ep, &log);
        schedule = schedule.decay();
    }
    Ok(RunResult {
        run,
        curve,
        team: Team {
            learners,
            schedule,
            episodes_trained: cfg.num_episodes,
        },
    })
}

/// Every run of the experiment, in parallel. Keeps all learners in memory;
/// use [`train_run`] per run for large experiments.
pub fn train(cfg: &ExperimentConfig) -> Result<(TrainingCurve, Vec<Team>)> {
    let results: Vec<RunResult> = (0..cfg.num_runs)
        .into_par_iter()
        .map(|r| train_run(cfg, r))
        .collect::<Result<_>>()?;
    let mut curve = TrainingCurve::default();
    let mut teams = Vec::new();
    for r in results {
        curve.runs.push(r.curve);
        teams.push(r.team);
    }
    Ok((curve, teams))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub utilities: Vec<u32>,
    pub mean: f64,
    pub std: f64,
}

impl EvalStats {
    pub fn from_utilities(utilities: Vec<u32>) -> Self {
        let (mean, std) = mean_std(utilities.iter().map(|&u| u as f64));
        EvalStats {
            utilities,
            mean,
            std,
        }
    }
}

/// Population mean and standard deviation.
pub fn mean_std(xs: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = xs.into_iter().collect();
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Frozen-policy rollouts on evaluation episodes `0..n_episodes` of
/// evaluation set `run`. World seeds match the planner baseline for the
/// same `(seed, run, episode)`.
pub fn evaluate(
    learners: &[QFunction],
    cfg: &ExperimentConfig,
    seed: u64,
    run: usize,
    n_episodes: usize,
    epsilon: f64,
) -> Result<EvalStats> {
    Ok(EvalStats::from_utilities(
        evaluate_logs(learners, cfg, seed, run, n_episodes, epsilon, |_| ())?
            .into_iter()
            .map(|(u, _)| u)
            .collect(),
    ))
}

/// Evaluation rollouts, mapping every log through `keep` before dropping it.
pub fn evaluate_logs<T: Send>(
    learners: &[QFunction],
    cfg: &ExperimentConfig,
    seed: u64,
    run: usize,
    n_episodes: usize,
    epsilon: f64,
    keep: impl Fn(&EpisodeLog) -> T + Sync,
) -> Result<Vec<(u32, T)>> {
    if n_episodes == 0 {
        return Err(Error::config(
            "episodes",
            "must evaluate at least one episode",
        ));
    }
    let harness = Harness::new(cfg)?;
    (0..n_episodes)
        .into_par_iter()
        .map(|e| {
            let mut rngs =
                EpisodeRngs::new(seed, PHASE_EVAL, run as u64, e as u64, cfg.world.num_agents);
            let log = harness.run_frozen(learners, epsilon, &mut rngs)?;
            Ok((log.utility, keep(&log)))
        })
        .collect()
}
