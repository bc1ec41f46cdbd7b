//! Planner baseline with full knowledge of target trajectories.
//!
//! Each target is given to at most one agent. An assigned agent flies the
//! shortest-time lattice path into detection range and then follows the
//! target greedily; unassigned agents hold position. All assignments are
//! tried and the one with the highest simulated utility is kept.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{step_target, Action, ActionSet, AgentState, TargetState, World, WorldConfig};
use crate::geom::Vec2;
use crate::seeding::{EpisodeRngs, PHASE_EVAL};
use crate::trainer::mean_std;

/// Target positions at t = 0..=T.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnownTrajectory {
    pub positions: Vec<Vec2>,
}

impl KnownTrajectory {
    pub fn horizon(&self) -> usize {
        self.positions.len() - 1
    }
}

pub fn precompute_trajectories(
    targets: &[TargetState],
    horizon: usize,
    dt: f64,
) -> Vec<KnownTrajectory> {
    targets
        .iter()
        .map(|&t| {
            let mut s = t;
            let mut positions = Vec::with_capacity(horizon + 1);
            positions.push(s.pos);
            for _ in 0..horizon {
                s = step_target(s, dt);
                positions.push(s.pos);
            }
            KnownTrajectory { positions }
        })
        .collect()
}

/// Minimum-time path into detection range: `moves[k]` is the action index
/// taken at timestep `k + 1`, and the agent is in range at `time`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Intercept {
    pub time: usize,
    pub moves: Vec<usize>,
}

type Cell = (i64, i64);

/// Cells `origin + quantum * (i, j)` that lie inside the area.
struct Lattice {
    origin: Vec2,
    quantum: f64,
    min: Cell,
    cols: usize,
    rows: usize,
}

impl Lattice {
    fn new(origin: Vec2, actions: &ActionSet, cfg: &WorldConfig) -> Self {
        // Non-integral action sets are searched on a half-meter grid.
        let quantum = if actions.is_integral() { 1.0 } else { 0.5 };
        let lo = |o: f64| ((-o) / quantum - 1e-9).ceil() as i64;
        let hi = |o: f64, extent: f64| ((extent - o) / quantum + 1e-9).floor() as i64;
        let min = (lo(origin.x), lo(origin.y));
        let max = (hi(origin.x, cfg.area_width), hi(origin.y, cfg.area_height));
        Lattice {
            origin,
            quantum,
            min,
            cols: (max.0 - min.0 + 1).max(0) as usize,
            rows: (max.1 - min.1 + 1).max(0) as usize,
        }
    }

    fn pos(&self, c: Cell) -> Vec2 {
        self.origin + Vec2::new(c.0 as f64, c.1 as f64) * self.quantum
    }

    fn offset(&self, a: Action) -> Cell {
        (
            (a.dx / self.quantum).round() as i64,
            (a.dy / self.quantum).round() as i64,
        )
    }

    fn index(&self, c: Cell) -> Option<usize> {
        let x = c.0 - self.min.0;
        let y = c.1 - self.min.1;
        (x >= 0 && y >= 0 && (x as usize) < self.cols && (y as usize) < self.rows)
            .then(|| y as usize * self.cols + x as usize)
    }
}

struct Node {
    cell: Cell,
    parent: u32,
    action: u8,
}

/// Breadth-first search over (lattice cell, time). Returns `None` when the
/// target cannot be reached within the trajectory horizon. Among the cells
/// reached first, the one closest to the target is chosen.
pub fn intercept_plan(
    start: Vec2,
    traj: &KnownTrajectory,
    actions: &ActionSet,
    cfg: &WorldConfig,
) -> Option<Intercept> {
    let lattice = Lattice::new(start, actions, cfg);
    let offsets: Vec<Cell> = actions
        .as_slice()
        .iter()
        .map(|&a| lattice.offset(a))
        .collect();
    let radius = cfg.detection_radius;
    let mut seen = vec![0u32; lattice.cols * lattice.rows];
    let mut layers: Vec<Vec<Node>> = vec![vec![Node {
        cell: (0, 0),
        parent: 0,
        action: 0,
    }]];
    for t in 0..=traj.horizon() {
        let target = traj.positions[t];
        let hit = layers[t]
            .iter()
            .enumerate()
            .map(|(k, n)| (k, lattice.pos(n.cell).distance(target)))
            .filter(|&(_, d)| d <= radius)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((mut k, _)) = hit {
            let mut moves = vec![0; t];
            for layer in (1..=t).rev() {
                let node = &layers[layer][k];
                moves[layer - 1] = node.action as usize;
                k = node.parent as usize;
            }
            return Some(Intercept { time: t, moves });
        }
        if t == traj.horizon() {
            break;
        }
        let stamp = t as u32 + 1;
        let mut next = Vec::with_capacity(layers[t].len() * 2);
        for (k, node) in layers[t].iter().enumerate() {
            for (i, off) in offsets.iter().enumerate() {
                let cell = (node.cell.0 + off.0, node.cell.1 + off.1);
                let Some(idx) = lattice.index(cell) else {
                    continue;
                };
                if seen[idx] == stamp {
                    continue;
                }
                seen[idx] = stamp;
                next.push(Node {
                    cell,
                    parent: k as u32,
                    action: i as u8,
                });
            }
        }
        layers.push(next);
    }
    None
}

/// Earliest timestep at which `start` can have the target in range, or
/// `T + 1` if it never can.
pub fn earliest_intercept(
    start: Vec2,
    traj: &KnownTrajectory,
    actions: &ActionSet,
    cfg: &WorldConfig,
) -> usize {
    intercept_plan(start, traj, actions, cfg).map_or(traj.horizon() + 1, |i| i.time)
}

/// Admissible action that brings `pos` closest to `goal`; lowest index wins ties.
pub fn track_action(pos: Vec2, goal: Vec2, actions: &ActionSet, cfg: &WorldConfig) -> usize {
    actions
        .admissible(pos, cfg)
        .iter()
        .map(|i| (i, (pos + actions.get(i).displacement()).distance(goal)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .expect("zero action is always admissible")
}

fn hold_action(pos: Vec2, actions: &ActionSet, cfg: &WorldConfig) -> usize {
    actions
        .as_slice()
        .iter()
        .position(|a| a.is_zero())
        .unwrap_or_else(|| {
            actions
                .admissible(pos, cfg)
                .nth(0)
                .expect("some admissible action")
        })
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointPlan {
    /// `assignment[j]`: target followed by agent `j`.
    pub assignment: Vec<Option<usize>>,
    /// `moves[j][t - 1]`: action of agent `j` at timestep `t`.
    pub moves: Vec<Vec<usize>>,
    /// `positions[t][j]` for t = 0..=T.
    pub positions: Vec<Vec<Vec2>>,
    pub utility: u32,
}

/// All ways to give `min(M, N)` targets one distinct agent each, as
/// `target -> agent` maps.
fn assignments(num_targets: usize, num_agents: usize) -> Vec<Vec<Option<usize>>> {
    fn rec(
        i: usize,
        used: &mut Vec<bool>,
        cur: &mut Vec<Option<usize>>,
        need: usize,
        out: &mut Vec<Vec<Option<usize>>>,
    ) {
        let assigned = cur.iter().flatten().count();
        if i == cur.len() {
            if assigned == need {
                out.push(cur.clone());
            }
            return;
        }
        if assigned + (cur.len() - i) < need {
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                cur[i] = Some(j);
                rec(i + 1, used, cur, need, out);
                used[j] = false;
            }
        }
        cur[i] = None;
        rec(i + 1, used, cur, need, out);
    }
    let mut out = Vec::new();
    rec(
        0,
        &mut vec![false; num_agents],
        &mut vec![None; num_targets],
        num_targets.min(num_agents),
        &mut out,
    );
    out
}

/// Number of assignments [`assign_and_plan`] enumerates.
pub fn assignment_count(num_targets: usize, num_agents: usize) -> usize {
    assignments(num_targets, num_agents).len()
}

/// Plays out per-agent action sequences against known trajectories.
pub fn simulate_plan(
    starts: &[Vec2],
    trajectories: &[KnownTrajectory],
    moves: &[Vec<usize>],
    actions: &ActionSet,
    cfg: &WorldConfig,
) -> (Vec<Vec<Vec2>>, u32) {
    let horizon = cfg.episode_length;
    let mut positions = vec![starts.to_vec()];
    let mut utility = 0;
    for t in 1..=horizon {
        let prev = &positions[t - 1];
        let now: Vec<Vec2> = prev
            .iter()
            .zip(moves)
            .map(|(&p, m)| {
                let next = p + actions.get(m[t - 1]).displacement();
                assert!(cfg.contains(next), "plan leaves the area");
                next
            })
            .collect();
        utility += trajectories
            .iter()
            .filter(|tr| {
                now.iter()
                    .any(|&p| p.distance(tr.positions[t]) <= cfg.detection_radius)
            })
            .count() as u32;
        positions.push(now);
    }
    (positions, utility)
}

pub fn assign_and_plan(
    agents: &[AgentState],
    trajectories: &[KnownTrajectory],
    actions: &ActionSet,
    cfg: &WorldConfig,
) -> JointPlan {
    let horizon = cfg.episode_length;
    let starts: Vec<Vec2> = agents.iter().map(|a| a.pos).collect();
    // intercepts[i][j]: agent j chasing target i
    let intercepts: Vec<Vec<Option<Intercept>>> = trajectories
        .iter()
        .map(|tr| {
            let mut row: Vec<Option<Intercept>> = Vec::with_capacity(starts.len());
            for (j, &s) in starts.iter().enumerate() {
                // agents sharing a start share the search
                let plan = match starts[..j].iter().position(|&p| p == s) {
                    Some(k) => row[k].clone(),
                    None => intercept_plan(s, tr, actions, cfg),
                };
                row.push(plan);
            }
            row
        })
        .collect();

    let mut best: Option<JointPlan> = None;
    for targets_to_agents in assignments(trajectories.len(), agents.len()) {
        let mut assignment = vec![None; agents.len()];
        for (i, a) in targets_to_agents.iter().enumerate() {
            if let Some(j) = *a {
                assignment[j] = Some(i);
            }
        }
        let moves: Vec<Vec<usize>> = (0..agents.len())
            .map(|j| {
                let mut pos = starts[j];
                let mut seq = Vec::with_capacity(horizon);
                let prefix: &[usize] = match assignment[j] {
                    Some(i) => intercepts[i][j].as_ref().map_or(&[], |p| &p.moves),
                    None => &[],
                };
                for t in 1..=horizon {
                    let a = match (assignment[j], prefix.get(t - 1)) {
                        (Some(_), Some(&a)) => a,
                        (Some(i), None) => {
                            track_action(pos, trajectories[i].positions[t], actions, cfg)
                        }
                        (None, _) => hold_action(pos, actions, cfg),
                    };
                    pos += actions.get(a).displacement();
                    seq.push(a);
                }
                seq
            })
            .collect();
        let (positions, utility) = simulate_plan(&starts, trajectories, &moves, actions, cfg);
        if best.as_ref().is_none_or(|b| utility > b.utility) {
            best = Some(JointPlan {
                assignment,
                moves,
                positions,
                utility,
            });
        }
    }
    best.expect("at least the empty assignment exists")
}

/// Planner utility for the world of evaluation episode `(run, episode)`.
pub fn plan_episode(
    cfg: &WorldConfig,
    actions: &ActionSet,
    seed: u64,
    run: usize,
    episode: usize,
) -> (World, JointPlan) {
    let mut rngs = EpisodeRngs::new(seed, PHASE_EVAL, run as u64, episode as u64, cfg.num_agents);
    let world = World::spawn(cfg, &mut rngs.world);
    let trajectories = precompute_trajectories(&world.targets, cfg.episode_length, cfg.dt);
    let plan = assign_and_plan(&world.agents, &trajectories, actions, cfg);
    (world, plan)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleStats {
    /// Utility per episode, run-major.
    pub utilities: Vec<u32>,
    pub run_means: Vec<f64>,
    pub mean: f64,
    /// Standard deviation of the per-run means (per-episode when there is one run).
    pub std: f64,
}

/// Planner utility over evaluation runs `0..runs`, episodes `0..episodes`.
pub fn oracle_f(
    cfg: &WorldConfig,
    seed: u64,
    runs: usize,
    episodes: usize,
) -> crate::Result<OracleStats> {
    let actions = ActionSet::for_world(cfg)?;
    let utilities: Vec<u32> = (0..runs * episodes)
        .into_par_iter()
        .map(|k| {
            plan_episode(cfg, &actions, seed, k / episodes, k % episodes)
                .1
                .utility
        })
        .collect();
    Ok(summarize_runs(utilities, episodes))
}

pub(crate) fn summarize_runs(utilities: Vec<u32>, episodes: usize) -> OracleStats {
    let run_means: Vec<f64> = utilities
        .chunks(episodes.max(1))
        .map(|c| c.iter().map(|&u| u as f64).sum::<f64>() / c.len() as f64)
        .collect();
    let (mean, run_std) = mean_std(run_means.iter().copied());
    let std = if run_means.len() > 1 {
        run_std
    } else {
        mean_std(utilities.iter().map(|&u| u as f64)).1
    };
    OracleStats {
        utilities,
        run_means,
        mean,
        std,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults() -> (WorldConfig, ActionSet) {
        let cfg = WorldConfig::default();
        let a = ActionSet::for_world(&cfg).unwrap();
        (cfg, a)
    }

    fn still(x: f64, y: f64, horizon: usize) -> KnownTrajectory {
        KnownTrajectory {
            positions: vec![Vec2::new(x, y); horizon + 1],
        }
    }

    #[test]
    fn straight_line_then_absorb() {
        let t = TargetState::toward(Vec2::new(0.0, 25.0), Vec2::new(25.0, 25.0), 1.0);
        let tr = &precompute_trajectories(&[t], 30, 1.0)[0];
        for (k, p) in tr.positions.iter().enumerate() {
            let x = (k as f64).min(25.0);
            assert!((p.x - x).abs() < 1e-9 && p.y == 25.0, "t={k} {p:?}");
        }
        let arrived = step_target(
            step_target(
                TargetState::toward(Vec2::new(24.5, 25.0), Vec2::new(25.0, 25.0), 1.0),
                1.0,
            ),
            1.0,
        );
        let tr = &precompute_trajectories(&[arrived], 5, 1.0)[0];
        assert!(tr.positions.iter().all(|&p| p == Vec2::new(25.0, 25.0)));
    }

    #[test]
    fn intercept_examples() {
        let (cfg, a) = defaults();
        let t = TargetState::toward(Vec2::new(0.0, 25.0), Vec2::new(25.0, 25.0), 1.0);
        let tr = &precompute_trajectories(&[t], 30, 1.0)[0];
        let plan = intercept_plan(Vec2::new(25.0, 25.0), tr, &a, &cfg).unwrap();
        assert_eq!(plan.time, 5);
        assert_eq!(plan.moves.len(), 5);

        assert_eq!(
            earliest_intercept(Vec2::new(25.0, 25.0), &still(27.0, 27.0, 30), &a, &cfg),
            0
        );
        assert_eq!(
            earliest_intercept(Vec2::new(25.0, 25.0), &still(33.0, 25.0, 30), &a, &cfg),
            1
        );
        assert_eq!(
            earliest_intercept(Vec2::new(0.0, 0.0), &still(50.0, 50.0, 3), &a, &cfg),
            4
        );
    }

    #[test]
    fn tracking_follows_slower_target() {
        let (cfg, a) = defaults();
        let t = TargetState::toward(Vec2::new(26.0, 25.0), Vec2::new(28.0, 10.0), 1.0);
        let tr = precompute_trajectories(&[t], 30, 1.0);
        let plan = assign_and_plan(&[AgentState::at(25.0, 25.0)], &tr, &a, &cfg);
        assert_eq!(plan.utility, 30);
    }

    #[test]
    fn no_targets_gives_empty_plan() {
        let (cfg, a) = defaults();
        let plan = assign_and_plan(&[AgentState::at(25.0, 25.0); 2], &[], &a, &cfg);
        assert_eq!(plan.utility, 0);
        assert_eq!(plan.assignment, vec![None, None]);
        assert_eq!(assignment_count(2, 4), 12);
        assert_eq!(assignment_count(2, 1), 2);
        assert_eq!(assignment_count(0, 3), 1);
    }
}
