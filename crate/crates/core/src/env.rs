//! World geometry, target and pursuer dynamics, the discrete action set and
//! the range sensor.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;

const SNAP_EPS: f64 = 1e-9;
const BOUNDS_EPS: f64 = 1e-9;

/// Perimeter edge a target enters from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Edge {
    /// x = 0
    West,
    /// x = width
    East,
    /// y = 0
    South,
    /// y = height
    North,
}

impl Edge {
    pub fn parse(s: &str) -> Option<Edge> {
        match s.trim().to_ascii_lowercase().as_str() {
            "west" => Some(Edge::West),
            "east" => Some(Edge::East),
            "south" => Some(Edge::South),
            "north" => Some(Edge::North),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Edge::West => "west",
            Edge::East => "east",
            Edge::South => "south",
            Edge::North => "north",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub area_width: f64,
    pub area_height: f64,
    pub num_targets: usize,
    pub num_agents: usize,
    pub detection_radius: f64,
    pub radial_steps: Vec<f64>,
    pub num_angles: usize,
    pub episode_length: usize,
    pub dt: f64,
    pub target_speed: f64,
    /// Side of the square, centred in the area, that points of interest are drawn from.
    pub poi_box_side: f64,
    /// Entry edge per target. Targets beyond the list alternate west/east.
    pub spawn_edges: Vec<Edge>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            area_width: 50.0,
            area_height: 50.0,
            num_targets: 2,
            num_agents: 2,
            detection_radius: 5.0,
            radial_steps: vec![0.0, 1.0, 3.0],
            num_angles: 4,
            episode_length: 30,
            dt: 1.0,
            target_speed: 1.0,
            poi_box_side: 10.0,
            spawn_edges: vec![Edge::West, Edge::East],
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("area_width", self.area_width),
            ("area_height", self.area_height),
            ("detection_radius", self.detection_radius),
            ("dt", self.dt),
            ("target_speed", self.target_speed),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(name, format!("must be > 0, got {v}")));
            }
        }
        if self.num_agents == 0 {
            return Err(Error::config("num_agents", "must be >= 1"));
        }
        if self.episode_length == 0 {
            return Err(Error::config("episode_length", "must be >= 1"));
        }
        if self.num_angles == 0 {
            return Err(Error::config("num_angles", "must be >= 1"));
        }
        if self.radial_steps.is_empty() {
            return Err(Error::config("radial_steps", "must not be empty"));
        }
        if self.radial_steps.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::config(
                "radial_steps",
                "steps must be finite and >= 0",
            ));
        }
        if self.radial_steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(
                "radial_steps",
                "must be strictly ascending (0 at most once)",
            ));
        }
        let side = self.poi_box_side;
        if !(side.is_finite() && side >= 0.0 && side <= self.area_width && side <= self.area_height)
        {
            return Err(Error::config(
                "poi_box_side",
                "POI box must lie inside the area",
            ));
        }
        if self.num_agents > 64 {
            return Err(Error::config(
                "num_agents",
                "at most 64 agents are supported",
            ));
        }
        Ok(())
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(self.area_width / 2.0, self.area_height / 2.0)
    }

    /// Lower-left and upper-right corners of the POI box.
    pub fn poi_box(&self) -> (Vec2, Vec2) {
        let c = self.center();
        let h = self.poi_box_side / 2.0;
        (Vec2::new(c.x - h, c.y - h), Vec2::new(c.x + h, c.y + h))
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= -BOUNDS_EPS
            && p.y >= -BOUNDS_EPS
            && p.x <= self.area_width + BOUNDS_EPS
            && p.y <= self.area_height + BOUNDS_EPS
    }

    pub fn spawn_edge(&self, target: usize) -> Edge {
        self.spawn_edges
            .get(target)
            .copied()
            .unwrap_or(if target.is_multiple_of(2) {
                Edge::West
            } else {
                Edge::East
            })
    }

    pub fn diagonal(&self) -> f64 {
        self.area_width.hypot(self.area_height)
    }
}

/// One discrete mobility control: a planar displacement applied in one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub dx: f64,
    pub dy: f64,
}

impl Action {
    pub fn displacement(self) -> Vec2 {
        Vec2::new(self.dx, self.dy)
    }

    pub fn is_zero(self) -> bool {
        self.dx == 0.0 && self.dy == 0.0
    }
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() <= SNAP_EPS {
        // also folds -0.0 into 0.0
        r + 0.0
    } else {
        v
    }
}

/// The deduplicated set of displacements generated by every (radius, angle)
/// pair. Order is generation order, so indices are stable for a given
/// configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSet {
    actions: Vec<Action>,
}

impl ActionSet {
    pub fn enumerate(radial_steps: &[f64], num_angles: usize) -> Result<Self> {
        if radial_steps.is_empty() {
            return Err(Error::config("radial_steps", "must not be empty"));
        }
        if num_angles == 0 {
            return Err(Error::config("num_angles", "must be >= 1"));
        }
        let dtheta = std::f64::consts::TAU / num_angles as f64;
        let mut actions: Vec<Action> = Vec::new();
        for &r in radial_steps {
            for k in 0..=num_angles {
                let theta = k as f64 * dtheta;
                let a = Action {
                    dx: snap(r * theta.cos()),
                    dy: snap(r * theta.sin()),
                };
                if !actions.contains(&a) {
                    actions.push(a);
                }
            }
        }
        if actions.len() > ActionMask::CAPACITY {
            return Err(Error::config(
                "num_angles",
                format!(
                    "at most {} distinct actions are supported",
                    ActionMask::CAPACITY
                ),
            ));
        }
        Ok(ActionSet { actions })
    }

    pub fn for_world(cfg: &WorldConfig) -> Result<Self> {
        Self::enumerate(&cfg.radial_steps, cfg.num_angles)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn get(&self, index: usize) -> Action {
        self.actions[index]
    }

    pub fn as_slice(&self) -> &[Action] {
        &self.actions
    }

    pub fn index_of(&self, a: Action) -> Option<usize> {
        self.actions.iter().position(|&b| b == a)
    }

    pub fn full_mask(&self) -> ActionMask {
        ActionMask::all(self.len())
    }

    /// Whether every displacement is a whole number of meters.
    pub fn is_integral(&self) -> bool {
        self.actions
            .iter()
            .all(|a| a.dx.fract() == 0.0 && a.dy.fract() == 0.0)
    }

    /// Actions that keep an agent at `pos` inside the area.
    pub fn admissible(&self, pos: Vec2, cfg: &WorldConfig) -> ActionMask {
        let mut mask = ActionMask::EMPTY;
        for (i, a) in self.actions.iter().enumerate() {
            if a.is_zero() || cfg.contains(pos + a.displacement()) {
                mask.insert(i);
            }
        }
        mask
    }
}

/// A subset of an [`ActionSet`], stored as a bitmask over action indices.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ActionMask(u64);

impl ActionMask {
    pub const CAPACITY: usize = 64;
    pub const EMPTY: ActionMask = ActionMask(0);

    pub fn all(n: usize) -> Self {
        assert!(n <= Self::CAPACITY);
        if n == Self::CAPACITY {
            ActionMask(u64::MAX)
        } else {
            ActionMask((1u64 << n) - 1)
        }
    }

    pub fn insert(&mut self, i: usize) {
        self.0 |= 1 << i;
    }

    pub fn contains(self, i: usize) -> bool {
        i < Self::CAPACITY && self.0 & (1 << i) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// The `k`-th member in ascending index order.
    pub fn nth(self, k: usize) -> Option<usize> {
        self.iter().nth(k)
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let i = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(i)
            }
        })
    }
}

pub fn admissible_actions(
    agent: &AgentState,
    actions: &ActionSet,
    cfg: &WorldConfig,
) -> ActionMask {
    actions.admissible(agent.pos, cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub pos: Vec2,
}

impl AgentState {
    pub fn at(x: f64, y: f64) -> Self {
        AgentState {
            pos: Vec2::new(x, y),
        }
    }
}

/// New agent state after one move. The caller is responsible for only
/// passing admissible actions.
pub fn apply_action(agent: AgentState, a: Action) -> AgentState {
    AgentState {
        pos: agent.pos + a.displacement(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetState {
    pub pos: Vec2,
    pub vel: Vec2,
    pub poi: Vec2,
    pub arrived: bool,
}

impl TargetState {
    /// A target at `pos` flying at `speed` straight towards `poi`.
    pub fn toward(pos: Vec2, poi: Vec2, speed: f64) -> Self {
        match (poi - pos).normalized() {
            Some(dir) => TargetState {
                pos,
                vel: dir * speed,
                poi,
                arrived: false,
            },
            None => TargetState {
                pos: poi,
                vel: Vec2::ZERO,
                poi,
                arrived: true,
            },
        }
    }
}

/// Advance a target by one step. A target that would reach or pass its POI
/// lands on it and stays there.
pub fn step_target(t: TargetState, dt: f64) -> TargetState {
    if t.arrived {
        return t;
    }
    let reach = t.vel.norm() * dt;
    if t.pos.distance(t.poi) <= reach + SNAP_EPS {
        TargetState {
            pos: t.poi,
            vel: Vec2::ZERO,
            poi: t.poi,
            arrived: true,
        }
    } else {
        TargetState {
            pos: t.pos + t.vel * dt,
            ..t
        }
    }
}

pub fn detect(agent: Vec2, target: Vec2, radius: f64) -> bool {
    agent.distance(target) <= radius
}

/// `detected(i, j)`: whether target `i` is within range of agent `j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionMatrix {
    num_targets: usize,
    num_agents: usize,
    cells: Vec<bool>,
}

impl DetectionMatrix {
    pub fn new(num_targets: usize, num_agents: usize) -> Self {
        DetectionMatrix {
            num_targets,
            num_agents,
            cells: vec![false; num_targets * num_agents],
        }
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Self {
        let num_agents = rows.first().map_or(0, Vec::len);
        assert!(
            rows.iter().all(|r| r.len() == num_agents),
            "ragged detection rows"
        );
        DetectionMatrix {
            num_targets: rows.len(),
            num_agents,
            cells: rows.concat(),
        }
    }

    pub fn compute(agents: &[AgentState], targets: &[TargetState], radius: f64) -> Self {
        let mut d = DetectionMatrix::new(targets.len(), agents.len());
        for (i, t) in targets.iter().enumerate() {
            for (j, a) in agents.iter().enumerate() {
                d.set(i, j, detect(a.pos, t.pos, radius));
            }
        }
        d
    }

    pub fn num_targets(&self) -> usize {
        self.num_targets
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn get(&self, target: usize, agent: usize) -> bool {
        self.cells[target * self.num_agents + agent]
    }

    pub fn set(&mut self, target: usize, agent: usize, v: bool) {
        self.cells[target * self.num_agents + agent] = v;
    }

    pub fn row(&self, target: usize) -> &[bool] {
        &self.cells[target * self.num_agents..(target + 1) * self.num_agents]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[bool]> {
        (0..self.num_targets).map(move |i| self.row(i))
    }
}

pub fn detection_matrix(
    agents: &[AgentState],
    targets: &[TargetState],
    radius: f64,
) -> DetectionMatrix {
    DetectionMatrix::compute(agents, targets, radius)
}

/// Complete simulator state at one instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub agents: Vec<AgentState>,
    pub targets: Vec<TargetState>,
}

impl World {
    /// Fresh episode: all agents at the centre, each target on its entry
    /// edge heading for its own POI.
    pub fn spawn<R: Rng + ?Sized>(cfg: &WorldConfig, rng: &mut R) -> World {
        let agents = vec![AgentState { pos: cfg.center() }; cfg.num_agents];
        let (lo, hi) = cfg.poi_box();
        let targets = (0..cfg.num_targets)
            .map(|i| {
                let u: f64 = rng.gen();
                let start = match cfg.spawn_edge(i) {
                    Edge::West => Vec2::new(0.0, u * cfg.area_height),
                    Edge::East => Vec2::new(cfg.area_width, u * cfg.area_height),
                    Edge::South => Vec2::new(u * cfg.area_width, 0.0),
                    Edge::North => Vec2::new(u * cfg.area_width, cfg.area_height),
                };
                loop {
                    let poi = Vec2::new(
                        lo.x + rng.gen::<f64>() * (hi.x - lo.x),
                        lo.y + rng.gen::<f64>() * (hi.y - lo.y),
                    );
                    if poi != start {
                        break TargetState::toward(start, poi, cfg.target_speed);
                    }
                }
            })
            .collect();
        World { agents, targets }
    }

    /// Apply one joint action simultaneously, then advance every target.
    ///
    /// Panics if an action takes an agent out of the area.
    pub fn step(&mut self, joint: &[Action], cfg: &WorldConfig) {
        assert_eq!(joint.len(), self.agents.len(), "one action per agent");
        for (agent, &a) in self.agents.iter_mut().zip(joint) {
            let next = apply_action(*agent, a);
            assert!(
                cfg.contains(next.pos),
                "inadmissible action {a:?} from {:?}",
                agent.pos
            );
            *agent = next;
        }
        for t in &mut self.targets {
            *t = step_target(*t, cfg.dt);
        }
    }

    pub fn detections(&self, cfg: &WorldConfig) -> DetectionMatrix {
        DetectionMatrix::compute(&self.agents, &self.targets, cfg.detection_radius)
    }
}
