//! Per-agent quadrant observations and the hashing tile coder that turns
//! them into sparse binary features.

use serde::{Deserialize, Serialize};

use crate::env::{AgentState, DetectionMatrix, TargetState};
use crate::error::{Error, Result};
use crate::geom::Vec2;

pub const OBS_DIM: usize = 18;

const OWN_X: usize = 0;
const OWN_Y: usize = 1;
const TARGET_COUNT: usize = 2;
const TARGET_DIST: usize = 6;
const AGENT_COUNT: usize = 10;
const AGENT_DIST: usize = 14;

/// Quadrant (0..4) of `p` seen from `origin`, using half-open angular
/// intervals `[k*90°, (k+1)*90°)`. A point at the origin itself falls in
/// quadrant 0.
pub fn quadrant(origin: Vec2, p: Vec2) -> usize {
    let dx = p.x - origin.x;
    let dy = p.y - origin.y;
    if dx > 0.0 && dy >= 0.0 {
        0
    } else if dx <= 0.0 && dy > 0.0 {
        1
    } else if dx < 0.0 && dy <= 0.0 {
        2
    } else if dx >= 0.0 && dy < 0.0 {
        3
    } else {
        0
    }
}

/// Layout: own position (2), detected-target counts per quadrant (4), mean
/// detected-target distance per quadrant (4), other-agent counts (4), mean
/// other-agent distance (4). Empty quadrants carry distance 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn own_pos(&self) -> Vec2 {
        Vec2::new(self.0[OWN_X], self.0[OWN_Y])
    }

    pub fn target_counts(&self) -> &[f64] {
        &self.0[TARGET_COUNT..TARGET_COUNT + 4]
    }

    pub fn target_distances(&self) -> &[f64] {
        &self.0[TARGET_DIST..TARGET_DIST + 4]
    }

    pub fn agent_counts(&self) -> &[f64] {
        &self.0[AGENT_COUNT..AGENT_COUNT + 4]
    }

    pub fn agent_distances(&self) -> &[f64] {
        &self.0[AGENT_DIST..AGENT_DIST + 4]
    }

    pub fn as_array(&self) -> &[f64; OBS_DIM] {
        &self.0
    }
}

/// Observation of agent `me`. Targets contribute only when the detection
/// matrix says `me` sees them; every other agent is always visible.
pub fn build_observation(
    me: usize,
    agents: &[AgentState],
    targets: &[TargetState],
    detections: &DetectionMatrix,
) -> Observation {
    let origin = agents[me].pos;
    let mut v = [0.0; OBS_DIM];
    v[OWN_X] = origin.x;
    v[OWN_Y] = origin.y;

    for (i, t) in targets.iter().enumerate() {
        if detections.get(i, me) {
            let l = quadrant(origin, t.pos);
            v[TARGET_COUNT + l] += 1.0;
            v[TARGET_DIST + l] += origin.distance(t.pos);
        }
    }
    for (j, a) in agents.iter().enumerate() {
        if j != me {
            let l = quadrant(origin, a.pos);
            v[AGENT_COUNT + l] += 1.0;
            v[AGENT_DIST + l] += origin.distance(a.pos);
        }
    }
    for l in 0..4 {
        if v[TARGET_COUNT + l] > 0.0 {
            v[TARGET_DIST + l] /= v[TARGET_COUNT + l];
        }
        if v[AGENT_COUNT + l] > 0.0 {
            v[AGENT_DIST + l] /= v[AGENT_COUNT + l];
        }
    }
    Observation(v)
}

/// Tile widths per observation dimension: `position` for the own-position,
/// `distance` for the mean-distance and `count` for the count dimensions.
pub fn tile_widths(position: f64, count: f64, distance: f64) -> [f64; OBS_DIM] {
    let mut w = [0.0; OBS_DIM];
    w[OWN_X] = position;
    w[OWN_Y] = position;
    w[TARGET_COUNT..TARGET_COUNT + 4].fill(count);
    w[TARGET_DIST..TARGET_DIST + 4].fill(distance);
    w[AGENT_COUNT..AGENT_COUNT + 4].fill(count);
    w[AGENT_DIST..AGENT_DIST + 4].fill(distance);
    w
}

/// Hashing tile coder over the full observation.
///
/// Each tiling is one grid over all dimensions; tiling `k` is displaced by
/// `k * (2d + 1) / num_tilings` of a tile width in dimension `d`. The tiling
/// index and integer tile coordinates are hashed into `[0, table_size)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileCoder {
    num_tilings: usize,
    widths: [f64; OBS_DIM],
    table_size: usize,
}

impl TileCoder {
    pub fn new(num_tilings: usize, widths: [f64; OBS_DIM], table_size: usize) -> Result<Self> {
        if num_tilings == 0 {
            return Err(Error::config("num_tilings", "must be >= 1"));
        }
        if table_size == 0 || table_size > u32::MAX as usize {
            return Err(Error::config("hash_table_size", "must be in 1..=2^32-1"));
        }
        if widths.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::config("tile_width", "widths must be > 0"));
        }
        Ok(TileCoder {
            num_tilings,
            widths,
            table_size,
        })
    }

    pub fn num_tilings(&self) -> usize {
        self.num_tilings
    }

    pub fn table_size(&self) -> usize {
        self.table_size
    }

    pub fn widths(&self) -> &[f64; OBS_DIM] {
        &self.widths
    }

    /// Integer tile coordinates of `obs` in tiling `k`.
    pub fn tile_coords(&self, obs: &Observation, k: usize) -> [i64; OBS_DIM] {
        let n = self.num_tilings as i64;
        let mut coords = [0i64; OBS_DIM];
        for (d, c) in coords.iter_mut().enumerate() {
            let q = self.quantize(obs.0[d], d);
            *c = (q + k as i64 * (2 * d as i64 + 1)).div_euclid(n);
        }
        coords
    }

    fn quantize(&self, v: f64, d: usize) -> i64 {
        (v / self.widths[d] * self.num_tilings as f64).floor() as i64
    }

    /// Hash slot of tiling `k` with the given tile coordinates.
    pub fn hash(&self, k: usize, coords: &[i64; OBS_DIM]) -> u32 {
        let mut h = (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        for &c in coords {
            h = (h.rotate_left(23) ^ c as u64).wrapping_mul(0xff51_afd7_ed55_8ccd);
        }
        h ^= h >> 33;
        h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
        h ^= h >> 33;
        (h % self.table_size as u64) as u32
    }

    /// Writes the active slot of each tiling into `out` (length `num_tilings`).
    pub fn active_tiles_into(&self, obs: &Observation, out: &mut [u32]) {
        assert_eq!(out.len(), self.num_tilings);
        let n = self.num_tilings as i64;
        let mut q = [0i64; OBS_DIM];
        for (d, qd) in q.iter_mut().enumerate() {
            *qd = self.quantize(obs.0[d], d);
        }
        let mut coords = [0i64; OBS_DIM];
        for (k, slot) in out.iter_mut().enumerate() {
            for d in 0..OBS_DIM {
                coords[d] = (q[d] + k as i64 * (2 * d as i64 + 1)).div_euclid(n);
            }
            *slot = self.hash(k, &coords);
        }
    }

    pub fn active_tiles(&self, obs: &Observation) -> Vec<u32> {
        let mut out = vec![0; self.num_tilings];
        self.active_tiles_into(obs, &mut out);
        out
    }
}
