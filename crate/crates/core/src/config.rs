//! Experiment configuration and its flat `key = value` file format.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; unknown keys are rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{ActionSet, Edge, WorldConfig};
use crate::error::{Error, Result};
use crate::features::{tile_widths, TileCoder};
use crate::learner::LearnerSchedule;
use crate::rewards::RewardMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoderConfig {
    pub num_tilings: usize,
    pub hash_table_size: usize,
    /// Tile width of the own-position dimensions, meters.
    pub position_width: f64,
    /// Tile width of the target/agent count dimensions.
    pub count_width: f64,
    /// Tile width of the mean-distance dimensions, meters.
    pub distance_width: f64,
}

impl Default for CoderConfig {
    fn default() -> Self {
        CoderConfig {
            num_tilings: 64,
            hash_table_size: 1 << 20,
            position_width: 25.0,
            count_width: 1.0,
            distance_width: 25.0,
        }
    }
}

impl CoderConfig {
    pub fn build(&self) -> Result<TileCoder> {
        TileCoder::new(
            self.num_tilings,
            tile_widths(self.position_width, self.count_width, self.distance_width),
            self.hash_table_size,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub schedule: LearnerSchedule,
    pub coder: CoderConfig,
    pub reward_mode: RewardMode,
    pub num_episodes: usize,
    pub num_runs: usize,
    pub base_seed: u64,
    pub eval_episodes: usize,
    /// Mean planner utility used to normalise training curves. When unset
    /// it is read from `oracle_file`, or computed once on the evaluation seeds.
    pub oracle_mean: Option<f64>,
    /// An `oracle.csv` written by the `oracle` command.
    pub oracle_file: Option<PathBuf>,
    pub median_window: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            world: WorldConfig::default(),
            schedule: LearnerSchedule::default(),
            coder: CoderConfig::default(),
            reward_mode: RewardMode::Difference,
            num_episodes: 100_000,
            num_runs: 20,
            base_seed: 0,
            eval_episodes: 1000,
            oracle_mean: None,
            oracle_file: None,
            median_window: 501,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.schedule.validate()?;
        self.coder.build()?;
        ActionSet::for_world(&self.world)?;
        for (name, v) in [
            ("num_episodes", self.num_episodes),
            ("num_runs", self.num_runs),
            ("eval_episodes", self.eval_episodes),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be >= 1"));
            }
        }
        if self.median_window.is_multiple_of(2) {
            return Err(Error::config("median_window", "must be odd"));
        }
        if let Some(m) = self.oracle_mean {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::config("oracle_mean", "must be > 0"));
            }
        }
        Ok(())
    }

    pub fn parse_str(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fail = |reason: String| Error::Parse {
                path: origin.to_path_buf(),
                line: idx + 1,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| fail(format!("expected `key = value`, got `{line}`")))?;
            cfg.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config { field, reason } => fail(format!("{field}: {reason}")),
                other => other,
            })?;
        }
        cfg.validate().map_err(|e| match e {
            Error::Config { field, reason } => Error::Parse {
                path: origin.to_path_buf(),
                line: line_of(text, &field),
                reason: format!("{field}: {reason}"),
            },
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text, path)
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::config(key, format!("cannot parse `{v}`")))
        }
        fn list(key: &str, v: &str) -> Result<Vec<f64>> {
            v.split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| num(key, s.trim()))
                .collect()
        }
        let w = &mut self.world;
        let s = &mut self.schedule;
        let c = &mut self.coder;
        match key {
            "area_width" => w.area_width = num(key, value)?,
            "area_height" => w.area_height = num(key, value)?,
            "num_targets" => w.num_targets = num(key, value)?,
            "num_agents" => w.num_agents = num(key, value)?,
            "detection_radius" => w.detection_radius = num(key, value)?,
            "radial_steps" => w.radial_steps = list(key, value)?,
            "num_angles" => w.num_angles = num(key, value)?,
            "episode_length" => w.episode_length = num(key, value)?,
            "dt" => w.dt = num(key, value)?,
            "target_speed" => w.target_speed = num(key, value)?,
            "poi_box_side" => w.poi_box_side = num(key, value)?,
            "spawn_edges" => {
                w.spawn_edges = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| {
                        Edge::parse(s).ok_or_else(|| {
                            Error::config(key, format!("unknown edge `{}`", s.trim()))
                        })
                    })
                    .collect::<Result<_>>()?
            }
            "alpha" => s.alpha = num(key, value)?,
            "epsilon" => s.epsilon = num(key, value)?,
            "alpha_decay_rate" => s.alpha_decay_rate = num(key, value)?,
            "epsilon_decay_rate" => s.epsilon_decay_rate = num(key, value)?,
            "gamma" => s.gamma = num(key, value)?,
            "num_tilings" => c.num_tilings = num(key, value)?,
            "hash_table_size" => c.hash_table_size = num(key, value)?,
            "position_tile_width" => c.position_width = num(key, value)?,
            "count_tile_width" => c.count_width = num(key, value)?,
            "distance_tile_width" => c.distance_width = num(key, value)?,
            "reward_mode" => {
                self.reward_mode = RewardMode::parse(value).ok_or_else(|| {
                    Error::config(key, format!("expected global|difference, got `{value}`"))
                })?
            }
            "num_episodes" => self.num_episodes = num(key, value)?,
            "num_runs" => self.num_runs = num(key, value)?,
            "base_seed" => self.base_seed = num(key, value)?,
            "eval_episodes" => self.eval_episodes = num(key, value)?,
            "oracle_mean" => self.oracle_mean = Some(num(key, value)?),
            "oracle_file" => self.oracle_file = Some(PathBuf::from(value)),
            "median_window" => self.median_window = num(key, value)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Serialises every field in the file format; `parse_str` of the result
    /// gives back an equal configuration.
    pub fn to_text(&self) -> String {
        let w = &self.world;
        let s = &self.schedule;
        let c = &self.coder;
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let edges = w
            .spawn_edges
            .iter()
            .map(|e| e.name())
            .collect::<Vec<_>>()
            .join(",");
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("area_width", w.area_width.to_string());
        kv("area_height", w.area_height.to_string());
        kv("num_targets", w.num_targets.to_string());
        kv("num_agents", w.num_agents.to_string());
        kv("detection_radius", w.detection_radius.to_string());
        kv("radial_steps", join(&w.radial_steps));
        kv("num_angles", w.num_angles.to_string());
        kv("episode_length", w.episode_length.to_string());
        kv("dt", w.dt.to_string());
        kv("target_speed", w.target_speed.to_string());
        kv("poi_box_side", w.poi_box_side.to_string());
        kv("spawn_edges", edges);
        kv("alpha", s.alpha.to_string());
        kv("epsilon", s.epsilon.to_string());
        kv("alpha_decay_rate", s.alpha_decay_rate.to_string());
        kv("epsilon_decay_rate", s.epsilon_decay_rate.to_string());
        kv("gamma", s.gamma.to_string());
        kv("num_tilings", c.num_tilings.to_string());
        kv("hash_table_size", c.hash_table_size.to_string());
        kv("position_tile_width", c.position_width.to_string());
        kv("count_tile_width", c.count_width.to_string());
        kv("distance_tile_width", c.distance_width.to_string());
        kv("reward_mode", self.reward_mode.name().to_string());
        kv("num_episodes", self.num_episodes.to_string());
        kv("num_runs", self.num_runs.to_string());
        kv("base_seed", self.base_seed.to_string());
        kv("eval_episodes", self.eval_episodes.to_string());
        if let Some(m) = self.oracle_mean {
            kv("oracle_mean", m.to_string());
        }
        if let Some(p) = &self.oracle_file {
            kv("oracle_file", p.display().to_string());
        }
        kv("median_window", self.median_window.to_string());
        out
    }
}

fn line_of(text: &str, key: &str) -> usize {
    text.lines()
        .position(|l| l.split_once('=').is_some_and(|(k, _)| k.trim() == key))
        .map_or(0, |i| i + 1)
}
