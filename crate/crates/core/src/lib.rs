//! Discrete-time multi-agent search-and-track simulation with independent
//! tile-coded Q-learners.
//!
//! Pursuer agents start at the centre of a square area and must find and
//! follow targets that fly in straight lines from the perimeter towards a
//! point of interest. Each agent learns its own value function from either
//! the team (global) reward or its difference reward, and an assignment
//! planner with full knowledge of the target trajectories provides the
//! normalisation baseline.

pub mod commands;
pub mod config;
pub mod env;
pub mod error;
pub mod features;
pub mod geom;
pub mod io;
pub mod learner;
pub mod metrics;
pub mod oracle;
pub mod rewards;
pub mod seeding;
pub mod trainer;

pub use config::{CoderConfig, ExperimentConfig};
pub use env::{
    Action, ActionMask, ActionSet, AgentState, DetectionMatrix, Edge, TargetState, World,
    WorldConfig,
};
pub use error::{Error, Result};
pub use features::{Observation, TileCoder, OBS_DIM};
pub use geom::Vec2;
pub use learner::{LearnerSchedule, QFunction};
pub use rewards::RewardMode;
pub use trainer::{EpisodeLog, EvalStats, Team, TrainingCurve};
