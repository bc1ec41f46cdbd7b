//! Team utility, global reward and difference rewards, all computed from a
//! detection matrix.

use serde::{Deserialize, Serialize};

use crate::env::DetectionMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    Global,
    Difference,
}

impl RewardMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "global" | "g" => Some(RewardMode::Global),
            "difference" | "d" => Some(RewardMode::Difference),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RewardMode::Global => "global",
            RewardMode::Difference => "difference",
        }
    }
}

/// 1 if at least one agent sees target `i`.
pub fn target_detected(d: &DetectionMatrix, i: usize) -> u32 {
    d.row(i).iter().any(|&b| b) as u32
}

/// Number of distinct targets seen by the team.
pub fn global_reward(d: &DetectionMatrix) -> u32 {
    (0..d.num_targets()).map(|i| target_detected(d, i)).sum()
}

/// Global reward if agent `j` saw nothing.
pub fn counterfactual_reward(d: &DetectionMatrix, j: usize) -> u32 {
    assert!(j < d.num_agents(), "agent {j} out of range");
    d.rows()
        .filter(|row| row.iter().enumerate().any(|(k, &b)| b && k != j))
        .count() as u32
}

/// Targets that agent `j` alone is seeing.
pub fn difference_reward(d: &DetectionMatrix, j: usize) -> u32 {
    global_reward(d) - counterfactual_reward(d, j)
}

/// Per-agent rewards for one step under `mode`.
pub fn rewards(d: &DetectionMatrix, mode: RewardMode) -> Vec<u32> {
    match mode {
        RewardMode::Global => vec![global_reward(d); d.num_agents()],
        RewardMode::Difference => (0..d.num_agents())
            .map(|j| difference_reward(d, j))
            .collect(),
    }
}

/// Episode utility: per-step global rewards summed over the episode.
pub fn episode_utility<'a>(history: impl IntoIterator<Item = &'a DetectionMatrix>) -> u32 {
    history.into_iter().map(global_reward).sum()
}
