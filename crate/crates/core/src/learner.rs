//! Independent Q-learning over tile-coded features.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::ActionMask;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerSchedule {
    pub alpha: f64,
    pub epsilon: f64,
    pub alpha_decay_rate: f64,
    pub epsilon_decay_rate: f64,
    pub gamma: f64,
}

impl Default for LearnerSchedule {
    fn default() -> Self {
        LearnerSchedule {
            alpha: 0.2,
            epsilon: 0.3,
            alpha_decay_rate: 0.99997,
            epsilon_decay_rate: 0.99997,
            gamma: 0.9,
        }
    }
}

impl LearnerSchedule {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::config(name, format!("must be in (0, 1], got {v}")))
            }
        };
        unit("alpha", self.alpha)?;
        unit("epsilon", self.epsilon)?;
        unit("alpha_decay_rate", self.alpha_decay_rate)?;
        unit("epsilon_decay_rate", self.epsilon_decay_rate)?;
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(
                "gamma",
                format!("must be in [0, 1), got {}", self.gamma),
            ));
        }
        Ok(())
    }

    /// Schedule after one more finished episode.
    pub fn decay(self) -> Self {
        LearnerSchedule {
            alpha: self.alpha * self.alpha_decay_rate,
            epsilon: self.epsilon * self.epsilon_decay_rate,
            ..self
        }
    }
}

/// Linear action-value function: `Q(s, a)` is the sum of the weights of
/// action `a` at the active tiles of `s`.
///
/// Weights are stored slot-major (`slot * num_actions + action`) so one
/// lookup touches a single cache line for every action.
#[derive(Clone, Debug, PartialEq)]
pub struct QFunction {
    num_actions: usize,
    table_size: usize,
    weights: Vec<f64>,
}

impl QFunction {
    pub fn new(table_size: usize, num_actions: usize) -> Self {
        QFunction {
            num_actions,
            table_size,
            weights: vec![0.0; table_size * num_actions],
        }
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn table_size(&self) -> usize {
        self.table_size
    }

    pub fn weight(&self, slot: u32, action: usize) -> f64 {
        self.weights[slot as usize * self.num_actions + action]
    }

    pub fn set_weight(&mut self, slot: u32, action: usize, w: f64) {
        self.weights[slot as usize * self.num_actions + action] = w;
    }

    /// The weights of every action at one slot.
    pub fn row(&self, slot: u32) -> &[f64] {
        let s = slot as usize * self.num_actions;
        &self.weights[s..s + self.num_actions]
    }

    pub fn row_mut(&mut self, slot: u32) -> &mut [f64] {
        let s = slot as usize * self.num_actions;
        &mut self.weights[s..s + self.num_actions]
    }

    pub fn q_value(&self, tiles: &[u32], action: usize) -> f64 {
        assert!(action < self.num_actions, "unknown action {action}");
        tiles.iter().map(|&t| self.weight(t, action)).sum()
    }

    /// `Q(s, a)` for every action at once; `out` has length `num_actions`.
    pub fn q_values_into(&self, tiles: &[u32], out: &mut [f64]) {
        out.fill(0.0);
        for &t in tiles {
            for (q, w) in out.iter_mut().zip(self.row(t)) {
                *q += w;
            }
        }
    }

    pub fn q_values(&self, tiles: &[u32]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_actions];
        self.q_values_into(tiles, &mut out);
        out
    }

    /// Greedy action among `admissible` with uniform random tie-breaking.
    pub fn greedy<R: Rng + ?Sized>(
        &self,
        tiles: &[u32],
        admissible: ActionMask,
        rng: &mut R,
    ) -> usize {
        let mut q = [0.0; ActionMask::CAPACITY];
        let q = &mut q[..self.num_actions];
        self.q_values_into(tiles, q);
        argmax_random(q, admissible, rng)
    }

    /// Epsilon-greedy choice restricted to `admissible`.
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        tiles: &[u32],
        admissible: ActionMask,
        epsilon: f64,
        rng: &mut R,
    ) -> usize {
        assert!(!admissible.is_empty(), "no admissible action");
        if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
            let k = rng.gen_range(0..admissible.len());
            admissible.nth(k).expect("k < len")
        } else {
            self.greedy(tiles, admissible, rng)
        }
    }

    pub fn max_q(&self, tiles: &[u32], admissible: ActionMask) -> f64 {
        let mut q = [0.0; ActionMask::CAPACITY];
        let q = &mut q[..self.num_actions];
        self.q_values_into(tiles, q);
        admissible
            .iter()
            .map(|a| q[a])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// One Q-learning step. Each active weight of `action` moves by
    /// `alpha / n` of the TD error, so `Q(s, a)` moves by `alpha` of it.
    /// Returns the TD error.
    #[allow(clippy::too_many_arguments)]
    pub fn td_update(
        &mut self,
        tiles: &[u32],
        action: usize,
        reward: f64,
        next_tiles: &[u32],
        next_admissible: ActionMask,
        alpha: f64,
        gamma: f64,
    ) -> f64 {
        let bootstrap = if gamma == 0.0 || next_admissible.is_empty() {
            0.0
        } else {
            gamma * self.max_q(next_tiles, next_admissible)
        };
        let delta = reward + bootstrap - self.q_value(tiles, action);
        let step = alpha / tiles.len() as f64 * delta;
        for &t in tiles {
            self.row_mut(t)[action] += step;
        }
        delta
    }

    /// Slots with at least one nonzero weight, in ascending order.
    pub fn nonzero_rows(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.weights
            .chunks_exact(self.num_actions)
            .enumerate()
            .filter(|(_, row)| row.iter().any(|&w| w != 0.0))
            .map(|(i, row)| (i as u32, row))
    }
}

fn argmax_random<R: Rng + ?Sized>(q: &[f64], admissible: ActionMask, rng: &mut R) -> usize {
    let mut best = f64::NEG_INFINITY;
    let mut ties = ActionMask::EMPTY;
    for a in admissible.iter() {
        if q[a] > best {
            best = q[a];
            ties = ActionMask::EMPTY;
            ties.insert(a);
        } else if q[a] == best {
            ties.insert(a);
        }
    }
    match ties.len() {
        0 => panic!("no admissible action"),
        1 => ties.nth(0).unwrap(),
        n => ties.nth(rng.gen_range(0..n)).unwrap(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_for;

    fn tiles(n: u32) -> Vec<u32> {
        (0..n).map(|i| i * 7 + 3).collect()
    }

    #[test]
    fn fresh_table_is_zero() {
        let q = QFunction::new(1024, 9);
        for a in 0..9 {
            assert_eq!(q.q_value(&tiles(64), a), 0.0);
        }
    }

    #[test]
    fn q_value_is_linear_sum() {
        let mut q = QFunction::new(1024, 9);
        let t = tiles(64);
        q.set_weight(t[5], 2, 0.5);
        assert_eq!(q.q_value(&t, 2), 0.5);
        for &s in &t {
            q.set_weight(s, 4, 0.1);
        }
        assert!((q.q_value(&t, 4) - 6.4).abs() < 1e-12);
        assert_eq!(q.q_values(&t)[4], q.q_value(&t, 4));
    }

    #[test]
    #[should_panic(expected = "unknown action")]
    fn unknown_action_panics() {
        QFunction::new(16, 3).q_value(&[1], 3);
    }

    #[test]
    fn td_update_examples() {
        let t = tiles(64);
        let next: Vec<u32> = (0..64).map(|i| 600 + i).collect();
        let mut q = QFunction::new(1024, 9);
        for &s in &next {
            q.set_weight(s, 1, 2.0 / 64.0);
        }
        let mask = ActionMask::all(9);
        q.td_update(&t, 0, 1.0, &next, mask, 0.2, 0.9);
        assert!((q.q_value(&t, 0) - 0.56).abs() < 1e-12);

        let mut z = QFunction::new(1024, 9);
        z.td_update(&t, 0, 0.0, &next, mask, 0.2, 0.9);
        assert_eq!(z.q_value(&t, 0), 0.0);

        let mut g = QFunction::new(1024, 9);
        g.td_update(&t, 3, 1.0, &next, mask, 0.2, 0.0);
        assert!((g.q_value(&t, 3) - 0.2).abs() < 1e-12);
        g.td_update(&t, 3, 1.0, &next, mask, 0.2, 0.0);
        assert!((g.q_value(&t, 3) - 0.36).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_ignores_masked_actions() {
        let t = tiles(4);
        let next: Vec<u32> = vec![900, 901, 902, 903];
        let mut q = QFunction::new(1024, 3);
        for &s in &next {
            q.set_weight(s, 2, 10.0);
        }
        let mut mask = ActionMask::EMPTY;
        mask.insert(0);
        mask.insert(1);
        let delta = q.td_update(&t, 0, 1.0, &next, mask, 0.5, 0.9);
        assert_eq!(delta, 1.0);
    }

    #[test]
    fn greedy_and_exploration() {
        let t = tiles(8);
        let mut q = QFunction::new(256, 5);
        q.set_weight(t[0], 3, 1.0);
        let mut rng = rng_for(1, &[]);
        let all = ActionMask::all(5);
        for _ in 0..100 {
            assert_eq!(q.select_action(&t, all, 0.0, &mut rng), 3);
        }
        let mut only = ActionMask::EMPTY;
        only.insert(1);
        only.insert(4);
        for _ in 0..200 {
            let a = q.select_action(&t, only, 1.0, &mut rng);
            assert!(a == 1 || a == 4);
            let g = q.select_action(&t, only, 0.0, &mut rng);
            assert!(g == 1 || g == 4);
        }
    }

    #[test]
    fn decay_is_multiplicative() {
        let s = LearnerSchedule::default().decay();
        assert!((s.alpha - 0.199994).abs() < 1e-12);
        assert!((s.epsilon - 0.299991).abs() < 1e-12);
        assert_eq!(s.gamma, 0.9);
    }

    #[test]
    fn schedule_validation() {
        assert!(LearnerSchedule::default().validate().is_ok());
        let bad = LearnerSchedule {
            gamma: 1.5,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { ref field, .. }) if field == "gamma"));
        let bad = LearnerSchedule {
            alpha: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
