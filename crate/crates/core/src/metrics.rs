//! Normalised scores, curve smoothing, visit heatmaps and summary tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::env::WorldConfig;
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::rewards::RewardMode;
use crate::trainer::EpisodeLog;

pub fn normalized_score(mean: f64, oracle_mean: f64) -> Result<f64> {
    if oracle_mean.is_nan() || oracle_mean <= 0.0 {
        return Err(Error::config(
            "oracle_mean",
            format!("must be > 0, got {oracle_mean}"),
        ));
    }
    Ok(mean / oracle_mean)
}

/// Centred running median; windows are truncated at the ends and an
/// even-sized window takes the mean of its two middle values.
pub fn median_filter(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::config(
            "median_window",
            format!("must be odd, got {window}"),
        ));
    }
    let half = window / 2;
    let mut buf = Vec::with_capacity(window);
    Ok((0..series.len())
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + half + 1).min(series.len());
            buf.clear();
            buf.extend_from_slice(&series[lo..hi]);
            buf.sort_by(f64::total_cmp);
            let n = buf.len();
            if n % 2 == 1 {
                buf[n / 2]
            } else {
                (buf[n / 2 - 1] + buf[n / 2]) / 2.0
            }
        })
        .collect())
}

/// Visit counts on a grid of 1 m x 1 m cells.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Heatmap {
    pub cols: usize,
    pub rows: usize,
    /// Row-major, row = y cell.
    pub counts: Vec<u64>,
}

impl Heatmap {
    pub fn new(cfg: &WorldConfig) -> Self {
        let cols = cfg.area_width.ceil().max(1.0) as usize;
        let rows = cfg.area_height.ceil().max(1.0) as usize;
        Heatmap {
            cols,
            rows,
            counts: vec![0; cols * rows],
        }
    }

    /// Cell of `p`; cells are half-open with the far edges clamped inward.
    pub fn cell(&self, p: Vec2) -> (usize, usize) {
        let clamp = |v: f64, n: usize| (v.floor().max(0.0) as usize).min(n - 1);
        (clamp(p.x, self.cols), clamp(p.y, self.rows))
    }

    pub fn add(&mut self, p: Vec2) {
        let (x, y) = self.cell(p);
        self.counts[y * self.cols + x] += 1;
    }

    pub fn add_log(&mut self, log: &EpisodeLog) {
        for s in &log.steps {
            for &p in &s.agents {
                self.add(p);
            }
        }
    }

    pub fn merge(&mut self, other: &Heatmap) {
        assert_eq!((self.cols, self.rows), (other.cols, other.rows));
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u64 {
        self.counts[y * self.cols + x]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Visits to cells whose lower-left corner lies in `[lo, hi)`.
    pub fn mass_in(&self, lo: Vec2, hi: Vec2) -> u64 {
        let mut sum = 0;
        for y in 0..self.rows {
            for x in 0..self.cols {
                let (fx, fy) = (x as f64, y as f64);
                if fx >= lo.x && fx < hi.x && fy >= lo.y && fy < hi.y {
                    sum += self.get(x, y);
                }
            }
        }
        sum
    }
}

pub fn accumulate_heatmap<'a>(
    logs: impl IntoIterator<Item = &'a EpisodeLog>,
    cfg: &WorldConfig,
) -> Heatmap {
    let mut h = Heatmap::new(cfg);
    for log in logs {
        h.add_log(log);
    }
    h
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub agents: usize,
    pub reward_mode: RewardMode,
    pub mean: f64,
    pub std: f64,
    /// Mean relative to the planner mean for the same agent count.
    pub normalized: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
    /// Planner (mean, std) per agent count.
    pub oracle: BTreeMap<usize, (f64, f64)>,
}

/// Builds the comparison table from learned-policy results
/// `(agents, mode, mean, std)` and planner results `(agents, mean, std)`.
pub fn summarize(
    results: &[(usize, RewardMode, f64, f64)],
    oracle: &[(usize, f64, f64)],
) -> SummaryTable {
    let oracle: BTreeMap<usize, (f64, f64)> = oracle.iter().map(|&(n, m, s)| (n, (m, s))).collect();
    let rows = results
        .iter()
        .map(|&(agents, reward_mode, mean, std)| SummaryRow {
            agents,
            reward_mode,
            mean,
            std,
            normalized: oracle
                .get(&agents)
                .and_then(|&(m, _)| normalized_score(mean, m).ok()),
        })
        .collect();
    SummaryTable { rows, oracle }
}

impl SummaryTable {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty() && self.oracle.is_empty()
    }

    /// Reward modes present, in a fixed order.
    pub fn modes(&self) -> Vec<RewardMode> {
        [RewardMode::Global, RewardMode::Difference]
            .into_iter()
            .filter(|m| self.rows.iter().any(|r| r.reward_mode == *m))
            .collect()
    }

    /// Plain-text table: a mean row and a std row per agent count, one
    /// column per reward mode, planner last.
    pub fn render(&self) -> String {
        if self.is_empty() {
            return String::new();
        }
        let modes = self.modes();
        let mut counts: Vec<usize> = self
            .rows
            .iter()
            .map(|r| r.agents)
            .chain(self.oracle.keys().copied())
            .collect();
        counts.sort_unstable();
        counts.dedup();

        let mut out = String::new();
        let _ = write!(out, "{:<10} {:<5}", "agents", "");
        for m in &modes {
            let _ = write!(out, " | {:>16}", format!("r={}", m.name()));
        }
        if !self.oracle.is_empty() {
            let _ = write!(out, " | {:>8}", "planner");
        }
        out.push('\n');
        for n in counts {
            let row = |m: RewardMode| {
                self.rows
                    .iter()
                    .find(|r| r.agents == n && r.reward_mode == m)
            };
            let _ = write!(out, "{:<10} {:<5}", n, "mean");
            for &m in &modes {
                let cell = row(m).map_or(String::new(), |r| match r.normalized {
                    Some(x) => format!("{:.2} ({:.2}%)", r.mean, 100.0 * x),
                    None => format!("{:.2}", r.mean),
                });
                let _ = write!(out, " | {cell:>16}");
            }
            if !self.oracle.is_empty() {
                let cell = self
                    .oracle
                    .get(&n)
                    .map_or(String::new(), |o| format!("{:.2}", o.0));
                let _ = write!(out, " | {cell:>8}");
            }
            out.push('\n');
            let _ = write!(out, "{:<10} {:<5}", "", "std");
            for &m in &modes {
                let cell = row(m).map_or(String::new(), |r| format!("{:.2}", r.std));
                let _ = write!(out, " | {cell:>16}");
            }
            if !self.oracle.is_empty() {
                let cell = self
                    .oracle
                    .get(&n)
                    .map_or(String::new(), |o| format!("{:.2}", o.1));
                let _ = write!(out, " | {cell:>8}");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        assert!((normalized_score(30.28, 46.67).unwrap() - 0.6488).abs() < 1e-4);
        assert!((normalized_score(44.20, 46.65).unwrap() - 0.9475).abs() < 1e-4);
        assert_eq!(normalized_score(12.5, 12.5).unwrap(), 1.0);
        assert!(normalized_score(1.0, 0.0).is_err());
    }

    #[test]
    fn median_examples() {
        assert_eq!(
            median_filter(&[1.0, 9.0, 1.0], 3).unwrap(),
            vec![5.0, 1.0, 5.0]
        );
        let s = [3.0, 1.0, 4.0, 1.0, 5.0];
        assert_eq!(median_filter(&s, 1).unwrap(), s.to_vec());
        assert_eq!(median_filter(&[2.0; 7], 5).unwrap(), vec![2.0; 7]);
        assert!(median_filter(&s, 4).is_err());
        assert!(median_filter(&[], 3).unwrap().is_empty());
    }

    #[test]
    fn heatmap_cells_and_clamp() {
        let cfg = WorldConfig::default();
        let mut h = Heatmap::new(&cfg);
        assert_eq!((h.cols, h.rows), (50, 50));
        assert_eq!(h.cell(Vec2::new(50.0, 50.0)), (49, 49));
        assert_eq!(h.cell(Vec2::new(25.5, 25.5)), (25, 25));
        assert_eq!(h.cell(Vec2::new(0.0, 49.999)), (0, 49));
        for _ in 0..30 {
            h.add(Vec2::new(25.5, 25.5));
        }
        assert_eq!(h.get(25, 25), 30);
        assert_eq!(h.total(), 30);
        assert_eq!(h.mass_in(Vec2::new(20.0, 20.0), Vec2::new(30.0, 30.0)), 30);
        assert_eq!(h.mass_in(Vec2::new(0.0, 0.0), Vec2::new(20.0, 20.0)), 0);
    }

    #[test]
    fn summary_layout() {
        let t = summarize(
            &[
                (2, RewardMode::Global, 30.28, 2.69),
                (2, RewardMode::Difference, 33.96, 2.27),
                (4, RewardMode::Global, 37.55, 1.98),
                (4, RewardMode::Difference, 44.20, 0.86),
            ],
            &[(2, 46.67, 0.45), (4, 46.65, 0.44)],
        );
        let text = t.render();
        assert!(text.contains("30.28 (64.88%)"), "{text}");
        assert!(text.contains("44.20 (94.75%)"), "{text}");
        assert!(text.contains("46.67"));
        assert_eq!(text.lines().count(), 5);

        let one = summarize(&[(2, RewardMode::Global, 30.0, 1.0)], &[]);
        assert_eq!(one.modes(), vec![RewardMode::Global]);
        assert_eq!(one.rows[0].normalized, None);
        assert_eq!(one.render().lines().next().unwrap().matches('|').count(), 1);

        assert_eq!(summarize(&[], &[]).render(), "");
    }
}
