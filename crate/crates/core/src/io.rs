//! File formats: versioned CSV tables, binary weight files, JSON-lines
//! episode traces and the run manifest.
//!
//! Every CSV starts with a `# swarmtrack <kind> v<N>` line; readers reject
//! a different kind or version.
//!
//! Weight files are little-endian:
//!
//! ```text
//! magic    8 bytes  "STQWGT01"
//! hlen     u32      length of the JSON header
//! header   hlen     WeightsHeader as JSON
//! per agent:
//!   rows   u64      number of stored slots
//!   rows x (slot u32, num_actions x f64)
//! ```
//!
//! Only slots with a nonzero weight are stored.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{CoderConfig, ExperimentConfig};
use crate::env::Action;
use crate::error::{Error, Result};
use crate::learner::{LearnerSchedule, QFunction};
use crate::metrics::{Heatmap, SummaryRow};
use crate::oracle::OracleStats;
use crate::rewards::RewardMode;
use crate::trainer::{StepRecord, TrainingCurve};

pub const CSV_VERSION: u32 = 1;
pub const WEIGHTS_MAGIC: &[u8; 8] = b"STQWGT01";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn version_line(kind: &str) -> String {
    format!("# swarmtrack {kind} v{CSV_VERSION}")
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// A parsed versioned CSV: column names and raw string cells.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

pub fn parse_versioned_csv(
    text: &str,
    kind: &str,
    path: &Path,
    has_header: bool,
) -> Result<CsvTable> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let (first, body) = text.split_once('\n').unwrap_or((text, ""));
    if first.trim() != version_line(kind) {
        return Err(bad(format!(
            "expected `{}` on the first line, found `{first}`",
            version_line(kind)
        )));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let columns = if has_header {
        let header = reader.headers().map_err(|e| bad(e.to_string()))?;
        if header.is_empty() {
            return Err(bad("missing column header".into()));
        }
        header.iter().map(str::to_string).collect()
    } else {
        Vec::new()
    };
    let rows = reader
        .records()
        .map(|r| {
            r.map(|rec| rec.iter().map(str::to_string).collect())
                .map_err(|e| bad(e.to_string()))
        })
        .collect::<Result<Vec<Vec<String>>>>()?;
    Ok(CsvTable { columns, rows })
}

pub fn read_versioned_csv(path: &Path, kind: &str, has_header: bool) -> Result<CsvTable> {
    parse_versioned_csv(&fs::read_to_string(path)?, kind, path, has_header)
}

pub fn training_curve_csv(curve: &TrainingCurve, oracle_mean: f64) -> String {
    let mut out = version_line("training_curve");
    out.push_str("\nrun,episode,F,F_normalized\n");
    for (r, run) in curve.runs.iter().enumerate() {
        for (e, &f) in run.iter().enumerate() {
            let _ = writeln!(out, "{r},{e},{f},{}", f as f64 / oracle_mean);
        }
    }
    out
}

pub fn read_training_curve(path: &Path) -> Result<TrainingCurve> {
    let t = read_versioned_csv(path, "training_curve", true)?;
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut curve = TrainingCurve::default();
    for row in &t.rows {
        let (Some(r), Some(f)) = (
            row.first().and_then(|s| s.parse::<usize>().ok()),
            row.get(2).and_then(|s| s.parse::<u32>().ok()),
        ) else {
            return Err(bad("malformed row"));
        };
        if r == curve.runs.len() {
            curve.runs.push(Vec::new());
        }
        curve
            .runs
            .get_mut(r)
            .ok_or_else(|| bad("runs out of order"))?
            .push(f);
    }
    Ok(curve)
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = version_line("summary");
    out.push_str("\nagents,reward_mode,mean_F,std_F,normalized\n");
    for r in rows {
        let norm = r.normalized.map_or(String::new(), |x| x.to_string());
        let _ = writeln!(
            out,
            "{},{},{},{},{norm}",
            r.agents,
            r.reward_mode.name(),
            r.mean,
            r.std
        );
    }
    out
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let t = read_versioned_csv(path, "summary", true)?;
    t.rows
        .iter()
        .map(|row| {
            let get = |i: usize| row.get(i).map(String::as_str).unwrap_or("");
            let parse_err = || Error::Format {
                path: path.to_path_buf(),
                reason: format!("malformed row {row:?}"),
            };
            Ok(SummaryRow {
                agents: get(0).parse().map_err(|_| parse_err())?,
                reward_mode: RewardMode::parse(get(1)).ok_or_else(parse_err)?,
                mean: get(2).parse().map_err(|_| parse_err())?,
                std: get(3).parse().map_err(|_| parse_err())?,
                normalized: match get(4) {
                    "" => None,
                    s => Some(s.parse().map_err(|_| parse_err())?),
                },
            })
        })
        .collect()
}

pub fn oracle_csv(agents: usize, stats: &OracleStats) -> String {
    format!(
        "{}\nagents,mean_F,std_F\n{agents},{},{}\n",
        version_line("oracle"),
        stats.mean,
        stats.std
    )
}

pub fn oracle_episodes_csv(stats: &OracleStats) -> String {
    let mut out = version_line("oracle_episodes");
    out.push_str("\nepisode,F\n");
    for (e, f) in stats.utilities.iter().enumerate() {
        let _ = writeln!(out, "{e},{f}");
    }
    out
}

/// Planner mean for `agents` from an `oracle.csv`.
pub fn read_oracle_mean(path: &Path, agents: usize) -> Result<f64> {
    let t = read_versioned_csv(path, "oracle", true)?;
    t.rows
        .iter()
        .find(|r| r.first().and_then(|s| s.parse::<usize>().ok()) == Some(agents))
        .and_then(|r| r.get(1)?.parse().ok())
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            reason: format!("no planner mean for {agents} agents"),
        })
}

/// One line per y cell (ascending), one column per x cell (ascending).
pub fn heatmap_csv(h: &Heatmap) -> String {
    let mut out = version_line("heatmap");
    out.push('\n');
    for y in 0..h.rows {
        let row: Vec<String> = (0..h.cols).map(|x| h.get(x, y).to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn read_heatmap_csv(path: &Path) -> Result<Heatmap> {
    let t = read_versioned_csv(path, "heatmap", false)?;
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let rows = t.rows.len();
    let cols = t.rows.first().map_or(0, Vec::len);
    let mut counts = Vec::with_capacity(rows * cols);
    for row in &t.rows {
        if row.len() != cols {
            return Err(bad("ragged heatmap".into()));
        }
        for c in row {
            counts.push(c.parse().map_err(|_| bad(format!("bad count `{c}`")))?);
        }
    }
    Ok(Heatmap { cols, rows, counts })
}

/// Metadata stored in front of the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightsHeader {
    pub tool_version: String,
    pub num_agents: usize,
    pub actions: Vec<Action>,
    pub coder: CoderConfig,
    /// Schedule after the last trained episode.
    pub schedule: LearnerSchedule,
    pub episodes_trained: usize,
    pub reward_mode: RewardMode,
    pub base_seed: u64,
    pub run: usize,
}

impl WeightsHeader {
    /// Errors unless the weights fit the coder, action set and team size of `cfg`.
    pub fn check_compatible(&self, cfg: &ExperimentConfig) -> Result<()> {
        if self.coder != cfg.coder {
            return Err(Error::Incompatible(format!(
                "weights use coder {:?}, config has {:?}",
                self.coder, cfg.coder
            )));
        }
        let actions = crate::env::ActionSet::for_world(&cfg.world)?;
        if self.actions != actions.as_slice() {
            return Err(Error::Incompatible("action sets differ".into()));
        }
        if self.num_agents != cfg.world.num_agents {
            return Err(Error::Incompatible(format!(
                "weights are for {} agents, config has {}",
                self.num_agents, cfg.world.num_agents
            )));
        }
        Ok(())
    }
}

pub fn write_weights(path: &Path, header: &WeightsHeader, learners: &[QFunction]) -> Result<()> {
    assert_eq!(header.num_agents, learners.len());
    let mut buf = Vec::new();
    buf.extend_from_slice(WEIGHTS_MAGIC);
    let json = serde_json::to_vec(header)?;
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for q in learners {
        let rows: Vec<(u32, &[f64])> = q.nonzero_rows().collect();
        buf.extend_from_slice(&(rows.len() as u64).to_le_bytes());
        for (slot, ws) in rows {
            buf.extend_from_slice(&slot.to_le_bytes());
            for w in ws {
                buf.extend_from_slice(&w.to_le_bytes());
            }
        }
    }
    write_atomic(path, &buf)
}

pub fn read_weights(path: &Path) -> Result<(WeightsHeader, Vec<QFunction>)> {
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated"))?;
    if &magic != WEIGHTS_MAGIC {
        return Err(bad("not a weights file"));
    }
    let mut u32b = [0u8; 4];
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u32b)
        .map_err(|_| bad("truncated header"))?;
    let mut json = vec![0u8; u32::from_le_bytes(u32b) as usize];
    r.read_exact(&mut json)
        .map_err(|_| bad("truncated header"))?;
    let header: WeightsHeader = serde_json::from_slice(&json)?;
    let num_actions = header.actions.len();
    let mut learners = Vec::with_capacity(header.num_agents);
    for _ in 0..header.num_agents {
        let mut q = QFunction::new(header.coder.hash_table_size, num_actions);
        r.read_exact(&mut u64b)
            .map_err(|_| bad("truncated weights"))?;
        for _ in 0..u64::from_le_bytes(u64b) {
            r.read_exact(&mut u32b)
                .map_err(|_| bad("truncated weights"))?;
            let slot = u32::from_le_bytes(u32b);
            if slot as usize >= header.coder.hash_table_size {
                return Err(bad("slot out of range"));
            }
            let row = q.row_mut(slot);
            for w in row.iter_mut() {
                r.read_exact(&mut u64b)
                    .map_err(|_| bad("truncated weights"))?;
                *w = f64::from_le_bytes(u64b);
            }
        }
        learners.push(q);
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(bad("trailing bytes"));
    }
    Ok((header, learners))
}

/// One JSON object per timestep.
pub fn trace_jsonl(steps: &[StepRecord]) -> Result<String> {
    let mut out = String::new();
    for s in steps {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_trace(path: &Path) -> Result<Vec<StepRecord>> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut steps = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            steps.push(serde_json::from_str(&line)?);
        }
    }
    Ok(steps)
}

/// Everything needed to regenerate a command's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    /// Full configuration in the config-file format.
    pub config: String,
    pub base_seed: u64,
    pub oracle_mean: Option<f64>,
    pub episodes: usize,
    pub runs: Vec<RunEntry>,
    /// Output files, relative to the output directory.
    pub artifacts: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub run: usize,
    /// Seed path used for this run's random streams.
    pub seed_path: String,
    pub weights: Option<String>,
    pub traces: Vec<String>,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn experiment_config(&self, path: &Path) -> Result<ExperimentConfig> {
        ExperimentConfig::parse_str(&self.config, path)
    }
}
