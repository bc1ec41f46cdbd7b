use std::path::Path;

use swarmtrack::commands::{self, HeatmapSource};
use swarmtrack::env::ActionSet;
use swarmtrack::io::{self, RunManifest, WeightsHeader, TOOL_VERSION};
use swarmtrack::{ExperimentConfig, QFunction};

fn small(agents: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.world.num_agents = agents;
    cfg.coder.hash_table_size = 1;
    cfg.num_runs = 1;
    cfg.num_episodes = 4;
    cfg.oracle_mean = Some(46.67);
    cfg
}

fn save(cfg: &ExperimentConfig, learners: &[QFunction], path: &Path) {
    let header = WeightsHeader {
        tool_version: TOOL_VERSION.into(),
        num_agents: cfg.world.num_agents,
        actions: ActionSet::for_world(&cfg.world)
            .unwrap()
            .as_slice()
            .to_vec(),
        coder: cfg.coder.clone(),
        schedule: cfg.schedule,
        episodes_trained: 0,
        reward_mode: cfg.reward_mode,
        base_seed: cfg.base_seed,
        run: 0,
    };
    io::write_weights(path, &header, learners).unwrap();
}

#[test]
fn training_curve_has_one_row_per_episode() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(2);
    cfg.num_runs = 3;
    let out = commands::train(&cfg, dir.path()).unwrap();
    let curve = io::read_training_curve(&dir.path().join(commands::TRAINING_CURVE)).unwrap();
    assert_eq!(curve, out.curve);
    assert_eq!(curve.runs.len(), 3);
    assert!(curve.runs.iter().all(|r| r.len() == 4));
    let manifest = RunManifest::read(&dir.path().join(commands::MANIFEST)).unwrap();
    assert_eq!(manifest.experiment_config(Path::new("m")).unwrap(), cfg);
    for a in &manifest.artifacts {
        assert!(dir.path().join(a).is_file(), "{a}");
    }
}

#[test]
fn zero_weights_still_produce_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(2);
    let w = dir.path().join("zero.stqw");
    save(&cfg, &[QFunction::new(1, 9), QFunction::new(1, 9)], &w);
    let out = commands::eval(&cfg, &[w], 3, 0, false, dir.path()).unwrap();
    let rows = io::read_summary_csv(&dir.path().join(commands::SUMMARY)).unwrap();
    assert_eq!(rows, vec![out.summary]);
}

#[test]
fn single_traced_episode_has_one_record_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(2);
    let w = dir.path().join("w.stqw");
    save(&cfg, &[QFunction::new(1, 9), QFunction::new(1, 9)], &w);
    commands::eval(&cfg, &[w], 1, 0, true, dir.path()).unwrap();
    let traces: Vec<_> = std::fs::read_dir(dir.path().join("traces"))
        .unwrap()
        .collect();
    assert_eq!(traces.len(), 1);
    let steps = io::read_trace(&traces[0].as_ref().unwrap().path()).unwrap();
    assert_eq!(steps.len(), cfg.world.episode_length);
    assert_eq!(commands::trace_replay(dir.path()).unwrap(), 1);
}

#[test]
fn zero_episodes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(2);
    let w = dir.path().join("w.stqw");
    save(&cfg, &[QFunction::new(1, 9), QFunction::new(1, 9)], &w);
    assert!(commands::eval(&cfg, &[w], 0, 0, false, dir.path()).is_err());
    assert!(commands::oracle(&cfg, 1, 0, 0, dir.path()).is_err());
}

#[test]
fn stationary_policy_heatmap_has_one_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(3);
    let hold = ActionSet::for_world(&cfg.world)
        .unwrap()
        .as_slice()
        .iter()
        .position(|a| a.is_zero())
        .unwrap();
    let mut q = QFunction::new(1, 9);
    q.set_weight(0, hold, 1.0);
    let w = dir.path().join("hold.stqw");
    save(&cfg, &[q.clone(), q.clone(), q], &w);
    let eval_dir = dir.path().join("eval");
    commands::eval(&cfg, std::slice::from_ref(&w), 4, 0, true, &eval_dir).unwrap();

    let from_traces = commands::heatmap(
        &cfg,
        &HeatmapSource::Traces(eval_dir),
        &dir.path().join("a"),
    )
    .unwrap();
    let expected = (3 * cfg.world.episode_length * 4) as u64;
    assert_eq!(from_traces.total(), expected);
    assert_eq!(from_traces.get(25, 25), expected);

    let source = HeatmapSource::Weights {
        files: vec![w],
        episodes: 4,
        seed: 0,
    };
    let from_weights = commands::heatmap(&cfg, &source, &dir.path().join("b")).unwrap();
    assert_eq!(from_weights, from_traces);
    let csv = io::read_heatmap_csv(&dir.path().join("b").join(commands::HEATMAP)).unwrap();
    assert_eq!(csv, from_weights);
}

#[test]
fn one_episode_oracle_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = small(4);
    commands::oracle(&cfg, 1, 1, 7, a.path()).unwrap();
    commands::oracle(&cfg, 1, 1, 7, b.path()).unwrap();
    for f in [
        commands::ORACLE,
        commands::ORACLE_EPISODES,
        commands::MANIFEST,
    ] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap()
        );
    }
    let per = std::fs::read_to_string(a.path().join(commands::ORACLE_EPISODES)).unwrap();
    assert_eq!(per.lines().count(), 3);
    let mean = io::read_oracle_mean(&a.path().join(commands::ORACLE), 4).unwrap();
    let mut with_file = small(4);
    with_file.oracle_mean = None;
    with_file.oracle_file = Some(a.path().join(commands::ORACLE));
    assert_eq!(commands::resolve_oracle_mean(&with_file).unwrap(), mean);
}
