use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use dqnf::agent::AgentConfig;
use dqnf::env::{EnvConfig, GridLayout};
use dqnf::frontier::FrontierConfig;
use dqnf::harness::{
    compare_dirs, compare_runs, emit_plot_data, load_run_set, optimal_path_lengths, read_metrics, run_experiment,
    value_iteration_oracle, EvalConfig, HarnessError, Manifest, RunConfig, RunStatus, CLASSIFIER_FILE, EVAL_FILE,
    MANIFEST_FILE, METRICS_FILE, QNET_FILE,
};
use dqnf::nn::Precision;

fn small_map() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/grid_rooms_5x5.txt")
}

fn tiny_config(out: &Path, frontier: bool, seeds: Vec<u64>) -> RunConfig {
    RunConfig {
        name: "tiny".into(),
        env: EnvConfig::GridRooms {
            map: Some(small_map()),
            max_steps: 50,
        },
        agent: AgentConfig {
            batch_size: 8,
            learn_start: 100,
            train_every: 4,
            target_update: 50,
            replay_capacity: 1_000,
            lr_start: 1e-3,
            lr_end: 1e-4,
            ..AgentConfig::default()
        },
        frontier: frontier.then(FrontierConfig::default),
        total_steps: 1_200,
        seeds,
        output_dir: out.to_path_buf(),
        precision: Precision::F32,
        eval: EvalConfig {
            every_episodes: 5,
            episodes: 2,
            ..EvalConfig::default()
        },
        holdout_samples: 200,
        separation_states: 20,
    }
}

fn write_config(dir: &Path, config: &RunConfig) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path
}

#[test]
fn every_seed_gets_its_own_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tiny_config(tmp.path(), true, vec![0, 1, 2]);
    let outcomes = run_experiment(&config).unwrap();
    assert_eq!(outcomes.len(), 3);
    for o in &outcomes {
        assert_eq!(o.manifest.status, RunStatus::Completed);
        for file in [METRICS_FILE, EVAL_FILE, MANIFEST_FILE, QNET_FILE, CLASSIFIER_FILE] {
            assert!(o.dir.join(file).is_file(), "missing {file} for seed {}", o.seed);
        }
        let rows = read_metrics(&o.dir.join(METRICS_FILE)).unwrap();
        assert_eq!(rows.last().unwrap().env_steps, 1_200);
        let forbidden: u64 = rows.iter().map(|r| r.forbidden_count).sum();
        let s = &o.manifest.summary;
        assert_eq!(forbidden, s.cumulative_forbidden);
        assert_eq!(s.cumulative_forbidden, s.env_rejections);
        assert!(s.holdout_classifier.is_some());
        assert!(s.q_separation.is_some());

        let loaded = Manifest::load(&o.dir.join(MANIFEST_FILE)).unwrap();
        assert_eq!(loaded, o.manifest);
        assert_eq!(loaded.config, config);
    }
    assert_eq!(load_run_set(tmp.path()).unwrap().len(), 3);
}

#[test]
fn vanilla_run_has_no_classifier() {
    let tmp = tempfile::tempdir().unwrap();
    let outcomes = run_experiment(&tiny_config(tmp.path(), false, vec![5])).unwrap();
    let o = &outcomes[0];
    assert!(!o.dir.join(CLASSIFIER_FILE).exists());
    assert!(o.manifest.summary.holdout_classifier.is_none());
    let rows = read_metrics(&o.dir.join(METRICS_FILE)).unwrap();
    assert!(rows.iter().all(|r| r.frontier_loss.is_none() && r.classifier_acc.is_none()));
}

#[test]
fn huge_learning_rate_is_reported_as_divergence() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = tiny_config(tmp.path(), false, vec![0]);
    config.agent.lr_start = 1e30;
    config.agent.lr_end = 1e30;
    let outcomes = run_experiment(&config).unwrap();
    let o = &outcomes[0];
    assert!(o.diverged());
    assert!(o.manifest.error.is_some());
    let loaded = Manifest::load(&o.dir.join(MANIFEST_FILE)).unwrap();
    assert_eq!(loaded.status, RunStatus::Diverged);
}

#[test]
fn config_rejects_bad_input() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = tiny_config(tmp.path(), true, vec![]);
    assert!(matches!(config.validate(), Err(HarnessError::Config(_))));
    config.seeds = vec![1, 1];
    assert!(config.validate().is_err());
    config.seeds = vec![1];
    config.env = EnvConfig::grid_map(tmp.path().join("missing.txt"));
    assert!(config.validate().is_err());

    let path = tmp.path().join("bad.json");
    fs::write(&path, r#"{"env":{"kind":"grid_rooms"},"total_steps":10,"seeds":[0],"output_dir":"x","bogus":1}"#).unwrap();
    assert!(RunConfig::load(&path).unwrap_err().is_config_error());
}

#[test]
fn relative_map_paths_follow_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    fs::copy(small_map(), tmp.path().join("rooms.txt")).unwrap();
    let path = tmp.path().join("run.json");
    fs::write(
        &path,
        r#"{"env":{"kind":"grid_rooms","map":"rooms.txt"},"total_steps":10,"seeds":[0],"output_dir":"out"}"#,
    )
    .unwrap();
    let config = RunConfig::load(&path).unwrap();
    assert_eq!(config.env.referenced_files(), vec![&tmp.path().join("rooms.txt")]);
}

#[test]
fn comparing_a_set_with_itself_gives_zero() {
    let tmp = tempfile::tempdir().unwrap();
    run_experiment(&tiny_config(tmp.path(), true, vec![0, 1])).unwrap();
    let cmp = compare_dirs(tmp.path(), tmp.path(), 200).unwrap();
    assert_eq!(cmp.grid.first(), Some(&0));
    assert_eq!(cmp.grid.last(), Some(&1_200));
    for m in &cmp.metrics {
        assert_eq!(m.a.len(), cmp.grid.len());
        for d in m.difference().into_iter().flatten() {
            assert_eq!(d, 0.0, "{}", m.metric);
        }
    }
    assert!(cmp.render().contains("final_window_success"));

    let runs = load_run_set(tmp.path()).unwrap();
    assert!(compare_runs(&runs[..1], &runs, 200).is_err());
}

#[test]
fn plot_writes_bands_and_rejects_unknown_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");
    run_experiment(&tiny_config(&runs, true, vec![0, 1])).unwrap();
    let out = tmp.path().join("plots");
    let files = emit_plot_data(std::slice::from_ref(&runs), "success", 300, &out).unwrap();
    assert_eq!(files.len(), 1);
    let text = fs::read_to_string(&files[0]).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split_whitespace().map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 5);
    for r in rows.iter().filter(|r| !r[1].is_nan()) {
        assert!(r[2] <= r[1] && r[1] <= r[3]);
        assert!(r[2] >= 0.0 && r[3] <= 1.0);
    }
    let err = emit_plot_data(&[runs], "nonsense", 300, &out).unwrap_err();
    assert!(matches!(err, HarnessError::UnknownMetric { .. }));
    assert!(err.is_config_error());
}

#[test]
fn oracle_matches_shortest_paths() {
    let layout = GridLayout::small_5x5();
    let table = value_iteration_oracle(&layout, 0.99).unwrap();
    let lengths = optimal_path_lengths(&layout);
    assert_eq!(table.states.len(), lengths.len());
    for (s, pose) in table.states.iter().enumerate() {
        let j = layout.room_at(pose.0).unwrap();
        let v = table.row(s)[3 * j..3 * j + 3].iter().cloned().fold(f64::MIN, f64::max);
        let expected = 0.99f64.powi(lengths[pose] as i32 - 1);
        assert!((v - expected).abs() < 1e-9, "{pose:?}: {v} vs {expected}");
    }
}

fn dqnf(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dqnf")).args(args).output().unwrap()
}

#[test]
fn cli_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();

    let missing = tmp.path().join("nope.json");
    assert_eq!(dqnf(&["train", "--config", missing.to_str().unwrap()]).status.code(), Some(1));

    let good = write_config(tmp.path(), &tiny_config(&tmp.path().join("runs"), true, vec![3]));
    let out = dqnf(&["train", "--config", good.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let ckpt = tmp.path().join("runs/seed_3").join(QNET_FILE);
    let out = dqnf(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--episodes", "3"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("success rate"));

    let map = small_map();
    let out = dqnf(&["inspect-q", "--checkpoint", ckpt.to_str().unwrap(), "--env", map.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let out = dqnf(&["oracle", "--env", map.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));

    let wrong_env = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/grid_rooms_8x8.txt");
    let out = dqnf(&["inspect-q", "--checkpoint", ckpt.to_str().unwrap(), "--env", wrong_env.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    let runs = tmp.path().join("runs");
    let out = dqnf(&["plot", "--metric", "bogus", runs.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    let mut diverging = tiny_config(&tmp.path().join("div"), false, vec![0]);
    diverging.agent.lr_start = 1e30;
    diverging.agent.lr_end = 1e30;
    let div_dir = tmp.path().join("d");
    fs::create_dir_all(&div_dir).unwrap();
    let div = write_config(&div_dir, &diverging);
    assert_eq!(dqnf(&["train", "--config", div.to_str().unwrap()]).status.code(), Some(2));
}
