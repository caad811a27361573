mod common;

use std::path::Path;
use std::process::{Command, Output};

use etgoa_core::experiments::records::{read_reports, read_traces, read_trials};
use etgoa_core::gridworld::{Cell, Grid};
use etgoa_core::policy::QTable;

fn etgoa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_etgoa")).args(args).output().unwrap()
}

fn cached_policies() -> String {
    common::policies();
    common::policy_dir().to_str().unwrap().to_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path());
    for args in [
        vec!["exp1", "--env", "windy", "--condition", "goa", "--out", out],
        vec!["exp1", "--env", "static", "--condition", "maybe", "--out", out],
        vec!["exp2", "--schedule", "eee", "--out", out],
        vec!["exp1", "--env", "static", "--condition", "goa"],
        vec!["frobnicate"],
    ] {
        let o = etgoa(&args);
        assert!(!o.status.success(), "{args:?} should fail");
    }
}

#[test]
fn bad_inputs_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[env]\nhorizon = \"soon\"\n").unwrap();
    let policies = cached_policies();
    let q = dir.path().join("q.qtab");
    let cases: Vec<Vec<&str>> = vec![
        vec!["--config", path(&missing), "defaults"],
        vec!["--config", path(&bad), "defaults"],
        vec!["assess"],
        vec!["--policies", &policies, "train", "--goal", "7", "--out", path(&q)],
    ];
    for args in cases {
        let o = etgoa(&args);
        assert!(!o.status.success(), "{args:?} should fail");
        assert!(!o.stderr.is_empty(), "{args:?} should explain");
    }
}

#[test]
fn train_writes_a_loadable_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(
        &cfg,
        "[env]\nn_craters = 2\nn_dust = 1\n[env.grid]\nwidth = 8\nheight = 8\n[env.start]\nx = 4\ny = 0\n\
         [[env.goals]]\nx = 1\ny = 7\n[[env.goals]]\nx = 6\ny = 6\n[train]\nepisodes = 5000\n",
    )
    .unwrap();
    let q = dir.path().join("goal1.qtab");
    let o = etgoa(&["--config", path(&cfg), "train", "--goal", "1", "--out", path(&q)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = QTable::load(&q, Grid::new(8, 8)).unwrap();
    assert_eq!(table.goal(), Cell::new(6, 6));
    assert_eq!(table.greedy_path_len(Cell::new(4, 0), 100), Some(8));
}

#[test]
fn exp1_writes_one_row_per_episode() {
    let dir = tempfile::tempdir().unwrap();
    let policies = cached_policies();
    let args = [
        "--policies", &policies, "exp1", "--env", "dynamic", "--condition", "etgoa", "--episodes", "100", "--seed", "11",
        "--out", path(dir.path()),
    ];
    let o = etgoa(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trials = read_trials(&dir.path().join("trials.csv")).unwrap();
    assert_eq!(trials.len(), 100);
    assert!(trials.iter().enumerate().all(|(i, t)| t.episode == i as u64));
    let header = std::fs::read_to_string(dir.path().join("trials.csv")).unwrap();
    assert!(header.starts_with("episode,condition,env,delivered,craters_hit,steps,n_triggers,seed,world_hash\n"));
    let reports = read_reports(&dir.path().join("reports.csv")).unwrap();
    let triggers: u32 = trials.iter().map(|t| t.n_triggers).sum();
    assert_eq!(reports.len() as u32, 100 + triggers);
    let header = std::fs::read_to_string(dir.path().join("reports.csv")).unwrap();
    assert!(header.starts_with("episode,t,trigger,si_min,goa_g0,goa_g1,goa_g2\n"));
}

#[test]
fn exp2_writes_three_snapshots_per_episode() {
    let dir = tempfile::tempdir().unwrap();
    let policies = cached_policies();
    let args = [
        "--policies", &policies, "exp2", "--schedule", "heh", "--episodes", "100", "--seed", "11", "--out",
        path(dir.path()),
    ];
    let o = etgoa(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let traces = read_traces(&dir.path().join("traces.csv")).unwrap();
    assert_eq!(traces.len(), 300);
    let header = std::fs::read_to_string(dir.path().join("traces.csv")).unwrap();
    assert!(header.starts_with("episode,schedule,snapshot,t,confidence,triggered\n"));
}

#[test]
fn assess_traces_the_configured_episode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("episode.toml");
    std::fs::write(&cfg, "[episode]\nenvironment = \"static\"\ncondition = \"goa\"\nepisode = 3\n").unwrap();
    let policies = cached_policies();
    let o = etgoa(&["--config", path(&cfg), "--policies", &policies, "assess"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("outcome:"), "{text}");
}
