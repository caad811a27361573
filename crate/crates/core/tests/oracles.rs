mod common;

use std::collections::{HashSet, VecDeque};
use std::path::Path;

use etgoa_core::config::Config;
use etgoa_core::experiments::{
    run_experiment_1, run_experiment_2, AssessmentKind, Condition, Environment, Harness, Schedule,
};
use etgoa_core::gridworld::{spawn_obstacles, transition, Action, AgentState, Cell, EnvConfig, Grid, Obstacle, ObstacleKind, ObstacleMap};
use etgoa_core::seeding::rng_from;

fn chebyshev(a: Cell, b: Cell) -> i32 {
    (a.x - b.x).abs().max((a.y - b.y).abs())
}

#[test]
fn dust_clusters_near_craters_at_the_configured_rate() {
    let cfg = EnvConfig::default();
    let mut rng = rng_from(31, &[]);
    let (mut near, mut total) = (0u64, 0u64);
    for _ in 0..10_000 {
        let map = spawn_obstacles(&cfg, &mut rng, cfg.start).unwrap();
        for d in map.dust() {
            total += 1;
            if map.craters().iter().any(|c| chebyshev(c.center, d.center) <= cfg.dust_near_crater_dist) {
                near += 1;
            }
        }
    }
    let p = cfg.dust_near_crater_prob;
    let frac = near as f64 / total as f64;
    // uniform placements can land near a crater too, so this is a lower bound
    let sigma = (p * (1.0 - p) / total as f64).sqrt();
    assert!(frac >= p - 3.0 * sigma, "near fraction {frac}");
}

#[test]
fn full_slip_picks_actions_uniformly() {
    let cfg = EnvConfig {
        slip_prob: 1.0,
        ..EnvConfig::default()
    };
    let pos = Cell::new(20, 20);
    let map = ObstacleMap::from_obstacles(
        cfg.grid,
        [Obstacle {
            center: pos,
            radius: 3.0,
            kind: ObstacleKind::Dust,
        }],
    );
    let mut rng = rng_from(77, &[]);
    let mut counts = [0u32; 4];
    let n = 10_000;
    for _ in 0..n {
        let mut s = AgentState::at(pos);
        let ev = transition(&mut s, Action::Up, cfg.goals[0], &map, &cfg, &mut rng).unwrap();
        counts[ev.executed.unwrap().index()] += 1;
    }
    let expected = f64::from(n) / 4.0;
    let chi2: f64 = counts.iter().map(|&c| (f64::from(c) - expected).powi(2) / expected).sum();
    // 99th percentile of chi-square with 3 degrees of freedom
    assert!(chi2 < 11.345, "chi2 {chi2}, counts {counts:?}");
}

#[test]
fn no_slip_outside_dust() {
    let cfg = EnvConfig {
        slip_prob: 1.0,
        ..EnvConfig::default()
    };
    let map = ObstacleMap::empty(cfg.grid);
    let mut rng = rng_from(5, &[]);
    for a in Action::ALL {
        let mut s = AgentState::at(Cell::new(20, 20));
        let ev = transition(&mut s, a, cfg.goals[0], &map, &cfg, &mut rng).unwrap();
        assert_eq!(ev.executed, Some(a));
    }
}

/// Shortest 4-connected distance on an obstacle-free grid, by BFS.
fn bfs(grid: Grid, goal: Cell) -> Vec<u32> {
    let mut dist = vec![u32::MAX; grid.n_cells()];
    dist[grid.index(goal)] = 0;
    let mut queue = VecDeque::from([goal]);
    while let Some(c) = queue.pop_front() {
        for a in Action::ALL {
            let (dx, dy) = a.delta();
            let n = Cell::new(c.x + dx, c.y + dy);
            if grid.contains(n) && dist[grid.index(n)] == u32::MAX {
                dist[grid.index(n)] = dist[grid.index(c)] + 1;
                queue.push_back(n);
            }
        }
    }
    dist
}

#[test]
fn trained_policies_follow_shortest_paths_everywhere() {
    let set = common::policies();
    let cfg = EnvConfig::default();
    for (i, goal) in cfg.goals.iter().enumerate() {
        let q = set.get(i);
        let dist = bfs(cfg.grid, *goal);
        for c in cfg.grid.cells() {
            assert_eq!(q.greedy_path_len(c, 500), Some(dist[cfg.grid.index(c)]), "goal {i} from {c:?}");
        }
    }
    assert_eq!(set.get(1).greedy_path_len(cfg.start, 500), Some(43));
    assert_eq!(set.get(0).greedy_path_len(cfg.start, 500), Some(58));
}

#[test]
fn equally_short_routes_move_horizontally_first() {
    let set = common::policies();
    let cfg = EnvConfig::default();
    assert_eq!(set.get(0).greedy_action(cfg.start), Action::Left);
    assert_eq!(set.get(2).greedy_action(cfg.start), Action::Right);
    assert_eq!(set.get(1).greedy_action(cfg.start), Action::Up);
}

#[test]
fn documented_config_matches_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../etgoa.toml");
    assert_eq!(Config::load(&path).unwrap(), Config::default());
    let printed: Config = toml::from_str(&Config::documented_defaults()).unwrap();
    assert_eq!(printed, Config::default());
}

fn harness(cfg: &Config) -> Harness {
    Harness::new(cfg, common::policies()).unwrap()
}

#[test]
fn conditions_share_worlds_and_assess_as_specified() {
    let h = harness(&Config::default());
    for environment in [Environment::Static, Environment::Dynamic] {
        let run = |kind| run_experiment_1(&h, Condition { kind, environment }, 12, 3).unwrap();
        let none = run(AssessmentKind::NoAssessment);
        let goa = run(AssessmentKind::GoaOnly);
        let et = run(AssessmentKind::EtGoa);
        for i in 0..12 {
            let (n, g, e) = (&none[i].result, &goa[i].result, &et[i].result);
            assert_eq!((n.episode, g.episode, e.episode), (i as u64, i as u64, i as u64));
            assert_eq!(n.world_hash, g.world_hash);
            assert_eq!(n.world_hash, e.world_hash);
            assert_eq!((n.n_assessments, n.n_triggers), (0, 0));
            assert_eq!((g.n_assessments, g.n_triggers), (1, 0));
            assert_eq!(g.goal_history.len(), 1);
            assert_eq!(e.n_assessments, 1 + e.n_triggers);
            assert_eq!(et[i].record.reports.len() as u32, e.n_assessments);
            for r in [n, g, e] {
                assert!(!(r.delivered && r.broken));
                assert!(r.steps <= h.env.horizon);
                assert!(!r.broken || r.craters_hit >= h.env.hit_budget);
            }
        }
    }
}

#[test]
fn static_worlds_never_surprise_without_dust() {
    // with a fixed, fully known map and no dust the predicted trajectory is exact
    let mut cfg = Config::default();
    cfg.env.n_dust = 0;
    let h = harness(&cfg);
    let cond = Condition {
        kind: AssessmentKind::EtGoa,
        environment: Environment::Static,
    };
    for t in run_experiment_1(&h, cond, 10, 8).unwrap() {
        assert_eq!(t.result.n_triggers, 0, "episode {}", t.result.episode);
    }
}

#[test]
fn negative_threshold_never_triggers() {
    let mut cfg = Config::default();
    cfg.assess.delta = -1.0;
    let h = harness(&cfg);
    let cond = Condition {
        kind: AssessmentKind::EtGoa,
        environment: Environment::Dynamic,
    };
    for t in run_experiment_1(&h, cond, 10, 4).unwrap() {
        assert_eq!(t.result.n_triggers, 0);
    }
}

#[test]
fn traces_have_three_ordered_snapshots() {
    let h = harness(&Config::default());
    for schedule in [Schedule::EasyHardEasy, Schedule::HardEasyHard] {
        let traces = run_experiment_2(&h, schedule, 8, 6).unwrap();
        assert_eq!(traces.len(), 8);
        for tr in &traces {
            let s = tr.snapshots;
            assert_eq!(s[0].t, 0);
            assert!(s[0].t <= s[1].t && s[1].t <= s[2].t);
            for snap in s {
                assert!((0.0..=1.0).contains(&snap.confidence));
            }
            let times: HashSet<u32> = tr.reports.iter().map(|r| r.t).collect();
            assert_eq!(times.len(), tr.reports.len(), "one report per step at most");
        }
        if schedule == Schedule::EasyHardEasy {
            // nothing to hit before the first change
            assert!(traces.iter().all(|t| t.snapshots[0].confidence == 1.0));
        }
    }
}
