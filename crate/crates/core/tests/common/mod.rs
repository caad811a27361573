#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use etgoa_core::config::Config;
use etgoa_core::gridworld::{Action, Cell, EnvConfig, ObstacleMap};
use etgoa_core::policy::{PolicySet, QTable};
use etgoa_core::rollout::MarginalDistribution;

pub fn policy_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("policies")
}

/// Default-config policies, trained once and cached under the target dir.
pub fn policies() -> Arc<PolicySet> {
    static SET: OnceLock<Arc<PolicySet>> = OnceLock::new();
    SET.get_or_init(|| {
        let cfg = Config::default();
        let (grid, goals) = (cfg.env.grid, &cfg.env.goals);
        let dir = policy_dir();
        let set = PolicySet::load_dir(&dir, grid, goals).unwrap_or_else(|_| {
            let set = PolicySet::train_all(grid, goals, &cfg.train, cfg.env.seed).expect("training converges");
            set.save_dir(&dir).expect("policy cache writable");
            set
        });
        Arc::new(set)
    })
    .clone()
}

/// Brute-force FOV test, independent of the crate's geometry helpers.
pub fn count_in_fov(map: &ObstacleMap, pos: Cell, fov: f64) -> (i64, i64) {
    let near = |c: Cell, r: f64| {
        let (dx, dy) = (f64::from(c.x - pos.x), f64::from(c.y - pos.y));
        (dx * dx + dy * dy).sqrt() <= fov + r
    };
    let craters = map.craters().iter().filter(|o| near(o.center, o.radius)).count();
    let dust = map.dust().iter().filter(|o| near(o.center, o.radius)).count();
    (craters as i64, dust as i64)
}

fn inside(map: &ObstacleMap, pos: Cell, craters: bool) -> bool {
    let list = if craters { map.craters() } else { map.dust() };
    list.iter().any(|o| {
        let (dx, dy) = (f64::from(pos.x - o.center.x), f64::from(pos.y - o.center.y));
        dx * dx + dy * dy <= o.radius * o.radius
    })
}

// (x, y, hits, done)
type Node = (i32, i32, u32, bool);

/// Exact per-timestep marginals of (s_c, s_z) for the greedy policy `q`
/// run from `start` at t = 0 on `known`, enumerating every slip outcome.
/// Index 0 is t = 0; finished branches hold their last observation.
pub fn enumerate_marginals(
    cfg: &EnvConfig,
    known: &ObstacleMap,
    q: &QTable,
    start: Cell,
) -> Vec<[MarginalDistribution; 2]> {
    let goal = q.goal();
    let mut frontier: BTreeMap<Node, f64> = BTreeMap::new();
    frontier.insert((start.x, start.y, 0, false), 1.0);
    let mut out = Vec::new();
    for t in 0..=cfg.horizon {
        let mut c = BTreeMap::new();
        let mut z = BTreeMap::new();
        for (&(x, y, _, _), &p) in &frontier {
            let (sc, sz) = count_in_fov(known, Cell::new(x, y), cfg.fov_radius);
            *c.entry(sc).or_insert(0.0) += p;
            *z.entry(sz).or_insert(0.0) += p;
        }
        out.push([
            MarginalDistribution::from_masses(c).unwrap(),
            MarginalDistribution::from_masses(z).unwrap(),
        ]);
        if t == cfg.horizon {
            break;
        }
        let mut next: BTreeMap<Node, f64> = BTreeMap::new();
        for (&(x, y, hits, done), &p) in &frontier {
            if done {
                *next.entry((x, y, hits, done)).or_insert(0.0) += p;
                continue;
            }
            let here = Cell::new(x, y);
            let commanded = q.greedy_action(here);
            let moves: Vec<(Action, f64)> = if inside(known, here, false) {
                Action::ALL
                    .iter()
                    .map(|&a| {
                        let w = cfg.slip_prob / 4.0 + if a == commanded { 1.0 - cfg.slip_prob } else { 0.0 };
                        (a, w)
                    })
                    .collect()
            } else {
                vec![(commanded, 1.0)]
            };
            for (a, w) in moves {
                if w == 0.0 {
                    continue;
                }
                let (dx, dy) = match a {
                    Action::Up => (0, 1),
                    Action::Down => (0, -1),
                    Action::Left => (-1, 0),
                    Action::Right => (1, 0),
                };
                let pos = Cell::new((x + dx).clamp(0, cfg.grid.width - 1), (y + dy).clamp(0, cfg.grid.height - 1));
                let hits = hits + u32::from(inside(known, pos, true));
                let done = hits >= cfg.hit_budget || pos == goal;
                *next.entry((pos.x, pos.y, hits, done)).or_insert(0.0) += p * w;
            }
        }
        frontier = next;
    }
    out
}
