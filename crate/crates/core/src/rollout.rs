//! World-model Monte Carlo rollouts and the experience buffer of predicted
//! sensor marginals.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{sense_exact, transition, AgentState, EnvConfig, Obstacle, ObstacleMap};
use crate::policy::PolicySet;
use crate::seeding::SimRng;

pub const NORMALIZATION_TOL: f64 = 1e-9;

/// State components monitored for surprise, in buffer order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Marginal {
    Craters,
    Dust,
}

impl Marginal {
    pub const ALL: [Marginal; 2] = [Marginal::Craters, Marginal::Dust];

    pub fn observed(self, s: &AgentState) -> i64 {
        match self {
            Marginal::Craters => i64::from(s.s_c),
            Marginal::Dust => i64::from(s.s_z),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Marginal::Craters => "s_c",
            Marginal::Dust => "s_z",
        }
    }
}

/// Probability mass over integer values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalDistribution {
    masses: BTreeMap<i64, f64>,
}

impl MarginalDistribution {
    /// Validates that masses are non-negative and sum to one.
    pub fn from_masses(masses: impl IntoIterator<Item = (i64, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (v, m) in masses {
            if m.is_nan() || m < 0.0 {
                return Err(Error::Contract(format!("negative or NaN mass {m} at {v}")));
            }
            *map.entry(v).or_insert(0.0) += m;
        }
        let dist = MarginalDistribution { masses: map };
        if !dist.is_normalized() {
            return Err(Error::Contract(format!(
                "masses sum to {}, not 1",
                dist.total()
            )));
        }
        Ok(dist)
    }

    /// Empirical distribution of a non-empty sample.
    pub fn from_samples(samples: impl IntoIterator<Item = i64>) -> Self {
        let mut counts: BTreeMap<i64, u64> = BTreeMap::new();
        let mut n = 0u64;
        for s in samples {
            *counts.entry(s).or_insert(0) += 1;
            n += 1;
        }
        assert!(n > 0, "empirical distribution needs at least one sample");
        let masses = counts
            .into_iter()
            .map(|(v, c)| (v, c as f64 / n as f64))
            .collect();
        MarginalDistribution { masses }
    }

    pub fn point(value: i64) -> Self {
        MarginalDistribution {
            masses: BTreeMap::from([(value, 1.0)]),
        }
    }

    /// Mass at `value`; zero outside the support.
    pub fn mass(&self, value: i64) -> f64 {
        self.masses.get(&value).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.masses.iter().map(|(&v, &m)| (v, m))
    }

    pub fn total(&self) -> f64 {
        self.masses.values().sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.total() - 1.0).abs() <= NORMALIZATION_TOL
    }

    pub fn is_point_mass(&self) -> bool {
        self.masses.values().filter(|&&m| m > 0.0).count() == 1
    }

    pub fn total_variation(&self, other: &MarginalDistribution) -> f64 {
        let mut keys: Vec<i64> = self.masses.keys().chain(other.masses.keys()).copied().collect();
        keys.sort_unstable();
        keys.dedup();
        0.5 * keys
            .into_iter()
            .map(|k| (self.mass(k) - other.mass(k)).abs())
            .sum::<f64>()
    }
}

/// Terminal outcome of one rollout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeSample {
    pub craters_hit: u32,
    pub delivered: bool,
    pub steps: u32,
}

/// Predicted sensor marginals for each timestep from `start` to the horizon,
/// plus the terminal outcomes of the rollouts that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperienceBuffer {
    goal: usize,
    start: u32,
    entries: Vec<Vec<MarginalDistribution>>,
    outcomes: Vec<OutcomeSample>,
}

#[derive(Clone, Copy, Debug)]
pub struct BufferEntry<'a> {
    pub marginals: &'a [MarginalDistribution],
    pub outcomes: &'a [OutcomeSample],
}

impl BufferEntry<'_> {
    pub fn marginal(&self, m: Marginal) -> &MarginalDistribution {
        &self.marginals[m as usize]
    }
}

impl ExperienceBuffer {
    pub fn goal(&self) -> usize {
        self.goal
    }

    pub fn start(&self) -> u32 {
        self.start
    }

    /// Last covered timestep (the horizon).
    pub fn end(&self) -> u32 {
        self.start + self.entries.len() as u32 - 1
    }

    pub fn outcomes(&self) -> &[OutcomeSample] {
        &self.outcomes
    }

    pub fn get(&self, t: u32) -> Result<BufferEntry<'_>> {
        if t < self.start || t > self.end() {
            return Err(Error::OutOfRange {
                t,
                start: self.start,
                end: self.end(),
            });
        }
        Ok(BufferEntry {
            marginals: &self.entries[(t - self.start) as usize],
            outcomes: &self.outcomes,
        })
    }

    /// Writes one line per (timestep, marginal) with the histogram.
    pub fn dump(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(out, "# goal {} start {} end {}", self.goal, self.start, self.end());
        for (i, marginals) in self.entries.iter().enumerate() {
            let t = self.start + i as u32;
            for (m, dist) in Marginal::ALL.iter().zip(marginals) {
                let _ = write!(out, "{t} {}", m.name());
                for (v, p) in dist.iter() {
                    let _ = write!(out, " {v}:{p}");
                }
                out.push('\n');
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// The agent's simulation copy of the environment: identical dynamics, but
/// only the obstacles the agent knows about.
#[derive(Clone, Debug)]
pub struct WorldModel {
    cfg: EnvConfig,
    known: ObstacleMap,
    policies: Arc<PolicySet>,
}

/// What `sync_known_map` changed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SyncDelta {
    pub added: usize,
    pub removed: usize,
}

impl WorldModel {
    pub fn new(cfg: EnvConfig, known: ObstacleMap, policies: Arc<PolicySet>) -> Self {
        WorldModel {
            cfg,
            known,
            policies,
        }
    }

    pub fn cfg(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn known(&self) -> &ObstacleMap {
        &self.known
    }

    pub fn policies(&self) -> &PolicySet {
        &self.policies
    }

    /// Adds every visible obstacle and forgets known ones that should be in
    /// the FOV at `pos` but were not seen. Obstacles outside the FOV are kept.
    pub fn sync_known_map(&mut self, visible: &[Obstacle], pos: crate::gridworld::Cell) -> SyncDelta {
        let fov = self.cfg.fov_radius;
        let removed = self
            .known
            .remove_where(|o| o.in_fov(pos, fov) && !visible.contains(o));
        let added = visible.iter().filter(|o| self.known.insert(**o)).count();
        SyncDelta { added, removed }
    }
}

struct RolloutTrace {
    counts: Vec<[i64; 2]>,
    outcome: OutcomeSample,
}

fn rollout(model: &WorldModel, goal: usize, from: &AgentState, rng: &mut SimRng) -> Result<RolloutTrace> {
    let cfg = &model.cfg;
    let q = model.policies.get(goal);
    let target = q.goal();
    let len = (cfg.horizon - from.t + 1) as usize;
    let mut counts = Vec::with_capacity(len);
    let mut s = *from;
    let observe = |s: &AgentState| {
        let (c, z) = sense_exact(&model.known, s.pos, cfg.fov_radius);
        [i64::from(c), i64::from(z)]
    };
    counts.push(observe(&s));
    while !s.is_terminal(cfg.horizon) {
        let action = q.greedy_action(s.pos);
        transition(&mut s, action, target, &model.known, cfg, rng)?;
        counts.push(observe(&s));
    }
    let last = *counts.last().expect("at least the start entry");
    counts.resize(len, last);
    Ok(RolloutTrace {
        counts,
        outcome: OutcomeSample {
            craters_hit: s.hits,
            delivered: s.delivered,
            steps: s.t,
        },
    })
}

/// Runs `n_rollouts` greedy episodes for `goal` in the world model from
/// `from`, and collects per-timestep empirical marginals of the noiselessly
/// predicted crater and dust counts. Each rollout gets its own RNG stream
/// seeded from `rng` in rollout order.
pub fn simulate<R: Rng + ?Sized>(
    model: &WorldModel,
    goal: usize,
    from: &AgentState,
    n_rollouts: usize,
    rng: &mut R,
) -> Result<ExperienceBuffer> {
    if n_rollouts == 0 {
        return Err(Error::Contract("simulate needs at least one rollout".into()));
    }
    if from.t >= model.cfg.horizon {
        return Err(Error::Contract(format!(
            "cannot simulate from t={} at horizon {}",
            from.t, model.cfg.horizon
        )));
    }
    if goal >= model.policies.len() {
        return Err(Error::Contract(format!("no policy for goal {goal}")));
    }
    let seeds: Vec<u64> = (0..n_rollouts).map(|_| rng.gen()).collect();
    let traces = seeds
        .into_iter()
        .map(|seed| rollout(model, goal, from, &mut SimRng::seed_from_u64(seed)))
        .collect::<Result<Vec<_>>>()?;

    let len = (model.cfg.horizon - from.t + 1) as usize;
    let entries = (0..len)
        .map(|i| {
            Marginal::ALL
                .iter()
                .map(|&m| MarginalDistribution::from_samples(traces.iter().map(|tr| tr.counts[i][m as usize])))
                .collect()
        })
        .collect();
    Ok(ExperienceBuffer {
        goal,
        start: from.t,
        entries,
        outcomes: traces.iter().map(|tr| tr.outcome).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{Cell, Grid, ObstacleKind};
    use crate::policy::QTable;
    use crate::seeding::rng_from;

    /// A hand-built "always Up" policy; enough for buffer mechanics.
    fn up_policy(grid: Grid, goal: Cell) -> QTable {
        let mut q = QTable::zeros(grid, goal);
        for c in grid.cells() {
            q.set_value(c, crate::gridworld::Action::Up, 1.0);
        }
        q
    }

    fn model(known: ObstacleMap, cfg: EnvConfig) -> WorldModel {
        let goal = Cell::new(cfg.start.x, cfg.grid.height - 1);
        let cfg = EnvConfig {
            goals: vec![goal],
            ..cfg
        };
        let policies = Arc::new(PolicySet::new(vec![up_policy(cfg.grid, goal)]));
        WorldModel::new(cfg, known, policies)
    }

    #[test]
    fn distribution_validation() {
        assert!(MarginalDistribution::from_masses([(0, 0.5), (1, 0.5)]).is_ok());
        assert!(MarginalDistribution::from_masses([(0, 0.5), (1, 0.4)]).is_err());
        assert!(MarginalDistribution::from_masses([(0, 1.5), (1, -0.5)]).is_err());
        let d = MarginalDistribution::from_samples([1, 1, 2, 3]);
        assert_eq!(d.mass(1), 0.5);
        assert_eq!(d.mass(7), 0.0);
    }

    #[test]
    fn empty_known_map_gives_point_masses_at_zero() {
        let cfg = EnvConfig {
            n_craters: 0,
            n_dust: 0,
            ..EnvConfig::default()
        };
        let m = model(ObstacleMap::empty(cfg.grid), cfg.clone());
        let s = AgentState::at(cfg.start);
        let buf = simulate(&m, 0, &s, 20, &mut rng_from(0, &[])).unwrap();
        for t in buf.start()..=buf.end() {
            for d in buf.get(t).unwrap().marginals {
                assert_eq!(*d, MarginalDistribution::point(0));
            }
        }
        assert!(buf.outcomes().iter().all(|o| o.delivered && o.steps == 47));
    }

    #[test]
    fn buffer_coverage_and_range_errors() {
        let cfg = EnvConfig::default();
        let m = model(ObstacleMap::empty(cfg.grid), cfg.clone());
        let mut s = AgentState::at(cfg.start);
        s.t = 7;
        let buf = simulate(&m, 0, &s, 1, &mut rng_from(0, &[])).unwrap();
        assert_eq!(buf.start(), 7);
        assert_eq!(buf.end(), cfg.horizon);
        assert!(buf.get(7).is_ok());
        assert!(buf.get(cfg.horizon).is_ok());
        assert!(matches!(buf.get(cfg.horizon + 1), Err(Error::OutOfRange { .. })));
        assert!(matches!(buf.get(6), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn single_rollout_gives_point_masses() {
        let cfg = EnvConfig::default();
        let known = crate::gridworld::spawn_obstacles(&cfg, &mut rng_from(5, &[]), cfg.start).unwrap();
        let m = model(known, cfg.clone());
        let buf = simulate(&m, 0, &AgentState::at(cfg.start), 1, &mut rng_from(1, &[])).unwrap();
        for t in buf.start()..=buf.end() {
            assert!(buf.get(t).unwrap().marginals.iter().all(|d| d.is_point_mass()));
        }
    }

    #[test]
    fn crater_on_the_only_path_is_always_hit() {
        let cfg = EnvConfig {
            slip_prob: 0.0,
            ..EnvConfig::default()
        };
        // radius 0.5 covers exactly one cell of the straight-up path
        let crater = Obstacle {
            center: Cell::new(cfg.start.x, 20),
            radius: 0.5,
            kind: ObstacleKind::Crater,
        };
        let m = model(ObstacleMap::from_obstacles(cfg.grid, [crater]), cfg.clone());
        let buf = simulate(&m, 0, &AgentState::at(cfg.start), 25, &mut rng_from(2, &[])).unwrap();
        assert!(buf.outcomes().iter().all(|o| o.craters_hit == 1 && o.delivered));
    }

    #[test]
    fn simulate_rejects_bad_arguments() {
        let cfg = EnvConfig::default();
        let m = model(ObstacleMap::empty(cfg.grid), cfg.clone());
        let s = AgentState::at(cfg.start);
        assert!(simulate(&m, 0, &s, 0, &mut rng_from(0, &[])).is_err());
        let late = AgentState { t: cfg.horizon, ..s };
        assert!(simulate(&m, 0, &late, 5, &mut rng_from(0, &[])).is_err());
    }

    #[test]
    fn sync_known_map_adds_and_forgets_within_fov() {
        let cfg = EnvConfig::default();
        let c = |x, y| Obstacle {
            center: Cell::new(x, y),
            radius: 1.5,
            kind: ObstacleKind::Crater,
        };
        let pos = Cell::new(25, 25);
        let stale_near = c(27, 27);
        let stale_far = c(5, 5);
        let mut m = model(ObstacleMap::from_obstacles(cfg.grid, [stale_near, stale_far]), cfg);

        assert_eq!(m.sync_known_map(&[stale_near], pos), SyncDelta::default());

        let fresh = c(20, 30);
        let d = m.sync_known_map(&[stale_near, fresh], pos);
        assert_eq!(d, SyncDelta { added: 1, removed: 0 });
        assert!(m.known().contains_obstacle(&fresh));

        let d = m.sync_known_map(&[fresh], pos);
        assert_eq!(d, SyncDelta { added: 0, removed: 1 });
        assert!(!m.known().contains_obstacle(&stale_near));
        assert!(m.known().contains_obstacle(&stale_far));
    }
}
