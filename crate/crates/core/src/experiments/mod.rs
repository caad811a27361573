//! Harness for the two delivery experiments: goal-selection performance
//! under three assessment conditions, and detection of difficulty changes.

pub mod records;
pub mod stats;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assessment::{assess_all_goals, et_goa_session, AssessConfig, ConfidenceReport, EnvStepper, EpisodeRecord, Trigger};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::gridworld::{spawn_obstacles, ChangeEvent, Cell, EnvConfig, Episode, ObstacleMap, ScheduledChange};
use crate::policy::PolicySet;
use crate::rollout::WorldModel;
use crate::seeding::{derive_seed, rng_from, SimRng};

// stream labels under an episode seed
const WORLD: u64 = 1;
const DYNAMICS: u64 = 2;
const CHANGES: u64 = 3;
const ASSESS: u64 = 4;
const RANDOM_GOAL: u64 = 5;

const EXP1: u64 = 0xE1;
const EXP2: u64 = 0xE2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AssessmentKind {
    NoAssessment,
    GoaOnly,
    EtGoa,
}

impl AssessmentKind {
    pub const ALL: [AssessmentKind; 3] = [AssessmentKind::NoAssessment, AssessmentKind::GoaOnly, AssessmentKind::EtGoa];

    pub fn as_str(self) -> &'static str {
        match self {
            AssessmentKind::NoAssessment => "none",
            AssessmentKind::GoaOnly => "goa",
            AssessmentKind::EtGoa => "etgoa",
        }
    }
}

impl fmt::Display for AssessmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AssessmentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AssessmentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown condition {s:?} (none, goa, etgoa)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Environment {
    Static,
    Dynamic,
}

impl Environment {
    pub fn as_str(self) -> &'static str {
        match self {
            Environment::Static => "static",
            Environment::Dynamic => "dynamic",
        }
    }
}

impl fmt::Display for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Environment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(Environment::Static),
            "dynamic" => Ok(Environment::Dynamic),
            _ => Err(Error::Config(format!("unknown environment {s:?} (static, dynamic)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Condition {
    pub kind: AssessmentKind,
    pub environment: Environment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub episode: u64,
    pub condition: Condition,
    pub delivered: bool,
    pub broken: bool,
    pub craters_hit: u32,
    pub steps: u32,
    pub n_triggers: u32,
    pub n_assessments: u32,
    /// Goal pursued after each goal choice, in order, without repeats.
    pub goal_history: Vec<usize>,
    pub seed: u64,
    /// Digest of the truth map at t = 0.
    pub world_hash: u64,
}

/// Picks the most confident goal. Exact ties go to the goal closest to
/// `pos` (Manhattan), then to the lowest index.
pub fn select_goal(confidences: &[f64], pos: Cell, goals: &[Cell]) -> usize {
    assert!(!confidences.is_empty(), "select_goal needs at least one confidence");
    let mut best = 0;
    for i in 1..confidences.len() {
        let (ci, cb) = (confidences[i], confidences[best]);
        if ci > cb || (ci == cb && pos.manhattan(goals[i]) < pos.manhattan(goals[best])) {
            best = i;
        }
    }
    best
}

/// Everything shared by the episodes of an experiment run.
#[derive(Clone, Debug)]
pub struct Harness {
    pub env: EnvConfig,
    pub assess: AssessConfig,
    pub policies: Arc<PolicySet>,
    pub change_t: u32,
    pub exp2: crate::config::Exp2Settings,
}

impl Harness {
    pub fn new(cfg: &Config, policies: Arc<PolicySet>) -> Result<Harness> {
        cfg.validate()?;
        if policies.len() != cfg.env.goals.len() || !policies.goals().eq(cfg.env.goals.iter().copied()) {
            return Err(Error::Config("policy set does not match the configured goals".into()));
        }
        Ok(Harness {
            env: cfg.env.clone(),
            assess: cfg.assess_config(),
            policies,
            change_t: cfg.exp1.change_t,
            exp2: cfg.exp2.clone(),
        })
    }

    fn episode_rng(seed: u64, label: u64) -> SimRng {
        rng_from(seed, &[label])
    }
}

/// Drives the greedy policy for `goal` until the episode ends.
fn drive<E: EnvStepper + ?Sized>(env: &mut E, policies: &PolicySet, goal: usize, record: &mut EpisodeRecord) -> Result<()> {
    let q = policies.get(goal);
    while !env.is_done() {
        let action = q.greedy_action(env.state().pos);
        env.step(action, q.goal())?;
        record.actions.push(action);
        record.goals.push(goal);
        record.states.push(*env.state());
    }
    Ok(())
}

fn dedup_goals(initial: usize, goals: &[usize]) -> Vec<usize> {
    let mut history = vec![initial];
    for &g in goals {
        if history.last() != Some(&g) {
            history.push(g);
        }
    }
    history
}

/// Output of one experiment-1 episode.
#[derive(Clone, Debug)]
pub struct Trial {
    pub result: TrialResult,
    pub record: EpisodeRecord,
}

/// Runs episode `episode` of experiment 1 under `condition`. The truth world,
/// its dynamic resample, and the dynamics stream depend only on the seed and
/// episode index, so conditions are matched.
pub fn run_trial(h: &Harness, condition: Condition, episode: u64, seed: u64) -> Result<Trial> {
    let ep_seed = derive_seed(seed, &[EXP1, episode]);
    let cfg = &h.env;
    let truth = spawn_obstacles(cfg, &mut Harness::episode_rng(ep_seed, WORLD), cfg.start)?;
    let world_hash = truth.world_hash();
    let schedule = match condition.environment {
        Environment::Static => Vec::new(),
        Environment::Dynamic => vec![ScheduledChange {
            t: h.change_t,
            event: ChangeEvent::ResampleAll,
        }],
    };
    let mut env = Episode::new(
        cfg.clone(),
        truth.clone(),
        schedule,
        Harness::episode_rng(ep_seed, DYNAMICS),
        Harness::episode_rng(ep_seed, CHANGES),
    );
    let mut model = WorldModel::new(cfg.clone(), truth, Arc::clone(&h.policies));
    let mut assess_rng = Harness::episode_rng(ep_seed, ASSESS);
    let goals = &cfg.goals;

    let mut record = EpisodeRecord {
        states: vec![*env.state()],
        ..EpisodeRecord::default()
    };
    let (initial_goal, n_assessments) = match condition.kind {
        AssessmentKind::NoAssessment => {
            let goal = Harness::episode_rng(ep_seed, RANDOM_GOAL).gen_range(0..goals.len());
            drive(&mut env, &h.policies, goal, &mut record)?;
            (goal, 0)
        }
        AssessmentKind::GoaOnly => {
            let (per_goal, _) = assess_all_goals(&model, env.state(), &h.assess, &mut assess_rng)?;
            let goal = select_goal(&per_goal, env.state().pos, goals);
            record.reports.push(ConfidenceReport {
                t: 0,
                per_goal,
                trigger: Trigger::Initial,
                si_min: None,
            });
            drive(&mut env, &h.policies, goal, &mut record)?;
            (goal, 1)
        }
        AssessmentKind::EtGoa => {
            let mut hook = |r: &ConfidenceReport, s: &crate::gridworld::AgentState, _current: usize| {
                select_goal(&r.per_goal, s.pos, goals)
            };
            record = et_goa_session(&mut model, 0, &h.assess, &mut env, &mut hook, &mut assess_rng)?;
            let initial = record.goals.first().copied().unwrap_or(0);
            (initial, 1 + record.n_triggers)
        }
    };
    let last = *record.final_state();
    Ok(Trial {
        result: TrialResult {
            episode,
            condition,
            delivered: last.delivered,
            broken: last.broken,
            craters_hit: last.hits,
            steps: last.t,
            n_triggers: record.n_triggers,
            n_assessments,
            goal_history: dedup_goals(initial_goal, &record.goals),
            seed: ep_seed,
            world_hash,
        },
        record,
    })
}

/// Runs `n_episodes` episodes of experiment 1 for one condition. Episodes run
/// in parallel and are returned in episode order.
pub fn run_experiment_1(h: &Harness, condition: Condition, n_episodes: u64, seed: u64) -> Result<Vec<Trial>> {
    (0..n_episodes)
        .into_par_iter()
        .map(|i| run_trial(h, condition, i, seed))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Schedule {
    EasyHardEasy,
    HardEasyHard,
}

impl Schedule {
    pub fn as_str(self) -> &'static str {
        match self {
            Schedule::EasyHardEasy => "ehe",
            Schedule::HardEasyHard => "heh",
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ehe" => Ok(Schedule::EasyHardEasy),
            "heh" => Ok(Schedule::HardEasyHard),
            _ => Err(Error::Config(format!("unknown schedule {s:?} (ehe, heh)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SnapshotSlot {
    Initial,
    AfterChange1,
    AfterChange2,
}

impl SnapshotSlot {
    pub const ALL: [SnapshotSlot; 3] = [SnapshotSlot::Initial, SnapshotSlot::AfterChange1, SnapshotSlot::AfterChange2];

    pub fn as_str(self) -> &'static str {
        match self {
            SnapshotSlot::Initial => "initial",
            SnapshotSlot::AfterChange1 => "change1",
            SnapshotSlot::AfterChange2 => "change2",
        }
    }
}

/// Confidence for the pursued goal at one snapshot slot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: u32,
    pub confidence: f64,
    /// False when no report followed the change and the previous confidence
    /// was carried forward.
    pub triggered: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceTrace {
    pub episode: u64,
    pub schedule: Schedule,
    pub reports: Vec<ConfidenceReport>,
    /// Indexed by `SnapshotSlot` order.
    pub snapshots: [Snapshot; 3],
    pub delivered: bool,
    pub broken: bool,
}

impl ConfidenceTrace {
    pub fn snapshot(&self, slot: SnapshotSlot) -> Snapshot {
        self.snapshots[slot as usize]
    }
}

/// Snapshots: the initial report, then for each change the first report
/// emitted at or after the change time, or the carried-forward confidence.
pub fn take_snapshots(reports: &[ConfidenceReport], goal: usize, change_times: [u32; 2]) -> Result<[Snapshot; 3]> {
    let initial = reports
        .first()
        .filter(|r| r.trigger == Trigger::Initial)
        .ok_or_else(|| Error::Contract("session produced no initial report".into()))?;
    let mut out = [Snapshot {
        t: initial.t,
        confidence: initial.per_goal[goal],
        triggered: true,
    }; 3];
    for (k, &change) in change_times.iter().enumerate() {
        let prev = out[k];
        out[k + 1] = match reports.iter().find(|r| r.t >= change) {
            Some(r) => Snapshot {
                t: r.t,
                confidence: r.per_goal[goal],
                triggered: true,
            },
            None => Snapshot {
                t: change,
                confidence: prev.confidence,
                triggered: false,
            },
        };
    }
    Ok(out)
}

pub fn run_trace(h: &Harness, schedule: Schedule, episode: u64, seed: u64) -> Result<ConfidenceTrace> {
    let ep_seed = derive_seed(seed, &[EXP2, episode]);
    let cfg = &h.env;
    let x = &h.exp2;
    let add = ChangeEvent::AddRandom {
        craters: x.add_craters.unwrap_or(cfg.n_craters),
        dust: x.add_dust.unwrap_or(cfg.n_dust),
    };
    let (truth, events) = match schedule {
        Schedule::EasyHardEasy => (ObstacleMap::empty(cfg.grid), [add, ChangeEvent::DeleteAll]),
        Schedule::HardEasyHard => (
            spawn_obstacles(cfg, &mut Harness::episode_rng(ep_seed, WORLD), cfg.start)?,
            [ChangeEvent::DeleteAll, add],
        ),
    };
    let change_times = [x.first_change_t, x.second_change_t];
    let plan = change_times
        .iter()
        .zip(events)
        .map(|(&t, event)| ScheduledChange { t, event })
        .collect();
    let mut env = Episode::new(
        cfg.clone(),
        truth.clone(),
        plan,
        Harness::episode_rng(ep_seed, DYNAMICS),
        Harness::episode_rng(ep_seed, CHANGES),
    );
    let mut model = WorldModel::new(cfg.clone(), truth, Arc::clone(&h.policies));
    let mut hook = |_: &ConfidenceReport, _: &crate::gridworld::AgentState, current: usize| current;
    let record = et_goa_session(
        &mut model,
        x.goal,
        &h.assess,
        &mut env,
        &mut hook,
        &mut Harness::episode_rng(ep_seed, ASSESS),
    )?;
    let snapshots = take_snapshots(&record.reports, x.goal, change_times)?;
    let last = record.final_state();
    Ok(ConfidenceTrace {
        episode,
        schedule,
        snapshots,
        delivered: last.delivered,
        broken: last.broken,
        reports: record.reports,
    })
}

/// Runs `n_episodes` episodes of experiment 2 for one schedule, in parallel,
/// returned in episode order.
pub fn run_experiment_2(h: &Harness, schedule: Schedule, n_episodes: u64, seed: u64) -> Result<Vec<ConfidenceTrace>> {
    (0..n_episodes)
        .into_par_iter()
        .map(|i| run_trace(h, schedule, i, seed))
        .collect()
}
