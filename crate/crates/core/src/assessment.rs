//! Surprise index, outcome assessment, and the event-triggered assessment
//! loop that ties them to a running episode.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{Action, AgentState, Episode, Obstacle, StepEvents};
use crate::rollout::{simulate, ExperienceBuffer, Marginal, MarginalDistribution, OutcomeSample, WorldModel};

/// Discrete surprise index of `observed` under `dist`: the total mass of
/// values no more probable than the observed one. 1 is least surprising; an
/// observation outside the support scores 0.
///
/// Values tied in mass with the observation are included, so a draw from a
/// uniform distribution is unsurprising.
pub fn surprise_index(observed: i64, dist: &MarginalDistribution) -> Result<f64> {
    if !dist.is_normalized() {
        return Err(Error::Contract(format!(
            "surprise index needs a normalized distribution (total {})",
            dist.total()
        )));
    }
    let p_obs = dist.mass(observed);
    if p_obs == 0.0 {
        return Ok(0.0);
    }
    let si: f64 = dist.iter().filter(|&(_, m)| m <= p_obs).map(|(_, m)| m).sum();
    Ok(si.min(1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    CratersHit,
    Delivered,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    FewerIsBetter,
    MoreIsBetter,
}

impl Outcome {
    pub fn direction(self) -> Direction {
        match self {
            Outcome::CratersHit => Direction::FewerIsBetter,
            Outcome::Delivered => Direction::MoreIsBetter,
        }
    }

    pub fn value(self, s: &OutcomeSample) -> f64 {
        match self {
            Outcome::CratersHit => f64::from(s.craters_hit),
            Outcome::Delivered => f64::from(u8::from(s.delivered)),
        }
    }
}

/// Target outcome level Z. Direction is fixed by the outcome kind.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeThreshold {
    pub outcome: Outcome,
    pub value: f64,
}

impl OutcomeThreshold {
    pub fn new(outcome: Outcome, value: f64) -> Self {
        OutcomeThreshold { outcome, value }
    }

    pub fn direction(&self) -> Direction {
        self.outcome.direction()
    }

    pub fn attained(&self, s: &OutcomeSample) -> bool {
        let v = self.outcome.value(s);
        match self.direction() {
            Direction::FewerIsBetter => v <= self.value,
            Direction::MoreIsBetter => v >= self.value,
        }
    }

    /// Survive (hits below budget) and deliver.
    pub fn defaults(hit_budget: u32) -> Vec<OutcomeThreshold> {
        vec![
            OutcomeThreshold::new(Outcome::CratersHit, f64::from(hit_budget.saturating_sub(1))),
            OutcomeThreshold::new(Outcome::Delivered, 1.0),
        ]
    }
}

/// Confidence of attaining every threshold: the empirical fraction of
/// samples at least as good as Z, minimised across thresholds.
pub fn goa(samples: &[OutcomeSample], thresholds: &[OutcomeThreshold]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Contract("outcome assessment needs samples".into()));
    }
    let n = samples.len() as f64;
    Ok(thresholds
        .iter()
        .map(|z| samples.iter().filter(|s| z.attained(s)).count() as f64 / n)
        .fold(1.0, f64::min))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConfidenceLabel {
    HighlyUnlikely,
    Unlikely,
    Likely,
    HighlyLikely,
}

impl fmt::Display for ConfidenceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConfidenceLabel::HighlyUnlikely => "highly unlikely",
            ConfidenceLabel::Unlikely => "unlikely",
            ConfidenceLabel::Likely => "likely",
            ConfidenceLabel::HighlyLikely => "highly likely",
        })
    }
}

/// Bins at [0, .25), [.25, .5), [.5, .75), [.75, 1].
pub fn semantic_label(confidence: f64) -> Result<ConfidenceLabel> {
    if !(0.0..=1.0).contains(&confidence) {
        return Err(Error::Contract(format!("confidence {confidence} outside [0, 1]")));
    }
    Ok(match confidence {
        c if c < 0.25 => ConfidenceLabel::HighlyUnlikely,
        c if c < 0.5 => ConfidenceLabel::Unlikely,
        c if c < 0.75 => ConfidenceLabel::Likely,
        _ => ConfidenceLabel::HighlyLikely,
    })
}

/// Per-marginal surprise thresholds, in `Marginal::ALL` order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriggerConfig {
    pub deltas: Vec<f64>,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        TriggerConfig::uniform(0.05)
    }
}

impl TriggerConfig {
    pub fn uniform(delta: f64) -> Self {
        TriggerConfig {
            deltas: vec![delta; Marginal::ALL.len()],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Trigger {
    Initial,
    Surprise { marginal: Marginal, si: f64 },
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Trigger::Initial => f.write_str("initial"),
            Trigger::Surprise { marginal, .. } => write!(f, "surprise:{}", marginal.name()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub t: u32,
    pub per_goal: Vec<f64>,
    pub trigger: Trigger,
    /// Minimum surprise index over the monitored marginals; absent on the
    /// initial report.
    pub si_min: Option<f64>,
}

/// Result of checking one observation against the buffer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurpriseCheck {
    pub si: [f64; 2],
    pub si_min: f64,
    /// Marginal with the smallest margin `si - delta`, if that margin is ≤ 0.
    pub triggered: Option<Marginal>,
}

pub fn check_surprise(
    observed: &AgentState,
    predicted: &[MarginalDistribution],
    trigger: &TriggerConfig,
) -> Result<SurpriseCheck> {
    let mut si = [1.0; 2];
    let mut worst: Option<(Marginal, f64)> = None;
    for (i, m) in Marginal::ALL.iter().enumerate() {
        si[i] = surprise_index(m.observed(observed), &predicted[i])?;
        let margin = si[i] - trigger.deltas[i];
        if worst.is_none_or(|(_, w)| margin < w) {
            worst = Some((*m, margin));
        }
    }
    let si_min = si.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SurpriseCheck {
        si,
        si_min,
        triggered: worst.filter(|&(_, margin)| margin <= 0.0).map(|(m, _)| m),
    })
}

/// Knobs shared by every assessment in a session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssessConfig {
    pub n_rollouts: usize,
    pub thresholds: Vec<OutcomeThreshold>,
    pub trigger: TriggerConfig,
}

impl AssessConfig {
    pub fn with_defaults(hit_budget: u32) -> Self {
        AssessConfig {
            n_rollouts: 50,
            thresholds: OutcomeThreshold::defaults(hit_budget),
            trigger: TriggerConfig::default(),
        }
    }
}

/// Simulates every goal from `state` and scores each one.
pub fn assess_all_goals<R: Rng + ?Sized>(
    model: &WorldModel,
    state: &AgentState,
    cfg: &AssessConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<ExperienceBuffer>)> {
    let n_goals = model.policies().len();
    let mut confidences = Vec::with_capacity(n_goals);
    let mut buffers = Vec::with_capacity(n_goals);
    for goal in 0..n_goals {
        let buf = simulate(model, goal, state, cfg.n_rollouts, rng)?;
        confidences.push(goa(buf.outcomes(), &cfg.thresholds)?);
        buffers.push(buf);
    }
    Ok((confidences, buffers))
}

/// Anything the session can drive: reports the latest observation and
/// advances one step toward a goal cell.
pub trait EnvStepper {
    fn state(&self) -> &AgentState;
    fn visible(&self) -> &[Obstacle];
    fn horizon(&self) -> u32;
    fn step(&mut self, action: Action, goal: crate::gridworld::Cell) -> Result<StepEvents>;

    fn is_done(&self) -> bool {
        self.state().is_terminal(self.horizon())
    }
}

impl<R: Rng> EnvStepper for Episode<R> {
    fn state(&self) -> &AgentState {
        Episode::state(self)
    }

    fn visible(&self) -> &[Obstacle] {
        Episode::visible(self)
    }

    fn horizon(&self) -> u32 {
        self.cfg().horizon
    }

    fn step(&mut self, action: Action, goal: crate::gridworld::Cell) -> Result<StepEvents> {
        Episode::step(self, action, goal)
    }
}

/// Full trace of one delivery attempt.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeRecord {
    /// States from t = 0 to the terminal step.
    pub states: Vec<AgentState>,
    pub actions: Vec<Action>,
    /// Goal pursued when each action was taken.
    pub goals: Vec<usize>,
    pub reports: Vec<ConfidenceReport>,
    pub n_triggers: u32,
}

impl EpisodeRecord {
    pub fn final_state(&self) -> &AgentState {
        self.states.last().expect("record holds the initial state")
    }

    pub fn delivered(&self) -> bool {
        self.final_state().delivered
    }
}

/// Chooses the goal to pursue after a report; receives the report, the
/// current state and the goal currently pursued.
pub type GoalHook<'a> = dyn FnMut(&ConfidenceReport, &AgentState, usize) -> usize + 'a;

/// Runs one episode under event-triggered assessment.
///
/// Before moving: simulate all goals, report. Then each step: observe, fold
/// the observation into the known map, compare the observed crater and dust
/// counts against the active goal's predicted marginals for this timestep,
/// and if the surprise index falls to a threshold, re-simulate from the
/// current state and report again. `hook` picks the goal after each report.
pub fn et_goa_session<E, R>(
    model: &mut WorldModel,
    initial_goal: usize,
    cfg: &AssessConfig,
    env: &mut E,
    hook: &mut GoalHook<'_>,
    rng: &mut R,
) -> Result<EpisodeRecord>
where
    E: EnvStepper + ?Sized,
    R: Rng + ?Sized,
{
    if cfg.trigger.deltas.len() != Marginal::ALL.len() {
        return Err(Error::Config(format!(
            "expected {} surprise thresholds, got {}",
            Marginal::ALL.len(),
            cfg.trigger.deltas.len()
        )));
    }
    let mut record = EpisodeRecord {
        states: vec![*env.state()],
        ..EpisodeRecord::default()
    };

    let (per_goal, mut buffers) = assess_all_goals(model, env.state(), cfg, rng)?;
    let report = ConfidenceReport {
        t: env.state().t,
        per_goal,
        trigger: Trigger::Initial,
        si_min: None,
    };
    let mut goal = hook(&report, env.state(), initial_goal);
    record.reports.push(report);

    while !env.is_done() {
        let action = model.policies().get(goal).greedy_action(env.state().pos);
        let target = model.policies().get(goal).goal();
        env.step(action, target)?;
        let state = *env.state();
        record.actions.push(action);
        record.goals.push(goal);
        record.states.push(state);
        model.sync_known_map(env.visible(), state.pos);
        if env.is_done() {
            break;
        }

        let entry = buffers[goal].get(state.t).map_err(|e| {
            Error::Contract(format!("experience buffer miss for goal {goal}: {e}"))
        })?;
        let check = check_surprise(&state, entry.marginals, &cfg.trigger)?;
        let Some(marginal) = check.triggered else {
            continue;
        };

        let (per_goal, fresh) = assess_all_goals(model, &state, cfg, rng)?;
        buffers = fresh;
        let report = ConfidenceReport {
            t: state.t,
            per_goal,
            trigger: Trigger::Surprise {
                marginal,
                si: check.si[marginal as usize],
            },
            si_min: Some(check.si_min),
        };
        record.n_triggers += 1;
        goal = hook(&report, &state, goal);
        record.reports.push(report);
    }
    Ok(record)
}
