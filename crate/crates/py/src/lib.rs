//! Python bindings: configuration, policies, the assessment primitives, and
//! both experiments. Rows come back as plain records matching the CSV files.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use etgoa_core::assessment::{self, Outcome, OutcomeThreshold};
use etgoa_core::config::Config as CoreConfig;
use etgoa_core::error::Error;
use etgoa_core::experiments::records::{trace_rows, TraceRow, TrialRow};
use etgoa_core::experiments::{self as exp, stats, AssessmentKind, Condition, Environment, Harness, Schedule};
use etgoa_core::gridworld::{spawn_obstacles, Cell, ObstacleKind};
use etgoa_core::policy::PolicySet;
use etgoa_core::rollout::{MarginalDistribution, OutcomeSample};
use etgoa_core::seeding::rng_from;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Full configuration. Construct the defaults, or load / parse TOML.
#[pyclass(module = "etgoa", skip_from_py_object)]
#[derive(Clone)]
struct Config {
    inner: CoreConfig,
}

#[pymethods]
impl Config {
    #[new]
    fn new() -> Self {
        Config {
            inner: CoreConfig::default(),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        CoreConfig::load(&path).map(|inner| Config { inner }).map_err(py_err)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let inner: CoreConfig = toml::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(py_err)?;
        Ok(Config { inner })
    }

    fn to_toml(&self) -> PyResult<String> {
        toml::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.env.seed
    }

    #[getter]
    fn goals(&self) -> Vec<(i32, i32)> {
        self.inner.env.goals.iter().map(|g| (g.x, g.y)).collect()
    }

    #[getter]
    fn start(&self) -> (i32, i32) {
        (self.inner.env.start.x, self.inner.env.start.y)
    }

    #[getter]
    fn horizon(&self) -> u32 {
        self.inner.env.horizon
    }

    fn __repr__(&self) -> String {
        let e = &self.inner.env;
        format!(
            "Config(grid={}x{}, craters={}, dust={}, seed={})",
            e.grid.width, e.grid.height, e.n_craters, e.n_dust, e.seed
        )
    }
}

/// One trained greedy policy per goal.
#[pyclass(module = "etgoa", frozen)]
struct Policies {
    inner: Arc<PolicySet>,
}

#[pymethods]
impl Policies {
    /// Trains every goal of `config` from its training seed.
    #[staticmethod]
    fn train(py: Python<'_>, config: &Config) -> PyResult<Self> {
        let c = &config.inner;
        let set = py
            .detach(|| PolicySet::train_all(c.env.grid, &c.env.goals, &c.train, c.env.seed))
            .map_err(py_err)?;
        Ok(Policies { inner: Arc::new(set) })
    }

    #[staticmethod]
    fn load(dir: PathBuf, config: &Config) -> PyResult<Self> {
        let c = &config.inner;
        let set = PolicySet::load_dir(&dir, c.env.grid, &c.env.goals).map_err(py_err)?;
        Ok(Policies { inner: Arc::new(set) })
    }

    /// Loads `dir` if it holds every table, otherwise trains and saves there.
    #[staticmethod]
    fn load_or_train(py: Python<'_>, dir: PathBuf, config: &Config) -> PyResult<Self> {
        let c = &config.inner;
        let set = py
            .detach(|| PolicySet::load_or_train(&dir, c.env.grid, &c.env.goals, &c.train, c.env.seed))
            .map_err(py_err)?;
        Ok(Policies { inner: Arc::new(set) })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.save_dir(&dir).map_err(py_err)
    }

    fn greedy_action(&self, goal: usize, x: i32, y: i32) -> PyResult<String> {
        let q = self.table(goal)?;
        let pos = Cell::new(x, y);
        if !q.grid().contains(pos) {
            return Err(PyValueError::new_err(format!("({x}, {y}) is off the grid")));
        }
        Ok(format!("{:?}", q.greedy_action(pos)).to_lowercase())
    }

    /// Steps the greedy policy needs from (x, y), or None if it never arrives.
    fn path_len(&self, goal: usize, x: i32, y: i32) -> PyResult<Option<u32>> {
        let q = self.table(goal)?;
        let limit = 4 * q.grid().n_cells() as u32;
        Ok(q.greedy_path_len(Cell::new(x, y), limit))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

impl Policies {
    fn table(&self, goal: usize) -> PyResult<&etgoa_core::policy::QTable> {
        if goal >= self.inner.len() {
            return Err(PyValueError::new_err(format!("goal {goal} out of range")));
        }
        Ok(self.inner.get(goal))
    }
}

/// A row of trials.csv.
#[pyclass(module = "etgoa", frozen, get_all)]
struct Trial {
    episode: u64,
    condition: String,
    env: String,
    delivered: bool,
    craters_hit: u32,
    steps: u32,
    n_triggers: u32,
    seed: u64,
    world_hash: String,
}

impl From<TrialRow> for Trial {
    fn from(r: TrialRow) -> Self {
        Trial {
            episode: r.episode,
            condition: r.condition,
            env: r.env,
            delivered: r.delivered,
            craters_hit: r.craters_hit,
            steps: r.steps,
            n_triggers: r.n_triggers,
            seed: r.seed,
            world_hash: r.world_hash,
        }
    }
}

#[pymethods]
impl Trial {
    fn __repr__(&self) -> String {
        format!(
            "Trial(episode={}, {}/{}, delivered={}, craters_hit={}, n_triggers={})",
            self.episode, self.env, self.condition, self.delivered, self.craters_hit, self.n_triggers
        )
    }
}

/// A row of traces.csv.
#[pyclass(module = "etgoa", frozen, get_all)]
struct Snapshot {
    episode: u64,
    schedule: String,
    snapshot: String,
    t: u32,
    confidence: f64,
    triggered: bool,
}

impl From<TraceRow> for Snapshot {
    fn from(r: TraceRow) -> Self {
        Snapshot {
            episode: r.episode,
            schedule: r.schedule,
            snapshot: r.snapshot,
            t: r.t,
            confidence: r.confidence,
            triggered: r.triggered,
        }
    }
}

#[pymethods]
impl Snapshot {
    fn __repr__(&self) -> String {
        format!(
            "Snapshot(episode={}, {}/{}, t={}, confidence={:.3})",
            self.episode, self.schedule, self.snapshot, self.t, self.confidence
        )
    }
}

fn harness(config: &Config, policies: &Policies) -> PyResult<Harness> {
    Harness::new(&config.inner, Arc::clone(&policies.inner)).map_err(py_err)
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

/// Runs one experiment-1 condition; `env` is "static" or "dynamic",
/// `condition` is "none", "goa" or "etgoa".
#[pyfunction]
#[pyo3(signature = (config, policies, env, condition, episodes = 100, seed = None))]
fn run_experiment_1(
    py: Python<'_>,
    config: &Config,
    policies: &Policies,
    env: &str,
    condition: &str,
    episodes: u64,
    seed: Option<u64>,
) -> PyResult<Vec<Trial>> {
    let h = harness(config, policies)?;
    let cond = Condition {
        kind: parse::<AssessmentKind>(condition)?,
        environment: parse::<Environment>(env)?,
    };
    let seed = seed.unwrap_or(config.inner.env.seed);
    let trials = py
        .detach(|| exp::run_experiment_1(&h, cond, episodes, seed))
        .map_err(py_err)?;
    Ok(trials.iter().map(|t| TrialRow::from(t).into()).collect())
}

/// Runs one experiment-2 schedule ("ehe" or "heh"); three snapshots per episode.
#[pyfunction]
#[pyo3(signature = (config, policies, schedule, episodes = 100, seed = None))]
fn run_experiment_2(
    py: Python<'_>,
    config: &Config,
    policies: &Policies,
    schedule: &str,
    episodes: u64,
    seed: Option<u64>,
) -> PyResult<Vec<Snapshot>> {
    let h = harness(config, policies)?;
    let schedule = parse::<Schedule>(schedule)?;
    let seed = seed.unwrap_or(config.inner.env.seed);
    let traces = py
        .detach(|| exp::run_experiment_2(&h, schedule, episodes, seed))
        .map_err(py_err)?;
    Ok(traces.iter().flat_map(trace_rows).map(Snapshot::from).collect())
}

/// Samples a world: `(kind, x, y, radius)` per obstacle.
#[pyfunction]
fn spawn_world(config: &Config, seed: u64) -> PyResult<Vec<(String, i32, i32, f64)>> {
    let env = &config.inner.env;
    let map = spawn_obstacles(env, &mut rng_from(seed, &[]), env.start).map_err(py_err)?;
    Ok(map
        .iter()
        .map(|o| {
            let kind = match o.kind {
                ObstacleKind::Crater => "crater",
                ObstacleKind::Dust => "dust",
            };
            (kind.to_string(), o.center.x, o.center.y, o.radius)
        })
        .collect())
}

/// Probability mass of outcomes no more likely than `observed` under `masses`.
#[pyfunction]
fn surprise_index(observed: i64, masses: HashMap<i64, f64>) -> PyResult<f64> {
    let dist = MarginalDistribution::from_masses(masses).map_err(py_err)?;
    assessment::surprise_index(observed, &dist).map_err(py_err)
}

/// Fraction of `(craters_hit, delivered, steps)` samples meeting both targets.
#[pyfunction]
#[pyo3(signature = (samples, max_craters_hit = 2.0, min_delivered = 1.0))]
fn goa(samples: Vec<(u32, bool, u32)>, max_craters_hit: f64, min_delivered: f64) -> PyResult<f64> {
    let samples: Vec<OutcomeSample> = samples
        .into_iter()
        .map(|(craters_hit, delivered, steps)| OutcomeSample {
            craters_hit,
            delivered,
            steps,
        })
        .collect();
    let thresholds = [
        OutcomeThreshold::new(Outcome::CratersHit, max_craters_hit),
        OutcomeThreshold::new(Outcome::Delivered, min_delivered),
    ];
    assessment::goa(&samples, &thresholds).map_err(py_err)
}

#[pyfunction]
fn semantic_label(confidence: f64) -> PyResult<String> {
    let label = assessment::semantic_label(confidence).map_err(py_err)?;
    Ok(format!("{label:?}"))
}

/// Welch's t-test: `(t, df, two-sided p)`.
#[pyfunction]
fn welch_t(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let r = stats::welch_t(&a, &b).map_err(py_err)?;
    Ok((r.t, r.df, r.p))
}

/// One-way ANOVA: `(F, df_between, df_within, p)`.
#[pyfunction]
fn anova_f(groups: Vec<Vec<f64>>) -> PyResult<(f64, f64, f64, f64)> {
    let refs: Vec<&[f64]> = groups.iter().map(Vec::as_slice).collect();
    let r = stats::anova_f(&refs).map_err(py_err)?;
    Ok((r.f, r.df_between, r.df_within, r.p))
}

#[pyfunction]
fn documented_defaults() -> String {
    CoreConfig::documented_defaults()
}

#[pymodule]
fn etgoa(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Config>()?;
    m.add_class::<Policies>()?;
    m.add_class::<Trial>()?;
    m.add_class::<Snapshot>()?;
    m.add_function(wrap_pyfunction!(run_experiment_1, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment_2, m)?)?;
    m.add_function(wrap_pyfunction!(spawn_world, m)?)?;
    m.add_function(wrap_pyfunction!(surprise_index, m)?)?;
    m.add_function(wrap_pyfunction!(goa, m)?)?;
    m.add_function(wrap_pyfunction!(semantic_label, m)?)?;
    m.add_function(wrap_pyfunction!(welch_t, m)?)?;
    m.add_function(wrap_pyfunction!(anova_f, m)?)?;
    m.add_function(wrap_pyfunction!(documented_defaults, m)?)?;
    Ok(())
}
