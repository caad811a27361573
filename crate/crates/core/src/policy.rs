//! Tabular Q-learning for goal-reaching, trained on an obstacle-free grid.

use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{Action, Cell, Grid};
use crate::seeding::rng_from;

const MAGIC: &[u8; 4] = b"ETGQ";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 5;
// stream label for training, under the config seed
const TRAIN_STREAM: u64 = 0x7A;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub discount: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub episodes: u32,
    /// Step cap per training episode; 0 means four times the grid perimeter.
    pub max_steps: u32,
    pub step_reward: f64,
    pub goal_reward: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            learning_rate: 0.1,
            discount: 0.99,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            episodes: 200_000,
            max_steps: 0,
            step_reward: -1.0,
            goal_reward: 100.0,
        }
    }
}

/// Action values for every (cell, action) pair, for a single goal.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    grid: Grid,
    goal: Cell,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(grid: Grid, goal: Cell) -> Self {
        QTable {
            grid,
            goal,
            values: vec![0.0; grid.n_cells() * 4],
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn goal(&self) -> Cell {
        self.goal
    }

    pub fn value(&self, pos: Cell, action: Action) -> f64 {
        self.values[self.grid.index(pos) * 4 + action.index()]
    }

    pub fn set_value(&mut self, pos: Cell, action: Action, v: f64) {
        let i = self.grid.index(pos) * 4 + action.index();
        self.values[i] = v;
    }

    fn row(&self, pos: Cell) -> &[f64] {
        let i = self.grid.index(pos) * 4;
        &self.values[i..i + 4]
    }

    /// Argmax action at `pos`; ties go to the earliest action in
    /// `Action::ALL` order.
    pub fn greedy_action(&self, pos: Cell) -> Action {
        let row = self.row(pos);
        let mut best = 0;
        for a in 1..4 {
            if row[a] > row[best] {
                best = a;
            }
        }
        Action::from_index(best)
    }

    fn max_value(&self, pos: Cell) -> f64 {
        self.row(pos).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Steps taken by the greedy policy from `start` to the goal on an empty
    /// grid, or `None` if it does not arrive within `limit` steps.
    pub fn greedy_path_len(&self, start: Cell, limit: u32) -> Option<u32> {
        let mut pos = start;
        for steps in 0..=limit {
            if pos == self.goal {
                return Some(steps);
            }
            pos = apply(self.grid, pos, self.greedy_action(pos));
        }
        None
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(HEADER_LEN + self.values.len() * 8);
        buf.extend_from_slice(MAGIC);
        for field in [
            FORMAT_VERSION,
            self.grid.width as u32,
            self.grid.height as u32,
            self.goal.x as u32,
            self.goal.y as u32,
        ] {
            buf.extend_from_slice(&field.to_le_bytes());
        }
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    /// Loads a table and checks it was trained for `grid`.
    pub fn load(path: &Path, grid: Grid) -> Result<QTable> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let fail = |reason: String| Error::PolicyFormat {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < HEADER_LEN {
            return Err(fail(format!("truncated header ({} bytes)", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(fail("not a q-table file".into()));
        }
        let field = |i: usize| {
            let at = 4 + i * 4;
            u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
        };
        let version = field(0);
        if version != FORMAT_VERSION {
            return Err(fail(format!(
                "format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let (w, h) = (field(1) as i32, field(2) as i32);
        if (w, h) != (grid.width, grid.height) {
            return Err(fail(format!(
                "grid {w}x{h}, expected {}x{}",
                grid.width, grid.height
            )));
        }
        let goal = Cell::new(field(3) as i32, field(4) as i32);
        if !grid.contains(goal) {
            return Err(fail(format!("goal {goal:?} outside grid")));
        }
        let body = &bytes[HEADER_LEN..];
        let expected = grid.n_cells() * 4 * 8;
        if body.len() != expected {
            return Err(fail(format!(
                "value array is {} bytes, expected {expected}",
                body.len()
            )));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(QTable { grid, goal, values })
    }
}

fn apply(grid: Grid, pos: Cell, action: Action) -> Cell {
    let (dx, dy) = action.delta();
    Cell::new(
        (pos.x + dx).clamp(0, grid.width - 1),
        (pos.y + dy).clamp(0, grid.height - 1),
    )
}

/// Trains a goal-reaching table with epsilon-greedy Q-learning from uniformly
/// random start cells. Epsilon decays linearly over the episodes.
///
/// The result is checked: every start cell must reach the goal greedily
/// within twice its Manhattan distance, otherwise training failed.
pub fn train<R: Rng + ?Sized>(
    grid: Grid,
    goal: Cell,
    params: &TrainParams,
    rng: &mut R,
) -> Result<QTable> {
    if !grid.contains(goal) {
        return Err(Error::Contract(format!("goal {goal:?} outside grid")));
    }
    let max_steps = if params.max_steps == 0 {
        4 * 2 * (grid.width + grid.height) as u32
    } else {
        params.max_steps
    };
    let mut q = QTable::zeros(grid, goal);
    let n_cells = grid.n_cells();
    let decay_span = f64::from(params.episodes.saturating_sub(1).max(1));

    for episode in 0..params.episodes {
        let frac = f64::from(episode) / decay_span;
        let eps = params.epsilon_start + (params.epsilon_end - params.epsilon_start) * frac.min(1.0);
        let mut pos = grid.cell_at(rng.gen_range(0..n_cells));
        if pos == goal {
            continue;
        }
        for _ in 0..max_steps {
            let action = if rng.gen_bool(eps.clamp(0.0, 1.0)) {
                Action::from_index(rng.gen_range(0..4))
            } else {
                q.greedy_action(pos)
            };
            let next = apply(grid, pos, action);
            let target = if next == goal {
                params.goal_reward
            } else {
                params.step_reward + params.discount * q.max_value(next)
            };
            let old = q.value(pos, action);
            q.set_value(pos, action, old + params.learning_rate * (target - old));
            pos = next;
            if pos == goal {
                break;
            }
        }
    }

    let failing = grid
        .cells()
        .filter(|&c| q.greedy_path_len(c, 2 * c.manhattan(goal)).is_none())
        .count();
    if failing > 0 {
        return Err(Error::TrainingFailure {
            goal_x: goal.x,
            goal_y: goal.y,
            failing,
            total: n_cells,
        });
    }
    Ok(q)
}

/// Trains the table for `goals[goal]` from the stream derived from `seed`
/// and the goal index, so each goal trains identically on its own.
pub fn train_goal(grid: Grid, goals: &[Cell], goal: usize, params: &TrainParams, seed: u64) -> Result<QTable> {
    let cell = *goals
        .get(goal)
        .ok_or_else(|| Error::Config(format!("goal index {goal} out of range for {} goals", goals.len())))?;
    train(grid, cell, params, &mut rng_from(seed, &[TRAIN_STREAM, goal as u64]))
}

/// One trained table per goal, indexed like the goal list.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicySet {
    tables: Vec<QTable>,
}

impl PolicySet {
    pub fn new(tables: Vec<QTable>) -> Self {
        PolicySet { tables }
    }

    pub fn get(&self, goal: usize) -> &QTable {
        &self.tables[goal]
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn goals(&self) -> impl Iterator<Item = Cell> + '_ {
        self.tables.iter().map(QTable::goal)
    }

    pub fn file_name(goal: usize) -> String {
        format!("goal{goal}.qtab")
    }

    /// Loads `goal{i}.qtab` for every goal from `dir`, checking that each
    /// table was trained for the matching goal cell.
    pub fn load_dir(dir: &Path, grid: Grid, goals: &[Cell]) -> Result<PolicySet> {
        let mut tables = Vec::with_capacity(goals.len());
        for (i, goal) in goals.iter().enumerate() {
            let path = dir.join(Self::file_name(i));
            let q = QTable::load(&path, grid)?;
            if q.goal() != *goal {
                return Err(Error::PolicyFormat {
                    path,
                    reason: format!("trained for goal {:?}, expected {goal:?}", q.goal()),
                });
            }
            tables.push(q);
        }
        Ok(PolicySet { tables })
    }

    /// Trains every goal in parallel with [`train_goal`].
    pub fn train_all(grid: Grid, goals: &[Cell], params: &TrainParams, seed: u64) -> Result<PolicySet> {
        let tables = (0..goals.len())
            .into_par_iter()
            .map(|i| train_goal(grid, goals, i, params, seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(PolicySet { tables })
    }

    /// Loads the tables from `dir` when all of them exist; otherwise trains
    /// the full set and writes it there. A present but invalid file is an
    /// error, not a reason to retrain.
    pub fn load_or_train(dir: &Path, grid: Grid, goals: &[Cell], params: &TrainParams, seed: u64) -> Result<PolicySet> {
        if (0..goals.len()).all(|i| dir.join(Self::file_name(i)).is_file()) {
            return Self::load_dir(dir, grid, goals);
        }
        let set = Self::train_all(grid, goals, params, seed)?;
        set.save_dir(dir)?;
        Ok(set)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, q) in self.tables.iter().enumerate() {
            q.save(&dir.join(Self::file_name(i)))?;
        }
        Ok(())
    }
}
