//! Discrete delivery gridworld: obstacles, FOV sensing, noisy dynamics and
//! mid-episode world changes.
//!
//! All randomness is drawn from caller-supplied streams, so an environment is
//! a pure function of its config, seed and action sequence.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_PLACEMENT_ATTEMPTS: u32 = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Cell { x, y }
    }

    pub fn manhattan(self, other: Cell) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }

    pub fn dist_sq(self, other: Cell) -> f64 {
        let dx = f64::from(self.x - other.x);
        let dy = f64::from(self.y - other.y);
        dx * dx + dy * dy
    }
}

/// Grid dimensions. Cells are `x ∈ [0, width)`, `y ∈ [0, height)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub width: i32,
    pub height: i32,
}

impl Grid {
    pub const fn new(width: i32, height: i32) -> Self {
        Grid { width, height }
    }

    pub fn contains(self, c: Cell) -> bool {
        (0..self.width).contains(&c.x) && (0..self.height).contains(&c.y)
    }

    pub fn n_cells(self) -> usize {
        (self.width * self.height) as usize
    }

    pub fn index(self, c: Cell) -> usize {
        (c.y * self.width + c.x) as usize
    }

    pub fn cell_at(self, index: usize) -> Cell {
        let i = index as i32;
        Cell::new(i % self.width, i / self.width)
    }

    pub fn cells(self) -> impl Iterator<Item = Cell> {
        (0..self.n_cells()).map(move |i| self.cell_at(i))
    }

    fn clamp(self, x: i32, y: i32) -> Cell {
        Cell::new(x.clamp(0, self.width - 1), y.clamp(0, self.height - 1))
    }

    fn random_cell<R: Rng + ?Sized>(self, rng: &mut R) -> Cell {
        Cell::new(rng.gen_range(0..self.width), rng.gen_range(0..self.height))
    }
}

impl Default for Grid {
    fn default() -> Self {
        Grid::new(50, 50)
    }
}

/// Four-connected moves. `Up` increases `y`. The declaration order is the
/// tie-break order used everywhere an argmax over actions is taken, so
/// equally short routes move horizontally first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Left,
    Right,
    Up,
    Down,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Left, Action::Right, Action::Up, Action::Down];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Action {
        Action::ALL[i]
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (0, 1),
            Action::Down => (0, -1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObstacleKind {
    Crater,
    Dust,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Cell,
    pub radius: f64,
    pub kind: ObstacleKind,
}

impl Obstacle {
    pub fn contains(&self, c: Cell) -> bool {
        self.center.dist_sq(c) <= self.radius * self.radius
    }

    /// Whether any part of the obstacle reaches into a FOV disc around `pos`.
    pub fn in_fov(&self, pos: Cell, fov_radius: f64) -> bool {
        let reach = fov_radius + self.radius;
        self.center.dist_sq(pos) <= reach * reach
    }
}

/// A set of craters and dust zones on a grid, with a per-cell membership
/// mask kept in sync with the obstacle lists.
#[derive(Clone, Debug)]
pub struct ObstacleMap {
    grid: Grid,
    craters: Vec<Obstacle>,
    dust: Vec<Obstacle>,
    crater_mask: Vec<bool>,
    dust_mask: Vec<bool>,
}

impl PartialEq for ObstacleMap {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.craters == other.craters && self.dust == other.dust
    }
}

impl ObstacleMap {
    pub fn empty(grid: Grid) -> Self {
        ObstacleMap {
            grid,
            craters: Vec::new(),
            dust: Vec::new(),
            crater_mask: vec![false; grid.n_cells()],
            dust_mask: vec![false; grid.n_cells()],
        }
    }

    pub fn from_obstacles(grid: Grid, obstacles: impl IntoIterator<Item = Obstacle>) -> Self {
        let mut map = ObstacleMap::empty(grid);
        for o in obstacles {
            map.insert(o);
        }
        map
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn craters(&self) -> &[Obstacle] {
        &self.craters
    }

    pub fn dust(&self) -> &[Obstacle] {
        &self.dust
    }

    pub fn iter(&self) -> impl Iterator<Item = &Obstacle> {
        self.craters.iter().chain(self.dust.iter())
    }

    pub fn len(&self) -> usize {
        self.craters.len() + self.dust.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains_obstacle(&self, o: &Obstacle) -> bool {
        self.list(o.kind).iter().any(|k| k == o)
    }

    pub fn in_crater(&self, c: Cell) -> bool {
        self.grid.contains(c) && self.crater_mask[self.grid.index(c)]
    }

    pub fn in_dust(&self, c: Cell) -> bool {
        self.grid.contains(c) && self.dust_mask[self.grid.index(c)]
    }

    /// Adds an obstacle unless an identical one is already present.
    pub fn insert(&mut self, o: Obstacle) -> bool {
        if self.contains_obstacle(&o) {
            return false;
        }
        let grid = self.grid;
        let mask = match o.kind {
            ObstacleKind::Crater => &mut self.crater_mask,
            ObstacleKind::Dust => &mut self.dust_mask,
        };
        for c in grid.cells() {
            if o.contains(c) {
                mask[grid.index(c)] = true;
            }
        }
        self.list_mut(o.kind).push(o);
        true
    }

    /// Removes every obstacle for which `drop` returns true.
    pub fn remove_where(&mut self, mut drop: impl FnMut(&Obstacle) -> bool) -> usize {
        let before = self.len();
        self.craters.retain(|o| !drop(o));
        self.dust.retain(|o| !drop(o));
        let removed = before - self.len();
        if removed > 0 {
            self.rebuild_masks();
        }
        removed
    }

    pub fn clear(&mut self) {
        *self = ObstacleMap::empty(self.grid);
    }

    /// Stable 64-bit FNV-1a digest of the obstacle lists, used to check that
    /// matched episodes share a world.
    pub fn world_hash(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01B3;
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(PRIME);
            }
        };
        feed(&self.grid.width.to_le_bytes());
        feed(&self.grid.height.to_le_bytes());
        for o in self.iter() {
            feed(&[o.kind as u8]);
            feed(&o.center.x.to_le_bytes());
            feed(&o.center.y.to_le_bytes());
            feed(&o.radius.to_bits().to_le_bytes());
        }
        h
    }

    fn list(&self, kind: ObstacleKind) -> &Vec<Obstacle> {
        match kind {
            ObstacleKind::Crater => &self.craters,
            ObstacleKind::Dust => &self.dust,
        }
    }

    fn list_mut(&mut self, kind: ObstacleKind) -> &mut Vec<Obstacle> {
        match kind {
            ObstacleKind::Crater => &mut self.craters,
            ObstacleKind::Dust => &mut self.dust,
        }
    }

    fn rebuild_masks(&mut self) {
        let grid = self.grid;
        self.crater_mask = vec![false; grid.n_cells()];
        self.dust_mask = vec![false; grid.n_cells()];
        for c in grid.cells() {
            let i = grid.index(c);
            self.crater_mask[i] = self.craters.iter().any(|o| o.contains(c));
            self.dust_mask[i] = self.dust.iter().any(|o| o.contains(c));
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub grid: Grid,
    pub start: Cell,
    pub goals: Vec<Cell>,
    /// Sensor range in cells; an obstacle is seen when its disc reaches into
    /// the FOV disc.
    pub fov_radius: f64,
    pub n_craters: u32,
    pub n_dust: u32,
    pub crater_radius: f64,
    pub dust_radius: f64,
    /// Probability that a move commanded from inside dust is replaced by a
    /// uniformly random action.
    pub slip_prob: f64,
    /// Probability that an in-FOV obstacle is missed while the agent is in dust.
    pub sensor_miss_prob: f64,
    /// Number of crater hits at which the agent is broken.
    pub hit_budget: u32,
    pub horizon: u32,
    pub dust_near_crater_prob: f64,
    /// Chebyshev radius around a crater center for clustered dust placement.
    pub dust_near_crater_dist: i32,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            grid: Grid::default(),
            start: Cell::new(25, 2),
            goals: vec![Cell::new(10, 45), Cell::new(25, 45), Cell::new(40, 45)],
            fov_radius: 10.0,
            n_craters: 15,
            n_dust: 10,
            crater_radius: 1.5,
            dust_radius: 3.0,
            slip_prob: 0.25,
            sensor_miss_prob: 0.5,
            hit_budget: 3,
            horizon: 100,
            dust_near_crater_prob: 0.7,
            dust_near_crater_dist: 5,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.grid.width < 1 || self.grid.height < 1 {
            return bad(format!("grid {}x{} is empty", self.grid.width, self.grid.height));
        }
        for (name, p) in [
            ("slip_prob", self.slip_prob),
            ("sensor_miss_prob", self.sensor_miss_prob),
            ("dust_near_crater_prob", self.dust_near_crater_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if self.horizon < 1 {
            return bad("horizon must be at least 1".into());
        }
        if self.crater_radius <= 0.0 || self.dust_radius <= 0.0 {
            return bad("obstacle radii must be positive".into());
        }
        if self.fov_radius < 0.0 {
            return bad("fov_radius must be non-negative".into());
        }
        if self.dust_near_crater_dist < 0 {
            return bad("dust_near_crater_dist must be non-negative".into());
        }
        if self.goals.is_empty() {
            return bad("at least one goal is required".into());
        }
        if !self.grid.contains(self.start) {
            return bad(format!("start {:?} outside grid", self.start));
        }
        for (i, g) in self.goals.iter().enumerate() {
            if !self.grid.contains(*g) {
                return bad(format!("goal {i} {g:?} outside grid"));
            }
            if self.goals[..i].contains(g) {
                return bad(format!("goal {i} {g:?} duplicates an earlier goal"));
            }
        }
        Ok(())
    }
}

fn sample_center<R: Rng + ?Sized>(
    grid: Grid,
    exclude: Cell,
    taken: &HashSet<Cell>,
    rng: &mut R,
    mut propose: impl FnMut(&mut R) -> Cell,
) -> Result<Cell> {
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let c = propose(rng);
        if grid.contains(c) && c != exclude && !taken.contains(&c) {
            return Ok(c);
        }
    }
    Err(Error::Placement {
        attempts: MAX_PLACEMENT_ATTEMPTS,
    })
}

/// Spawns `n_craters` craters and `n_dust` dust zones. Dust is clustered
/// near craters with probability `dust_near_crater_prob`. No center lands on
/// `exclude`, and no two obstacles of a kind share a center.
pub fn spawn_obstacles<R: Rng + ?Sized>(
    cfg: &EnvConfig,
    rng: &mut R,
    exclude: Cell,
) -> Result<ObstacleMap> {
    spawn_counts(cfg, cfg.n_craters, cfg.n_dust, rng, exclude, &ObstacleMap::empty(cfg.grid))
}

fn spawn_counts<R: Rng + ?Sized>(
    cfg: &EnvConfig,
    n_craters: u32,
    n_dust: u32,
    rng: &mut R,
    exclude: Cell,
    existing: &ObstacleMap,
) -> Result<ObstacleMap> {
    let grid = cfg.grid;
    if !grid.contains(exclude) {
        return Err(Error::Contract(format!("exclude cell {exclude:?} outside grid")));
    }
    let mut taken: HashSet<Cell> = existing.craters().iter().map(|o| o.center).collect();
    let mut craters = Vec::with_capacity(n_craters as usize);
    for _ in 0..n_craters {
        let center = sample_center(grid, exclude, &taken, rng, |r| grid.random_cell(r))?;
        taken.insert(center);
        craters.push(Obstacle {
            center,
            radius: cfg.crater_radius,
            kind: ObstacleKind::Crater,
        });
    }
    let mut taken: HashSet<Cell> = existing.dust().iter().map(|o| o.center).collect();
    let mut dust = Vec::with_capacity(n_dust as usize);
    let d = cfg.dust_near_crater_dist;
    for _ in 0..n_dust {
        let near = !craters.is_empty() && rng.gen_bool(cfg.dust_near_crater_prob);
        let center = if near {
            let anchor = craters[rng.gen_range(0..craters.len())].center;
            sample_center(grid, exclude, &taken, rng, |r| {
                Cell::new(
                    anchor.x + r.gen_range(-d..=d),
                    anchor.y + r.gen_range(-d..=d),
                )
            })?
        } else {
            sample_center(grid, exclude, &taken, rng, |r| grid.random_cell(r))?
        };
        taken.insert(center);
        dust.push(Obstacle {
            center,
            radius: cfg.dust_radius,
            kind: ObstacleKind::Dust,
        });
    }
    Ok(ObstacleMap::from_obstacles(grid, craters.into_iter().chain(dust)))
}

/// Obstacles sensed from one position.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sensed {
    pub s_c: u32,
    pub s_z: u32,
    pub visible: Vec<Obstacle>,
}

/// Noiseless geometric FOV sensing.
pub fn sense_exact(map: &ObstacleMap, pos: Cell, fov_radius: f64) -> (u32, u32) {
    let count = |list: &[Obstacle]| list.iter().filter(|o| o.in_fov(pos, fov_radius)).count() as u32;
    (count(map.craters()), count(map.dust()))
}

/// Senses obstacles in the FOV. While in dust every in-FOV obstacle is
/// independently dropped with probability `sensor_miss_prob`; outside dust
/// no randomness is consumed.
pub fn sense<R: Rng + ?Sized>(
    map: &ObstacleMap,
    pos: Cell,
    in_dust: bool,
    cfg: &EnvConfig,
    rng: &mut R,
) -> Sensed {
    let mut out = Sensed::default();
    for o in map.iter() {
        if !o.in_fov(pos, cfg.fov_radius) {
            continue;
        }
        if in_dust && rng.gen_bool(cfg.sensor_miss_prob) {
            continue;
        }
        match o.kind {
            ObstacleKind::Crater => out.s_c += 1,
            ObstacleKind::Dust => out.s_z += 1,
        }
        out.visible.push(*o);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentState {
    pub pos: Cell,
    pub s_c: u32,
    pub s_z: u32,
    pub hits: u32,
    pub t: u32,
    pub broken: bool,
    pub delivered: bool,
}

impl AgentState {
    pub fn at(pos: Cell) -> Self {
        AgentState {
            pos,
            s_c: 0,
            s_z: 0,
            hits: 0,
            t: 0,
            broken: false,
            delivered: false,
        }
    }

    pub fn is_terminal(&self, horizon: u32) -> bool {
        self.broken || self.delivered || self.t >= horizon
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepEvents {
    pub crater_hit: bool,
    pub broken: bool,
    pub reached_goal: bool,
    /// Action actually executed after dust slip.
    pub executed: Option<Action>,
}

/// Moves the agent without sensing. Shared by the true environment and the
/// world model so both use the identical transition function.
pub fn transition<R: Rng + ?Sized>(
    state: &mut AgentState,
    action: Action,
    goal: Cell,
    map: &ObstacleMap,
    cfg: &EnvConfig,
    rng: &mut R,
) -> Result<StepEvents> {
    if state.broken || state.delivered || state.t >= cfg.horizon {
        return Err(Error::Contract(format!(
            "step called on finished episode (t={}, broken={}, delivered={})",
            state.t, state.broken, state.delivered
        )));
    }
    let mut executed = action;
    if map.in_dust(state.pos) && rng.gen_bool(cfg.slip_prob) {
        executed = Action::from_index(rng.gen_range(0..4));
    }
    let (dx, dy) = executed.delta();
    state.pos = cfg.grid.clamp(state.pos.x + dx, state.pos.y + dy);
    state.t += 1;

    let mut ev = StepEvents {
        executed: Some(executed),
        ..StepEvents::default()
    };
    if map.in_crater(state.pos) {
        state.hits += 1;
        ev.crater_hit = true;
    }
    if state.hits >= cfg.hit_budget {
        state.broken = true;
        ev.broken = true;
    } else if state.pos == goal {
        state.delivered = true;
        ev.reached_goal = true;
    }
    Ok(ev)
}

/// One environment step: move, then refresh `s_c`/`s_z` from the sensor.
pub fn step<R: Rng + ?Sized>(
    state: &AgentState,
    action: Action,
    goal: Cell,
    map: &ObstacleMap,
    cfg: &EnvConfig,
    rng: &mut R,
) -> Result<(AgentState, StepEvents, Sensed)> {
    let mut next = *state;
    let ev = transition(&mut next, action, goal, map, cfg, rng)?;
    let sensed = sense(map, next.pos, map.in_dust(next.pos), cfg, rng);
    next.s_c = sensed.s_c;
    next.s_z = sensed.s_z;
    Ok((next, ev, sensed))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChangeEvent {
    ResampleAll,
    DeleteAll,
    AddRandom { craters: u32, dust: u32 },
}

pub fn apply_change_event<R: Rng + ?Sized>(
    map: &ObstacleMap,
    event: ChangeEvent,
    cfg: &EnvConfig,
    rng: &mut R,
    exclude: Cell,
) -> Result<ObstacleMap> {
    match event {
        ChangeEvent::ResampleAll => spawn_obstacles(cfg, rng, exclude),
        ChangeEvent::DeleteAll => Ok(ObstacleMap::empty(map.grid())),
        ChangeEvent::AddRandom { craters, dust } => {
            let fresh = spawn_counts(cfg, craters, dust, rng, exclude, map)?;
            let mut merged = map.clone();
            for o in fresh.iter() {
                merged.insert(*o);
            }
            Ok(merged)
        }
    }
}

/// A world change scheduled to fire when the agent reaches timestep `t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledChange {
    pub t: u32,
    pub event: ChangeEvent,
}

/// The true environment for one episode. Owns the ground-truth map, the
/// agent state and separate RNG streams for dynamics and world changes.
#[derive(Clone, Debug)]
pub struct Episode<R: Rng> {
    cfg: EnvConfig,
    truth: ObstacleMap,
    state: AgentState,
    visible: Vec<Obstacle>,
    schedule: Vec<ScheduledChange>,
    dynamics_rng: R,
    change_rng: R,
}

impl<R: Rng> Episode<R> {
    pub fn new(
        cfg: EnvConfig,
        truth: ObstacleMap,
        schedule: Vec<ScheduledChange>,
        dynamics_rng: R,
        change_rng: R,
    ) -> Self {
        let mut state = AgentState::at(cfg.start);
        let (s_c, s_z) = sense_exact(&truth, state.pos, cfg.fov_radius);
        state.s_c = s_c;
        state.s_z = s_z;
        let visible = truth
            .iter()
            .filter(|o| o.in_fov(state.pos, cfg.fov_radius))
            .copied()
            .collect();
        let mut schedule = schedule;
        schedule.sort_by_key(|c| c.t);
        Episode {
            cfg,
            truth,
            state,
            visible,
            schedule,
            dynamics_rng,
            change_rng,
        }
    }

    pub fn cfg(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> &AgentState {
        &self.state
    }

    pub fn truth(&self) -> &ObstacleMap {
        &self.truth
    }

    /// Obstacles reported by the most recent sensor reading.
    pub fn visible(&self) -> &[Obstacle] {
        &self.visible
    }

    pub fn is_done(&self) -> bool {
        self.state.is_terminal(self.cfg.horizon)
    }

    /// Steps the agent, then applies any world change due at the new
    /// timestep before sensing, so the observation at `t` already reflects it.
    pub fn step(&mut self, action: Action, goal: Cell) -> Result<StepEvents> {
        let mut next = self.state;
        let ev = transition(&mut next, action, goal, &self.truth, &self.cfg, &mut self.dynamics_rng)?;
        while let Some(change) = self.schedule.first().copied() {
            if change.t > next.t {
                break;
            }
            self.schedule.remove(0);
            self.truth = apply_change_event(
                &self.truth,
                change.event,
                &self.cfg,
                &mut self.change_rng,
                next.pos,
            )?;
        }
        let in_dust = self.truth.in_dust(next.pos);
        let sensed = sense(&self.truth, next.pos, in_dust, &self.cfg, &mut self.dynamics_rng);
        next.s_c = sensed.s_c;
        next.s_z = sensed.s_z;
        self.visible = sensed.visible;
        self.state = next;
        Ok(ev)
    }
}
