//! Deterministic grid world: robot motion, scripted patrolling obstacles,
//! path-window sensing and per-tick collision resolution.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Cell, ObstacleScript, Scenario, Tick};

/// How many path cells ahead a robot scans before committing to a move.
pub const DEFAULT_LOOKAHEAD: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorldError {
    #[error("no path from {from} to {to}")]
    Unreachable { from: Cell, to: Cell },
    #[error("unknown agent: {0}")]
    UnknownAgent(String),
    #[error("illegal move for {robot}: {from} -> {to} is not adjacent")]
    IllegalMove { robot: String, from: Cell, to: Cell },
}

/// The immutable part of the world: grid bounds and wall cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldStatics {
    pub width: u32,
    pub height: u32,
    pub walls: BTreeSet<Cell>,
}

impl WorldStatics {
    pub fn new(width: u32, height: u32, walls: BTreeSet<Cell>) -> Self {
        WorldStatics { width, height, walls }
    }

    pub fn from_scenario(scenario: &Scenario) -> Self {
        WorldStatics {
            width: scenario.grid_width,
            height: scenario.grid_height,
            walls: scenario.walls.clone(),
        }
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.x < self.width && cell.y < self.height
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        self.in_bounds(cell) && !self.walls.contains(&cell)
    }

    /// Walkable neighbours in fixed north, east, south, west order.
    pub fn neighbors(&self, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
        let candidates = [
            (cell.y > 0).then(|| Cell::new(cell.x, cell.y - 1)),
            Some(Cell::new(cell.x + 1, cell.y)),
            Some(Cell::new(cell.x, cell.y + 1)),
            (cell.x > 0).then(|| Cell::new(cell.x - 1, cell.y)),
        ];
        candidates
            .into_iter()
            .flatten()
            .filter(|c| self.is_free(*c))
    }
}

/// Shortest 4-connected path from `start` to `goal`, exclusive of `start`
/// and inclusive of `goal`. A* with the Manhattan heuristic; ties broken by
/// insertion order with neighbours expanded north, east, south, west.
pub fn shortest_path(statics: &WorldStatics, start: Cell, goal: Cell) -> Result<Vec<Cell>, WorldError> {
    shortest_path_avoiding(statics, start, goal, &BTreeSet::new())
}

/// Like [`shortest_path`] but treats every cell in `blocked` as a wall.
pub fn shortest_path_avoiding(
    statics: &WorldStatics,
    start: Cell,
    goal: Cell,
    blocked: &BTreeSet<Cell>,
) -> Result<Vec<Cell>, WorldError> {
    let unreachable = || WorldError::Unreachable { from: start, to: goal };
    let passable = |c: Cell| statics.is_free(c) && !blocked.contains(&c);
    if !passable(start) || !passable(goal) {
        return Err(unreachable());
    }
    if start == goal {
        return Ok(vec![]);
    }

    let mut open: BinaryHeap<Reverse<(u32, u64, Cell)>> = BinaryHeap::new();
    let mut g_score: BTreeMap<Cell, u32> = BTreeMap::new();
    let mut came_from: BTreeMap<Cell, Cell> = BTreeMap::new();
    let mut seq = 0u64;

    g_score.insert(start, 0);
    open.push(Reverse((start.manhattan(goal), seq, start)));

    while let Some(Reverse((_, _, current))) = open.pop() {
        if current == goal {
            let mut path = vec![goal];
            let mut cursor = goal;
            while let Some(&prev) = came_from.get(&cursor) {
                if prev == start {
                    break;
                }
                path.push(prev);
                cursor = prev;
            }
            path.reverse();
            return Ok(path);
        }
        let current_g = g_score[&current];
        for neighbor in statics.neighbors(current) {
            if blocked.contains(&neighbor) {
                continue;
            }
            let tentative = current_g + 1;
            if tentative < *g_score.get(&neighbor).unwrap_or(&u32::MAX) {
                g_score.insert(neighbor, tentative);
                came_from.insert(neighbor, current);
                seq += 1;
                open.push(Reverse((tentative + neighbor.manhattan(goal), seq, neighbor)));
            }
        }
    }
    Err(unreachable())
}

/// Result of a laser-style scan over the next few planned path cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LaserReading {
    pub blocked: bool,
    pub blocking_cell: Option<Cell>,
}

impl LaserReading {
    fn clear() -> Self {
        LaserReading { blocked: false, blocking_cell: None }
    }

    fn blocked_at(cell: Cell) -> Self {
        LaserReading { blocked: true, blocking_cell: Some(cell) }
    }
}

/// Per-robot result of a world step. `Held` means at least one requested
/// sub-step was blocked and the remaining sub-steps were abandoned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoveResult {
    Moved,
    Held,
}

#[derive(Debug, Clone)]
struct ObstacleProgress {
    script: ObstacleScript,
    waypoint_index: usize,
    dwell_remaining: u64,
}

/// Mutable world: the clock, entity poses and scripted obstacle progress.
/// Mutation happens only through [`step_world`].
#[derive(Debug)]
pub struct WorldState {
    pub tick: Tick,
    pub statics: WorldStatics,
    robot_poses: BTreeMap<String, Cell>,
    obstacle_poses: BTreeMap<String, Cell>,
    obstacles: BTreeMap<String, ObstacleProgress>,
    /// Seeded generator reserved for stochastic extensions; the scripted
    /// obstacle and motion model never consume it.
    rng: ChaCha8Rng,
}

impl WorldState {
    /// Places every available robot at its home and every obstacle at its
    /// first waypoint. Unavailable robots are off the floor entirely.
    pub fn from_scenario(scenario: &Scenario) -> Self {
        let robot_poses = scenario
            .robots
            .iter()
            .filter(|r| r.available)
            .map(|r| (r.id.clone(), r.home))
            .collect();
        let mut obstacle_poses = BTreeMap::new();
        let mut obstacles = BTreeMap::new();
        for script in &scenario.obstacles {
            obstacle_poses.insert(script.id.clone(), script.waypoints[0]);
            obstacles.insert(
                script.id.clone(),
                ObstacleProgress {
                    script: script.clone(),
                    waypoint_index: 0,
                    dwell_remaining: script.dwell_ticks,
                },
            );
        }
        WorldState {
            tick: 0,
            statics: WorldStatics::from_scenario(scenario),
            robot_poses,
            obstacle_poses,
            obstacles,
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
        }
    }

    pub fn robot_pose(&self, robot_id: &str) -> Option<Cell> {
        self.robot_poses.get(robot_id).copied()
    }

    pub fn robot_poses(&self) -> &BTreeMap<String, Cell> {
        &self.robot_poses
    }

    pub fn obstacle_poses(&self) -> &BTreeMap<String, Cell> {
        &self.obstacle_poses
    }

    /// Reserved randomness source (see the field note).
    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn occupied(&self) -> BTreeSet<Cell> {
        self.robot_poses
            .values()
            .chain(self.obstacle_poses.values())
            .copied()
            .collect()
    }
}

/// Scans the first `min(lookahead, |path|)` cells of `planned_path` and
/// reports the first one occupied by a wall, another robot or an obstacle.
pub fn sense(
    world: &WorldState,
    robot_id: &str,
    planned_path: &[Cell],
    lookahead: usize,
) -> Result<LaserReading, WorldError> {
    if !world.robot_poses.contains_key(robot_id) {
        return Err(WorldError::UnknownAgent(robot_id.to_string()));
    }
    let window = &planned_path[..planned_path.len().min(lookahead)];
    for &cell in window {
        let entity_in_cell = world
            .robot_poses
            .iter()
            .any(|(id, pose)| id != robot_id && *pose == cell)
            || world.obstacle_poses.values().any(|pose| *pose == cell);
        if !world.statics.is_free(cell) || entity_in_cell {
            return Ok(LaserReading::blocked_at(cell));
        }
    }
    Ok(LaserReading::clear())
}

/// Advances the world by one tick.
///
/// Obstacles move first, in id order: an obstacle past its dwell time steps
/// to its next waypoint unless that cell is occupied, in which case it
/// dwells in place and retries next tick. Robot requests then resolve in id
/// order as a chain of single-cell sub-steps; a sub-step into a wall, an
/// occupied cell, or a cell claimed earlier this tick holds the robot and
/// cancels its remaining sub-steps. No two entities ever share a cell.
pub fn step_world(
    world: &mut WorldState,
    requests: &BTreeMap<String, Vec<Cell>>,
) -> Result<BTreeMap<String, MoveResult>, WorldError> {
    // reject malformed requests before touching any state
    for (robot_id, cells) in requests {
        let mut prev = world
            .robot_pose(robot_id)
            .ok_or_else(|| WorldError::UnknownAgent(robot_id.clone()))?;
        for &cell in cells {
            if cell != prev && !cell.is_adjacent(prev) {
                return Err(WorldError::IllegalMove { robot: robot_id.clone(), from: prev, to: cell });
            }
            prev = cell;
        }
    }

    let mut occupied = world.occupied();

    // obstacle phase
    let ids: Vec<String> = world.obstacles.keys().cloned().collect();
    for id in ids {
        let progress = world.obstacles.get_mut(&id).expect("obstacle id from keys");
        if progress.dwell_remaining > 0 {
            progress.dwell_remaining -= 1;
            continue;
        }
        let pose = world.obstacle_poses[&id];
        let next_index = (progress.waypoint_index + 1) % progress.script.waypoints.len();
        let target = progress.script.waypoints[next_index];
        if target == pose {
            progress.waypoint_index = next_index;
            progress.dwell_remaining = progress.script.dwell_ticks;
            continue;
        }
        if !world.statics.is_free(target) || occupied.contains(&target) {
            continue; // dwell in place, retry next tick
        }
        occupied.remove(&pose);
        occupied.insert(target);
        progress.waypoint_index = next_index;
        progress.dwell_remaining = progress.script.dwell_ticks;
        world.obstacle_poses.insert(id, target);
    }

    // robot phase, one sub-step per round
    let mut results: BTreeMap<String, MoveResult> =
        requests.keys().map(|id| (id.clone(), MoveResult::Moved)).collect();
    let rounds = requests.values().map(Vec::len).max().unwrap_or(0);
    for round in 0..rounds {
        for (robot_id, cells) in requests {
            if results[robot_id] == MoveResult::Held {
                continue;
            }
            let Some(&target) = cells.get(round) else { continue };
            let pose = world.robot_poses[robot_id];
            if target == pose {
                continue;
            }
            if !world.statics.is_free(target) || occupied.contains(&target) {
                results.insert(robot_id.clone(), MoveResult::Held);
                continue;
            }
            occupied.remove(&pose);
            occupied.insert(target);
            world.robot_poses.insert(robot_id.clone(), target);
        }
    }

    world.tick += 1;
    Ok(results)
}
