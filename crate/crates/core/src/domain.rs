//! Core vocabulary shared by every other module: grid geometry, tasks,
//! products, robot profiles and the scenario definition loaded from JSON.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulation clock value.
pub type Tick = u64;

/// A grid cell, addressed as (column, row) with (0, 0) in the top-left
/// corner. Serialized as a two-element array `[x, y]`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(from = "(u32, u32)", into = "(u32, u32)")]
pub struct Cell {
    pub x: u32,
    pub y: u32,
}

impl Cell {
    pub fn new(x: u32, y: u32) -> Self {
        Cell { x, y }
    }

    pub fn manhattan(self, other: Cell) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }

    /// True when `other` is one of the four orthogonal neighbours.
    pub fn is_adjacent(self, other: Cell) -> bool {
        self.manhattan(other) == 1
    }
}

impl From<(u32, u32)> for Cell {
    fn from((x, y): (u32, u32)) -> Self {
        Cell { x, y }
    }
}

impl From<Cell> for (u32, u32) {
    fn from(c: Cell) -> Self {
        (c.x, c.y)
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}]", self.x, self.y)
    }
}

/// The category of item a courier run moves.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum TaskKind {
    Material,
    Tool,
    FinishedProduct,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            TaskKind::Material => "Material",
            TaskKind::Tool => "Tool",
            TaskKind::FinishedProduct => "FinishedProduct",
        };
        f.write_str(name)
    }
}

/// One courier run: travel to `pickup`, handle, travel to `dropoff`, handle.
/// `handling_ticks` is the time spent at each of the two stops.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub id: String,
    pub kind: TaskKind,
    pub pickup: Cell,
    pub dropoff: Cell,
    pub handling_ticks: u64,
}

/// A product is an ordered recipe of task ids, split into the floor
/// preparation runs and the clear-the-floor runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Product {
    pub name: String,
    pub setup: Vec<String>,
    pub cleanup: Vec<String>,
}

/// Which part of a product's recipe to expand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Setup,
    Cleanup,
    Both,
}

/// Identity and capability sheet for one robot. Robots marked
/// `available: false` stay off the floor and never answer the master.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotProfile {
    pub id: String,
    pub capabilities: BTreeSet<TaskKind>,
    pub speed: u32,
    pub home: Cell,
    #[serde(default = "default_true")]
    pub available: bool,
}

fn default_true() -> bool {
    true
}

/// A scripted patrol for a human operator or other non-robot entity.
/// The entity starts on the first waypoint, dwells `dwell_ticks` at each
/// waypoint, and then steps to the next one, cycling forever.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleScript {
    pub id: String,
    pub waypoints: Vec<Cell>,
    #[serde(default)]
    pub dwell_ticks: u64,
}

/// A complete, self-contained simulation configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub grid_width: u32,
    pub grid_height: u32,
    #[serde(default)]
    pub walls: BTreeSet<Cell>,
    pub robots: Vec<RobotProfile>,
    pub tasks: Vec<TaskSpec>,
    #[serde(default)]
    pub products: Vec<Product>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleScript>,
    #[serde(default = "default_identity_timeout")]
    pub identity_timeout_ticks: u64,
    #[serde(default = "default_obstacle_wait")]
    pub obstacle_wait_ticks: u64,
    #[serde(default = "default_replan_limit")]
    pub replan_limit: u32,
    #[serde(default)]
    pub seed: u64,
}

fn default_identity_timeout() -> u64 {
    5
}

fn default_obstacle_wait() -> u64 {
    4
}

fn default_replan_limit() -> u32 {
    2
}

/// Agent id reserved for the coordinator; robot profiles may not use it.
pub const MASTER_ID: &str = "master";

impl Scenario {
    pub fn task(&self, id: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn robot(&self, id: &str) -> Option<&RobotProfile> {
        self.robots.iter().find(|r| r.id == id)
    }

    pub fn product(&self, name: &str) -> Option<&Product> {
        self.products.iter().find(|p| p.name == name)
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.x < self.grid_width && cell.y < self.grid_height
    }

    pub fn is_wall(&self, cell: Cell) -> bool {
        self.walls.contains(&cell)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("product not found: {0}")]
    ProductNotFound(String),
    #[error("task not found: {0}")]
    TaskNotFound(String),
}

/// Checks every scenario invariant and returns one message per violation,
/// deterministically ordered by entity id and then field. An empty result
/// means the scenario is runnable.
pub fn validate_scenario(scenario: &Scenario) -> Vec<String> {
    let mut violations: Vec<(String, String, String)> = Vec::new();
    let mut push = |entity: &str, field: &str, message: String| {
        violations.push((entity.to_string(), field.to_string(), message));
    };

    if scenario.grid_width == 0 {
        push("scenario", "grid_width", "scenario: grid_width must be >= 1".into());
    }
    if scenario.grid_height == 0 {
        push("scenario", "grid_height", "scenario: grid_height must be >= 1".into());
    }
    if scenario.identity_timeout_ticks == 0 {
        push(
            "scenario",
            "identity_timeout_ticks",
            "scenario: identity_timeout_ticks must be >= 1".into(),
        );
    }
    if scenario.obstacle_wait_ticks == 0 {
        push(
            "scenario",
            "obstacle_wait_ticks",
            "scenario: obstacle_wait_ticks must be >= 1".into(),
        );
    }
    if scenario.replan_limit == 0 {
        push("scenario", "replan_limit", "scenario: replan_limit must be >= 1".into());
    }

    for wall in &scenario.walls {
        if !scenario.in_bounds(*wall) {
            push("walls", "", format!("walls: {wall} out of bounds"));
        }
    }

    if scenario.robots.is_empty() {
        push("robots", "", "robots: must be non-empty".into());
    }
    let mut robot_ids = BTreeSet::new();
    let mut homes = BTreeSet::new();
    for robot in &scenario.robots {
        let entity = format!("robot {}", robot.id);
        if !robot_ids.insert(robot.id.clone()) {
            push("robots", "", format!("robots: duplicate id {}", robot.id));
        }
        if robot.id == MASTER_ID {
            push("robots", "", format!("robots: id {MASTER_ID:?} is reserved"));
        }
        if robot.capabilities.is_empty() {
            push(&entity, "capabilities", format!("{entity}: capabilities must be non-empty"));
        }
        if !scenario.in_bounds(robot.home) {
            push(&entity, "home", format!("{entity}: home {} out of bounds", robot.home));
        } else if scenario.is_wall(robot.home) {
            push(&entity, "home", format!("{entity}: home {} is a wall", robot.home));
        }
        if robot.available && !homes.insert(robot.home) {
            push("robots", "home", format!("robots: duplicate home {}", robot.home));
        }
        if robot.speed == 0 {
            push(&entity, "speed", format!("{entity}: speed must be >= 1"));
        }
    }

    let mut task_ids = BTreeSet::new();
    for task in &scenario.tasks {
        let entity = format!("task {}", task.id);
        if !task_ids.insert(task.id.clone()) {
            push("tasks", "", format!("tasks: duplicate id {}", task.id));
        }
        if task.pickup == task.dropoff {
            push(&entity, "dropoff", format!("{entity}: pickup equals dropoff"));
        }
        for (field, cell) in [("pickup", task.pickup), ("dropoff", task.dropoff)] {
            if !scenario.in_bounds(cell) {
                push(&entity, field, format!("{entity}: {field} {cell} out of bounds"));
            } else if scenario.is_wall(cell) {
                push(&entity, field, format!("{entity}: {field} {cell} is a wall"));
            }
        }
    }

    let mut product_names = BTreeSet::new();
    for product in &scenario.products {
        let entity = format!("product {}", product.name);
        if !product_names.insert(product.name.clone()) {
            push("products", "", format!("products: duplicate name {}", product.name));
        }
        for id in product.setup.iter().chain(&product.cleanup) {
            if !task_ids.contains(id) {
                push(&entity, "tasks", format!("{entity}: unknown task id {id}"));
            }
        }
        let setup: BTreeSet<&String> = product.setup.iter().collect();
        for id in &product.cleanup {
            if setup.contains(id) {
                push(&entity, "cleanup", format!("{entity}: setup and cleanup share task {id}"));
            }
        }
    }

    let mut obstacle_ids = BTreeSet::new();
    let mut starts = homes;
    for obstacle in &scenario.obstacles {
        let entity = format!("obstacle {}", obstacle.id);
        if !obstacle_ids.insert(obstacle.id.clone()) {
            push("obstacles", "", format!("obstacles: duplicate id {}", obstacle.id));
        }
        if obstacle.waypoints.is_empty() {
            push(&entity, "waypoints", format!("{entity}: waypoints must be non-empty"));
            continue;
        }
        for waypoint in &obstacle.waypoints {
            if !scenario.in_bounds(*waypoint) {
                push(&entity, "waypoints", format!("{entity}: waypoint {waypoint} out of bounds"));
            } else if scenario.is_wall(*waypoint) {
                push(&entity, "waypoints", format!("{entity}: waypoint {waypoint} is a wall"));
            }
        }
        // the start cell must be free at tick 0
        let start = obstacle.waypoints[0];
        if !starts.insert(start) {
            push(&entity, "waypoints", format!("{entity}: start {start} collides with another entity"));
        }
    }

    violations.sort();
    violations.dedup();
    violations.into_iter().map(|(_, _, message)| message).collect()
}

/// Expands a product into its task list, in declared order. `Both` yields
/// the setup runs followed by the cleanup runs.
pub fn expand_product(
    scenario: &Scenario,
    product_name: &str,
    phase: Phase,
) -> Result<Vec<TaskSpec>, DomainError> {
    let product = scenario
        .product(product_name)
        .ok_or_else(|| DomainError::ProductNotFound(product_name.to_string()))?;
    let ids: Vec<&String> = match phase {
        Phase::Setup => product.setup.iter().collect(),
        Phase::Cleanup => product.cleanup.iter().collect(),
        Phase::Both => product.setup.iter().chain(&product.cleanup).collect(),
    };
    ids.into_iter()
        .map(|id| {
            scenario
                .task(id)
                .cloned()
                .ok_or_else(|| DomainError::TaskNotFound(id.clone()))
        })
        .collect()
}
