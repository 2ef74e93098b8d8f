//! Task dispatching: the sequential and balanced strategies, static task
//! duration estimates, and a designation-keyed factory so new strategies
//! plug in without touching call sites.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Cell, RobotProfile, TaskSpec};
use crate::world::{shortest_path, WorldError, WorldStatics};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DispatchError {
    #[error("unknown strategy {given:?}; valid designations: {}", valid.join(", "))]
    UnknownStrategy { given: String, valid: Vec<String> },
    #[error("no capable robot for task {task_id}")]
    NoCapableRobot { task_id: String },
    #[error("no estimate for task {task_id} on robot {robot_id}")]
    MissingEstimate { task_id: String, robot_id: String },
    #[error("task {task_id}: {source}")]
    Unreachable { task_id: String, source: WorldError },
}

/// What a robot is doing from the master's point of view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RobotStatus {
    Idle,
    Busy(String),
}

/// One row of the master's roster, built from Identity replies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RosterEntry {
    pub robot_id: String,
    pub capabilities: BTreeSet<crate::domain::TaskKind>,
    pub status: RobotStatus,
}

impl RosterEntry {
    pub fn is_idle(&self) -> bool {
        self.status == RobotStatus::Idle
    }

    pub fn can_do(&self, task: &TaskSpec) -> bool {
        self.capabilities.contains(&task.kind)
    }
}

/// Which phase of queue building produced an assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentPhase {
    Singleton,
    Balanced,
}

/// One entry of the queue-building log, in assignment order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub task_id: String,
    pub robot_id: String,
    pub phase: AssignmentPhase,
    pub estimate: u64,
}

/// Per-robot task queues plus the estimated load that justified them and
/// the ordered assignment log the builder produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueuePlan {
    pub queues: BTreeMap<String, Vec<String>>,
    pub estimated_load: BTreeMap<String, u64>,
    pub assignments: Vec<Assignment>,
}

impl QueuePlan {
    /// Removes and returns the first queued task for `robot_id`.
    pub fn pop_front(&mut self, robot_id: &str) -> Option<String> {
        let queue = self.queues.get_mut(robot_id)?;
        if queue.is_empty() {
            None
        } else {
            Some(queue.remove(0))
        }
    }

    /// Puts a task back at the head of a robot's queue (retry path).
    pub fn push_front(&mut self, robot_id: &str, task_id: String) {
        self.queues.entry(robot_id.to_string()).or_default().insert(0, task_id);
    }

    pub fn is_empty(&self) -> bool {
        self.queues.values().all(Vec::is_empty)
    }
}

/// Designation of a built-in dispatching algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyDesignation {
    Sequential,
    Balanced,
}

impl StrategyDesignation {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyDesignation::Sequential => "sequential",
            StrategyDesignation::Balanced => "balanced",
        }
    }
}

impl std::fmt::Display for StrategyDesignation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyDesignation {
    type Err = DispatchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential" => Ok(StrategyDesignation::Sequential),
            "balanced" => Ok(StrategyDesignation::Balanced),
            other => Err(DispatchError::UnknownStrategy {
                given: other.to_string(),
                valid: StrategyRegistry::with_builtins().designations(),
            }),
        }
    }
}

/// Static duration estimates keyed by (task, robot).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EstimateTable {
    entries: BTreeMap<(String, String), u64>,
}

impl EstimateTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, task_id: impl Into<String>, robot_id: impl Into<String>, ticks: u64) {
        self.entries.insert((task_id.into(), robot_id.into()), ticks);
    }

    pub fn get(&self, task_id: &str, robot_id: &str) -> Option<u64> {
        self.entries.get(&(task_id.to_string(), robot_id.to_string())).copied()
    }

    /// Computes estimates for every (task, capable robot) pair.
    pub fn compute(
        tasks: &[TaskSpec],
        robots: &[RobotProfile],
        statics: &WorldStatics,
    ) -> Result<Self, DispatchError> {
        let mut table = Self::new();
        for task in tasks {
            for robot in robots {
                if robot.capabilities.contains(&task.kind) {
                    let ticks = estimate_task_ticks(task, robot, statics)?;
                    table.insert(&task.id, &robot.id, ticks);
                }
            }
        }
        Ok(table)
    }
}

fn ceil_div(distance: usize, speed: u32) -> u64 {
    (distance as u64).div_ceil(speed.max(1) as u64)
}

/// Estimated number of ticks for `robot` to run `task` from its home on the
/// obstacle-free static grid: travel home -> pickup, pickup -> dropoff (each
/// rounded up by speed) plus the handling time.
pub fn estimate_task_ticks(
    task: &TaskSpec,
    robot: &RobotProfile,
    statics: &WorldStatics,
) -> Result<u64, DispatchError> {
    let leg = |from: Cell, to: Cell| {
        shortest_path(statics, from, to)
            .map(|path| path.len())
            .map_err(|source| DispatchError::Unreachable { task_id: task.id.clone(), source })
    };
    let to_pickup = leg(robot.home, task.pickup)?;
    let to_dropoff = leg(task.pickup, task.dropoff)?;
    Ok(ceil_div(to_pickup, robot.speed) + ceil_div(to_dropoff, robot.speed) + task.handling_ticks)
}

fn capable_entries<'r>(roster: &'r [RosterEntry], task: &TaskSpec) -> Vec<&'r RosterEntry> {
    roster.iter().filter(|entry| entry.can_do(task)).collect()
}

/// Builds balanced per-robot queues.
///
/// Tasks only one rostered robot can run are appended to that robot's queue
/// first, in input order. The remaining tasks are handed out longest first
/// (descending estimate, ties by input order), each to the compatible queue
/// with the smallest accumulated load (ties to the smaller robot id).
pub fn plan_balanced(
    tasks: &[TaskSpec],
    roster: &[RosterEntry],
    estimates: &EstimateTable,
) -> Result<QueuePlan, DispatchError> {
    // resolve capabilities and estimates up front so no partial plan leaks
    let mut resolved: Vec<(&TaskSpec, Vec<&RosterEntry>)> = Vec::with_capacity(tasks.len());
    for task in tasks {
        let capable = capable_entries(roster, task);
        if capable.is_empty() {
            return Err(DispatchError::NoCapableRobot { task_id: task.id.clone() });
        }
        for entry in &capable {
            if estimates.get(&task.id, &entry.robot_id).is_none() {
                return Err(DispatchError::MissingEstimate {
                    task_id: task.id.clone(),
                    robot_id: entry.robot_id.clone(),
                });
            }
        }
        resolved.push((task, capable));
    }

    let mut plan = QueuePlan {
        queues: roster.iter().map(|e| (e.robot_id.clone(), Vec::new())).collect(),
        estimated_load: roster.iter().map(|e| (e.robot_id.clone(), 0)).collect(),
        assignments: Vec::new(),
    };
    let assign = |plan: &mut QueuePlan, task: &TaskSpec, robot_id: &str, phase| {
        let estimate = estimates.get(&task.id, robot_id).expect("estimate checked above");
        plan.queues.get_mut(robot_id).expect("queue exists").push(task.id.clone());
        *plan.estimated_load.get_mut(robot_id).expect("load exists") += estimate;
        plan.assignments.push(Assignment {
            task_id: task.id.clone(),
            robot_id: robot_id.to_string(),
            phase,
            estimate,
        });
    };

    // phase 1: tasks only a single rostered robot can run, in input order
    let mut shared: Vec<(usize, &TaskSpec, &Vec<&RosterEntry>)> = Vec::new();
    for (index, (task, capable)) in resolved.iter().enumerate() {
        if capable.len() == 1 {
            let robot_id = capable[0].robot_id.clone();
            assign(&mut plan, task, &robot_id, AssignmentPhase::Singleton);
        } else {
            shared.push((index, task, capable));
        }
    }

    // phase 2: longest estimate first, to the least-loaded compatible queue
    let sort_key = |task: &TaskSpec, capable: &[&RosterEntry]| {
        capable
            .iter()
            .filter_map(|e| estimates.get(&task.id, &e.robot_id))
            .min()
            .expect("capable robots have estimates")
    };
    shared.sort_by(|(ia, ta, ca), (ib, tb, cb)| {
        sort_key(tb, cb).cmp(&sort_key(ta, ca)).then(ia.cmp(ib))
    });
    for (_, task, capable) in shared {
        let robot_id = capable
            .iter()
            .map(|e| (plan.estimated_load[&e.robot_id], e.robot_id.clone()))
            .min()
            .expect("capable is non-empty")
            .1;
        assign(&mut plan, task, &robot_id, AssignmentPhase::Balanced);
    }

    Ok(plan)
}

/// The next move of the sequential dispatcher.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SequentialAction {
    Dispatch { task_id: String, robot_id: String },
    Wait,
    Done,
}

/// Dispatches tasks strictly in list order: the first task that is neither
/// finished nor in flight either goes to the smallest-id idle capable robot
/// or blocks everything behind it until one frees up.
pub fn next_sequential_action(
    tasks: &[TaskSpec],
    roster: &[RosterEntry],
    completed: &BTreeSet<String>,
    in_flight: &BTreeSet<String>,
) -> Result<SequentialAction, DispatchError> {
    let first_pending = tasks
        .iter()
        .find(|t| !completed.contains(&t.id) && !in_flight.contains(&t.id));
    let Some(task) = first_pending else {
        return Ok(if in_flight.is_empty() { SequentialAction::Done } else { SequentialAction::Wait });
    };
    let capable = capable_entries(roster, task);
    if capable.is_empty() {
        return Err(DispatchError::NoCapableRobot { task_id: task.id.clone() });
    }
    let idle = capable
        .iter()
        .filter(|e| e.is_idle())
        .map(|e| e.robot_id.clone())
        .min();
    Ok(match idle {
        Some(robot_id) => SequentialAction::Dispatch { task_id: task.id.clone(), robot_id },
        None => SequentialAction::Wait,
    })
}

/// A task dispatching algorithm as the master consumes it: an optional
/// up-front queue plan plus a per-tick order selection. Implementations are
/// pure over the snapshots they are handed.
pub trait DispatchStrategy: std::fmt::Debug {
    fn designation(&self) -> StrategyDesignation;

    /// Called once when dispatching begins.
    fn build_plan(
        &self,
        tasks: &[TaskSpec],
        roster: &[RosterEntry],
        estimates: &EstimateTable,
    ) -> Result<Option<QueuePlan>, DispatchError>;

    /// Orders to issue this tick as (task_id, robot_id) pairs. `plan` is
    /// the plan returned by [`DispatchStrategy::build_plan`], owned and
    /// retained by the caller.
    fn select_orders(
        &self,
        tasks: &[TaskSpec],
        roster: &[RosterEntry],
        completed: &BTreeSet<String>,
        in_flight: &BTreeSet<String>,
        plan: Option<&mut QueuePlan>,
    ) -> Result<Vec<(String, String)>, DispatchError>;
}

#[derive(Debug, Default)]
pub struct SequentialStrategy;

impl DispatchStrategy for SequentialStrategy {
    fn designation(&self) -> StrategyDesignation {
        StrategyDesignation::Sequential
    }

    fn build_plan(
        &self,
        _tasks: &[TaskSpec],
        _roster: &[RosterEntry],
        _estimates: &EstimateTable,
    ) -> Result<Option<QueuePlan>, DispatchError> {
        Ok(None)
    }

    fn select_orders(
        &self,
        tasks: &[TaskSpec],
        roster: &[RosterEntry],
        completed: &BTreeSet<String>,
        in_flight: &BTreeSet<String>,
        _plan: Option<&mut QueuePlan>,
    ) -> Result<Vec<(String, String)>, DispatchError> {
        let mut roster: Vec<RosterEntry> = roster.to_vec();
        let mut in_flight = in_flight.clone();
        let mut orders = Vec::new();
        loop {
            match next_sequential_action(tasks, &roster, completed, &in_flight)? {
                SequentialAction::Dispatch { task_id, robot_id } => {
                    in_flight.insert(task_id.clone());
                    for entry in roster.iter_mut().filter(|e| e.robot_id == robot_id) {
                        entry.status = RobotStatus::Busy(task_id.clone());
                    }
                    orders.push((task_id, robot_id));
                }
                SequentialAction::Wait | SequentialAction::Done => return Ok(orders),
            }
        }
    }
}

#[derive(Debug, Default)]
pub struct BalancedStrategy;

impl DispatchStrategy for BalancedStrategy {
    fn designation(&self) -> StrategyDesignation {
        StrategyDesignation::Balanced
    }

    fn build_plan(
        &self,
        tasks: &[TaskSpec],
        roster: &[RosterEntry],
        estimates: &EstimateTable,
    ) -> Result<Option<QueuePlan>, DispatchError> {
        plan_balanced(tasks, roster, estimates).map(Some)
    }

    fn select_orders(
        &self,
        _tasks: &[TaskSpec],
        roster: &[RosterEntry],
        _completed: &BTreeSet<String>,
        _in_flight: &BTreeSet<String>,
        plan: Option<&mut QueuePlan>,
    ) -> Result<Vec<(String, String)>, DispatchError> {
        let Some(plan) = plan else { return Ok(Vec::new()) };
        let mut orders = Vec::new();
        for entry in roster.iter().filter(|e| e.is_idle()) {
            if let Some(task_id) = plan.pop_front(&entry.robot_id) {
                orders.push((task_id, entry.robot_id.clone()));
            }
        }
        Ok(orders)
    }
}

type StrategyFactory = fn() -> Box<dyn DispatchStrategy>;

/// Designation-keyed factory. Registering a new algorithm is one call; the
/// master and the command line pick it up by name with no other changes.
pub struct StrategyRegistry {
    entries: Vec<(String, StrategyFactory)>,
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        StrategyRegistry { entries: Vec::new() }
    }

    pub fn with_builtins() -> Self {
        let mut registry = Self::empty();
        registry.register("sequential", || Box::new(SequentialStrategy));
        registry.register("balanced", || Box::new(BalancedStrategy));
        registry
    }

    pub fn register(&mut self, designation: impl Into<String>, factory: StrategyFactory) {
        self.entries.push((designation.into(), factory));
    }

    pub fn designations(&self) -> Vec<String> {
        self.entries.iter().map(|(name, _)| name.clone()).collect()
    }

    pub fn create(&self, designation: &str) -> Result<Box<dyn DispatchStrategy>, DispatchError> {
        self.entries
            .iter()
            .find(|(name, _)| name == designation)
            .map(|(_, factory)| factory())
            .ok_or_else(|| DispatchError::UnknownStrategy {
                given: designation.to_string(),
                valid: self.designations(),
            })
    }
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

/// Creates a built-in strategy from its designation.
pub fn create_strategy(designation: &str) -> Result<Box<dyn DispatchStrategy>, DispatchError> {
    StrategyRegistry::with_builtins().create(designation)
}
