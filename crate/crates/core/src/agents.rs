//! Master and robot agent state machines and the deterministic scheduler
//! that drives them: one master tick, one tick per robot in id order, one
//! world step, repeated until every task has a terminal notice.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::dispatch::{
    create_strategy, DispatchError, DispatchStrategy, EstimateTable, QueuePlan, RobotStatus,
    RosterEntry,
};
use crate::domain::{
    expand_product, validate_scenario, Cell, Phase, RobotProfile, Scenario, TaskSpec, Tick,
    MASTER_ID,
};
use crate::messaging::{BusError, Draft, MessageBus, MsgId, Outcome, Payload};
use crate::report::{
    compute_report, AgentEvent, Leg, ReportError, RunReport, SnapshotRecord, Trace, TraceRecord,
};
use crate::world::{
    sense, shortest_path, shortest_path_avoiding, step_world, WorldError, WorldState,
    WorldStatics, DEFAULT_LOOKAHEAD,
};

/// Ticks a run may take before it is declared stuck.
pub const DEFAULT_TICK_LIMIT: u64 = 100_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario invalid:\n{}", violations.join("\n"))]
    ValidationFailed { violations: Vec<String> },
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("run exceeded the tick limit of {limit}")]
    TimedOut { limit: u64 },
}

/// Where the master is in its lifecycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MasterPhase {
    IdentityPolling { deadline: Tick },
    Dispatching,
    Finished,
}

/// One dispatched order and, once noticed, its outcome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderRecord {
    pub task_id: String,
    pub robot_id: String,
    pub sent_at: Tick,
    pub msg_id: MsgId,
    pub noticed_at: Option<Tick>,
    pub elapsed_ticks: Option<u64>,
    pub outcome: Option<Outcome>,
}

/// The coordinating agent. It polls robot identities once at startup,
/// builds the dispatch plan for strategies that want one, then issues
/// orders and collects notices until every task is terminal.
pub struct MasterAgent {
    id: String,
    strategy: Box<dyn DispatchStrategy>,
    known_robots: Vec<String>,
    profiles: BTreeMap<String, RobotProfile>,
    statics: WorldStatics,
    identity_timeout_ticks: u64,
    phase: MasterPhase,
    roster: Vec<RosterEntry>,
    /// Dispatch order; a task failed once is retried from the head.
    tasks: Vec<TaskSpec>,
    in_flight: BTreeSet<String>,
    /// Tasks with a terminal outcome, completed or permanently failed.
    completed: BTreeSet<String>,
    retried: BTreeSet<String>,
    plan: Option<QueuePlan>,
    order_log: Vec<OrderRecord>,
}

impl MasterAgent {
    pub fn new(scenario: &Scenario, strategy: Box<dyn DispatchStrategy>, tasks: Vec<TaskSpec>) -> Self {
        let mut known_robots: Vec<String> = scenario.robots.iter().map(|r| r.id.clone()).collect();
        known_robots.sort();
        MasterAgent {
            id: MASTER_ID.to_string(),
            strategy,
            known_robots,
            profiles: scenario.robots.iter().map(|r| (r.id.clone(), r.clone())).collect(),
            statics: WorldStatics::from_scenario(scenario),
            identity_timeout_ticks: scenario.identity_timeout_ticks,
            phase: MasterPhase::IdentityPolling { deadline: 0 },
            roster: Vec::new(),
            tasks,
            in_flight: BTreeSet::new(),
            completed: BTreeSet::new(),
            retried: BTreeSet::new(),
            plan: None,
            order_log: Vec::new(),
        }
    }

    pub fn phase(&self) -> &MasterPhase {
        &self.phase
    }

    pub fn roster(&self) -> &[RosterEntry] {
        &self.roster
    }

    pub fn plan(&self) -> Option<&QueuePlan> {
        self.plan.as_ref()
    }

    pub fn order_log(&self) -> &[OrderRecord] {
        &self.order_log
    }

    /// Sends an identity check to every known robot and opens the polling
    /// window. With no robots to poll, dispatching starts immediately.
    pub fn startup(
        &mut self,
        bus: &mut MessageBus,
        trace: &mut Trace,
        now: Tick,
    ) -> Result<(), SimError> {
        for robot_id in self.known_robots.clone() {
            let envelope = bus.send(Draft {
                from: self.id.clone(),
                to: robot_id,
                correlates: None,
                payload: Payload::IdentityCheck {},
            })?;
            trace.message(envelope);
        }
        if self.known_robots.is_empty() {
            self.enter_dispatching(trace, now)?;
        } else {
            self.phase = MasterPhase::IdentityPolling {
                deadline: now + self.identity_timeout_ticks,
            };
        }
        Ok(())
    }

    pub fn tick(&mut self, bus: &mut MessageBus, trace: &mut Trace, now: Tick) -> Result<(), SimError> {
        match self.phase {
            MasterPhase::IdentityPolling { deadline } => {
                self.collect_identities(bus)?;
                if now >= deadline {
                    self.enter_dispatching(trace, now)?;
                    self.dispatch(bus, trace, now)?;
                }
            }
            MasterPhase::Dispatching => {
                self.collect_notices(bus, now)?;
                self.dispatch(bus, trace, now)?;
            }
            MasterPhase::Finished => {}
        }
        Ok(())
    }

    fn collect_identities(&mut self, bus: &mut MessageBus) -> Result<(), SimError> {
        for envelope in bus.drain_mailbox(&self.id)? {
            if let Payload::Identity { robot_id, capabilities } = envelope.payload {
                if self.roster.iter().all(|e| e.robot_id != robot_id) {
                    self.roster.push(RosterEntry {
                        robot_id,
                        capabilities,
                        status: RobotStatus::Idle,
                    });
                    self.roster.sort_by(|a, b| a.robot_id.cmp(&b.robot_id));
                }
            }
        }
        Ok(())
    }

    fn enter_dispatching(&mut self, trace: &mut Trace, now: Tick) -> Result<(), SimError> {
        trace.lifecycle(
            now,
            &self.id,
            AgentEvent::RosterBuilt {
                roster: self.roster.iter().map(|e| e.robot_id.clone()).collect(),
            },
        );
        let rostered: Vec<RobotProfile> = self
            .roster
            .iter()
            .filter_map(|e| self.profiles.get(&e.robot_id).cloned())
            .collect();
        let estimates = EstimateTable::compute(&self.tasks, &rostered, &self.statics)?;
        self.plan = self.strategy.build_plan(&self.tasks, &self.roster, &estimates)?;
        if let Some(plan) = &self.plan {
            trace.lifecycle(now, &self.id, AgentEvent::PlanBuilt { plan: plan.clone() });
        }
        self.phase = MasterPhase::Dispatching;
        Ok(())
    }

    fn collect_notices(&mut self, bus: &mut MessageBus, _now: Tick) -> Result<(), SimError> {
        for envelope in bus.drain_mailbox(&self.id)? {
            let Payload::OrderNotice { task_id, elapsed_ticks, outcome } = envelope.payload else {
                continue;
            };
            let robot_id = envelope.from;
            for entry in self.roster.iter_mut().filter(|e| e.robot_id == robot_id) {
                entry.status = RobotStatus::Idle;
            }
            self.in_flight.remove(&task_id);
            if let Some(record) = self
                .order_log
                .iter_mut()
                .rev()
                .find(|r| r.task_id == task_id && r.robot_id == robot_id && r.noticed_at.is_none())
            {
                record.noticed_at = Some(envelope.sent_at);
                record.elapsed_ticks = Some(elapsed_ticks);
                record.outcome = Some(outcome);
            }
            match outcome {
                Outcome::Completed => {
                    self.completed.insert(task_id);
                }
                Outcome::Failed => {
                    if self.retried.insert(task_id.clone()) {
                        // one retry: back to the head of the queue it came from
                        match &mut self.plan {
                            Some(plan) => plan.push_front(&robot_id, task_id),
                            None => {
                                if let Some(pos) = self.tasks.iter().position(|t| t.id == task_id) {
                                    let task = self.tasks.remove(pos);
                                    self.tasks.insert(0, task);
                                }
                            }
                        }
                    } else {
                        // second failure is permanent
                        self.completed.insert(task_id);
                    }
                }
            }
        }
        Ok(())
    }

    fn dispatch(&mut self, bus: &mut MessageBus, trace: &mut Trace, now: Tick) -> Result<(), SimError> {
        let orders = self.strategy.select_orders(
            &self.tasks,
            &self.roster,
            &self.completed,
            &self.in_flight,
            self.plan.as_mut(),
        )?;
        for (task_id, robot_id) in orders {
            let envelope = bus.send(Draft {
                from: self.id.clone(),
                to: robot_id.clone(),
                correlates: None,
                payload: Payload::Order { task_id: task_id.clone() },
            })?;
            trace.message(envelope.clone());
            self.in_flight.insert(task_id.clone());
            for entry in self.roster.iter_mut().filter(|e| e.robot_id == robot_id) {
                entry.status = RobotStatus::Busy(task_id.clone());
            }
            self.order_log.push(OrderRecord {
                task_id,
                robot_id,
                sent_at: now,
                msg_id: envelope.msg_id,
                noticed_at: None,
                elapsed_ticks: None,
                outcome: None,
            });
        }
        if self.in_flight.is_empty() && self.completed.len() == self.tasks.len() {
            self.phase = MasterPhase::Finished;
        }
        Ok(())
    }
}

/// What a robot is currently doing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RobotMode {
    Idle,
    Navigating {
        leg: Leg,
        path: Vec<Cell>,
        path_index: usize,
    },
    Handling {
        leg: Leg,
        remaining: u64,
    },
    WaitingForClearance {
        leg: Leg,
        path: Vec<Cell>,
        path_index: usize,
        remaining_wait: u64,
    },
}

/// A mobile courier agent: reacts to orders from the master, navigates
/// autonomously, stops and waits when its scan window is blocked, replans
/// around a stubborn blocker a bounded number of times, and reports the
/// total time each task took.
pub struct RobotAgent {
    profile: RobotProfile,
    master_id: String,
    tasks: BTreeMap<String, TaskSpec>,
    obstacle_wait_ticks: u64,
    replan_limit: u32,
    lookahead: usize,
    mode: RobotMode,
    current_task: Option<TaskSpec>,
    task_started_at: Option<Tick>,
    accepted_order: Option<MsgId>,
    replans_used: u32,
}

impl RobotAgent {
    pub fn new(profile: RobotProfile, scenario: &Scenario) -> Self {
        RobotAgent {
            profile,
            master_id: MASTER_ID.to_string(),
            tasks: scenario.tasks.iter().map(|t| (t.id.clone(), t.clone())).collect(),
            obstacle_wait_ticks: scenario.obstacle_wait_ticks,
            replan_limit: scenario.replan_limit,
            lookahead: DEFAULT_LOOKAHEAD,
            mode: RobotMode::Idle,
            current_task: None,
            task_started_at: None,
            accepted_order: None,
            replans_used: 0,
        }
    }

    pub fn id(&self) -> &str {
        &self.profile.id
    }

    pub fn is_available(&self) -> bool {
        self.profile.available
    }

    pub fn mode(&self) -> &RobotMode {
        &self.mode
    }

    /// Processes mail and returns the movement request for this tick: the
    /// next path cells when driving (up to `speed` of them), otherwise the
    /// current cell to stay put.
    pub fn tick(
        &mut self,
        bus: &mut MessageBus,
        world: &WorldState,
        trace: &mut Trace,
        now: Tick,
    ) -> Result<Vec<Cell>, SimError> {
        let mail = bus.drain_mailbox(&self.profile.id)?;
        if !self.profile.available {
            // off the floor for maintenance: reply to nothing
            return Ok(Vec::new());
        }
        for envelope in mail {
            match envelope.payload {
                Payload::IdentityCheck {} => {
                    let reply = bus.send(Draft {
                        from: self.profile.id.clone(),
                        to: envelope.from.clone(),
                        correlates: Some(envelope.msg_id),
                        payload: Payload::Identity {
                            robot_id: self.profile.id.clone(),
                            capabilities: self.profile.capabilities.clone(),
                        },
                    })?;
                    trace.message(reply);
                }
                Payload::Order { ref task_id } => {
                    if self.mode == RobotMode::Idle && self.current_task.is_none() {
                        self.accept_order(task_id, envelope.msg_id, bus, world, trace, now)?;
                    } else {
                        trace.lifecycle(
                            now,
                            &self.profile.id,
                            AgentEvent::ProtocolViolation {
                                detail: format!("Order for {task_id} received while not idle"),
                            },
                        );
                    }
                }
                _ => {
                    trace.lifecycle(
                        now,
                        &self.profile.id,
                        AgentEvent::ProtocolViolation {
                            detail: format!(
                                "unexpected {} from {}",
                                envelope.payload.type_name(),
                                envelope.from
                            ),
                        },
                    );
                }
            }
        }
        self.act(bus, world, trace, now)
    }

    fn accept_order(
        &mut self,
        task_id: &str,
        order_msg_id: MsgId,
        bus: &mut MessageBus,
        world: &WorldState,
        trace: &mut Trace,
        now: Tick,
    ) -> Result<(), SimError> {
        let Some(task) = self.tasks.get(task_id).cloned() else {
            trace.lifecycle(
                now,
                &self.profile.id,
                AgentEvent::ProtocolViolation { detail: format!("order for unknown task {task_id}") },
            );
            return Ok(());
        };
        self.current_task = Some(task.clone());
        self.task_started_at = Some(now);
        self.accepted_order = Some(order_msg_id);
        self.replans_used = 0;
        trace.lifecycle(now, &self.profile.id, AgentEvent::OrderAccepted { task_id: task.id.clone() });
        let pose = world.robot_pose(&self.profile.id).expect("available robot is in the world");
        match shortest_path(&world.statics, pose, task.pickup) {
            Ok(path) => self.mode = RobotMode::Navigating { leg: Leg::ToPickup, path, path_index: 0 },
            Err(_) => self.fail_current_task(bus, trace, now)?,
        }
        Ok(())
    }

    fn act(
        &mut self,
        bus: &mut MessageBus,
        world: &WorldState,
        trace: &mut Trace,
        now: Tick,
    ) -> Result<Vec<Cell>, SimError> {
        let Some(pose) = world.robot_pose(&self.profile.id) else {
            return Ok(Vec::new());
        };
        match std::mem::replace(&mut self.mode, RobotMode::Idle) {
            RobotMode::Idle => Ok(vec![pose]),
            RobotMode::Handling { leg, remaining } => {
                self.handle(leg, remaining, pose, bus, world, trace, now)?;
                Ok(vec![pose])
            }
            RobotMode::Navigating { leg, path, path_index } => {
                self.navigate(leg, path, path_index, pose, bus, world, trace, now)
            }
            RobotMode::WaitingForClearance { leg, path, path_index, remaining_wait } => {
                self.wait_for_clearance(leg, path, path_index, remaining_wait, pose, bus, world, trace, now)
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn navigate(
        &mut self,
        leg: Leg,
        path: Vec<Cell>,
        mut path_index: usize,
        pose: Cell,
        bus: &mut MessageBus,
        world: &WorldState,
        trace: &mut Trace,
        now: Tick,
    ) -> Result<Vec<Cell>, SimError> {
        // advance the cursor past the cells covered by the last world step
        for (offset, cell) in path[path_index..].iter().enumerate() {
            if *cell == pose {
                path_index += offset + 1;
                break;
            }
        }
        let task = self.current_task.clone().expect("navigating implies a task");
        if path_index >= path.len() {
            trace.lifecycle(
                now,
                &self.profile.id,
                AgentEvent::LegCompleted { task_id: task.id.clone(), leg },
            );
            self.handle(leg, task.handling_ticks, pose, bus, world, trace, now)?;
            return Ok(vec![pose]);
        }
        let remaining = &path[path_index..];
        let reading = sense(world, &self.profile.id, remaining, self.lookahead)?;
        if let Some(blocking) = reading.blocking_cell {
            trace.lifecycle(
                now,
                &self.profile.id,
                AgentEvent::WaitStarted { task_id: task.id.clone(), blocking },
            );
            self.mode = RobotMode::WaitingForClearance {
                leg,
                path,
                path_index,
                remaining_wait: self.obstacle_wait_ticks,
            };
            return Ok(vec![pose]);
        }
        let stride = remaining.len().min(self.profile.speed.max(1) as usize);
        let request = remaining[..stride].to_vec();
        self.mode = RobotMode::Navigating { leg, path, path_index };
        Ok(request)
    }

    /// One tick of handling at a stop; entering a stop counts as its first
    /// handling tick.
    #[allow(clippy::too_many_arguments)]
    fn handle(
        &mut self,
        leg: Leg,
        remaining: u64,
        pose: Cell,
        bus: &mut MessageBus,
        world: &WorldState,
        trace: &mut Trace,
        now: Tick,
    ) -> Result<(), SimError> {
        let remaining = remaining.saturating_sub(1);
        if remaining > 0 {
            self.mode = RobotMode::Handling { leg, remaining };
            return Ok(());
        }
        match leg {
            Leg::ToPickup => {
                let task = self.current_task.clone().expect("handling implies a task");
                match shortest_path(&world.statics, pose, task.dropoff) {
                    Ok(path) => {
                        self.mode = RobotMode::Navigating { leg: Leg::ToDropoff, path, path_index: 0 };
                    }
                    Err(_) => self.fail_current_task(bus, trace, now)?,
                }
            }
            Leg::ToDropoff => self.complete_current_task(bus, trace, now)?,
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn wait_for_clearance(
        &mut self,
        leg: Leg,
        path: Vec<Cell>,
        path_index: usize,
        remaining_wait: u64,
        pose: Cell,
        bus: &mut MessageBus,
        world: &WorldState,
        trace: &mut Trace,
        now: Tick,
    ) -> Result<Vec<Cell>, SimError> {
        let task = self.current_task.clone().expect("waiting implies a task");
        let reading = sense(world, &self.profile.id, &path[path_index..], self.lookahead)?;
        let Some(blocking) = reading.blocking_cell else {
            trace.lifecycle(now, &self.profile.id, AgentEvent::WaitEnded { task_id: task.id });
            return self.navigate(leg, path, path_index, pose, bus, world, trace, now);
        };
        let remaining_wait = remaining_wait.saturating_sub(1);
        if remaining_wait > 0 {
            self.mode = RobotMode::WaitingForClearance { leg, path, path_index, remaining_wait };
            return Ok(vec![pose]);
        }
        // waited long enough; replan around the blocker or give up
        if self.replans_used >= self.replan_limit {
            self.fail_current_task(bus, trace, now)?;
            return Ok(vec![pose]);
        }
        self.replans_used += 1;
        trace.lifecycle(
            now,
            &self.profile.id,
            AgentEvent::Replanned { task_id: task.id.clone(), attempt: self.replans_used },
        );
        let target = match leg {
            Leg::ToPickup => task.pickup,
            Leg::ToDropoff => task.dropoff,
        };
        let blocked = BTreeSet::from([blocking]);
        match shortest_path_avoiding(&world.statics, pose, target, &blocked) {
            Ok(new_path) => {
                trace.lifecycle(now, &self.profile.id, AgentEvent::WaitEnded { task_id: task.id });
                self.mode = RobotMode::Navigating { leg, path: new_path, path_index: 0 };
            }
            Err(_) => {
                // no detour yet; wait another round for the blocker to move
                self.mode = RobotMode::WaitingForClearance {
                    leg,
                    path,
                    path_index,
                    remaining_wait: self.obstacle_wait_ticks,
                };
            }
        }
        Ok(vec![pose])
    }

    fn elapsed_since_start(&self, now: Tick) -> u64 {
        now - self.task_started_at.expect("task in progress") + 1
    }

    fn complete_current_task(
        &mut self,
        bus: &mut MessageBus,
        trace: &mut Trace,
        now: Tick,
    ) -> Result<(), SimError> {
        let task = self.current_task.take().expect("task in progress");
        let notice = bus.send(Draft {
            from: self.profile.id.clone(),
            to: self.master_id.clone(),
            correlates: self.accepted_order,
            payload: Payload::OrderNotice {
                task_id: task.id,
                elapsed_ticks: self.elapsed_since_start(now),
                outcome: Outcome::Completed,
            },
        })?;
        trace.message(notice);
        self.clear_task_state();
        Ok(())
    }

    fn fail_current_task(
        &mut self,
        bus: &mut MessageBus,
        trace: &mut Trace,
        now: Tick,
    ) -> Result<(), SimError> {
        let task = self.current_task.take().expect("task in progress");
        trace.lifecycle(now, &self.profile.id, AgentEvent::TaskFailed { task_id: task.id.clone() });
        let notice = bus.send(Draft {
            from: self.profile.id.clone(),
            to: self.master_id.clone(),
            correlates: self.accepted_order,
            payload: Payload::OrderNotice {
                task_id: task.id,
                elapsed_ticks: self.elapsed_since_start(now),
                outcome: Outcome::Failed,
            },
        })?;
        trace.message(notice);
        self.clear_task_state();
        Ok(())
    }

    fn clear_task_state(&mut self) {
        self.mode = RobotMode::Idle;
        self.current_task = None;
        self.task_started_at = None;
        self.accepted_order = None;
        self.replans_used = 0;
    }
}

/// Knobs for a run that are not part of the scenario itself.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub tick_limit: u64,
    /// Append a world snapshot record to the trace every tick.
    pub snapshots: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { tick_limit: DEFAULT_TICK_LIMIT, snapshots: false }
    }
}

fn snapshot(world: &WorldState) -> TraceRecord {
    TraceRecord::Snapshot(SnapshotRecord {
        tick: world.tick,
        robots: world.robot_poses().clone(),
        obstacles: world.obstacle_poses().clone(),
    })
}

/// The ordered task list a run dispatches: every product expanded, setup
/// then cleanup, in product order, first occurrence winning on repeats.
pub fn dispatch_list(scenario: &Scenario) -> Result<Vec<TaskSpec>, SimError> {
    let mut seen = BTreeSet::new();
    let mut list = Vec::new();
    for product in &scenario.products {
        let expanded = expand_product(scenario, &product.name, Phase::Both)
            .expect("validated scenario expands its own products");
        for task in expanded {
            if seen.insert(task.id.clone()) {
                list.push(task);
            }
        }
    }
    Ok(list)
}

/// Runs a whole scenario under the named strategy with default options.
pub fn run_simulation(scenario: &Scenario, designation: &str) -> Result<(Trace, RunReport), SimError> {
    run_simulation_with(scenario, designation, RunOptions::default())
}

/// Runs a whole scenario: validates it, wires up the bus, world and agents,
/// and loops master tick, robot ticks in id order, world step, until the
/// master is finished or the tick limit trips.
pub fn run_simulation_with(
    scenario: &Scenario,
    designation: &str,
    options: RunOptions,
) -> Result<(Trace, RunReport), SimError> {
    let violations = validate_scenario(scenario);
    if !violations.is_empty() {
        return Err(SimError::ValidationFailed { violations });
    }
    let strategy = create_strategy(designation)?;
    let tasks = dispatch_list(scenario)?;

    let mut bus = MessageBus::new();
    bus.register(MASTER_ID);
    for robot in &scenario.robots {
        bus.register(&robot.id);
    }
    let mut world = WorldState::from_scenario(scenario);
    let mut master = MasterAgent::new(scenario, strategy, tasks);
    let mut robots: BTreeMap<String, RobotAgent> = scenario
        .robots
        .iter()
        .map(|r| (r.id.clone(), RobotAgent::new(r.clone(), scenario)))
        .collect();

    let mut trace = Trace::new();
    trace.lifecycle(0, MASTER_ID, AgentEvent::RunStarted { strategy: designation.to_string() });
    bus.set_now(0);
    master.startup(&mut bus, &mut trace, 0)?;
    if options.snapshots {
        trace.push(snapshot(&world));
    }

    let mut now: Tick = 0;
    loop {
        bus.set_now(now);
        master.tick(&mut bus, &mut trace, now)?;
        if master.phase() == &MasterPhase::Finished {
            break;
        }
        let mut requests: BTreeMap<String, Vec<Cell>> = BTreeMap::new();
        for (robot_id, robot) in robots.iter_mut() {
            let request = robot.tick(&mut bus, &world, &mut trace, now)?;
            if robot.is_available() {
                requests.insert(robot_id.clone(), request);
            }
        }
        step_world(&mut world, &requests)?;
        now += 1;
        if options.snapshots {
            trace.push(snapshot(&world));
        }
        if now > options.tick_limit {
            return Err(SimError::TimedOut { limit: options.tick_limit });
        }
    }

    let report = compute_report(&trace)?;
    Ok((trace, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::TaskKind;

    fn straight_run_scenario() -> Scenario {
        Scenario {
            grid_width: 4,
            grid_height: 4,
            walls: BTreeSet::new(),
            robots: vec![RobotProfile {
                id: "r1".into(),
                capabilities: [TaskKind::Material].into_iter().collect(),
                speed: 1,
                home: Cell::new(0, 0),
                available: true,
            }],
            tasks: vec![TaskSpec {
                id: "T".into(),
                kind: TaskKind::Material,
                pickup: Cell::new(0, 3),
                dropoff: Cell::new(3, 3),
                handling_ticks: 2,
            }],
            products: vec![crate::domain::Product {
                name: "P".into(),
                setup: vec!["T".into()],
                cleanup: vec![],
            }],
            obstacles: vec![],
            identity_timeout_ticks: 2,
            obstacle_wait_ticks: 3,
            replan_limit: 2,
            seed: 1,
        }
    }

    #[test]
    fn startup_checks_every_known_robot() {
        let scenario = straight_run_scenario();
        let mut scenario2 = scenario.clone();
        scenario2.robots.push(RobotProfile {
            id: "r2".into(),
            capabilities: [TaskKind::Tool].into_iter().collect(),
            speed: 1,
            home: Cell::new(3, 0),
            available: true,
        });
        let mut bus = MessageBus::new();
        bus.register(MASTER_ID);
        bus.register("r1");
        bus.register("r2");
        let mut trace = Trace::new();
        let mut master =
            MasterAgent::new(&scenario2, create_strategy("sequential").unwrap(), vec![]);
        master.startup(&mut bus, &mut trace, 0).unwrap();
        let checks: Vec<&str> = trace
            .messages()
            .filter(|e| matches!(e.payload, Payload::IdentityCheck {}))
            .map(|e| e.to.as_str())
            .collect();
        assert_eq!(checks, ["r1", "r2"]);
        assert_eq!(master.phase(), &MasterPhase::IdentityPolling { deadline: 2 });
    }

    #[test]
    fn startup_without_robots_goes_straight_to_dispatching() {
        let mut scenario = straight_run_scenario();
        scenario.robots.clear();
        let mut bus = MessageBus::new();
        bus.register(MASTER_ID);
        let mut trace = Trace::new();
        let tasks = scenario.tasks.clone();
        let mut master = MasterAgent::new(&scenario, create_strategy("sequential").unwrap(), tasks);
        master.startup(&mut bus, &mut trace, 0).unwrap();
        assert_eq!(master.phase(), &MasterPhase::Dispatching);
        let err = master.tick(&mut bus, &mut trace, 0).unwrap_err();
        assert!(matches!(
            err,
            SimError::Dispatch(DispatchError::NoCapableRobot { .. })
        ));
    }

    #[test]
    fn unobstructed_task_takes_ten_ticks() {
        // 3 moves + 2 handling + 3 moves + 2 handling
        let scenario = straight_run_scenario();
        let (trace, report) = run_simulation(&scenario, "sequential").unwrap();
        assert_eq!(report.per_task["T"].elapsed_ticks, 10);
        assert_eq!(report.per_task["T"].outcome, Outcome::Completed);
        assert_eq!(crate::messaging::conversation_check(
            &trace.messages().cloned().collect::<Vec<_>>()
        ), Vec::<String>::new());
    }

    #[test]
    fn idle_robot_with_no_mail_requests_its_own_cell() {
        let scenario = straight_run_scenario();
        let world = WorldState::from_scenario(&scenario);
        let mut bus = MessageBus::new();
        bus.register("r1");
        bus.register(MASTER_ID);
        let mut robot = RobotAgent::new(scenario.robots[0].clone(), &scenario);
        let mut trace = Trace::new();
        let request = robot.tick(&mut bus, &world, &mut trace, 0).unwrap();
        assert_eq!(request, vec![Cell::new(0, 0)]);
        assert_eq!(robot.mode(), &RobotMode::Idle);
    }

    #[test]
    fn unavailable_robot_stays_silent() {
        let mut scenario = straight_run_scenario();
        scenario.robots[0].available = false;
        let world = WorldState::from_scenario(&scenario);
        let mut bus = MessageBus::new();
        bus.register("r1");
        bus.register(MASTER_ID);
        bus.send(Draft {
            from: MASTER_ID.into(),
            to: "r1".into(),
            correlates: None,
            payload: Payload::IdentityCheck {},
        })
        .unwrap();
        let mut robot = RobotAgent::new(scenario.robots[0].clone(), &scenario);
        let mut trace = Trace::new();
        let request = robot.tick(&mut bus, &world, &mut trace, 0).unwrap();
        assert_eq!(request, Vec::<Cell>::new());
        assert_eq!(bus.drain_mailbox(MASTER_ID).unwrap(), vec![]);
    }

    #[test]
    fn order_while_busy_is_a_protocol_violation() {
        let scenario = straight_run_scenario();
        let world = WorldState::from_scenario(&scenario);
        let mut bus = MessageBus::new();
        bus.register("r1");
        bus.register(MASTER_ID);
        let mut robot = RobotAgent::new(scenario.robots[0].clone(), &scenario);
        let mut trace = Trace::new();
        for _ in 0..2 {
            bus.send(Draft {
                from: MASTER_ID.into(),
                to: "r1".into(),
                correlates: None,
                payload: Payload::Order { task_id: "T".into() },
            })
            .unwrap();
        }
        robot.tick(&mut bus, &world, &mut trace, 0).unwrap();
        assert!(trace.lifecycle_records().any(|r| matches!(
            &r.event,
            AgentEvent::ProtocolViolation { detail } if detail.contains("not idle")
        )));
        // the second order was dropped: still working on the first
        assert!(robot.current_task.is_some());
    }

    #[test]
    fn scenario_without_capable_robot_fails_the_run() {
        let mut scenario = straight_run_scenario();
        scenario.robots[0].capabilities = [TaskKind::Tool].into_iter().collect();
        let err = run_simulation(&scenario, "balanced").unwrap_err();
        assert!(matches!(
            err,
            SimError::Dispatch(DispatchError::NoCapableRobot { .. })
        ));
    }

    #[test]
    fn invalid_scenario_is_rejected_before_running() {
        let mut scenario = straight_run_scenario();
        scenario.robots.clear();
        let err = run_simulation(&scenario, "sequential").unwrap_err();
        assert!(matches!(err, SimError::ValidationFailed { .. }));
    }
}
