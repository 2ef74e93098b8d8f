//! Run trace records, JSONL encoding, scenario loading and the run report
//! derived from a trace. Everything in the report is recomputable from the
//! trace file alone; the simulator keeps no hidden accounting.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::QueuePlan;
use crate::domain::{validate_scenario, Cell, Scenario, Tick};
use crate::messaging::{Envelope, Outcome, Payload};
use crate::world::WorldStatics;

/// Which half of a courier run a robot just finished driving.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Leg {
    ToPickup,
    ToDropoff,
}

/// Agent lifecycle events, tagged by the `event` key in the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AgentEvent {
    RunStarted { strategy: String },
    RosterBuilt { roster: Vec<String> },
    PlanBuilt { plan: QueuePlan },
    OrderAccepted { task_id: String },
    LegCompleted { task_id: String, leg: Leg },
    WaitStarted { task_id: String, blocking: Cell },
    WaitEnded { task_id: String },
    Replanned { task_id: String, attempt: u32 },
    TaskFailed { task_id: String },
    ProtocolViolation { detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifecycleRecord {
    pub tick: Tick,
    pub agent: String,
    #[serde(flatten)]
    pub event: AgentEvent,
}

/// World poses at the start of a tick, emitted when snapshots are enabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub tick: Tick,
    pub robots: BTreeMap<String, Cell>,
    pub obstacles: BTreeMap<String, Cell>,
}

/// One line of the JSONL run trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TraceRecord {
    Message(Envelope),
    Snapshot(SnapshotRecord),
    Lifecycle(LifecycleRecord),
}

/// The full record stream of one run, in emission order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: TraceRecord) {
        self.records.push(record);
    }

    pub fn message(&mut self, envelope: Envelope) {
        self.push(TraceRecord::Message(envelope));
    }

    pub fn lifecycle(&mut self, tick: Tick, agent: impl Into<String>, event: AgentEvent) {
        self.push(TraceRecord::Lifecycle(LifecycleRecord { tick, agent: agent.into(), event }));
    }

    pub fn messages(&self) -> impl Iterator<Item = &Envelope> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Message(envelope) => Some(envelope),
            _ => None,
        })
    }

    pub fn lifecycle_records(&self) -> impl Iterator<Item = &LifecycleRecord> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Lifecycle(record) => Some(record),
            _ => None,
        })
    }

    pub fn snapshots(&self) -> impl Iterator<Item = &SnapshotRecord> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Snapshot(record) => Some(record),
            _ => None,
        })
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        for record in &self.records {
            serde_json::to_writer(&mut writer, record)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut bytes = Vec::new();
        self.write_jsonl(&mut bytes).expect("writing to a Vec cannot fail");
        String::from_utf8(bytes).expect("serde_json emits UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, ReportError> {
        let mut records = Vec::new();
        for (index, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| ReportError::MalformedRecord {
                index,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str(&line).map_err(|e| ReportError::MalformedRecord {
                index,
                message: e.to_string(),
            })?;
            records.push(record);
        }
        Ok(Trace { records })
    }

    pub fn from_jsonl_str(text: &str) -> Result<Self, ReportError> {
        Self::read_jsonl(text.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("malformed trace record at line {index}: {message}")]
    MalformedRecord { index: usize, message: String },
    #[error("trace has no run start record")]
    MissingRunStart,
}

/// Time and outcome accounting for one robot over the whole run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobotStats {
    pub busy_ticks: u64,
    pub wait_ticks: u64,
    pub idle_ticks: u64,
    pub tasks_completed: u64,
    pub tasks_failed: u64,
}

/// Terminal record for one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskStats {
    pub robot_id: String,
    pub elapsed_ticks: u64,
    pub outcome: Outcome,
}

/// Aggregated result of a run; serialized as the report JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: String,
    pub makespan_ticks: u64,
    pub per_robot: BTreeMap<String, RobotStats>,
    pub per_task: BTreeMap<String, TaskStats>,
    pub message_counts: BTreeMap<String, u64>,
    pub plan: Option<QueuePlan>,
}

/// Derives the run report purely from trace records.
///
/// The makespan is the tick of the final terminal order notice (the last
/// notice a task ever receives). Robot time is bucketed per tick over
/// `1..=makespan`: busy while driving or handling a task, waiting while
/// stopped for clearance, idle otherwise, so the three always sum to the
/// makespan for every rostered robot.
pub fn compute_report(trace: &Trace) -> Result<RunReport, ReportError> {
    let mut strategy = None;
    let mut roster: Vec<String> = Vec::new();
    let mut plan = None;
    for record in trace.lifecycle_records() {
        match &record.event {
            AgentEvent::RunStarted { strategy: s } if strategy.is_none() => {
                strategy = Some(s.clone())
            }
            AgentEvent::RosterBuilt { roster: r } => roster = r.clone(),
            AgentEvent::PlanBuilt { plan: p } if plan.is_none() => plan = Some(p.clone()),
            _ => {}
        }
    }
    let strategy = strategy.ok_or(ReportError::MissingRunStart)?;

    let mut message_counts: BTreeMap<String, u64> = BTreeMap::new();
    // task -> ordered (tick, robot, elapsed, outcome) notices
    let mut notices: BTreeMap<&str, Vec<(Tick, &str, u64, Outcome)>> = BTreeMap::new();
    for envelope in trace.messages() {
        *message_counts.entry(envelope.payload.type_name().to_string()).or_insert(0) += 1;
        if let Payload::OrderNotice { task_id, elapsed_ticks, outcome } = &envelope.payload {
            notices.entry(task_id).or_default().push((
                envelope.sent_at,
                envelope.from.as_str(),
                *elapsed_ticks,
                *outcome,
            ));
        }
    }

    let mut per_task = BTreeMap::new();
    let mut makespan_ticks = 0;
    let mut terminal_by_robot: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for (task_id, task_notices) in &notices {
        let &(tick, robot_id, elapsed_ticks, outcome) =
            task_notices.last().expect("entry created with one notice");
        makespan_ticks = makespan_ticks.max(tick);
        per_task.insert(
            task_id.to_string(),
            TaskStats { robot_id: robot_id.to_string(), elapsed_ticks, outcome },
        );
        let counts = terminal_by_robot.entry(robot_id).or_insert((0, 0));
        match outcome {
            Outcome::Completed => counts.0 += 1,
            Outcome::Failed => counts.1 += 1,
        }
    }

    let mut per_robot = BTreeMap::new();
    for robot_id in &roster {
        per_robot.insert(robot_id.clone(), robot_time_stats(trace, robot_id, makespan_ticks));
    }
    for (robot_id, (completed, failed)) in terminal_by_robot {
        let stats: &mut RobotStats = per_robot.entry(robot_id.to_string()).or_default();
        stats.tasks_completed = completed;
        stats.tasks_failed = failed;
    }

    Ok(RunReport { strategy, makespan_ticks, per_robot, per_task, message_counts, plan })
}

fn robot_time_stats(trace: &Trace, robot_id: &str, makespan: u64) -> RobotStats {
    enum Span {
        Idle,
        Busy(Tick),
        Wait(Tick),
    }
    let mut state = Span::Idle;
    let mut busy = 0u64;
    let mut wait = 0u64;
    for record in &trace.records {
        match record {
            TraceRecord::Lifecycle(r) if r.agent == robot_id => match r.event {
                AgentEvent::OrderAccepted { .. } => state = Span::Busy(r.tick),
                AgentEvent::WaitStarted { .. } => {
                    if let Span::Busy(start) = state {
                        busy += r.tick - start;
                    }
                    state = Span::Wait(r.tick);
                }
                AgentEvent::WaitEnded { .. } => {
                    if let Span::Wait(start) = state {
                        wait += r.tick - start;
                    }
                    state = Span::Busy(r.tick);
                }
                _ => {}
            },
            TraceRecord::Message(envelope)
                if envelope.from == robot_id
                    && matches!(envelope.payload, Payload::OrderNotice { .. }) =>
            {
                // the notice tick itself still belongs to the task
                match state {
                    Span::Busy(start) => busy += envelope.sent_at + 1 - start,
                    Span::Wait(start) => wait += envelope.sent_at + 1 - start,
                    Span::Idle => {}
                }
                state = Span::Idle;
            }
            _ => {}
        }
    }
    RobotStats {
        busy_ticks: busy,
        wait_ticks: wait,
        idle_ticks: makespan.saturating_sub(busy + wait),
        tasks_completed: 0,
        tasks_failed: 0,
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("scenario invalid:\n{}", violations.join("\n"))]
    Validation { violations: Vec<String> },
}

/// Loads and validates a scenario JSON file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, LoadError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| LoadError::Io { path: path.to_path_buf(), source })?;
    let scenario: Scenario = serde_json::from_str(&text)
        .map_err(|source| LoadError::Parse { path: path.to_path_buf(), source })?;
    let violations = validate_scenario(&scenario);
    if violations.is_empty() {
        Ok(scenario)
    } else {
        Err(LoadError::Validation { violations })
    }
}

/// Replays the snapshot records of a trace and reports every tick where
/// two entities share a cell or any entity stands on a wall or outside the
/// grid. An empty result means the motion safety invariant held.
pub fn audit_safety(statics: &WorldStatics, trace: &Trace) -> Vec<String> {
    let mut violations = Vec::new();
    for snapshot in trace.snapshots() {
        let mut seen: BTreeMap<Cell, &str> = BTreeMap::new();
        let entities = snapshot
            .robots
            .iter()
            .chain(snapshot.obstacles.iter());
        for (id, &cell) in entities {
            if !statics.in_bounds(cell) {
                violations.push(format!("tick {}: {id} out of bounds at {cell}", snapshot.tick));
            } else if statics.walls.contains(&cell) {
                violations.push(format!("tick {}: {id} on wall {cell}", snapshot.tick));
            }
            if let Some(other) = seen.insert(cell, id) {
                violations.push(format!(
                    "tick {}: {id} and {other} share cell {cell}",
                    snapshot.tick
                ));
            }
        }
    }
    violations
}
