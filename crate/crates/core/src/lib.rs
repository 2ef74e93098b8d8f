//! Deterministic discrete-time simulator for a master-coordinated fleet of
//! capability-constrained courier robots on a factory-floor grid.
//!
//! A single master agent polls robot identities over an in-process message
//! bus, dispatches courier tasks under a pluggable strategy (strictly
//! sequential, or balanced per-robot queues), and collects completion
//! notices. Robots navigate a 4-connected grid, stop and wait when their
//! scan window is blocked by a patrolling obstacle or another robot, and
//! replan around stubborn blockers a bounded number of times. Every run
//! emits a JSONL trace from which the run report is derived and audited.

pub mod agents;
pub mod dispatch;
pub mod domain;
pub mod messaging;
pub mod report;
pub mod world;

pub use agents::{
    dispatch_list, run_simulation, run_simulation_with, MasterAgent, MasterPhase, RobotAgent,
    RobotMode, RunOptions, SimError, DEFAULT_TICK_LIMIT,
};
pub use dispatch::{
    create_strategy, estimate_task_ticks, next_sequential_action, plan_balanced, DispatchError,
    DispatchStrategy, EstimateTable, QueuePlan, RosterEntry, RobotStatus, SequentialAction,
    StrategyDesignation, StrategyRegistry,
};
pub use domain::{
    expand_product, validate_scenario, Cell, DomainError, ObstacleScript, Phase, Product,
    RobotProfile, Scenario, TaskKind, TaskSpec, Tick, MASTER_ID,
};
pub use messaging::{conversation_check, BusError, Draft, Envelope, MessageBus, MsgId, Outcome, Payload};
pub use report::{
    audit_safety, compute_report, load_scenario, AgentEvent, Leg, LifecycleRecord, LoadError,
    ReportError, RunReport, SnapshotRecord, Trace, TraceRecord,
};
pub use world::{
    sense, shortest_path, shortest_path_avoiding, step_world, LaserReading, MoveResult,
    WorldError, WorldState, WorldStatics, DEFAULT_LOOKAHEAD,
};
