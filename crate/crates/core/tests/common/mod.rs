//! Shared helpers for integration tests: bundled scenario loading, an
//! independent BFS distance oracle, a deterministic random scenario
//! generator, and trace auditors used across suites.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shopfloor_core::{
    validate_scenario, AgentEvent, Cell, Envelope, ObstacleScript, Payload, Product, RobotProfile,
    Scenario, TaskKind, TaskSpec, Trace, TraceRecord, WorldStatics,
};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

pub fn load_bundled(name: &str) -> Scenario {
    shopfloor_core::load_scenario(scenario_path(name)).expect("bundled scenario loads")
}

/// Breadth-first distance, independent of the library's A* implementation.
pub fn bfs_distance(statics: &WorldStatics, start: Cell, goal: Cell) -> Option<u32> {
    if !statics.is_free(start) || !statics.is_free(goal) {
        return None;
    }
    let mut dist: BTreeMap<Cell, u32> = BTreeMap::new();
    dist.insert(start, 0);
    let mut queue = VecDeque::from([start]);
    while let Some(cell) = queue.pop_front() {
        let d = dist[&cell];
        if cell == goal {
            return Some(d);
        }
        let candidates = [
            (cell.x, cell.y.wrapping_sub(1)),
            (cell.x + 1, cell.y),
            (cell.x, cell.y + 1),
            (cell.x.wrapping_sub(1), cell.y),
        ];
        for (x, y) in candidates {
            let next = Cell::new(x, y);
            if statics.is_free(next) && !dist.contains_key(&next) {
                dist.insert(next, d + 1);
                queue.push_back(next);
            }
        }
    }
    None
}

const KINDS: [TaskKind; 3] = [TaskKind::Material, TaskKind::Tool, TaskKind::FinishedProduct];

/// Deterministic random scenario: 2-6 robots with random capabilities
/// (full kind coverage guaranteed), 5-40 tasks on distinct free cells, and
/// `min_obstacles..=5` patrolling obstacles walking random loops.
pub fn random_scenario(seed: u64, min_obstacles: usize) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        if let Some(scenario) = try_generate(&mut rng, min_obstacles) {
            let violations = validate_scenario(&scenario);
            assert!(violations.is_empty(), "generator produced invalid scenario: {violations:?}");
            return scenario;
        }
    }
}

fn try_generate(rng: &mut ChaCha8Rng, min_obstacles: usize) -> Option<Scenario> {
    let width = rng.gen_range(8..=13u32);
    let height = rng.gen_range(8..=13u32);
    let mut walls = BTreeSet::new();
    for x in 0..width {
        for y in 0..height {
            if rng.gen_bool(0.12) {
                walls.insert(Cell::new(x, y));
            }
        }
    }
    let statics = WorldStatics::new(width, height, walls.clone());

    // largest connected free component
    let mut component: Vec<Cell> = Vec::new();
    let mut seen: BTreeSet<Cell> = BTreeSet::new();
    for x in 0..width {
        for y in 0..height {
            let start = Cell::new(x, y);
            if !statics.is_free(start) || seen.contains(&start) {
                continue;
            }
            let mut group = vec![start];
            let mut queue = VecDeque::from([start]);
            seen.insert(start);
            while let Some(cell) = queue.pop_front() {
                for next in statics.neighbors(cell) {
                    if seen.insert(next) {
                        group.push(next);
                        queue.push_back(next);
                    }
                }
            }
            if group.len() > component.len() {
                component = group;
            }
        }
    }

    let robot_count = rng.gen_range(2..=6usize);
    let obstacle_count = rng.gen_range(min_obstacles..=5usize);
    let mut task_count = rng.gen_range(5..=40usize);
    let available = component.len().saturating_sub(robot_count + obstacle_count + 4);
    task_count = task_count.min(available / 2);
    if task_count < 5 {
        return None;
    }

    let mut pool = component.clone();
    pool.shuffle(rng);
    let take = |pool: &mut Vec<Cell>| pool.pop().expect("pool sized above");

    let mut robots = Vec::new();
    for i in 0..robot_count {
        let caps: BTreeSet<TaskKind> = KINDS
            .iter()
            .copied()
            .filter(|_| rng.gen_bool(0.5))
            .collect();
        robots.push(RobotProfile {
            id: format!("robot{i}"),
            capabilities: caps,
            speed: if rng.gen_bool(0.2) { 2 } else { 1 },
            home: take(&mut pool),
            available: true,
        });
    }
    // full kind coverage: every kind has at least one capable robot
    for kind in KINDS {
        if !robots.iter().any(|r| r.capabilities.contains(&kind)) {
            let which = rng.gen_range(0..robot_count);
            robots[which].capabilities.insert(kind);
        }
    }
    for robot in &mut robots {
        if robot.capabilities.is_empty() {
            robot.capabilities.insert(KINDS[rng.gen_range(0..3)]);
        }
    }

    let mut tasks = Vec::new();
    for i in 0..task_count {
        tasks.push(TaskSpec {
            id: format!("task{i:02}"),
            kind: KINDS[rng.gen_range(0..3)],
            pickup: take(&mut pool),
            dropoff: take(&mut pool),
            handling_ticks: rng.gen_range(0..=3),
        });
    }

    let mut obstacles = Vec::new();
    for i in 0..obstacle_count {
        let start = take(&mut pool);
        let mut walk = vec![start];
        let mut cursor = start;
        for _ in 0..rng.gen_range(3..=8usize) {
            let neighbors: Vec<Cell> = statics.neighbors(cursor).collect();
            if neighbors.is_empty() {
                break;
            }
            cursor = neighbors[rng.gen_range(0..neighbors.len())];
            walk.push(cursor);
        }
        // out-and-back loop keeps consecutive waypoints adjacent
        let mut waypoints = walk.clone();
        waypoints.extend(walk.iter().rev().skip(1).take(walk.len().saturating_sub(2)).copied());
        // dwell >= 1: an obstacle that never pauses can oscillate in
        // lockstep with a robot's sense-then-move cycle and starve it
        obstacles.push(ObstacleScript {
            id: format!("op{i}"),
            waypoints,
            dwell_ticks: rng.gen_range(1..=3),
        });
    }

    let split = task_count / 2;
    let products = vec![Product {
        name: "Batch".into(),
        setup: tasks[..split].iter().map(|t| t.id.clone()).collect(),
        cleanup: tasks[split..].iter().map(|t| t.id.clone()).collect(),
    }];

    Some(Scenario {
        grid_width: width,
        grid_height: height,
        walls,
        robots,
        tasks,
        products,
        obstacles,
        identity_timeout_ticks: rng.gen_range(1..=3),
        obstacle_wait_ticks: rng.gen_range(2..=5),
        replan_limit: rng.gen_range(1..=3),
        seed: rng.gen(),
    })
}

pub fn messages_of(trace: &Trace) -> Vec<Envelope> {
    trace.messages().cloned().collect()
}

/// Checks that every notice's reported duration matches the span between
/// the order acceptance tick and the notice tick, inclusive.
pub fn audit_elapsed(trace: &Trace) -> Vec<String> {
    let mut violations = Vec::new();
    let mut order_ticks: BTreeMap<u64, u64> = BTreeMap::new();
    let mut accepted: BTreeMap<(String, String), u64> = BTreeMap::new();
    for record in &trace.records {
        match record {
            TraceRecord::Message(envelope) => match &envelope.payload {
                Payload::Order { .. } => {
                    order_ticks.insert(envelope.msg_id, envelope.sent_at);
                }
                Payload::OrderNotice { task_id, elapsed_ticks, .. } => {
                    let accepted_at = envelope
                        .correlates
                        .and_then(|id| order_ticks.get(&id).copied())
                        .or_else(|| accepted.get(&(envelope.from.clone(), task_id.clone())).copied());
                    match accepted_at {
                        Some(start) => {
                            let expected = envelope.sent_at - start + 1;
                            if *elapsed_ticks != expected {
                                violations.push(format!(
                                    "msg {}: elapsed {} but notice at {} for order at {} implies {}",
                                    envelope.msg_id, elapsed_ticks, envelope.sent_at, start, expected
                                ));
                            }
                        }
                        None => violations.push(format!("msg {}: notice without order", envelope.msg_id)),
                    }
                }
                _ => {}
            },
            TraceRecord::Lifecycle(record) => {
                if let AgentEvent::OrderAccepted { task_id } = &record.event {
                    accepted.insert((record.agent.clone(), task_id.clone()), record.tick);
                }
            }
            _ => {}
        }
    }
    violations
}

/// Checks the master never has two simultaneously outstanding orders on
/// the same robot.
pub fn audit_single_order_per_robot(trace: &Trace) -> Vec<String> {
    let mut violations = Vec::new();
    let mut outstanding: BTreeSet<String> = BTreeSet::new();
    for envelope in trace.messages() {
        match &envelope.payload {
            Payload::Order { task_id } => {
                if !outstanding.insert(envelope.to.clone()) {
                    violations.push(format!(
                        "msg {}: order for {task_id} sent to busy robot {}",
                        envelope.msg_id, envelope.to
                    ));
                }
            }
            Payload::OrderNotice { .. } => {
                outstanding.remove(&envelope.from);
            }
            _ => {}
        }
    }
    violations
}
