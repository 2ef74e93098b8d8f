use std::collections::BTreeSet;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shopfloor_core::{
    load_scenario, plan_balanced, run_simulation_with, shortest_path, Cell, EstimateTable,
    RobotStatus, RosterEntry, RunOptions, Scenario, TaskKind, TaskSpec, WorldStatics,
};

fn bundled_scenario() -> Scenario {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/productx.json");
    load_scenario(path).expect("bundled scenario loads")
}

fn random_map(seed: u64, size: u32) -> WorldStatics {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut walls = BTreeSet::new();
    for x in 0..size {
        for y in 0..size {
            if rng.gen_bool(0.2) {
                walls.insert(Cell::new(x, y));
            }
        }
    }
    // keep the benchmark endpoints open
    walls.remove(&Cell::new(0, 0));
    walls.remove(&Cell::new(size - 1, size - 1));
    WorldStatics::new(size, size, walls)
}

fn bench_pathfinding(c: &mut Criterion) {
    let mut group = c.benchmark_group("shortest_path");
    for size in [16u32, 64] {
        let statics = random_map(11, size);
        let goal = Cell::new(size - 1, size - 1);
        group.bench_function(format!("{size}x{size}"), |b| {
            b.iter(|| shortest_path(&statics, Cell::new(0, 0), goal))
        });
    }
    group.finish();
}

fn planning_instance(
    tasks: usize,
    robots: usize,
) -> (Vec<TaskSpec>, Vec<RosterEntry>, EstimateTable) {
    let kinds = [TaskKind::Material, TaskKind::Tool, TaskKind::FinishedProduct];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tasks: Vec<TaskSpec> = (0..tasks)
        .map(|i| TaskSpec {
            id: format!("t{i:02}"),
            kind: kinds[i % 3],
            pickup: Cell::new(0, 0),
            dropoff: Cell::new(1, 0),
            handling_ticks: 2,
        })
        .collect();
    let roster: Vec<RosterEntry> = (0..robots)
        .map(|i| RosterEntry {
            robot_id: format!("r{i}"),
            capabilities: kinds.iter().copied().collect(),
            status: RobotStatus::Idle,
        })
        .collect();
    let mut estimates = EstimateTable::new();
    for task in &tasks {
        for entry in &roster {
            estimates.insert(&task.id, &entry.robot_id, rng.gen_range(4..=40));
        }
    }
    (tasks, roster, estimates)
}

fn bench_planning(c: &mut Criterion) {
    let (tasks, roster, estimates) = planning_instance(40, 6);
    c.bench_function("plan_balanced/40x6", |b| {
        b.iter(|| plan_balanced(&tasks, &roster, &estimates).unwrap())
    });
}

fn bench_full_run(c: &mut Criterion) {
    let scenario = bundled_scenario();
    let mut group = c.benchmark_group("run_simulation");
    group.sample_size(20);
    for strategy in ["balanced", "sequential"] {
        group.bench_function(strategy, |b| {
            b.iter_batched(
                || scenario.clone(),
                |s| run_simulation_with(&s, strategy, RunOptions::default()).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, bench_pathfinding, bench_planning, bench_full_run);
criterion_main!(benches);
