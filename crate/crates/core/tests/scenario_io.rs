mod common;

use std::path::PathBuf;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shared_space::engine::{step, SimState};
use shared_space::scenario::{load_scenario_with, parse_scenario, sample_spawns, Overrides, ScenarioError, SpawnRegion};
use shared_space::trajectory::{parse_trajectories, read_trajectory_file, write_trajectory_file, TrajectoryWriter};
use shared_space::{load_scenario, AgentClass, Rect, ScenarioConfig, Vec2};

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn base() -> ScenarioConfig {
    parse_scenario("format_version = 1\n", &Overrides::default()).unwrap()
}

/// A random multi-region scenario that is comfortably below packing density.
fn random_config(rng: &mut ChaCha8Rng) -> ScenarioConfig {
    let mut config = base();
    config.seed = rng.random();
    config.clearance_time = rng.random_range(0.0..1.0);
    let regions = rng.random_range(1..4);
    for _ in 0..regions {
        let class = if rng.random_bool(0.3) { AgentClass::Vehicle } else { AgentClass::Pedestrian };
        let min = Vec2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        let size = Vec2::new(rng.random_range(3.0..30.0), rng.random_range(3.0..30.0));
        let spawn = Rect::new(min, min + size);
        let sep = config.spawn_separation(class, AgentClass::Vehicle);
        let count = rng.random_range(0..=((size.x * size.y) / (4.0 * sep * sep)).floor() as usize);
        config.regions.push(SpawnRegion { spawn, goal: Rect::new(-min - size, -min), class, count });
    }
    config.max_frames = config.default_max_frames();
    config.validate().unwrap();
    config
}

#[test]
fn spawn_sets_pass_pairwise_audit() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let config = random_config(&mut rng);
        let state = SimState::initialize(&config).unwrap();
        assert_eq!(state.agents.len(), config.total_agents());
        if let Err((a, b, d)) = spawn_audit(&config, &state.agents) {
            panic!("agents {a} and {b} spawned {d} apart");
        }
        let mut k = 0;
        for region in &config.regions {
            for agent in &state.agents[k..k + region.count] {
                assert!(region.spawn.contains(agent.position));
                assert!(region.goal.contains(agent.goal));
                assert_eq!(agent.class, region.class);
            }
            k += region.count;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn spawns_are_reproducible(seed in any::<u64>(), count in 0usize..60, w in 10.0f64..40.0, h in 10.0f64..40.0) {
        let region = Rect::new(Vec2::new(-w, 0.0), Vec2::new(0.0, h));
        let a = sample_spawns(&region, count, 0.25, 1.4, 0.5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = sample_spawns(&region, count, 0.25, 1.4, 0.5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(&a, &b);
        for (i, p) in a.iter().enumerate() {
            prop_assert!(region.contains(*p));
            for q in &a[i + 1..] {
                prop_assert!((*p - *q).length_squared() >= 1.2 * 1.2);
            }
        }
    }

    #[test]
    fn initialization_is_reproducible(seed in any::<u64>()) {
        let config = random_config(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = SimState::initialize(&config).unwrap();
        let b = SimState::initialize(&config).unwrap();
        prop_assert_eq!(a.agents, b.agents);
    }

    #[test]
    fn frame_logs_round_trip_bit_exactly(seed in any::<u64>(), frames in 0usize..30) {
        let logs = random_frame_logs(seed, frames);
        let mut writer = TrajectoryWriter::new(Vec::new(), &[]).unwrap();
        for log in &logs {
            writer.write_frame(log).unwrap();
        }
        let text = String::from_utf8(writer.finish().unwrap()).unwrap();
        let parsed = parse_trajectories(&text).unwrap();
        prop_assert_eq!(parsed.frames.len(), logs.len());
        for (a, b) in parsed.frames.iter().zip(&logs) {
            prop_assert_eq!(a.frame, b.frame);
            prop_assert_eq!(a.time.to_bits(), b.time.to_bits());
            prop_assert_eq!(a.agents.len(), b.agents.len());
            for (x, y) in a.agents.iter().zip(&b.agents) {
                prop_assert_eq!((x.id, x.class), (y.id, y.class));
                for (p, q) in [
                    (x.position.x, y.position.x),
                    (x.position.y, y.position.y),
                    (x.velocity.x, y.velocity.x),
                    (x.velocity.y, y.velocity.y),
                    (x.radius, y.radius),
                ] {
                    prop_assert_eq!(p.to_bits(), q.to_bits());
                }
            }
        }
    }
}

#[test]
fn hundred_frame_run_round_trips() {
    let config = load_scenario(&scenario_path("four_way_small.toml")).unwrap();
    let state = SimState::initialize(&config).unwrap();
    let goals = state.goals();
    let mut logs = Vec::new();
    let mut s = state;
    for _ in 0..100 {
        let out = step(&s, &config, 1, true).unwrap();
        logs.push(out.log.unwrap());
        s = out.state;
    }
    assert_eq!(logs.len(), 100);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trajectories.csv");
    write_trajectory_file(&goals, &logs, &path).unwrap();
    let back = read_trajectory_file(&path).unwrap();
    assert_eq!(back.goals, goals);
    assert_eq!(back.frames, logs);
}

#[test]
fn bundled_scenarios_load() {
    let corridor = load_scenario(&scenario_path("corridor.toml")).unwrap();
    assert_eq!(corridor.total_agents(), 10);
    assert_eq!(corridor.seed, 42);
    assert!(corridor.responsibility.guarantees_collision_free());

    let mixed = load_scenario(&scenario_path("shared_space.toml")).unwrap();
    assert_eq!(mixed.responsibility.get(AgentClass::Pedestrian, AgentClass::Vehicle), 1.0);
    assert_eq!(mixed.responsibility.get(AgentClass::Vehicle, AgentClass::Pedestrian), 0.0);
    assert!(mixed.responsibility.guarantees_collision_free());
    assert!(mixed.warnings.is_empty());

    let crossing = load_scenario(&scenario_path("four_way_small.toml")).unwrap();
    assert_eq!(crossing.total_agents(), 100);
}

#[test]
fn overrides_apply_to_files() {
    let o = Overrides { seed: Some(5), dt: Some(0.05), tau: None, max_frames: Some(10) };
    let c = load_scenario_with(&scenario_path("corridor.toml"), &o).unwrap();
    assert_eq!((c.seed, c.dt, c.max_frames), (5, 0.05, 10));
}

#[test]
fn missing_file_is_an_io_error() {
    let err = load_scenario(&scenario_path("does_not_exist.toml")).unwrap_err();
    assert!(matches!(err, ScenarioError::Io { .. }));
}

#[test]
fn avoidance_margin_is_validated() {
    let ok = parse_scenario("format_version = 1\navoidance_margin = 0.0\n", &Overrides::default()).unwrap();
    assert_eq!(ok.avoidance_margin, 0.0);
    let err = parse_scenario("format_version = 1\navoidance_margin = -0.1\n", &Overrides::default()).unwrap_err();
    assert!(matches!(err, ScenarioError::Invalid { ref field, .. } if field == "avoidance_margin"), "{err}");
}
