use std::sync::Arc;

use comcts_core::backend::ScriptedBackend;
use comcts_core::sim::{
    generate_world, run_bench, run_bench_spec, vanilla_mcts_search, BenchSpec, Method,
    SyntheticTask,
};
use comcts_core::{PolicyDescriptor, SearchConfig, SimProfile, TaskBook};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn knows_all(topics: &[&str], accuracy: f64, noise: f64, rng_seed: u64) -> SimProfile {
    SimProfile {
        step_accuracy: topics.iter().map(|t| (t.to_string(), accuracy)).collect(),
        knowledge_topics: topics.iter().map(|t| t.to_string()).collect(),
        eval_noise: noise,
        rng_seed,
    }
}

fn single(task: &SyntheticTask, profile: SimProfile) -> Arc<ScriptedBackend> {
    Arc::new(ScriptedBackend::new("solo", profile, Arc::new(TaskBook::new([task.clone()])), 0))
}

fn five_step_task() -> SyntheticTask {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    SyntheticTask::build("five", "algebra", "solve it", "123", 5, &mut rng)
}

#[test]
fn vanilla_adds_one_node_per_iteration() {
    let task = five_step_task();
    let out = vanilla_mcts_search(
        &task.to_question(),
        single(&task, knows_all(&["algebra"], 1.0, 0.0, 1)),
        &SearchConfig::default(),
    )
    .unwrap();
    assert!(out.succeeded);
    assert_eq!(out.iterations_used, 5);
    assert!(out.telemetry.iter().all(|t| t.nodes_added == 1));
    assert_eq!(out.effective_path.unwrap().len(), 5);
}

#[test]
fn vanilla_without_knowledge_fails_at_budget() {
    let task = five_step_task();
    let out = vanilla_mcts_search(
        &task.to_question(),
        single(&task, knows_all(&["geometry"], 1.0, 0.0, 1)),
        &SearchConfig::default(),
    )
    .unwrap();
    assert!(!out.succeeded);
    assert_eq!(out.iterations_used, 20);
}

#[test]
fn vanilla_seeded_golden() {
    let task = five_step_task();
    let profile = knows_all(&["algebra"], 0.7, 0.1, 9);
    let cfg = SearchConfig { seed: 11, ..Default::default() };
    let run = || vanilla_mcts_search(&task.to_question(), single(&task, profile.clone()), &cfg).unwrap();
    let out = run();
    assert_eq!(out.tree, run().tree);
    assert_eq!(
        (out.succeeded, out.iterations_used, out.tree.len()),
        GOLDEN_VANILLA,
        "seeded vanilla outcome drifted"
    );
}

// recorded from the first verified run
const GOLDEN_VANILLA: (bool, u32, usize) = (true, 7, 8);

#[test]
fn saturated_world() {
    let topics = [("a".to_string(), 0.5), ("b".to_string(), 0.5)];
    let world = generate_world(40, &topics, 5).unwrap();
    let ensemble: Vec<_> = (0..3)
        .map(|i| PolicyDescriptor::scripted(format!("m{i}"), knows_all(&["a", "b"], 1.0, 0.0, i)))
        .collect();
    let report = run_bench(
        &world,
        &[Method::Comcts, Method::Vanilla],
        &ensemble,
        &SearchConfig::default(),
        1,
        false,
        2,
    )
    .unwrap();
    let comcts = report.method(Method::Comcts).unwrap();
    let vanilla = report.method(Method::Vanilla).unwrap();
    assert_eq!(comcts.success_rate, 1.0);
    assert_eq!(vanilla.success_rate, 1.0);
    assert_eq!(comcts.avg_iterations, 1.0);
    for (o, task) in vanilla.outcomes.iter().zip(&world) {
        assert_eq!(o.iterations_used as usize, task.len());
    }
}

#[test]
fn report_arithmetic() {
    let spec = BenchSpec { ablation: false, ..BenchSpec::complementary_fixture() };
    let spec = BenchSpec {
        world: comcts_core::sim::WorldSpec { n_tasks: 30, ..spec.world.clone() },
        ..spec
    };
    let report = run_bench_spec(&spec).unwrap();
    assert!(report.ablation.is_empty());
    for m in &report.methods {
        let successes = m.outcomes.iter().filter(|o| o.succeeded).count();
        assert_eq!(m.successes, successes);
        assert_eq!(m.attempts, 30);
        assert_eq!(m.success_rate, successes as f64 / 30.0);
        assert!(m.avg_iterations >= 1.0 && m.avg_iterations <= 20.0);
        for o in m.outcomes.iter().filter(|o| !o.succeeded) {
            assert!(o.iterations_used <= 20);
        }
    }
}

#[test]
fn reference_world_golden() {
    let report = run_bench_spec(&BenchSpec::complementary_fixture()).unwrap();
    let summary = |m: &comcts_core::sim::MethodReport| {
        let iterations: u32 = m
            .outcomes
            .iter()
            .map(|o| if o.succeeded { o.iterations_used } else { 20 })
            .sum();
        (m.successes, iterations)
    };
    let methods: Vec<_> = report.methods.iter().map(summary).collect();
    let ablation: Vec<_> = report.ablation.iter().map(summary).collect();
    assert_eq!(methods, GOLDEN_METHODS);
    assert_eq!(ablation, GOLDEN_ABLATION);
    assert!(report.render_table().contains("failures count as max_iterations"));
}

// (successes, summed iterations with failures at the budget) from the first verified run
const GOLDEN_METHODS: [(usize, u32); 2] = [(198, 452), (94, 2803)];
const GOLDEN_ABLATION: [(usize, u32); 4] = [(100, 2343), (177, 997), (188, 734), (198, 452)];
