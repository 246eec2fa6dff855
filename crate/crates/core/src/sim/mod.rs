//! Desk-scale verification: synthetic worlds, the single-model MCTS baseline
//! and the benchmark harness.

mod bench;
mod vanilla;
mod world;

pub use bench::{
    run_bench, run_bench_spec, BenchError, BenchReport, BenchSpec, Method, MethodReport,
    QuestionOutcome, WorldSpec, AVG_ITERATIONS_NOTE,
};
pub use vanilla::vanilla_mcts_search;
pub use world::{generate_world, SyntheticTask, WorldError, MAX_CHAIN, MIN_CHAIN};
