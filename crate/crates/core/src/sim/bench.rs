//! Benchmark harness: search success rate and average search iterations of
//! the collective search against single-model MCTS on a synthetic world.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use super::{generate_world, vanilla_mcts_search, SyntheticTask, WorldError};
use crate::backend::{
    build_ensemble, BackendContext, BackendError, PolicyBackend, PolicyDescriptor, SimProfile,
    TaskBook,
};
use crate::engine::{Engine, Ensemble, SearchConfig, SearchError, SearchOutcome};

pub const AVG_ITERATIONS_NOTE: &str =
    "avg_iterations averages over all attempted questions; failures count as max_iterations";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("world is empty")]
    EmptyWorld,
    #[error("could not build worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Comcts,
    Vanilla,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Comcts => "comcts",
            Method::Vanilla => "vanilla-mcts",
        }
    }
}

fn default_methods() -> Vec<Method> {
    vec![Method::Comcts, Method::Vanilla]
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub n_tasks: usize,
    pub topic_mix: BTreeMap<String, f64>,
}

/// A complete benchmark configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    pub seed: u64,
    pub world: WorldSpec,
    #[serde(default)]
    pub search: SearchConfig,
    pub ensemble: Vec<PolicyDescriptor>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Also run the collective search on every ensemble prefix `1..=K`.
    #[serde(default = "default_true")]
    pub ablation: bool,
    /// Parallel tasks; 0 uses one worker per core.
    #[serde(default)]
    pub workers: usize,
}

fn profile(topics: &[(&str, f64)], eval_noise: f64, rng_seed: u64) -> SimProfile {
    SimProfile {
        step_accuracy: topics.iter().map(|(t, p)| (t.to_string(), *p)).collect(),
        knowledge_topics: topics.iter().map(|(t, _)| t.to_string()).collect(),
        eval_noise,
        rng_seed,
    }
}

impl BenchSpec {
    /// The reference world: 200 tasks over four topics and four models with
    /// overlapping but complementary knowledge. The first model, which the
    /// single-model baseline uses, does not know geometry.
    pub fn complementary_fixture() -> Self {
        let topics = ["algebra", "chart", "geometry", "logic"];
        let ensemble = vec![
            PolicyDescriptor::scripted(
                "generalist",
                profile(&[("algebra", 0.8), ("chart", 0.8), ("logic", 0.8)], 0.05, 1),
            ),
            PolicyDescriptor::scripted(
                "visual",
                profile(&[("chart", 0.9), ("geometry", 0.7)], 0.05, 2),
            ),
            PolicyDescriptor::scripted(
                "prover",
                profile(&[("geometry", 0.65), ("logic", 0.85)], 0.05, 3),
            ),
            PolicyDescriptor::scripted(
                "solver",
                profile(&[("algebra", 0.85), ("geometry", 0.75)], 0.05, 4),
            ),
        ];
        Self {
            seed: 2024,
            world: WorldSpec {
                n_tasks: 200,
                topic_mix: topics.iter().map(|t| (t.to_string(), 0.25)).collect(),
            },
            search: SearchConfig::default(),
            ensemble,
            methods: default_methods(),
            ablation: true,
            workers: 0,
        }
    }

    pub fn generate_world(&self) -> Result<Vec<SyntheticTask>, WorldError> {
        let mix: Vec<(String, f64)> = self.world.topic_mix.clone().into_iter().collect();
        generate_world(self.world.n_tasks, &mix, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionOutcome {
    pub task_id: String,
    pub topic: String,
    pub succeeded: bool,
    pub iterations_used: u32,
    pub path_len: Option<usize>,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub models: Vec<String>,
    pub attempts: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub avg_iterations: f64,
    pub outcomes: Vec<QuestionOutcome>,
}

impl MethodReport {
    fn from_outcomes(
        method: &str,
        models: Vec<String>,
        outcomes: Vec<QuestionOutcome>,
        max_iterations: u32,
    ) -> Self {
        let attempts = outcomes.len();
        let successes = outcomes.iter().filter(|o| o.succeeded).count();
        let iterations: u64 = outcomes
            .iter()
            .map(|o| if o.succeeded { o.iterations_used } else { max_iterations } as u64)
            .sum();
        Self {
            method: method.to_string(),
            models,
            attempts,
            successes,
            success_rate: successes as f64 / attempts as f64,
            avg_iterations: iterations as f64 / attempts as f64,
            outcomes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub seed: u64,
    pub n_tasks: usize,
    pub config: SearchConfig,
    pub avg_iterations_note: String,
    pub methods: Vec<MethodReport>,
    /// Collective search over ensemble prefixes of size 1..=K.
    pub ablation: Vec<MethodReport>,
}

impl BenchReport {
    pub fn method(&self, method: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == method.label())
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {} tasks, seed {}; {}", self.n_tasks, self.seed, self.avg_iterations_note);
        let _ = writeln!(out, "{:<14} {:>8} {:>10} {:>14}  models", "method", "tasks", "SSR (%)", "avg iterations");
        let row = |out: &mut String, m: &MethodReport| {
            let _ = writeln!(
                out,
                "{:<14} {:>8} {:>10.1} {:>14.2}  {}",
                m.method,
                m.attempts,
                100.0 * m.success_rate,
                m.avg_iterations,
                m.models.join(",")
            );
        };
        for m in &self.methods {
            row(&mut out, m);
        }
        if !self.ablation.is_empty() {
            let _ = writeln!(out, "\n# ablation: collective search over ensemble prefixes");
            for m in &self.ablation {
                row(&mut out, m);
            }
        }
        out
    }
}

fn summarize(task: &SyntheticTask, result: Result<SearchOutcome, SearchError>) -> QuestionOutcome {
    match result {
        Ok(o) => QuestionOutcome {
            task_id: task.id.clone(),
            topic: task.topic.clone(),
            succeeded: o.succeeded,
            iterations_used: o.iterations_used,
            path_len: o.effective_path.as_ref().map(Vec::len),
            nodes: o.tree.len(),
        },
        Err(e) => {
            warn!(task = %task.id, error = %e, "search errored; counted as failure");
            QuestionOutcome {
                task_id: task.id.clone(),
                topic: task.topic.clone(),
                succeeded: false,
                iterations_used: 0,
                path_len: None,
                nodes: 0,
            }
        }
    }
}

/// Runs the requested methods over every task with shared seeds.
pub fn run_bench(
    world: &[SyntheticTask],
    methods: &[Method],
    ensemble: &[PolicyDescriptor],
    config: &SearchConfig,
    seed: u64,
    ablation: bool,
    workers: usize,
) -> Result<BenchReport, BenchError> {
    if world.is_empty() {
        return Err(BenchError::EmptyWorld);
    }
    config.validate()?;
    let ctx = BackendContext {
        tasks: Arc::new(TaskBook::new(world.iter().cloned())),
        seed,
        ..Default::default()
    };
    let members = build_ensemble(ensemble, &ctx)?;
    if members.is_empty() {
        return Err(SearchError::EmptyEnsemble.into());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| BenchError::Pool(e.to_string()))?;

    let run_collective = |members: &[Arc<dyn PolicyBackend>]| -> Result<MethodReport, BenchError> {
        let engine = Engine::new(Ensemble::sequential(members.to_vec()), config.clone())?;
        let outcomes = pool.install(|| {
            world
                .par_iter()
                .map(|t| summarize(t, engine.search(&t.to_question())))
                .collect()
        });
        Ok(MethodReport::from_outcomes(
            Method::Comcts.label(),
            members.iter().map(|m| m.name().to_string()).collect(),
            outcomes,
            config.max_iterations,
        ))
    };
    let run_vanilla = |backend: &Arc<dyn PolicyBackend>| -> MethodReport {
        let outcomes = pool.install(|| {
            world
                .par_iter()
                .map(|t| summarize(t, vanilla_mcts_search(&t.to_question(), backend.clone(), config)))
                .collect()
        });
        MethodReport::from_outcomes(
            Method::Vanilla.label(),
            vec![backend.name().to_string()],
            outcomes,
            config.max_iterations,
        )
    };

    let mut reports = Vec::new();
    for method in methods {
        match method {
            Method::Comcts => reports.push(run_collective(&members)?),
            Method::Vanilla => reports.push(run_vanilla(&members[0])),
        }
    }
    let mut ablation_rows = Vec::new();
    if ablation {
        for k in 1..=members.len() {
            ablation_rows.push(run_collective(&members[..k])?);
        }
    }
    Ok(BenchReport {
        seed,
        n_tasks: world.len(),
        config: config.clone(),
        avg_iterations_note: AVG_ITERATIONS_NOTE.to_string(),
        methods: reports,
        ablation: ablation_rows,
    })
}

/// Generates the world described by `spec` and benchmarks it.
pub fn run_bench_spec(spec: &BenchSpec) -> Result<BenchReport, BenchError> {
    let world = spec.generate_world()?;
    run_bench(
        &world,
        &spec.methods,
        &spec.ensemble,
        &spec.search,
        spec.seed,
        spec.ablation,
        spec.workers,
    )
}
