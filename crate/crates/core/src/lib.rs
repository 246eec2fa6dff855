//! Collective Monte Carlo tree search over step-wise reasoning paths.
//!
//! An ensemble of policy models jointly expands candidate reasoning chains,
//! scores and prunes them, and grows a question-rooted tree until a chain
//! reaches the reference answer. Finished trees yield effective and
//! reflective reasoning paths, which [`dataset`] turns into training records.
//!
//! ```no_run
//! use std::sync::Arc;
//! use comcts_core::{
//!     build_ensemble, BackendContext, Engine, Ensemble, PolicyDescriptor, QuestionRecord,
//!     SearchConfig,
//! };
//!
//! let descriptors = vec![PolicyDescriptor::http("gpt", "http://localhost:8000/v1", "gpt-4o")];
//! let members = build_ensemble(&descriptors, &BackendContext::default()).unwrap();
//! let engine = Engine::new(Ensemble::concurrent(members, 8).unwrap(), SearchConfig::default()).unwrap();
//! let q = QuestionRecord {
//!     id: "q1".into(),
//!     text: "What is 6 * 7?".into(),
//!     image: None,
//!     ground_truth: "42".into(),
//!     topic: None,
//! };
//! let outcome = engine.search(&q).unwrap();
//! println!("succeeded: {}", outcome.succeeded);
//! ```

pub mod backend;
pub mod dataset;
pub mod engine;
pub mod reflection;
pub mod seed;
pub mod sim;
pub mod tree;

pub use backend::{
    build_backend, build_ensemble, evaluate_node, generate_continuation, parse_score,
    parse_steps, render_steps, BackendContext, BackendError, BackendKind, GenerationResult,
    PolicyBackend, PolicyDescriptor, PromptSet, SimProfile, Step, TaskBook,
};
pub use dataset::{
    flatten_for_sft, load_questions, read_records, step_stats, write_records, EffectivePath,
    PathKind, QuestionRecord, RecordWriter, SearchRecord, SftSample, StepStats,
};
pub use engine::{match_answer, Engine, Ensemble, SearchConfig, SearchError, SearchOutcome};
pub use reflection::{build_reflective_path, negative_sibling, ReflectivePath, SampleSize};
pub use tree::{NodeId, ReasoningNode, ReasoningTree, TreeError};
