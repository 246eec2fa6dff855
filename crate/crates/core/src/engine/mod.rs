//! Collective Monte Carlo tree search.
//!
//! Each iteration lets every model in the ensemble roll a full candidate
//! reasoning chain out from the current start node, scores every new node
//! with the mean vote of all models, prunes nodes scoring below the
//! threshold along with their descendants, backs the surviving scores up into
//! their parents and picks the next start node by UCB. The search stops at
//! the first retained terminal node whose answer matches the ground truth, or
//! when the iteration budget runs out.

mod answer;
mod ensemble;
pub mod ops;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use crate::backend::extract_answer;
use crate::dataset::{EffectivePath, QuestionRecord, RecordTelemetry, SearchRecord, SCHEMA_VERSION};
use crate::tree::{NodeId, ReasoningTree, TreeError, TreeQuestion};

pub use answer::match_answer;
pub use ensemble::Ensemble;
pub use ops::{backpropagate, expand, select, selection_candidates, simulate_and_prune};

pub const DEFAULT_MAX_ITERATIONS: u32 = 20;
pub const DEFAULT_THRESHOLD: f64 = 0.0;
pub const DEFAULT_EXPLORATION: f64 = std::f64::consts::SQRT_2;
pub const DEFAULT_CANDIDATES_PER_MODEL: u32 = 1;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("invalid question: {0}")]
    InvalidQuestion(String),
    #[error("no expandable node left")]
    Exhausted,
    #[error("node {0} has no score")]
    Unscored(NodeId),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

fn default_max_iterations() -> u32 {
    DEFAULT_MAX_ITERATIONS
}
fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}
fn default_exploration() -> f64 {
    DEFAULT_EXPLORATION
}
fn default_candidates() -> u32 {
    DEFAULT_CANDIDATES_PER_MODEL
}

/// Search constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    #[serde(default = "default_max_iterations")]
    pub max_iterations: u32,
    /// Nodes with collective score `R < threshold_t` are pruned.
    #[serde(default = "default_threshold")]
    pub threshold_t: f64,
    #[serde(default = "default_exploration")]
    pub exploration_c: f64,
    #[serde(default = "default_candidates")]
    pub candidates_per_model: u32,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            threshold_t: DEFAULT_THRESHOLD,
            exploration_c: DEFAULT_EXPLORATION,
            candidates_per_model: DEFAULT_CANDIDATES_PER_MODEL,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: &str| Err(SearchError::InvalidConfig(m.into()));
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive");
        }
        if !(self.exploration_c > 0.0 && self.exploration_c.is_finite()) {
            return bad("exploration_c must be a positive number");
        }
        if !self.threshold_t.is_finite() {
            return bad("threshold_t must be finite");
        }
        if self.candidates_per_model == 0 {
            return bad("candidates_per_model must be positive");
        }
        Ok(())
    }
}

/// How many steps of each generated continuation enter the tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpansionMode {
    /// The whole chain down to its terminal step.
    FullChain,
    /// Only the first step, as in classic one-node-per-iteration MCTS.
    SingleStep,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationTelemetry {
    pub iteration: u32,
    pub start_node: NodeId,
    pub nodes_added: usize,
    pub nodes_pruned: usize,
    pub generation_failures: usize,
    pub vote_failures: usize,
}

/// Wall-clock measurements, kept apart from the reproducible telemetry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchTiming {
    pub elapsed: Duration,
    /// Summed backend call latency per iteration.
    pub backend_per_iteration: Vec<Duration>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub tree: ReasoningTree,
    /// `Y`: root-exclusive path to the matching terminal node.
    pub effective_path: Option<Vec<NodeId>>,
    pub iterations_used: u32,
    pub succeeded: bool,
    pub telemetry: Vec<IterationTelemetry>,
    pub timing: SearchTiming,
}

impl SearchOutcome {
    /// Packs the outcome into a dataset record without a reflective path.
    pub fn into_record(
        self,
        question: QuestionRecord,
        method: &str,
        record_timing: bool,
    ) -> SearchRecord {
        let effective_path = self
            .effective_path
            .map(|ids| EffectivePath::from_tree(&self.tree, ids));
        SearchRecord {
            schema_version: SCHEMA_VERSION,
            question,
            tree: self.tree,
            effective_path,
            reflective_path: None,
            telemetry: RecordTelemetry {
                method: method.to_string(),
                iterations_used: self.iterations_used,
                succeeded: self.succeeded,
                elapsed_ms: record_timing.then(|| self.timing.elapsed.as_millis() as u64),
            },
        }
    }
}

/// First retained terminal node (lowest id) whose answer matches.
pub fn find_correct_terminal(tree: &ReasoningTree) -> Option<NodeId> {
    tree.iter()
        .find(|n| {
            n.is_terminal
                && !n.pruned
                && match_answer(extract_answer(&n.step_text), &tree.ground_truth)
        })
        .map(|n| n.id)
}

/// A configured search over one ensemble.
#[derive(Debug, Clone)]
pub struct Engine {
    ensemble: Ensemble,
    config: SearchConfig,
    mode: ExpansionMode,
}

impl Engine {
    pub fn new(ensemble: Ensemble, config: SearchConfig) -> Result<Self, SearchError> {
        Self::with_mode(ensemble, config, ExpansionMode::FullChain)
    }

    pub fn with_mode(
        ensemble: Ensemble,
        config: SearchConfig,
        mode: ExpansionMode,
    ) -> Result<Self, SearchError> {
        config.validate()?;
        if ensemble.is_empty() {
            return Err(SearchError::EmptyEnsemble);
        }
        Ok(Self { ensemble, config, mode })
    }

    pub fn config(&self) -> &SearchConfig {
        &self.config
    }

    pub fn ensemble(&self) -> &Ensemble {
        &self.ensemble
    }

    /// Runs the search for one question. Backend failures degrade the
    /// affected iteration; only invalid input is an error.
    pub fn search(&self, question: &QuestionRecord) -> Result<SearchOutcome, SearchError> {
        question.validate().map_err(SearchError::InvalidQuestion)?;
        let started = Instant::now();
        let cfg = &self.config;
        let mut tree = ReasoningTree::new(
            TreeQuestion { text: question.text.clone(), image: question.image.clone() },
            question.ground_truth.clone(),
            cfg.seed,
        );
        let mut start = tree.root();
        let mut telemetry = Vec::new();
        let mut timing = SearchTiming::default();
        let mut effective = None;
        let mut iterations_used = 0;

        for iteration in 1..=cfg.max_iterations {
            iterations_used = iteration;
            let expansion =
                expand(&mut tree, start, question, &self.ensemble, cfg, iteration, self.mode)?;
            let sim = simulate_and_prune(&mut tree, &expansion.chains, question, &self.ensemble, cfg)?;
            backpropagate(&mut tree, &sim.retained)?;
            telemetry.push(IterationTelemetry {
                iteration,
                start_node: start,
                nodes_added: expansion.nodes_added(),
                nodes_pruned: sim.pruned,
                generation_failures: expansion.failures,
                vote_failures: sim.vote_failures,
            });
            timing
                .backend_per_iteration
                .push(expansion.backend_time + sim.backend_time);

            if let Some(hit) = find_correct_terminal(&tree) {
                let mut path = tree.path_to_root(hit)?;
                path.remove(0);
                effective = Some(path);
                break;
            }
            match select(&tree, &sim.retained, cfg.exploration_c) {
                Ok(next) => start = next,
                Err(SearchError::Exhausted) => {
                    debug!(question = %question.id, iteration, "search exhausted");
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        timing.elapsed = started.elapsed();
        Ok(SearchOutcome {
            succeeded: effective.is_some(),
            effective_path: effective,
            tree,
            iterations_used,
            telemetry,
            timing,
        })
    }
}

/// Convenience wrapper: a full-chain search with `ensemble`.
pub fn search(
    question: &QuestionRecord,
    ensemble: &Ensemble,
    config: &SearchConfig,
) -> Result<SearchOutcome, SearchError> {
    Engine::new(ensemble.clone(), config.clone())?.search(question)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = SearchConfig::default();
        assert_eq!(c.max_iterations, 20);
        assert_eq!(c.threshold_t, 0.0);
        assert_eq!(c.candidates_per_model, 1);
        assert_eq!(c.exploration_c, std::f64::consts::SQRT_2);
        let parsed: SearchConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(parsed, c);
    }

    #[test]
    fn config_validation() {
        let mut c = SearchConfig::default();
        c.exploration_c = 0.0;
        assert!(c.validate().is_err());
        let c = SearchConfig { max_iterations: 0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = SearchConfig { candidates_per_model: 0, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
