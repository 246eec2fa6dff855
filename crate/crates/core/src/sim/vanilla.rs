use std::sync::Arc;

use crate::backend::PolicyBackend;
use crate::dataset::QuestionRecord;
use crate::engine::{Engine, Ensemble, ExpansionMode, SearchConfig, SearchError, SearchOutcome};

/// Single-model MCTS baseline: one new step per iteration, scored by the same
/// model alone, with the same backpropagation and UCB selection as the
/// collective search.
pub fn vanilla_mcts_search(
    question: &QuestionRecord,
    backend: Arc<dyn PolicyBackend>,
    config: &SearchConfig,
) -> Result<SearchOutcome, SearchError> {
    let single = SearchConfig { candidates_per_model: 1, ..config.clone() };
    Engine::with_mode(Ensemble::sequential(vec![backend]), single, ExpansionMode::SingleStep)?
        .search(question)
}
