//! Deterministic simulated policy model.
//!
//! A scripted model walks a task's canonical derivation, producing the correct
//! next step with its per-topic accuracy and falling off into distractors
//! otherwise; once off track it never recovers. Its evaluator recognises
//! correct steps exactly and flips its verdict with probability `eval_noise`.
//!
//! All randomness is derived from the profile seed, the question id, a hash
//! of the prefix and the sample index, so concurrent calls cannot perturb
//! results.

use std::borrow::Cow;
use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    render_steps, BackendError, EvaluateRequest, GenerateRequest, GenerationResult,
    PolicyBackend, SimProfile, Step,
};
use crate::dataset::QuestionRecord;
use crate::seed::SeedMixer;
use crate::sim::SyntheticTask;

/// Scripts keyed by question id. Questions without an entry get a task
/// derived from their own fields.
#[derive(Debug, Clone, Default)]
pub struct TaskBook {
    tasks: HashMap<String, SyntheticTask>,
}

impl TaskBook {
    pub fn new(tasks: impl IntoIterator<Item = SyntheticTask>) -> Self {
        Self {
            tasks: tasks.into_iter().map(|t| (t.id.clone(), t)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn task_for(&self, question: &QuestionRecord) -> Cow<'_, SyntheticTask> {
        match self.tasks.get(&question.id) {
            Some(t) => Cow::Borrowed(t),
            None => Cow::Owned(SyntheticTask::derive(question)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    name: String,
    profile: SimProfile,
    tasks: Arc<TaskBook>,
    base_seed: u64,
}

impl ScriptedBackend {
    pub fn new(
        name: impl Into<String>,
        profile: SimProfile,
        tasks: Arc<TaskBook>,
        base_seed: u64,
    ) -> Self {
        Self { name: name.into(), profile, tasks, base_seed }
    }

    pub fn profile(&self) -> &SimProfile {
        &self.profile
    }

    fn mixer(&self, purpose: &str, question: &QuestionRecord, prefix: &[Step]) -> SeedMixer {
        let mut m = SeedMixer::new(purpose)
            .u64(self.base_seed)
            .u64(self.profile.rng_seed)
            .str(&question.id)
            .u64(prefix.len() as u64);
        for step in prefix {
            m = m.str(&step.text).u64(step.terminal as u64);
        }
        m
    }
}

/// Whether every prefix step follows the canonical derivation and the
/// derivation still has steps left.
fn on_track(task: &SyntheticTask, prefix: &[Step]) -> bool {
    prefix.len() < task.len()
        && prefix
            .iter()
            .zip(&task.canonical)
            .all(|(s, c)| !s.terminal && &s.text == c)
}

impl PolicyBackend for ScriptedBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, req: &GenerateRequest<'_>) -> Result<GenerationResult, BackendError> {
        let task = self.tasks.task_for(req.question);
        let seed = self.mixer("generate", req.question, req.prefix).u64(req.sample).finish();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let accuracy = self.profile.accuracy(&task.topic);

        let start = req.prefix.len();
        let len = task.len().max(start + 1);
        let last_depth = task.len() - 1;
        let mut correct_so_far = on_track(&task, req.prefix);
        let mut steps = Vec::with_capacity(len - start);
        for depth in start..len {
            let terminal = depth + 1 == len;
            if correct_so_far && rng.random_bool(accuracy) {
                steps.push(Step::new(task.canonical[depth].clone(), terminal));
                continue;
            }
            correct_so_far = false;
            let pool = &task.distractors[depth.min(last_depth)];
            let pick = rng.random_range(0..pool.len());
            steps.push(Step::new(pool[pick].clone(), terminal));
        }
        Ok(GenerationResult { raw_text: render_steps(&steps), steps, truncated: false })
    }

    fn evaluate(&self, req: &EvaluateRequest<'_>) -> Result<f64, BackendError> {
        let task = self.tasks.task_for(req.question);
        let depth = req.prefix.len();
        let correct = on_track(&task, req.prefix)
            && req.candidate.text == task.canonical[depth]
            && req.candidate.terminal == (depth + 1 == task.len());
        let seed = self
            .mixer("evaluate", req.question, req.prefix)
            .str(&req.candidate.text)
            .u64(req.candidate.terminal as u64)
            .finish();
        let flip = self.profile.eval_noise > 0.0
            && ChaCha8Rng::seed_from_u64(seed).random_bool(self.profile.eval_noise);
        Ok(if correct != flip { 1.0 } else { -1.0 })
    }
}
