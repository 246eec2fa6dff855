//! Synthetic reasoning worlds: tasks with one canonical derivation and a pool
//! of plausible wrong steps at every depth.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::QuestionRecord;
use crate::seed::SeedMixer;

pub const MIN_CHAIN: usize = 3;
pub const MAX_CHAIN: usize = 10;
const DISTRACTORS_PER_DEPTH: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("n_tasks must be at least 1")]
    NoTasks,
    #[error("topic mix is empty")]
    EmptyMix,
    #[error("topic proportions must be non-negative, got {topic}={share}")]
    NegativeShare { topic: String, share: f64 },
    #[error("topic proportions sum to {0}, expected 1")]
    BadTotal(f64),
}

/// A task with a unique correct derivation.
///
/// `canonical[i]` is the correct step at depth `i + 1`; its last entry is the
/// ground-truth answer. `distractors[i]` holds wrong alternatives for the same
/// depth; the last depth's distractors are wrong answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub id: String,
    pub topic: String,
    pub question: String,
    pub canonical: Vec<String>,
    pub distractors: Vec<Vec<String>>,
    pub ground_truth: String,
}

impl SyntheticTask {
    /// Builds a task of `n_steps` steps whose texts are derived from `rng`.
    pub fn build(
        id: impl Into<String>,
        topic: impl Into<String>,
        question: impl Into<String>,
        ground_truth: impl Into<String>,
        n_steps: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let id = id.into();
        let ground_truth = ground_truth.into();
        let n_steps = n_steps.max(1);
        let mut canonical = Vec::with_capacity(n_steps);
        let mut distractors = Vec::with_capacity(n_steps);
        for depth in 1..n_steps {
            let fact: u32 = rng.random_range(100..1000);
            canonical.push(format!("[{id}] step {depth}: establish fact F{depth}.{fact}"));
            distractors.push(
                (0..DISTRACTORS_PER_DEPTH)
                    .map(|v| {
                        let wrong: u32 = rng.random_range(100..1000);
                        format!("[{id}] step {depth}: assume shortcut W{depth}.{v}.{wrong}")
                    })
                    .collect(),
            );
        }
        canonical.push(ground_truth.clone());
        distractors.push(wrong_answers(&ground_truth, DISTRACTORS_PER_DEPTH));
        Self {
            id,
            topic: topic.into(),
            question: question.into(),
            canonical,
            distractors,
            ground_truth,
        }
    }

    /// Deterministic stand-in task for a question that has no registered
    /// script.
    pub fn derive(question: &QuestionRecord) -> Self {
        let seed = SeedMixer::new("derived-task")
            .str(&question.id)
            .str(&question.text)
            .str(&question.ground_truth)
            .finish();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_steps = rng.random_range(MIN_CHAIN..=8);
        Self::build(
            question.id.clone(),
            question.topic.clone().unwrap_or_else(|| "general".into()),
            question.text.clone(),
            question.ground_truth.clone(),
            n_steps,
            &mut rng,
        )
    }

    pub fn len(&self) -> usize {
        self.canonical.len()
    }

    pub fn is_empty(&self) -> bool {
        self.canonical.is_empty()
    }

    /// The record a search is run against.
    pub fn to_question(&self) -> QuestionRecord {
        QuestionRecord {
            id: self.id.clone(),
            text: self.question.clone(),
            image: None,
            ground_truth: self.ground_truth.clone(),
            topic: Some(self.topic.clone()),
        }
    }
}

fn wrong_answers(ground_truth: &str, n: usize) -> Vec<String> {
    match ground_truth.trim().parse::<i64>() {
        Ok(v) => (1..=n as i64).map(|k| (v + 7 * k).to_string()).collect(),
        Err(_) => (1..=n).map(|k| format!("not {ground_truth} (variant {k})")).collect(),
    }
}

/// Splits `n` items over `mix` by largest remainder, so proportions that
/// divide `n` evenly are reproduced exactly.
fn partition(n: usize, mix: &[(String, f64)]) -> Vec<usize> {
    let raw: Vec<f64> = mix.iter().map(|(_, p)| p * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut rest = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..mix.len()).collect();
    // stable: larger remainder first, then earlier topic
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for i in order {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    counts
}

/// Generates `n_tasks` reproducible tasks with the given topic proportions.
pub fn generate_world(
    n_tasks: usize,
    topic_mix: &[(String, f64)],
    seed: u64,
) -> Result<Vec<SyntheticTask>, WorldError> {
    if n_tasks == 0 {
        return Err(WorldError::NoTasks);
    }
    if topic_mix.is_empty() {
        return Err(WorldError::EmptyMix);
    }
    for (topic, share) in topic_mix {
        if !(*share >= 0.0) {
            return Err(WorldError::NegativeShare { topic: topic.clone(), share: *share });
        }
    }
    let total: f64 = topic_mix.iter().map(|(_, p)| p).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(WorldError::BadTotal(total));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut topics: Vec<&str> = partition(n_tasks, topic_mix)
        .into_iter()
        .zip(topic_mix)
        .flat_map(|(count, (topic, _))| std::iter::repeat_n(topic.as_str(), count))
        .collect();
    topics.shuffle(&mut rng);

    Ok(topics
        .into_iter()
        .enumerate()
        .map(|(i, topic)| {
            let id = format!("task-{i:04}");
            let n_steps = rng.random_range(MIN_CHAIN..=MAX_CHAIN);
            let answer: u32 = rng.random_range(10..10_000);
            let question = format!("[{topic}] Derive the value asked for in problem {id}.");
            SyntheticTask::build(id, topic, question, answer.to_string(), n_steps, &mut rng)
        })
        .collect())
}
