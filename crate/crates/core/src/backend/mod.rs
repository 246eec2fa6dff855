//! Policy models: the generators and evaluators that make up an ensemble.
//!
//! Every model exposes the same two legs: continue a reasoning prefix to a
//! final answer, and score a single candidate step in `[-1, 1]`. Two
//! implementations ship: a deterministic scripted simulator and a client for
//! OpenAI-compatible chat-completions services.

mod http;
pub mod parse;
mod prompts;
mod scripted;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::QuestionRecord;

pub use http::HttpChatBackend;
pub use parse::{extract_answer, parse_score, parse_steps, render_steps};
pub use prompts::{PromptSet, DEFAULT_REFLECT_PROMPT};
pub use scripted::{ScriptedBackend, TaskBook};

/// One reasoning step as exchanged with a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub text: String,
    pub terminal: bool,
}

impl Step {
    pub fn new(text: impl Into<String>, terminal: bool) -> Self {
        Self { text: text.into(), terminal }
    }
}

/// A candidate continuation `S_candidate^j` produced by one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub steps: Vec<Step>,
    pub raw_text: String,
    /// Set when the model stopped on its token budget; the last step is then
    /// never terminal.
    pub truncated: bool,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("empty generation")]
    EmptyGeneration,
    #[error("malformed model output: {0}")]
    Malformed(String),
    #[error("unparseable score: {0:?}")]
    UnparseableScore(String),
    #[error("prefix already terminal")]
    PrefixTerminal,
    #[error("empty candidate step")]
    EmptyCandidate,
    #[error("invalid backend descriptor {name:?}: {reason}")]
    InvalidDescriptor { name: String, reason: String },
}

pub struct GenerateRequest<'a> {
    pub question: &'a QuestionRecord,
    pub prefix: &'a [Step],
    /// Distinguishes repeated samples from the same prefix. The scripted
    /// simulator folds it into its seed; remote models ignore it.
    pub sample: u64,
}

pub struct EvaluateRequest<'a> {
    pub question: &'a QuestionRecord,
    pub prefix: &'a [Step],
    pub candidate: &'a Step,
}

/// A policy model `π_k`. Implementations must tolerate concurrent calls.
pub trait PolicyBackend: Send + Sync {
    fn name(&self) -> &str;

    fn generate(&self, req: &GenerateRequest<'_>) -> Result<GenerationResult, BackendError>;

    fn evaluate(&self, req: &EvaluateRequest<'_>) -> Result<f64, BackendError>;
}

/// Generates a continuation after `prefix`, enforcing the shared contract:
/// the prefix is open and at most the final returned step is terminal.
pub fn generate_continuation(
    backend: &dyn PolicyBackend,
    question: &QuestionRecord,
    prefix: &[Step],
    sample: u64,
) -> Result<GenerationResult, BackendError> {
    if prefix.iter().any(|s| s.terminal) {
        return Err(BackendError::PrefixTerminal);
    }
    let mut result = backend.generate(&GenerateRequest { question, prefix, sample })?;
    if result.steps.is_empty() {
        return Err(BackendError::Malformed("no parseable steps".into()));
    }
    if let Some(pos) = result.steps.iter().position(|s| s.terminal) {
        result.steps.truncate(pos + 1);
    }
    if result.truncated {
        if let Some(last) = result.steps.last_mut() {
            last.terminal = false;
        }
    }
    Ok(result)
}

/// One model's judgment of `candidate`, clamped to `[-1, 1]`.
pub fn evaluate_node(
    backend: &dyn PolicyBackend,
    question: &QuestionRecord,
    prefix: &[Step],
    candidate: &Step,
) -> Result<f64, BackendError> {
    if candidate.text.trim().is_empty() {
        return Err(BackendError::EmptyCandidate);
    }
    let score = backend.evaluate(&EvaluateRequest { question, prefix, candidate })?;
    if score.is_nan() {
        return Err(BackendError::UnparseableScore("NaN".into()));
    }
    Ok(score.clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Scripted,
    HttpChat,
}

/// Behaviour of a scripted model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimProfile {
    /// Probability that a generated step is correct, per known topic. Known
    /// topics missing from the map produce correct steps every time.
    #[serde(default)]
    pub step_accuracy: BTreeMap<String, f64>,
    #[serde(default)]
    pub knowledge_topics: BTreeSet<String>,
    /// Probability that an evaluation flips its verdict.
    #[serde(default)]
    pub eval_noise: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

impl SimProfile {
    pub fn knows(&self, topic: &str) -> bool {
        self.knowledge_topics.contains(topic)
    }

    /// Probability of producing the correct next step on `topic`.
    pub fn accuracy(&self, topic: &str) -> f64 {
        if !self.knows(topic) {
            return 0.0;
        }
        self.step_accuracy.get(topic).copied().unwrap_or(1.0)
    }

    pub fn validate(&self) -> Result<(), String> {
        let in_unit = |p: f64| (0.0..=1.0).contains(&p);
        if !in_unit(self.eval_noise) {
            return Err(format!("eval_noise {} outside [0, 1]", self.eval_noise));
        }
        for (topic, p) in &self.step_accuracy {
            if !in_unit(*p) {
                return Err(format!("step_accuracy[{topic}] = {p} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

fn default_temperature() -> f64 {
    1.0
}
fn default_max_tokens() -> u32 {
    1024
}
fn default_timeout_secs() -> u64 {
    60
}
fn default_max_attempts() -> u32 {
    3
}
fn default_retry_base_ms() -> u64 {
    1000
}

/// Configuration of one ensemble member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyDescriptor {
    pub name: String,
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    /// Sampling temperature for expansion.
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Sampling temperature for evaluation.
    #[serde(default)]
    pub eval_temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<SimProfile>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_ms: u64,
}

impl PolicyDescriptor {
    pub fn scripted(name: impl Into<String>, profile: SimProfile) -> Self {
        Self {
            name: name.into(),
            kind: BackendKind::Scripted,
            endpoint: None,
            model_id: None,
            temperature: default_temperature(),
            eval_temperature: 0.0,
            max_tokens: default_max_tokens(),
            profile: Some(profile),
            timeout_secs: default_timeout_secs(),
            max_attempts: default_max_attempts(),
            retry_base_ms: default_retry_base_ms(),
        }
    }

    pub fn http(
        name: impl Into<String>,
        endpoint: impl Into<String>,
        model_id: impl Into<String>,
    ) -> Self {
        Self {
            name: name.into(),
            kind: BackendKind::HttpChat,
            endpoint: Some(endpoint.into()),
            model_id: Some(model_id.into()),
            temperature: default_temperature(),
            eval_temperature: 0.0,
            max_tokens: default_max_tokens(),
            profile: None,
            timeout_secs: default_timeout_secs(),
            max_attempts: default_max_attempts(),
            retry_base_ms: default_retry_base_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let fail = |reason: String| BackendError::InvalidDescriptor {
            name: self.name.clone(),
            reason,
        };
        if self.name.trim().is_empty() {
            return Err(fail("empty name".into()));
        }
        if !(self.temperature >= 0.0 && self.eval_temperature >= 0.0) {
            return Err(fail("temperatures must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(fail("max_tokens must be positive".into()));
        }
        if self.max_attempts == 0 {
            return Err(fail("max_attempts must be positive".into()));
        }
        match self.kind {
            BackendKind::Scripted => {
                if self.endpoint.is_some() || self.model_id.is_some() {
                    return Err(fail("scripted backends take no endpoint or model_id".into()));
                }
                let profile = self
                    .profile
                    .as_ref()
                    .ok_or_else(|| fail("scripted backend requires a profile".into()))?;
                profile.validate().map_err(fail)?;
            }
            BackendKind::HttpChat => {
                if self.profile.is_some() {
                    return Err(fail("http-chat backends take no profile".into()));
                }
                if self.endpoint.as_deref().is_none_or(str::is_empty) {
                    return Err(fail("http-chat backend requires endpoint".into()));
                }
                if self.model_id.as_deref().is_none_or(str::is_empty) {
                    return Err(fail("http-chat backend requires model_id".into()));
                }
            }
        }
        Ok(())
    }
}

/// Shared inputs needed to instantiate backends.
#[derive(Debug, Clone, Default)]
pub struct BackendContext {
    pub prompts: PromptSet,
    pub tasks: Arc<TaskBook>,
    /// Mixed into every scripted profile seed.
    pub seed: u64,
}

pub fn build_backend(
    desc: &PolicyDescriptor,
    ctx: &BackendContext,
) -> Result<Arc<dyn PolicyBackend>, BackendError> {
    desc.validate()?;
    Ok(match desc.kind {
        BackendKind::Scripted => Arc::new(ScriptedBackend::new(
            desc.name.clone(),
            desc.profile.clone().expect("validated"),
            ctx.tasks.clone(),
            ctx.seed,
        )),
        BackendKind::HttpChat => Arc::new(HttpChatBackend::new(desc, ctx.prompts.clone())?),
    })
}

/// Builds every member, rejecting duplicate names.
pub fn build_ensemble(
    descriptors: &[PolicyDescriptor],
    ctx: &BackendContext,
) -> Result<Vec<Arc<dyn PolicyBackend>>, BackendError> {
    let mut seen = BTreeSet::new();
    descriptors
        .iter()
        .map(|d| {
            if !seen.insert(d.name.as_str()) {
                return Err(BackendError::InvalidDescriptor {
                    name: d.name.clone(),
                    reason: "duplicate name in ensemble".into(),
                });
            }
            build_backend(d, ctx)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptor_kind_fields() {
        let ok = PolicyDescriptor::scripted("a", SimProfile::default());
        ok.validate().unwrap();
        let mut bad = ok.clone();
        bad.endpoint = Some("http://x".into());
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.profile = None;
        assert!(bad.validate().is_err());

        let http = PolicyDescriptor::http("b", "http://localhost:1", "m");
        http.validate().unwrap();
        let mut bad = http.clone();
        bad.model_id = None;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let d = PolicyDescriptor::scripted("a", SimProfile::default());
        let err = build_ensemble(&[d.clone(), d], &BackendContext::default());
        assert!(matches!(err, Err(BackendError::InvalidDescriptor { .. })));
    }

    #[test]
    fn profile_probabilities_validated() {
        let p = SimProfile { eval_noise: 1.5, ..Default::default() };
        assert!(p.validate().is_err());
        let mut p = SimProfile::default();
        p.step_accuracy.insert("x".into(), -0.1);
        assert!(p.validate().is_err());
    }
}
