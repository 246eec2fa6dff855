//! Client for OpenAI-compatible `/chat/completions` services.

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::Deserialize;
use serde_json::{json, Value};
use tracing::{debug, warn};

use super::{
    parse_score, parse_steps, BackendError, EvaluateRequest, GenerateRequest, GenerationResult,
    PolicyBackend, PolicyDescriptor, PromptSet,
};
use crate::dataset::QuestionRecord;

const SYSTEM_PROMPT: &str = "You are a careful assistant that reasons step by step.";
const SCORE_REPROMPT: &str =
    "Your reply did not contain a score. Reply with exactly one line: Score: <number between -1 and 1>";

/// Environment variable holding the bearer token for the backend `name`.
pub fn api_key_var(name: &str) -> String {
    let suffix: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
        .collect();
    format!("COMCTS_API_KEY_{suffix}")
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ChoiceMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

struct Reply {
    content: String,
    truncated: bool,
}

#[derive(Debug, Clone)]
pub struct HttpChatBackend {
    name: String,
    url: String,
    model_id: String,
    temperature: f64,
    eval_temperature: f64,
    max_tokens: u32,
    max_attempts: u32,
    retry_base: Duration,
    api_key: Option<String>,
    prompts: PromptSet,
    client: Client,
}

impl HttpChatBackend {
    pub fn new(desc: &PolicyDescriptor, prompts: PromptSet) -> Result<Self, BackendError> {
        desc.validate()?;
        let endpoint = desc.endpoint.as_deref().expect("validated");
        let client = Client::builder()
            .timeout(Duration::from_secs(desc.timeout_secs))
            .build()
            .map_err(|e| BackendError::Unreachable(e.to_string()))?;
        Ok(Self {
            name: desc.name.clone(),
            url: format!("{}/chat/completions", endpoint.trim_end_matches('/')),
            model_id: desc.model_id.clone().expect("validated"),
            temperature: desc.temperature,
            eval_temperature: desc.eval_temperature,
            max_tokens: desc.max_tokens,
            max_attempts: desc.max_attempts,
            retry_base: Duration::from_millis(desc.retry_base_ms),
            api_key: std::env::var(api_key_var(&desc.name)).ok(),
            prompts,
            client,
        })
    }

    fn user_content(question: &QuestionRecord, text: String) -> Value {
        match &question.image {
            Some(image) => json!([
                { "type": "text", "text": text },
                { "type": "image_url", "image_url": { "url": image } },
            ]),
            None => Value::String(text),
        }
    }

    /// Posts one chat request, retrying timeouts, connection failures, 429
    /// and 5xx with exponential backoff.
    fn chat(&self, messages: &[Value], temperature: f64) -> Result<Reply, BackendError> {
        let body = json!({
            "model": self.model_id,
            "messages": messages,
            "temperature": temperature,
            "max_tokens": self.max_tokens,
        });
        let mut last_err = BackendError::Unreachable("no attempt made".into());
        for attempt in 0..self.max_attempts {
            if attempt > 0 {
                let delay = self.retry_base * 2u32.saturating_pow(attempt - 1);
                debug!(backend = %self.name, attempt, ?delay, "retrying chat request");
                thread::sleep(delay);
            }
            let mut req = self.client.post(&self.url).json(&body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return self.decode(resp);
                    }
                    let body = resp.text().unwrap_or_default();
                    let err = BackendError::Status { status: status.as_u16(), body };
                    if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
                        last_err = err;
                        continue;
                    }
                    return Err(err);
                }
                Err(e) if e.is_timeout() || e.is_connect() => {
                    last_err = BackendError::Unreachable(e.to_string());
                }
                Err(e) => return Err(BackendError::Unreachable(e.to_string())),
            }
        }
        warn!(backend = %self.name, error = %last_err, "chat request failed after retries");
        Err(last_err)
    }

    fn decode(&self, resp: reqwest::blocking::Response) -> Result<Reply, BackendError> {
        let parsed: ChatResponse = resp
            .json()
            .map_err(|e| BackendError::Malformed(format!("chat response: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Malformed("chat response has no choices".into()))?;
        Ok(Reply {
            content: choice.message.content.unwrap_or_default(),
            truncated: choice.finish_reason.as_deref() == Some("length"),
        })
    }
}

impl PolicyBackend for HttpChatBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, req: &GenerateRequest<'_>) -> Result<GenerationResult, BackendError> {
        let prompt = self.prompts.render_generate(&req.question.text, req.prefix);
        let messages = [
            json!({ "role": "system", "content": SYSTEM_PROMPT }),
            json!({ "role": "user", "content": Self::user_content(req.question, prompt) }),
        ];
        let reply = self.chat(&messages, self.temperature)?;
        let mut steps = parse_steps(&reply.content)?;
        if reply.truncated {
            if let Some(last) = steps.last_mut() {
                last.terminal = false;
            }
        }
        Ok(GenerationResult { steps, raw_text: reply.content, truncated: reply.truncated })
    }

    fn evaluate(&self, req: &EvaluateRequest<'_>) -> Result<f64, BackendError> {
        let prompt = self
            .prompts
            .render_evaluate(&req.question.text, req.prefix, req.candidate);
        let mut messages = vec![
            json!({ "role": "system", "content": SYSTEM_PROMPT }),
            json!({ "role": "user", "content": Self::user_content(req.question, prompt) }),
        ];
        let reply = self.chat(&messages, self.eval_temperature)?;
        if let Ok(score) = parse_score(&reply.content) {
            return Ok(score);
        }
        // one re-prompt, then the vote is lost
        messages.push(json!({ "role": "assistant", "content": reply.content }));
        messages.push(json!({ "role": "user", "content": SCORE_REPROMPT }));
        let retry = self.chat(&messages, self.eval_temperature)?;
        parse_score(&retry.content)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_variable_names() {
        assert_eq!(api_key_var("gpt-4o"), "COMCTS_API_KEY_GPT_4O");
        assert_eq!(api_key_var("qwen2.vl"), "COMCTS_API_KEY_QWEN2_VL");
    }
}
