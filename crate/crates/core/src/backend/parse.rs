//! Step and score grammar shared by every backend.
//!
//! Generations are segmented on lines that begin with `### Step N:` and
//! `### Final Answer:`. Output without those delimiters falls back to blank
//! line paragraph splitting.

use std::sync::LazyLock;

use regex::Regex;

use super::{BackendError, Step};

static STEP_DELIM: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^###\s*Step\s+\d+\s*:\s?(.*)$").unwrap());
static FINAL_DELIM: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^###\s*Final\s+Answer\s*:\s?(.*)$").unwrap());
static ANSWER_MARKER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(?:final\s+answer\s*[:：]|the\s+answer\s+is\s*:?)\s*(.*)").unwrap()
});
static PARAGRAPH_BREAK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\n[ \t]*\n").unwrap());
static SCORE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)score\s*:\s*([-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?)").unwrap()
});

/// Splits raw model output into ordered steps. Only the last step can be
/// terminal; anything after the first `### Final Answer:` block is dropped.
pub fn parse_steps(raw_text: &str) -> Result<Vec<Step>, BackendError> {
    if raw_text.trim().is_empty() {
        return Err(BackendError::EmptyGeneration);
    }
    let has_delims = raw_text
        .lines()
        .any(|l| STEP_DELIM.is_match(l) || FINAL_DELIM.is_match(l));
    let steps = if has_delims {
        parse_delimited(raw_text)
    } else {
        parse_paragraphs(raw_text)
    };
    if steps.is_empty() {
        return Err(BackendError::Malformed("no parseable steps".into()));
    }
    Ok(steps)
}

fn parse_delimited(raw_text: &str) -> Vec<Step> {
    let mut steps = Vec::new();
    // (lines, terminal) of the segment being collected
    let mut current: Option<(Vec<&str>, bool)> = None;

    fn flush(steps: &mut Vec<Step>, seg: Option<(Vec<&str>, bool)>) {
        if let Some((lines, terminal)) = seg {
            let text = lines.join("\n").trim().to_string();
            if !text.is_empty() {
                steps.push(Step::new(text, terminal));
            }
        }
    }

    for line in raw_text.lines() {
        if let Some(cap) = FINAL_DELIM.captures(line) {
            flush(&mut steps, current.take());
            current = Some((vec![cap.get(1).map_or("", |m| m.as_str())], true));
        } else if let Some(cap) = STEP_DELIM.captures(line) {
            if matches!(current, Some((_, true))) {
                break;
            }
            flush(&mut steps, current.take());
            current = Some((vec![cap.get(1).map_or("", |m| m.as_str())], false));
        } else if let Some((lines, _)) = current.as_mut() {
            lines.push(line);
        }
    }
    flush(&mut steps, current);
    if let Some(pos) = steps.iter().position(|s| s.terminal) {
        steps.truncate(pos + 1);
    }
    steps
}

fn parse_paragraphs(raw_text: &str) -> Vec<Step> {
    let normalized = raw_text.replace("\r\n", "\n");
    let paragraphs: Vec<&str> = PARAGRAPH_BREAK
        .split(&normalized)
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect();
    let last = paragraphs.len().saturating_sub(1);
    paragraphs
        .iter()
        .enumerate()
        .map(|(i, p)| Step::new(*p, i == last && ANSWER_MARKER.is_match(p)))
        .collect()
}

/// Renders steps with the canonical delimiters. A terminal last step becomes
/// the `### Final Answer:` block.
pub fn render_steps(steps: &[Step]) -> String {
    let mut out = String::new();
    let mut n = 0;
    for (i, step) in steps.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        if step.terminal && i + 1 == steps.len() {
            out.push_str("### Final Answer: ");
        } else {
            n += 1;
            out.push_str(&format!("### Step {n}: "));
        }
        out.push_str(&step.text);
    }
    out
}

/// First `Score: <x>` in the reply, clamped to `[-1, 1]`.
pub fn parse_score(raw_text: &str) -> Result<f64, BackendError> {
    let cap = SCORE
        .captures(raw_text)
        .ok_or_else(|| BackendError::UnparseableScore(truncate_for_log(raw_text)))?;
    let value: f64 = cap[1]
        .parse()
        .map_err(|_| BackendError::UnparseableScore(truncate_for_log(raw_text)))?;
    Ok(value.clamp(-1.0, 1.0))
}

/// The answer carried by a terminal step: whatever follows an answer marker,
/// or the whole text when there is none.
pub fn extract_answer(step_text: &str) -> &str {
    ANSWER_MARKER
        .captures_iter(step_text)
        .last()
        .and_then(|c| c.get(1))
        .map(|m| m.as_str().trim())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| step_text.trim())
}

fn truncate_for_log(s: &str) -> String {
    s.chars().take(120).collect()
}
