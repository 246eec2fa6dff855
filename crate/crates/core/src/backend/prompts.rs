use std::path::Path;

use crate::backend::{parse::render_steps, Step};

const DEFAULT_GENERATE: &str = include_str!("../../prompts/generate.txt");
const DEFAULT_EVALUATE: &str = include_str!("../../prompts/evaluate.txt");
pub const DEFAULT_REFLECT_PROMPT: &str = include_str!("../../prompts/reflect.txt");

/// Editable prompt templates. `{question}`, `{prefix}` and `{candidate}` are
/// substituted verbatim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub generate: String,
    pub evaluate: String,
    pub reflect: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            generate: DEFAULT_GENERATE.to_string(),
            evaluate: DEFAULT_EVALUATE.to_string(),
            reflect: DEFAULT_REFLECT_PROMPT.trim().to_string(),
        }
    }
}

impl PromptSet {
    /// Loads any templates given, keeping the bundled default for the rest.
    pub fn load(
        generate: Option<&Path>,
        evaluate: Option<&Path>,
        reflect: Option<&Path>,
    ) -> std::io::Result<Self> {
        let mut set = Self::default();
        if let Some(p) = generate {
            set.generate = std::fs::read_to_string(p)?;
        }
        if let Some(p) = evaluate {
            set.evaluate = std::fs::read_to_string(p)?;
        }
        if let Some(p) = reflect {
            set.reflect = std::fs::read_to_string(p)?.trim().to_string();
        }
        Ok(set)
    }

    pub fn render_generate(&self, question: &str, prefix: &[Step]) -> String {
        fill(&self.generate, question, prefix, "")
    }

    pub fn render_evaluate(&self, question: &str, prefix: &[Step], candidate: &Step) -> String {
        fill(&self.evaluate, question, prefix, &candidate.text)
    }
}

fn fill(template: &str, question: &str, prefix: &[Step], candidate: &str) -> String {
    let prefix = if prefix.is_empty() {
        "(none yet)".to_string()
    } else {
        render_steps(prefix)
    };
    template
        .replace("{question}", question)
        .replace("{prefix}", &prefix)
        .replace("{candidate}", candidate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_reflect_sentence() {
        assert_eq!(
            PromptSet::default().reflect,
            "The previous reasoning step is wrong and let's rethink it again."
        );
    }

    #[test]
    fn placeholders_filled() {
        let p = PromptSet::default();
        let s = p.render_evaluate("What is 2+2?", &[Step::new("2+2=4", false)], &Step::new("4", true));
        assert!(s.contains("What is 2+2?"));
        assert!(s.contains("### Step 1: 2+2=4"));
        assert!(!s.contains("{candidate}"));
        assert!(p.render_generate("Q", &[]).contains("(none yet)"));
    }
}
