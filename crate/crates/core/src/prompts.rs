//! Chat prompt templates, one per task.
//!
//! A template file is TOML with one table per task:
//!
//! ```toml
//! [classification]
//! system_text = "You are a financial analyst."
//! user_template = "{instruction}\n\nText: {input}"
//! answer_format_hint = "Answer with exactly one word from: {choices}."
//! ```
//!
//! The built-in defaults are our own wording; they are not the prompts any
//! published model was trained or evaluated with.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{TaskExample, TaskId};

const INSTRUCTION: &str = "{instruction}";
const INPUT: &str = "{input}";
const CHOICES: &str = "{choices}";

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("template is for {template} but example is {example}")]
    TaskMismatch { template: TaskId, example: TaskId },
    #[error("placeholder {placeholder} must appear exactly once in the user template (found {count})")]
    UnresolvedPlaceholder {
        placeholder: &'static str,
        count: usize,
    },
    #[error("template file: {0}")]
    File(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptTemplate {
    task_id: TaskId,
    system_text: String,
    user_template: String,
    answer_format_hint: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RenderedPrompt {
    pub task_id: TaskId,
    pub example_id: String,
    pub system_text: String,
    pub user_text: String,
}

impl PromptTemplate {
    pub fn new(
        task_id: TaskId,
        system_text: impl Into<String>,
        user_template: impl Into<String>,
        answer_format_hint: impl Into<String>,
    ) -> Result<Self, PromptError> {
        let user_template = user_template.into();
        for placeholder in [INSTRUCTION, INPUT] {
            let count = user_template.matches(placeholder).count();
            if count != 1 {
                return Err(PromptError::UnresolvedPlaceholder { placeholder, count });
            }
        }
        Ok(Self {
            task_id,
            system_text: system_text.into(),
            user_template,
            answer_format_hint: answer_format_hint.into(),
        })
    }

    pub fn default_for(task_id: TaskId) -> Self {
        let (system, hint) = match task_id {
            TaskId::Classification => (
                "You are a financial analyst who identifies argument structure in earnings call transcripts.",
                "Answer with exactly one word from: {choices}.",
            ),
            TaskId::Summarization => (
                "You are a financial journalist who writes concise, factual summaries.",
                "Reply with the summary only.",
            ),
            TaskId::Trading => (
                "You are a single-stock trader. Decide today's position from the market information given.",
                "Answer with exactly one word: buy, sell or hold.",
            ),
        };
        Self::new(task_id, system, "{instruction}\n\n{input}", hint).expect("default templates are valid")
    }

    pub fn task_id(&self) -> TaskId {
        self.task_id
    }

    pub fn system_text(&self) -> &str {
        &self.system_text
    }

    pub fn user_template(&self) -> &str {
        &self.user_template
    }

    pub fn answer_format_hint(&self) -> &str {
        &self.answer_format_hint
    }

    /// Substitutes `{instruction}` and `{input}` in a single pass, so text
    /// inside the example is never itself treated as a placeholder. A
    /// non-empty answer hint is appended after a blank line; `{choices}` in the
    /// hint expands to the example's comma-separated choices.
    pub fn render(&self, e: &TaskExample) -> Result<RenderedPrompt, PromptError> {
        if e.task_id != self.task_id {
            return Err(PromptError::TaskMismatch {
                template: self.task_id,
                example: e.task_id,
            });
        }
        let mut user_text = String::with_capacity(
            self.user_template.len() + e.instruction.len() + e.input.len() + self.answer_format_hint.len() + 2,
        );
        let mut rest = self.user_template.as_str();
        while let Some(pos) = rest.find('{') {
            user_text.push_str(&rest[..pos]);
            let tail = &rest[pos..];
            if let Some(after) = tail.strip_prefix(INSTRUCTION) {
                user_text.push_str(&e.instruction);
                rest = after;
            } else if let Some(after) = tail.strip_prefix(INPUT) {
                user_text.push_str(&e.input);
                rest = after;
            } else {
                user_text.push('{');
                rest = &tail[1..];
            }
        }
        user_text.push_str(rest);

        if !self.answer_format_hint.is_empty() {
            let choices = e.choices.as_deref().unwrap_or_default().join(", ");
            user_text.push_str("\n\n");
            user_text.push_str(&self.answer_format_hint.replace(CHOICES, &choices));
        }
        Ok(RenderedPrompt {
            task_id: e.task_id,
            example_id: e.example_id.clone(),
            system_text: self.system_text.clone(),
            user_text,
        })
    }
}

#[derive(Debug, Deserialize)]
struct TemplateEntry {
    #[serde(default)]
    system_text: String,
    user_template: String,
    #[serde(default)]
    answer_format_hint: String,
}

/// Per-task templates; tasks absent from a file fall back to the defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    templates: BTreeMap<TaskId, PromptTemplate>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            templates: TaskId::ALL
                .into_iter()
                .map(|t| (t, PromptTemplate::default_for(t)))
                .collect(),
        }
    }
}

impl TemplateSet {
    pub fn from_toml(text: &str) -> Result<Self, PromptError> {
        let entries: BTreeMap<TaskId, TemplateEntry> =
            toml::from_str(text).map_err(|e| PromptError::File(e.to_string()))?;
        let mut set = Self::default();
        for (task, entry) in entries {
            let t = PromptTemplate::new(
                task,
                entry.system_text,
                entry.user_template,
                entry.answer_format_hint,
            )?;
            set.templates.insert(task, t);
        }
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PromptError::File(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn get(&self, task: TaskId) -> &PromptTemplate {
        &self.templates[&task]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn example(task_id: TaskId, instruction: &str, input: &str) -> TaskExample {
        TaskExample {
            task_id,
            example_id: "e1".into(),
            instruction: instruction.into(),
            input: input.into(),
            gold: "claim".into(),
            choices: Some(vec!["claim".into(), "premise".into()]),
        }
    }

    #[test]
    fn substitutes_verbatim() {
        let t = PromptTemplate::new(TaskId::Classification, "", "Q: {instruction}\n{input}\nA:", "")
            .unwrap();
        let r = t
            .render(&example(TaskId::Classification, "classify", "Revenue rose."))
            .unwrap();
        assert_eq!(r.user_text, "Q: classify\nRevenue rose.\nA:");
        assert_eq!(r.example_id, "e1");
    }

    #[test]
    fn task_mismatch() {
        let t = PromptTemplate::default_for(TaskId::Summarization);
        assert_eq!(
            t.render(&example(TaskId::Classification, "a", "b")),
            Err(PromptError::TaskMismatch {
                template: TaskId::Summarization,
                example: TaskId::Classification
            })
        );
    }

    #[test]
    fn template_missing_input_rejected() {
        assert_eq!(
            PromptTemplate::new(TaskId::Trading, "", "{instruction} only", ""),
            Err(PromptError::UnresolvedPlaceholder {
                placeholder: "{input}",
                count: 0
            })
        );
        assert!(PromptTemplate::new(TaskId::Trading, "", "{instruction}{input}{input}", "").is_err());
    }

    #[test]
    fn hint_lists_choices() {
        let r = PromptTemplate::default_for(TaskId::Classification)
            .render(&example(TaskId::Classification, "Classify.", "Sales grew."))
            .unwrap();
        assert!(r.user_text.ends_with("Answer with exactly one word from: claim, premise."));
    }

    #[test]
    fn placeholders_inside_input_are_not_expanded() {
        let t = PromptTemplate::new(TaskId::Summarization, "", "{input}|{instruction}", "").unwrap();
        let r = t
            .render(&example(TaskId::Summarization, "{input}", "{instruction}"))
            .unwrap();
        assert_eq!(r.user_text, "{instruction}|{input}");
    }

    #[test]
    fn template_file_overrides_one_task() {
        let set = TemplateSet::from_toml(
            "[trading]\nsystem_text = \"s\"\nuser_template = \"{input} / {instruction}\"\n",
        )
        .unwrap();
        assert_eq!(set.get(TaskId::Trading).user_template(), "{input} / {instruction}");
        assert_eq!(
            set.get(TaskId::Summarization),
            &PromptTemplate::default_for(TaskId::Summarization)
        );
        assert!(TemplateSet::from_toml("[trading]\nuser_template = \"{input}\"\n").is_err());
    }

    proptest! {
        #[test]
        fn render_preserves_input(input in ".*", other in ".*", instruction in ".*") {
            let t = PromptTemplate::new(TaskId::Summarization, "", "<<{instruction}>>[[{input}]]", "").unwrap();
            let a = t.render(&example(TaskId::Summarization, &instruction, &input)).unwrap();
            let b = t.render(&example(TaskId::Summarization, &instruction, &other)).unwrap();
            let prefix = format!("<<{instruction}>>[[");
            prop_assert_eq!(&a.user_text[prefix.len()..a.user_text.len() - 2], input.as_str());
            prop_assert_eq!(a.user_text == b.user_text, input == other);
            prop_assert!(a.user_text.len() <= t.user_template().len() + instruction.len() + input.len());
        }
    }
}
