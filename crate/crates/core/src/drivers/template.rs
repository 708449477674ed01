//! Prompt templates with `{name}` placeholders. `{{` and `}}` are literal braces.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("missing binding for placeholder {{{0}}}")]
    Missing(String),
    #[error("unknown prompt template {0:?}")]
    UnknownTemplate(String),
    #[error("failed to load prompt {path}: {reason}")]
    Load { path: String, reason: String },
}

impl TemplateError {
    /// The placeholder a render failed on, if that was the cause.
    pub fn placeholder(&self) -> Option<&str> {
        match self {
            TemplateError::Missing(name) => Some(name),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    pieces: Vec<Piece>,
    required: BTreeSet<String>,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

fn parse(body: &str) -> Vec<Piece> {
    let mut pieces = Vec::new();
    let mut text = String::new();
    let chars: Vec<char> = body.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '{' && chars.get(i + 1) == Some(&'{') {
            text.push('{');
            i += 2;
            continue;
        }
        if c == '}' && chars.get(i + 1) == Some(&'}') {
            text.push('}');
            i += 2;
            continue;
        }
        if c == '{' && chars.get(i + 1).copied().is_some_and(is_ident_start) {
            let mut j = i + 1;
            while j < chars.len() && is_ident(chars[j]) {
                j += 1;
            }
            if chars.get(j) == Some(&'}') {
                if !text.is_empty() {
                    pieces.push(Piece::Text(std::mem::take(&mut text)));
                }
                pieces.push(Piece::Slot(chars[i + 1..j].iter().collect()));
                i = j + 1;
                continue;
            }
        }
        text.push(c);
        i += 1;
    }
    if !text.is_empty() {
        pieces.push(Piece::Text(text));
    }
    pieces
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Self {
        let body = body.into();
        let pieces = parse(&body);
        let required = pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Slot(s) => Some(s.clone()),
                Piece::Text(_) => None,
            })
            .collect();
        Self {
            name: name.into(),
            body,
            pieces,
            required,
        }
    }

    pub fn required(&self) -> &BTreeSet<String> {
        &self.required
    }

    /// Substitutes every placeholder; extra bindings are ignored.
    pub fn render(&self, bindings: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.body.len());
        for p in &self.pieces {
            match p {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(name) => out.push_str(
                    bindings
                        .get(name.as_str())
                        .ok_or_else(|| TemplateError::Missing(name.clone()))?,
                ),
            }
        }
        Ok(out)
    }

    pub fn render_with(&self, bindings: &[(&str, &str)]) -> Result<String, TemplateError> {
        let map = bindings.iter().map(|(k, v)| (*k, v.to_string())).collect();
        self.render(&map)
    }
}

macro_rules! builtin {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../../prompts/", $name, ".txt")))),*]
    };
}

/// Prompt assets compiled into the library.
pub const BUILTIN_PROMPTS: &[(&str, &str)] = builtin![
    "metric_parsing_instruction",
    "metadata_generation_instruction",
    "validation_dataset_verification_instruction",
    "metadata_documentation_instruction",
    "exploratory_data_analysis_instruction",
    "model_architecture_search_instruction",
    "initial_idea_proposal_instruction",
    "idea_improvement_instruction",
    "modular_decomposition_instruction",
    "module_implementation_instruction",
    "module_testing_instruction",
    "solution_drafting_instruction",
    "solution_improvement_instruction",
    "bug_analysis_instruction",
    "debugging_instruction",
    "debugging_lesson_distillation_instruction",
    "execution_result_review_instruction",
    "solution_lesson_distillation_instruction",
    "lesson_deduplication_instruction",
    "task_context",
    "diff_format",
];

/// Named templates; the built-in set, optionally overridden from a directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptLibrary {
    templates: BTreeMap<String, PromptTemplate>,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptLibrary {
    pub fn builtin() -> Self {
        Self {
            templates: BUILTIN_PROMPTS
                .iter()
                .map(|(n, b)| (n.to_string(), PromptTemplate::new(*n, *b)))
                .collect(),
        }
    }

    /// Built-ins, with every `<name>.txt` in `dir` replacing or adding a template.
    pub fn with_overrides(dir: &Path) -> Result<Self, TemplateError> {
        let mut lib = Self::builtin();
        let load_err = |reason: String| TemplateError::Load {
            path: dir.display().to_string(),
            reason,
        };
        let mut entries: Vec<_> = fs::read_dir(dir)
            .map_err(|e| load_err(e.to_string()))?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "txt"))
            .collect();
        entries.sort();
        for path in entries {
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| load_err(format!("bad file name {}", path.display())))?
                .to_string();
            let body = fs::read_to_string(&path).map_err(|e| load_err(e.to_string()))?;
            lib.templates
                .insert(name.clone(), PromptTemplate::new(name, body));
        }
        Ok(lib)
    }

    pub fn get(&self, name: &str) -> Result<&PromptTemplate, TemplateError> {
        self.templates
            .get(name)
            .ok_or_else(|| TemplateError::UnknownTemplate(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn render(&self, name: &str, bindings: &[(&str, &str)]) -> Result<String, TemplateError> {
        self.get(name)?.render_with(bindings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escapes_and_repeats() {
        let t = PromptTemplate::new("t", "{a} and {a}; literal {{lesson_id}} and {{ }}");
        assert_eq!(t.required().len(), 1);
        assert_eq!(
            t.render_with(&[("a", "x"), ("unused", "y")]).unwrap(),
            "x and x; literal {lesson_id} and { }"
        );
    }

    #[test]
    fn missing_binding_names_placeholder() {
        let lib = PromptLibrary::builtin();
        let err = lib
            .render(
                "solution_improvement_instruction",
                &[("previous_solution", "x"), ("submission_cond", "")],
            )
            .unwrap_err();
        assert_eq!(err, TemplateError::Missing("lessons".into()));
        assert_eq!(err.placeholder(), Some("lessons"));
    }

    #[test]
    fn metric_prompt_renders_without_bindings() {
        let lib = PromptLibrary::builtin();
        let ctx = lib
            .render("task_context", &[("task_description", "predict churn")])
            .unwrap();
        let body = lib.render("metric_parsing_instruction", &[]).unwrap();
        assert!(ctx.contains("predict churn"));
        assert!(body.contains("\"metric_name\": \"accuracy\""));
        assert!(!body.contains("{{"));
    }

    #[test]
    fn non_identifier_braces_are_literal() {
        let t = PromptTemplate::new("t", "json {\"a\": 1} and { spaced }");
        assert!(t.required().is_empty());
        assert_eq!(
            t.render_with(&[]).unwrap(),
            "json {\"a\": 1} and { spaced }"
        );
    }

    #[test]
    fn every_builtin_template_renders_with_its_own_slots() {
        let lib = PromptLibrary::builtin();
        for name in lib.names() {
            let t = lib.get(name).unwrap();
            let bindings: BTreeMap<&str, String> = t
                .required()
                .iter()
                .map(|s| (s.as_str(), format!("<{s}>")))
                .collect();
            let out = t.render(&bindings).unwrap();
            for s in t.required() {
                assert!(out.contains(&format!("<{s}>")), "{name}: {s}");
            }
        }
    }
}
