//! Pulling JSON answers out of model completions.
//!
//! Models answer in a fenced block and frequently leave trailing or doubled
//! commas (the shipped prompt examples do too), so the document is sanitized
//! before parsing.

use serde_json::{Map, Value};
use thiserror::Error;

use super::ReviewRecord;
use crate::reward::MetricSpec;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StructuredError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema error: missing or invalid field {0:?}")]
    Schema(String),
}

impl StructuredError {
    pub fn field(&self) -> Option<&str> {
        match self {
            StructuredError::Schema(f) => Some(f),
            StructuredError::Parse(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    MetricSpec,
    ReviewRecord,
    DedupVerdict,
    ModuleMap,
    ValidationVerdict,
    ArchitectureList,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Structured {
    MetricSpec(MetricSpec),
    ReviewRecord(ReviewRecord),
    DedupVerdict {
        reasoning: String,
        duplicate: bool,
    },
    /// Module name to description, in the order given (dependencies first).
    ModuleMap(Vec<(String, String)>),
    ValidationVerdict {
        analysis: String,
        success: bool,
    },
    ArchitectureList(Vec<(String, String)>),
}

/// Body of the last complete fenced code block.
pub fn last_fenced_block(text: &str) -> Option<&str> {
    let mut open: Option<usize> = None;
    let mut last = None;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        if !line.trim_start().starts_with("```") {
            continue;
        }
        match open.take() {
            None => open = Some(offset),
            Some(body_start) => last = Some(&text[body_start..start]),
        }
    }
    last
}

/// Removes trailing and repeated commas outside strings and maps bare
/// Python literals to JSON ones.
pub fn sanitize_json(doc: &str) -> String {
    let chars: Vec<char> = doc.chars().collect();
    let mut out = String::with_capacity(doc.len());
    let mut in_str = false;
    let mut escaped = false;
    let mut i = 0;
    let next_significant = |from: usize| chars[from..].iter().copied().find(|c| !c.is_whitespace());
    while i < chars.len() {
        let c = chars[i];
        if in_str {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
            i += 1;
            continue;
        }
        match c {
            '"' => {
                in_str = true;
                out.push(c);
            }
            ',' => {
                let after = next_significant(i + 1);
                if !matches!(after, Some('}') | Some(']') | Some(',') | None) {
                    out.push(c);
                }
            }
            _ if c.is_ascii_alphabetic() => {
                let mut j = i;
                while j < chars.len() && chars[j].is_ascii_alphanumeric() {
                    j += 1;
                }
                let word: String = chars[i..j].iter().collect();
                out.push_str(match word.as_str() {
                    "True" => "true",
                    "False" => "false",
                    "None" => "null",
                    w => w,
                });
                i = j;
                continue;
            }
            _ => out.push(c),
        }
        i += 1;
    }
    out
}

fn parse_document(completion: &str) -> Result<Value, StructuredError> {
    let block = last_fenced_block(completion)
        .ok_or_else(|| StructuredError::Parse("no fenced code block found".into()))?;
    serde_json::from_str(&sanitize_json(block)).map_err(|e| StructuredError::Parse(e.to_string()))
}

fn object(v: &Value) -> Result<&Map<String, Value>, StructuredError> {
    v.as_object()
        .ok_or_else(|| StructuredError::Parse("expected a JSON object".into()))
}

fn string_field(m: &Map<String, Value>, key: &str) -> Result<String, StructuredError> {
    m.get(key)
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| StructuredError::Schema(key.into()))
}

fn bool_field(m: &Map<String, Value>, key: &str) -> Result<bool, StructuredError> {
    match m.get(key) {
        Some(Value::Bool(b)) => Ok(*b),
        Some(Value::String(s)) if s.eq_ignore_ascii_case("true") => Ok(true),
        Some(Value::String(s)) if s.eq_ignore_ascii_case("false") => Ok(false),
        _ => Err(StructuredError::Schema(key.into())),
    }
}

fn metric_field(m: &Map<String, Value>, key: &str) -> Result<Option<f64>, StructuredError> {
    match m.get(key) {
        Some(Value::Null) => Ok(None),
        Some(Value::Number(n)) => Ok(n.as_f64()),
        Some(Value::String(s)) => s
            .trim()
            .parse::<f64>()
            .map(Some)
            .map_err(|_| StructuredError::Schema(key.into())),
        _ => Err(StructuredError::Schema(key.into())),
    }
}

pub fn extract_structured(completion: &str, shape: Shape) -> Result<Structured, StructuredError> {
    let doc = parse_document(completion)?;
    match shape {
        Shape::MetricSpec => {
            let m = object(&doc)?;
            let name = string_field(m, "metric_name")?;
            if name.trim().is_empty() {
                return Err(StructuredError::Schema("metric_name".into()));
            }
            Ok(Structured::MetricSpec(MetricSpec::new(
                name,
                bool_field(m, "lower_is_better")?,
            )))
        }
        Shape::ReviewRecord => {
            let m = object(&doc)?;
            Ok(Structured::ReviewRecord(
                ReviewRecord {
                    summary: string_field(m, "summary")?,
                    metric: metric_field(m, "metric")?,
                    valid_metric: bool_field(m, "valid_metric")?,
                }
                .normalized(),
            ))
        }
        Shape::DedupVerdict => {
            let m = object(&doc)?;
            Ok(Structured::DedupVerdict {
                reasoning: string_field(m, "reasoning")?,
                duplicate: bool_field(m, "duplicate")?,
            })
        }
        Shape::ValidationVerdict => {
            let m = object(&doc)?;
            Ok(Structured::ValidationVerdict {
                analysis: string_field(m, "analysis")?,
                success: bool_field(m, "success")?,
            })
        }
        Shape::ModuleMap => {
            let m = object(&doc)?;
            let mut modules = Vec::with_capacity(m.len());
            for (k, v) in m {
                let desc = v
                    .as_str()
                    .ok_or_else(|| StructuredError::Schema(k.clone()))?;
                let name = k.trim().trim_end_matches(".py").to_string();
                modules.push((name, desc.to_string()));
            }
            if !modules.iter().any(|(k, _)| k == "main") {
                return Err(StructuredError::Schema("main".into()));
            }
            Ok(Structured::ModuleMap(modules))
        }
        Shape::ArchitectureList => {
            let items = doc
                .as_array()
                .ok_or_else(|| StructuredError::Parse("expected a JSON array".into()))?;
            let mut out = Vec::with_capacity(items.len());
            for item in items {
                let m = object(item)?;
                out.push((
                    string_field(m, "reasoning")?,
                    string_field(m, "description")?,
                ));
            }
            Ok(Structured::ArchitectureList(out))
        }
    }
}

/// Splits `Label: text` sections (e.g. `- Title: ...`) of a free-form answer.
/// Labels are matched case-insensitively at the start of a line; a section
/// runs until the next recognised label.
pub fn labeled_sections(text: &str, labels: &[&str]) -> Vec<Option<String>> {
    let mut found: Vec<Option<String>> = vec![None; labels.len()];
    let mut current: Option<usize> = None;
    for line in text.lines() {
        let stripped = line
            .trim_start()
            .trim_start_matches(['-', '*', '#', ' '])
            .trim_start_matches("**");
        let hit = labels.iter().enumerate().find_map(|(i, label)| {
            let head = stripped.get(..label.len())?;
            if !head.eq_ignore_ascii_case(label) {
                return None;
            }
            let rest = stripped[label.len()..].trim_start_matches("**");
            rest.strip_prefix(':')
                .map(|r| (i, r.trim_start_matches("**").trim()))
        });
        match hit {
            Some((i, rest)) => {
                found[i] = Some(rest.to_string());
                current = Some(i);
            }
            None => {
                if let Some(i) = current {
                    let slot = found[i].get_or_insert_with(String::new);
                    if !slot.is_empty() {
                        slot.push('\n');
                    }
                    slot.push_str(line.trim());
                }
            }
        }
    }
    found
        .into_iter()
        .map(|s| s.map(|s| s.trim().to_string()).filter(|s| !s.is_empty()))
        .collect()
}
