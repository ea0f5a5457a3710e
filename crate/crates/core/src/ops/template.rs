//! Prompt templates: `SYSTEM:` / `USER:` sections with `{name}` slots.
//!
//! Only `{identifier}` sequences are slots, so literal JSON braces in few-shot
//! examples pass through untouched.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::{Message, Role};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub messages: Vec<Message>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("template `{0}` not found")]
    Unknown(String),
    #[error("template variable `{0}` has no value")]
    MissingVar(String),
    #[error("template has no SYSTEM or USER section")]
    Empty,
    #[error("io error: {0}")]
    Io(String),
}

fn is_slot_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

fn substitute(text: &str, vars: &BTreeMap<String, String>) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let name_len = after.find(|c: char| !is_slot_char(c)).unwrap_or(after.len());
        if name_len > 0 && after[name_len..].starts_with('}') {
            let name = &after[..name_len];
            let value = vars.get(name).ok_or_else(|| TemplateError::MissingVar(name.to_string()))?;
            out.push_str(value);
            rest = &after[name_len + 1..];
        } else {
            out.push('{');
            rest = after;
        }
    }
    out.push_str(rest);
    Ok(out)
}

impl Template {
    /// Parses the `SYSTEM:` / `USER:` section format.
    pub fn parse(text: &str) -> Result<Template, TemplateError> {
        let mut messages = Vec::new();
        let mut current: Option<(Role, Vec<&str>)> = None;
        for line in text.split('\n') {
            let header = match line.trim_end() {
                "SYSTEM:" => Some(Role::System),
                "USER:" => Some(Role::User),
                _ => None,
            };
            match (header, current.as_mut()) {
                (Some(role), _) => {
                    if let Some((r, lines)) = current.take() {
                        messages.push(Message { role: r, content: lines.join("\n").trim_end_matches('\n').to_string() });
                    }
                    current = Some((role, Vec::new()));
                }
                (None, Some((_, lines))) => lines.push(line),
                (None, None) => {}
            }
        }
        if let Some((r, lines)) = current {
            messages.push(Message { role: r, content: lines.join("\n").trim_end_matches('\n').to_string() });
        }
        if messages.is_empty() {
            return Err(TemplateError::Empty);
        }
        Ok(Template { messages })
    }

    pub fn render(&self, vars: &BTreeMap<String, String>) -> Result<Vec<Message>, TemplateError> {
        self.messages
            .iter()
            .map(|m| Ok(Message { role: m.role, content: substitute(&m.content, vars)? }))
            .collect()
    }

    /// The instruction under optimization: the system message if present, else the first user message.
    pub fn instruction(&self) -> &str {
        self.messages
            .iter()
            .find(|m| m.role == Role::System)
            .or_else(|| self.messages.first())
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    /// Replaces (or inserts) the system message.
    pub fn with_instruction(&self, instruction: &str) -> Template {
        let mut t = self.clone();
        match t.messages.iter_mut().find(|m| m.role == Role::System) {
            Some(m) => m.content = instruction.to_string(),
            None => t.messages.insert(0, Message { role: Role::System, content: instruction.to_string() }),
        }
        t
    }
}

const BUILTIN: &[(&str, &str)] = &[
    ("go24_propose", include_str!("../../prompts/go24_propose.txt")),
    ("go24_value", include_str!("../../prompts/go24_value.txt")),
    ("go24_value_last_step", include_str!("../../prompts/go24_value_last_step.txt")),
    ("sort_generate", include_str!("../../prompts/sort_generate.txt")),
    ("sort_improve", include_str!("../../prompts/sort_improve.txt")),
    ("sort_aggregate", include_str!("../../prompts/sort_aggregate.txt")),
    ("decomp_understanding", include_str!("../../prompts/decomp_understanding.txt")),
    ("decomp_closed_book", include_str!("../../prompts/decomp_closed_book.txt")),
    ("decomp_child_aggregate", include_str!("../../prompts/decomp_child_aggregate.txt")),
    ("copro_propose", include_str!("../../prompts/copro_propose.txt")),
];

/// Named templates. Starts with the shipped set; entries can be overridden.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptLibrary {
    templates: BTreeMap<String, Template>,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|(name, text)| (name.to_string(), Template::parse(text).expect("shipped template parses")))
            .collect();
        PromptLibrary { templates }
    }
}

impl PromptLibrary {
    pub fn get(&self, name: &str) -> Result<&Template, TemplateError> {
        self.templates.get(name).ok_or_else(|| TemplateError::Unknown(name.to_string()))
    }

    pub fn insert(&mut self, name: impl Into<String>, template: Template) {
        self.templates.insert(name.into(), template);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    /// Overrides templates with every `<name>.txt` file in `dir`.
    pub fn load_dir(&mut self, dir: &Path) -> Result<usize, TemplateError> {
        let mut n = 0;
        let entries = std::fs::read_dir(dir).map_err(|e| TemplateError::Io(e.to_string()))?;
        for entry in entries {
            let path = entry.map_err(|e| TemplateError::Io(e.to_string()))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(name) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            let text = std::fs::read_to_string(&path).map_err(|e| TemplateError::Io(e.to_string()))?;
            self.templates.insert(name.to_string(), Template::parse(&text)?);
            n += 1;
        }
        Ok(n)
    }

    pub fn render(&self, name: &str, vars: &BTreeMap<String, String>) -> Result<Vec<Message>, TemplateError> {
        self.get(name)?.render(vars)
    }
}

/// Builds a variable map from `(name, value)` pairs.
pub fn vars<const N: usize>(pairs: [(&str, String); N]) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}
