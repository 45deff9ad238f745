//! Prompt templates with named placeholders and few-shot example injection.
//!
//! Templates live as plain-text files, one per key, named `<key>.prompt`.
//! A file is a sequence of sections introduced by sentinel lines:
//!
//! ```text
//! --- system
//! <system text>
//! --- few-shot user
//! <example user turn>
//! --- few-shot assistant
//! <example assistant turn>
//! --- user
//! <final user text with {placeholders}>
//! ```
//!
//! `system` and `user` are required; `few-shot user`/`few-shot assistant`
//! pairs may repeat and must alternate in order. Placeholders are
//! `{lower_snake_case}` names substituted into the system and user sections
//! at render time; few-shot turns are literal.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use super::{ChatRequest, ClientError, Message, Role};

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub key: String,
    pub system_text: String,
    pub user_text: String,
    /// Ordered (user, assistant) example pairs.
    pub few_shot: Vec<(String, String)>,
}

impl PromptTemplate {
    /// Render into a request: system message, interleaved few-shot pairs,
    /// then the final user message. Pure in (template, bindings); extra
    /// bindings are ignored, missing ones fail.
    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<ChatRequest, ClientError> {
        let system = substitute(&self.system_text, bindings)?;
        let user = substitute(&self.user_text, bindings)?;
        let mut messages = Vec::with_capacity(2 + 2 * self.few_shot.len());
        messages.push(Message::text(Role::System, system));
        for (example_user, example_assistant) in &self.few_shot {
            messages.push(Message::text(Role::User, example_user.clone()));
            messages.push(Message::text(Role::Assistant, example_assistant.clone()));
        }
        messages.push(Message::text(Role::User, user));
        Ok(ChatRequest {
            model_name: String::new(),
            messages,
            temperature: 0.0,
            max_tokens: 1024,
            trace_key: None,
        })
    }

    /// Parse the documented file format.
    pub fn parse(key: &str, text: &str) -> Result<PromptTemplate, TemplateError> {
        #[derive(PartialEq, Clone, Copy)]
        enum Section {
            System,
            User,
            FewShotUser,
            FewShotAssistant,
        }

        let mut sections: Vec<(Section, String)> = Vec::new();
        let mut current: Option<(Section, Vec<&str>)> = None;

        let flush = |sections: &mut Vec<(Section, String)>, cur: Option<(Section, Vec<&str>)>| {
            if let Some((section, lines)) = cur {
                let body = lines.join("\n").trim().to_owned();
                sections.push((section, body));
            }
        };

        for line in text.lines() {
            let section = match line.trim_end() {
                "--- system" => Some(Section::System),
                "--- user" => Some(Section::User),
                "--- few-shot user" => Some(Section::FewShotUser),
                "--- few-shot assistant" => Some(Section::FewShotAssistant),
                _ => None,
            };
            match section {
                Some(s) => {
                    flush(&mut sections, current.take());
                    current = Some((s, Vec::new()));
                }
                None => match current.as_mut() {
                    Some((_, lines)) => lines.push(line),
                    None => {
                        if !line.trim().is_empty() {
                            return Err(TemplateError::Parse {
                                key: key.to_owned(),
                                message: format!("text before first section sentinel: {line:?}"),
                            });
                        }
                    }
                },
            }
        }
        flush(&mut sections, current.take());

        let mut system_text = None;
        let mut user_text = None;
        let mut few_shot: Vec<(String, String)> = Vec::new();
        let mut pending_user: Option<String> = None;
        let parse_err = |message: String| TemplateError::Parse {
            key: key.to_owned(),
            message,
        };

        for (section, body) in sections {
            match section {
                Section::System => {
                    if system_text.replace(body).is_some() {
                        return Err(parse_err("duplicate `system` section".into()));
                    }
                }
                Section::User => {
                    if user_text.replace(body).is_some() {
                        return Err(parse_err("duplicate `user` section".into()));
                    }
                }
                Section::FewShotUser => {
                    if pending_user.is_some() {
                        return Err(parse_err("few-shot user without matching assistant".into()));
                    }
                    pending_user = Some(body);
                }
                Section::FewShotAssistant => match pending_user.take() {
                    Some(user) => few_shot.push((user, body)),
                    None => {
                        return Err(parse_err("few-shot assistant without preceding user".into()))
                    }
                },
            }
        }
        if pending_user.is_some() {
            return Err(parse_err("unpaired trailing few-shot user".into()));
        }

        Ok(PromptTemplate {
            key: key.to_owned(),
            system_text: system_text.ok_or_else(|| parse_err("missing `system` section".into()))?,
            user_text: user_text.ok_or_else(|| parse_err("missing `user` section".into()))?,
            few_shot,
        })
    }
}

/// Substitute `{name}` placeholders. A `{` is a placeholder opener only when
/// followed by a snake_case identifier and a closing `}`; anything else is
/// literal text.
fn substitute(
    text: &str,
    bindings: &BTreeMap<String, String>,
) -> Result<String, ClientError> {
    let mut out = String::with_capacity(text.len());
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if let Some(end) = text[i + 1..].find('}').map(|o| i + 1 + o) {
                let name = &text[i + 1..end];
                if is_placeholder_name(name) {
                    match bindings.get(name) {
                        Some(value) => out.push_str(value),
                        None => return Err(ClientError::UnboundPlaceholder(name.to_owned())),
                    }
                    i = end + 1;
                    continue;
                }
            }
        }
        let ch = text[i..].chars().next().expect("in-bounds char");
        out.push(ch);
        i += ch.len_utf8();
    }
    Ok(out)
}

fn is_placeholder_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
        && name.as_bytes()[0].is_ascii_lowercase()
}

/// Convenience for building binding maps.
pub fn bindings<const N: usize>(pairs: [(&str, &str); N]) -> BTreeMap<String, String> {
    pairs
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("template `{key}`: {message}")]
    Parse { key: String, message: String },
    #[error("unknown template key `{0}`")]
    UnknownKey(String),
    #[error("reading template dir: {0}")]
    Io(#[from] std::io::Error),
}

/// Keyed store of templates. Starts from the built-in set compiled into the
/// crate; a `prompts/` directory overlays or extends it, keyed by file stem.
#[derive(Debug, Clone)]
pub struct TemplateStore {
    templates: BTreeMap<String, PromptTemplate>,
}

macro_rules! builtin {
    ($map:expr, $key:literal) => {
        let text = include_str!(concat!("../../../../prompts/", $key, ".prompt"));
        let template = PromptTemplate::parse($key, text)
            .expect(concat!("built-in template ", $key, " must parse"));
        $map.insert($key.to_owned(), template);
    };
}

impl TemplateStore {
    /// The built-in template set shipped with the crate.
    pub fn builtin() -> TemplateStore {
        let mut templates = BTreeMap::new();
        builtin!(templates, "extract_premise");
        builtin!(templates, "caption_premise");
        builtin!(templates, "corrupt_premise");
        builtin!(templates, "question_negative");
        builtin!(templates, "question_positive");
        builtin!(templates, "answer_false");
        builtin!(templates, "answer_true");
        builtin!(templates, "evaluate_question");
        builtin!(templates, "judge_reasoning");
        TemplateStore { templates }
    }

    /// Built-ins overlaid with every `*.prompt` file in `dir`.
    pub fn with_overrides(dir: &Path) -> Result<TemplateStore, TemplateError> {
        let mut store = TemplateStore::builtin();
        let mut entries: Vec<_> = std::fs::read_dir(dir)?
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.extension().map(|e| e == "prompt").unwrap_or(false))
            .collect();
        entries.sort();
        for path in entries {
            let key = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_owned();
            let text = std::fs::read_to_string(&path)?;
            let template = PromptTemplate::parse(&key, &text)?;
            store.templates.insert(key, template);
        }
        Ok(store)
    }

    pub fn get(&self, key: &str) -> Result<&PromptTemplate, TemplateError> {
        self.templates
            .get(key)
            .ok_or_else(|| TemplateError::UnknownKey(key.to_owned()))
    }

    /// Lookup with a fallback key, used for per-subtype extraction prompts
    /// that default to the shared template.
    pub fn get_or(&self, key: &str, fallback: &str) -> Result<&PromptTemplate, TemplateError> {
        self.templates
            .get(key)
            .map(Ok)
            .unwrap_or_else(|| self.get(fallback))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(|k| k.as_str())
    }
}

impl fmt::Display for PromptTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "template `{}`", self.key)
    }
}
