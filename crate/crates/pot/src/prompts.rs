//! Prompt templates: a named registry with `{{placeholder}}` substitution,
//! plus the canonical renderings of profiles, candidate lists, and action
//! lists that get bound into them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::domain::{Action, ProfileEntry};

/// Every template the engine uses, in registry order.
pub const TEMPLATE_NAMES: [&str; 12] = [
    "init_state",
    "action_selection",
    "action_execution",
    "preference_extraction",
    "best_of_n",
    "mixture_of_n",
    "baseline_plain",
    "baseline_cot",
    "tot_plan",
    "tot_generate",
    "tot_select_plan",
    "judge_aspect",
];

const BUILTIN: [(&str, &str); 12] = [
    ("init_state", include_str!("../prompts/init_state.txt")),
    ("action_selection", include_str!("../prompts/action_selection.txt")),
    ("action_execution", include_str!("../prompts/action_execution.txt")),
    (
        "preference_extraction",
        include_str!("../prompts/preference_extraction.txt"),
    ),
    ("best_of_n", include_str!("../prompts/best_of_n.txt")),
    ("mixture_of_n", include_str!("../prompts/mixture_of_n.txt")),
    ("baseline_plain", include_str!("../prompts/baseline_plain.txt")),
    ("baseline_cot", include_str!("../prompts/baseline_cot.txt")),
    ("tot_plan", include_str!("../prompts/tot_plan.txt")),
    ("tot_generate", include_str!("../prompts/tot_generate.txt")),
    ("tot_select_plan", include_str!("../prompts/tot_select_plan.txt")),
    ("judge_aspect", include_str!("../prompts/judge_aspect.txt")),
];

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("template `{template}` is missing a binding for `{placeholder}`")]
    MissingBinding { template: String, placeholder: String },
    #[error("template manifest has no entry for `{0}`")]
    MissingTemplate(String),
    #[error("failed to read template file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse template manifest: {0}")]
    MalformedManifest(String),
}

/// Named prompt templates with `{{placeholder}}` slots.
#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, String>,
}

impl TemplateRegistry {
    /// The compiled-in template set.
    pub fn builtin() -> Self {
        TemplateRegistry {
            templates: BUILTIN
                .iter()
                .map(|(name, text)| (name.to_string(), text.to_string()))
                .collect(),
        }
    }

    /// Loads templates from a JSON manifest mapping template names to file
    /// paths (relative paths resolve against the manifest's directory).
    /// Every name in [`TEMPLATE_NAMES`] must be present.
    pub fn from_manifest(manifest_path: &Path) -> Result<Self, PromptError> {
        let raw = std::fs::read_to_string(manifest_path).map_err(|source| PromptError::Io {
            path: manifest_path.display().to_string(),
            source,
        })?;
        let mapping: BTreeMap<String, String> = serde_json::from_str(&raw)
            .map_err(|e| PromptError::MalformedManifest(e.to_string()))?;
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let mut templates = BTreeMap::new();
        for name in TEMPLATE_NAMES {
            let rel = mapping
                .get(name)
                .ok_or_else(|| PromptError::MissingTemplate(name.to_string()))?;
            let path = base.join(rel);
            let text = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })?;
            templates.insert(name.to_string(), text);
        }
        Ok(TemplateRegistry { templates })
    }

    /// Raw text of one template.
    pub fn template(&self, name: &str) -> Result<&str, PromptError> {
        self.templates
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| PromptError::UnknownTemplate(name.to_string()))
    }

    /// Renders a template, substituting every `{{placeholder}}` from the
    /// bindings. A placeholder without a binding is an error; unused
    /// bindings are fine.
    pub fn render(&self, name: &str, bindings: &[(&str, &str)]) -> Result<String, PromptError> {
        let template = self.template(name)?;
        let mut out = String::with_capacity(template.len());
        let mut rest = template;
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            match after.find("}}") {
                Some(end) => {
                    let placeholder = after[..end].trim();
                    let value = bindings
                        .iter()
                        .find(|(key, _)| *key == placeholder)
                        .map(|(_, value)| *value)
                        .ok_or_else(|| PromptError::MissingBinding {
                            template: name.to_string(),
                            placeholder: placeholder.to_string(),
                        })?;
                    out.push_str(value);
                    rest = &after[end + 2..];
                }
                None => {
                    // unmatched braces are literal text
                    out.push_str("{{");
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }

    /// SHA-256 hex digest of each template, for run manifests.
    pub fn hashes(&self) -> BTreeMap<String, String> {
        self.templates
            .iter()
            .map(|(name, text)| {
                let digest = Sha256::digest(text.as_bytes());
                let mut hex = String::with_capacity(64);
                for byte in digest {
                    let _ = write!(hex, "{byte:02x}");
                }
                (name.clone(), hex)
            })
            .collect()
    }
}

/// Renders a profile as a numbered list: `[i] question — narrative`.
pub fn render_profile(entries: &[ProfileEntry]) -> String {
    let mut out = String::new();
    for (i, entry) in entries.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = write!(out, "[{}] {} — {}", i + 1, entry.question, entry.narrative);
    }
    if entries.is_empty() {
        out.push_str("(no prior questions)");
    }
    out
}

/// Renders candidates as numbered blocks: `[i]` followed by the text,
/// numbered from 0 to match the selection reply format.
pub fn render_numbered(texts: &[&str]) -> String {
    let mut out = String::new();
    for (i, text) in texts.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        let _ = write!(out, "[{i}]\n{text}");
    }
    out
}

/// Renders an allowed-action set as one `- name` line per action.
pub fn render_action_list<'a>(actions: impl IntoIterator<Item = &'a Action>) -> String {
    let mut out = String::new();
    for (i, action) in actions.into_iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = write!(out, "- {}", action.display_name());
    }
    out
}
