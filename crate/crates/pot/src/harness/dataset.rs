//! JSONL dataset loading with remappable field names.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::{Category, Example, ProfileEntry, RubricAspect};
use crate::harness::HarnessError;

/// Field names used to read a dataset record; defaults match the native layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSchema {
    pub id_field: String,
    pub question_field: String,
    pub narrative_field: String,
    pub profile_field: String,
    pub profile_question_field: String,
    pub profile_narrative_field: String,
    pub aspects_field: String,
    pub aspect_text_field: String,
    pub category_field: String,
    /// Category assumed when a record has none.
    pub default_category: Option<String>,
}

impl Default for DatasetSchema {
    fn default() -> Self {
        DatasetSchema {
            id_field: "id".into(),
            question_field: "question".into(),
            narrative_field: "narrative".into(),
            profile_field: "profile".into(),
            profile_question_field: "question".into(),
            profile_narrative_field: "narrative".into(),
            aspects_field: "rubric".into(),
            aspect_text_field: "aspect".into(),
            category_field: "category".into(),
            default_category: None,
        }
    }
}

impl DatasetSchema {
    pub fn from_json_file(path: &Path) -> Result<Self, HarnessError> {
        let raw = std::fs::read_to_string(path)?;
        serde_json::from_str(&raw).map_err(HarnessError::Json)
    }
}

/// Reads one example per JSONL line, keeping only the `profile_limit` most
/// recent profile entries. Questions and rubrics are required; ids fall back
/// to the line number.
pub fn load_dataset(
    path: &Path,
    profile_limit: usize,
    schema: &DatasetSchema,
) -> Result<Vec<Example>, HarnessError> {
    if !path.is_file() {
        return Err(HarnessError::DatasetNotFound(path.to_path_buf()));
    }
    let raw = std::fs::read_to_string(path)?;
    let mut examples = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(line).map_err(|e| HarnessError::MalformedRecord {
                line: line_no,
                message: e.to_string(),
            })?;
        let record = value.as_object().ok_or_else(|| HarnessError::MalformedRecord {
            line: line_no,
            message: "record is not a JSON object".into(),
        })?;

        let question = string_field(record.get(&schema.question_field))
            .filter(|q| !q.trim().is_empty())
            .ok_or_else(|| HarnessError::MissingField {
                line: line_no,
                field: schema.question_field.clone(),
            })?;

        let question_id = match record.get(&schema.id_field) {
            Some(Value::String(s)) if !s.trim().is_empty() => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => format!("line{line_no}"),
        };

        let narrative = string_field(record.get(&schema.narrative_field)).unwrap_or_default();

        let mut profile = match record.get(&schema.profile_field) {
            Some(Value::Array(items)) => parse_profile(items, schema, line_no)?,
            Some(Value::Null) | None => Vec::new(),
            Some(_) => {
                return Err(HarnessError::MalformedRecord {
                    line: line_no,
                    message: format!("`{}` is not an array", schema.profile_field),
                })
            }
        };
        if profile.len() > profile_limit {
            profile.drain(..profile.len() - profile_limit);
        }

        let aspects = match record.get(&schema.aspects_field) {
            Some(Value::Array(items)) => parse_aspects(items, schema, line_no)?,
            _ => {
                return Err(HarnessError::MissingField {
                    line: line_no,
                    field: schema.aspects_field.clone(),
                })
            }
        };
        if aspects.is_empty() {
            return Err(HarnessError::MissingField {
                line: line_no,
                field: schema.aspects_field.clone(),
            });
        }

        let category = string_field(record.get(&schema.category_field))
            .or_else(|| schema.default_category.clone())
            .map(|name| Category::parse(&name))
            .unwrap_or(Category::Other("uncategorized".into()));

        examples.push(Example {
            question_id,
            question,
            narrative,
            profile,
            aspects,
            category,
        });
    }
    Ok(examples)
}

fn string_field(value: Option<&Value>) -> Option<String> {
    match value {
        Some(Value::String(s)) => Some(s.clone()),
        _ => None,
    }
}

fn parse_profile(
    items: &[Value],
    schema: &DatasetSchema,
    line_no: usize,
) -> Result<Vec<ProfileEntry>, HarnessError> {
    let mut profile = Vec::with_capacity(items.len());
    for item in items {
        match item {
            Value::String(s) => profile.push(ProfileEntry {
                question: s.clone(),
                narrative: String::new(),
            }),
            Value::Object(fields) => {
                let question = string_field(fields.get(&schema.profile_question_field))
                    .ok_or_else(|| HarnessError::MissingField {
                        line: line_no,
                        field: format!(
                            "{}.{}",
                            schema.profile_field, schema.profile_question_field
                        ),
                    })?;
                let narrative = string_field(fields.get(&schema.profile_narrative_field))
                    .unwrap_or_default();
                profile.push(ProfileEntry { question, narrative });
            }
            _ => {
                return Err(HarnessError::MalformedRecord {
                    line: line_no,
                    message: format!("`{}` entry is not a string or object", schema.profile_field),
                })
            }
        }
    }
    Ok(profile)
}

fn parse_aspects(
    items: &[Value],
    schema: &DatasetSchema,
    line_no: usize,
) -> Result<Vec<RubricAspect>, HarnessError> {
    let mut aspects = Vec::with_capacity(items.len());
    for item in items {
        let text = match item {
            Value::String(s) => s.clone(),
            Value::Object(fields) => string_field(fields.get(&schema.aspect_text_field))
                .or_else(|| string_field(fields.get("text")))
                .ok_or_else(|| HarnessError::MissingField {
                    line: line_no,
                    field: format!("{}.{}", schema.aspects_field, schema.aspect_text_field),
                })?,
            _ => {
                return Err(HarnessError::MalformedRecord {
                    line: line_no,
                    message: format!("`{}` entry is not a string or object", schema.aspects_field),
                })
            }
        };
        if !text.trim().is_empty() {
            aspects.push(RubricAspect { text });
        }
    }
    Ok(aspects)
}
