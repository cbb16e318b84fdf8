//! Core vocabulary shared by every other module: cognitive actions, user
//! profiles, evaluable examples, pathway traces, and trace validation.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::pathway::{allowed_actions, PotConfig};

/// One of the nine cognitive operations a pathway agent can select.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Answering,
    Planning,
    CheckingForPersonalization,
    Personalizing,
    Reasoning,
    Clarifying,
    Summarizing,
    Revising,
    Finalizing,
}

impl Action {
    /// Every action, in catalog order.
    pub const ALL: [Action; 9] = [
        Action::Answering,
        Action::Planning,
        Action::CheckingForPersonalization,
        Action::Personalizing,
        Action::Reasoning,
        Action::Clarifying,
        Action::Summarizing,
        Action::Revising,
        Action::Finalizing,
    ];

    /// Prompt-facing name, e.g. `checking for personalization`.
    pub fn display_name(&self) -> &'static str {
        match self {
            Action::Answering => "answering",
            Action::Planning => "planning",
            Action::CheckingForPersonalization => "checking for personalization",
            Action::Personalizing => "personalizing",
            Action::Reasoning => "reasoning",
            Action::Clarifying => "clarifying",
            Action::Summarizing => "summarizing",
            Action::Revising => "revising",
            Action::Finalizing => "finalizing",
        }
    }

    /// Parses a model reply into an action.
    ///
    /// Tolerates case, leading/trailing punctuation, underscore/hyphen
    /// separators, an `action:` prefix, and extra trailing lines (the first
    /// non-empty line wins). Returns `None` when no action name matches.
    pub fn parse(text: &str) -> Option<Action> {
        let line = text.lines().find(|l| !l.trim().is_empty())?;
        let mut normalized = line
            .to_lowercase()
            .replace(['_', '-'], " ")
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        normalized = normalized
            .trim_matches(|c: char| !c.is_ascii_alphanumeric() && c != ' ')
            .to_string();
        if let Some(rest) = normalized.strip_prefix("action:") {
            normalized = rest.trim().to_string();
        } else if let Some(rest) = normalized.strip_prefix("action ") {
            normalized = rest.trim().to_string();
        }
        Action::ALL
            .iter()
            .find(|a| a.display_name() == normalized)
            .copied()
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

/// Decoding parameters attached to a single completion request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub nucleus_p: f64,
    pub max_output_tokens: u32,
    pub seed: u64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 0.1,
            nucleus_p: 0.95,
            max_output_tokens: 1024,
            seed: 0,
        }
    }
}

impl SamplingParams {
    /// Low-temperature parameters used everywhere except diversified planning.
    pub fn base() -> Self {
        SamplingParams::default()
    }

    /// High-temperature parameters for diversified planning executions.
    pub fn planning() -> Self {
        SamplingParams {
            temperature: 0.9,
            ..SamplingParams::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }
}

/// One prior question from the user's history, with the narrative behind it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub question: String,
    #[serde(default)]
    pub narrative: String,
}

impl ProfileEntry {
    pub fn new(question: impl Into<String>, narrative: impl Into<String>) -> Self {
        ProfileEntry {
            question: question.into(),
            narrative: narrative.into(),
        }
    }
}

/// Topical category of a question; unknown labels are preserved verbatim.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    ArtsEntertainment,
    LifestylePersonalDevelopment,
    SocietyCulture,
    Other(String),
}

impl Category {
    /// Maps a free-form label onto a known category, keeping the original
    /// string when nothing matches.
    pub fn parse(label: &str) -> Category {
        let key: String = label
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_lowercase();
        match key.as_str() {
            "artsentertainment" | "artsandentertainment" => Category::ArtsEntertainment,
            "lifestylepersonaldevelopment" | "lifestyleandpersonaldevelopment" => {
                Category::LifestylePersonalDevelopment
            }
            "societyculture" | "societyandculture" => Category::SocietyCulture,
            _ => Category::Other(label.to_string()),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Category::ArtsEntertainment => "arts_entertainment",
            Category::LifestylePersonalDevelopment => "lifestyle_personal_development",
            Category::SocietyCulture => "society_culture",
            Category::Other(label) => label,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Category {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let label = String::deserialize(deserializer)?;
        Ok(Category::parse(&label))
    }
}

/// One expected aspect of a good answer, used by the rubric judge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricAspect {
    pub text: String,
}

impl RubricAspect {
    pub fn new(text: impl Into<String>) -> Self {
        RubricAspect { text: text.into() }
    }
}

/// A single evaluable question: what was asked, by whom, and how to grade it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub question_id: String,
    pub question: String,
    #[serde(default)]
    pub profile: Vec<ProfileEntry>,
    #[serde(default)]
    pub narrative: String,
    #[serde(default)]
    pub aspects: Vec<RubricAspect>,
    pub category: Category,
}

/// Why a pathway stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltReason {
    Finalize,
    BudgetExhausted,
}

/// One executed step of a pathway episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwayStep {
    /// Step index `t`, starting at 0.
    pub index: usize,
    /// Actions that were selectable at this step.
    pub allowed: BTreeSet<Action>,
    pub chosen: Action,
    /// Output of executing the chosen action.
    pub agent_output: String,
    /// Raw selection reply the action was parsed from.
    #[serde(default)]
    pub selection_raw: String,
    /// Sampling parameters used for the execution call.
    #[serde(default)]
    pub sampling: SamplingParams,
}

/// Full record of one pathway episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwayTrace {
    pub pathway_index: usize,
    pub steps: Vec<PathwayStep>,
    pub final_response: String,
    /// Profile view this pathway was initialized with (a subset under
    /// initial-state alteration, the full profile otherwise).
    pub profile_view: Vec<ProfileEntry>,
    pub seed: u64,
    pub halted_by: HaltReason,
}

/// Wire form of one step inside a trace line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub allowed: Vec<Action>,
    pub chosen: Action,
    pub agent_output: String,
}

/// Wire form of a trace, one JSON object per line in a `.jsonl` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub pathway_index: usize,
    pub seed: u64,
    pub halted_by: HaltReason,
    pub steps: Vec<StepRecord>,
    pub final_response: String,
}

impl PathwayTrace {
    pub fn to_record(&self) -> TraceRecord {
        TraceRecord {
            pathway_index: self.pathway_index,
            seed: self.seed,
            halted_by: self.halted_by,
            steps: self
                .steps
                .iter()
                .map(|s| StepRecord {
                    index: s.index,
                    allowed: s.allowed.iter().copied().collect(),
                    chosen: s.chosen,
                    agent_output: s.agent_output.clone(),
                })
                .collect(),
            final_response: self.final_response.clone(),
        }
    }

    /// Rebuilds an in-memory trace from its wire form. Fields the wire form
    /// does not carry (profile view, raw selections, sampling) come back
    /// empty or defaulted.
    pub fn from_record(record: &TraceRecord) -> PathwayTrace {
        PathwayTrace {
            pathway_index: record.pathway_index,
            steps: record
                .steps
                .iter()
                .map(|s| PathwayStep {
                    index: s.index,
                    allowed: s.allowed.iter().copied().collect(),
                    chosen: s.chosen,
                    agent_output: s.agent_output.clone(),
                    selection_raw: String::new(),
                    sampling: SamplingParams::default(),
                })
                .collect(),
            final_response: record.final_response.clone(),
            profile_view: Vec::new(),
            seed: record.seed,
            halted_by: record.halted_by,
        }
    }
}

/// Writes traces as JSONL, one record per line, in the given order.
pub fn write_traces_jsonl(path: &Path, traces: &[PathwayTrace]) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for trace in traces {
        let line = serde_json::to_string(&trace.to_record())
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Reads a JSONL trace file produced by [`write_traces_jsonl`].
pub fn read_traces_jsonl(path: &Path) -> std::io::Result<Vec<TraceRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("line {}: {e}", i + 1),
            )
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Candidate responses surviving a multi-pathway run, ordered by pathway index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    candidates: Vec<(usize, String)>,
}

impl CandidateSet {
    /// Builds a set from `(pathway_index, response)` pairs, sorting by index.
    /// Empty input and duplicate indices are rejected.
    pub fn new(mut candidates: Vec<(usize, String)>) -> Result<Self, DomainError> {
        if candidates.is_empty() {
            return Err(DomainError::EmptyCandidateSet);
        }
        candidates.sort_by_key(|(i, _)| *i);
        for pair in candidates.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(DomainError::DuplicateCandidateIndex(pair[0].0));
            }
        }
        Ok(CandidateSet { candidates })
    }

    pub fn candidates(&self) -> &[(usize, String)] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Candidate at list position `i` (not pathway index).
    pub fn get(&self, i: usize) -> Option<&(usize, String)> {
        self.candidates.get(i)
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().map(|(_, text)| text.as_str())
    }
}

/// Distilled summary of what matters to the user, extracted from the profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceSummary {
    pub text: String,
    /// Number of profile entries the summary was extracted from.
    pub source_profile_size: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum DomainError {
    #[error("candidate set is empty")]
    EmptyCandidateSet,
    #[error("duplicate candidate for pathway index {0}")]
    DuplicateCandidateIndex(usize),
}

/// A single broken trace invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyTrace,
    FirstActionNotPlanning { found: Action },
    RevisingBeforeAnswering { step: usize },
    FinalizingNotLast { step: usize },
    BudgetExceeded { steps: usize, max: usize },
    ChosenNotAllowed { step: usize, chosen: Action },
    AllowedSetMismatch { step: usize },
    StepIndexMismatch { step: usize, found: usize },
    HaltReasonMismatch,
    EmptyFinalResponse,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyTrace => write!(f, "trace has no steps"),
            Violation::FirstActionNotPlanning { found } => {
                write!(f, "first action must be planning, found {found}")
            }
            Violation::RevisingBeforeAnswering { step } => {
                write!(f, "step {step}: revising before any answering")
            }
            Violation::FinalizingNotLast { step } => {
                write!(f, "step {step}: finalizing is not the last step")
            }
            Violation::BudgetExceeded { steps, max } => {
                write!(f, "{steps} steps exceed the budget of {max}")
            }
            Violation::ChosenNotAllowed { step, chosen } => {
                write!(f, "step {step}: chosen action {chosen} was not allowed")
            }
            Violation::AllowedSetMismatch { step } => {
                write!(f, "step {step}: recorded allowed set does not match the gating rules")
            }
            Violation::StepIndexMismatch { step, found } => {
                write!(f, "step {step}: recorded index is {found}")
            }
            Violation::HaltReasonMismatch => {
                write!(f, "halt reason does not match the last step")
            }
            Violation::EmptyFinalResponse => write!(f, "final response is empty"),
        }
    }
}

/// Outcome of checking a trace against every structural invariant.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks a trace against the gating rules and structural invariants; the
/// report lists zero violations iff all of them hold.
pub fn validate_trace(trace: &PathwayTrace, config: &PotConfig) -> ValidationReport {
    let mut violations = Vec::new();
    if trace.steps.is_empty() {
        return ValidationReport {
            violations: vec![Violation::EmptyTrace],
        };
    }

    if trace.steps[0].chosen != Action::Planning {
        violations.push(Violation::FirstActionNotPlanning {
            found: trace.steps[0].chosen,
        });
    }
    if trace.steps.len() > config.max_actions {
        violations.push(Violation::BudgetExceeded {
            steps: trace.steps.len(),
            max: config.max_actions,
        });
    }

    let last = trace.steps.len() - 1;
    for (t, step) in trace.steps.iter().enumerate() {
        if step.index != t {
            violations.push(Violation::StepIndexMismatch {
                step: t,
                found: step.index,
            });
        }
        let expected = allowed_actions(&trace.steps[..t], t);
        if step.allowed != expected {
            violations.push(Violation::AllowedSetMismatch { step: t });
        }
        if !step.allowed.contains(&step.chosen) {
            violations.push(Violation::ChosenNotAllowed {
                step: t,
                chosen: step.chosen,
            });
        }
        if step.chosen == Action::Revising
            && !trace.steps[..t].iter().any(|s| s.chosen == Action::Answering)
        {
            violations.push(Violation::RevisingBeforeAnswering { step: t });
        }
        if step.chosen == Action::Finalizing && t != last {
            violations.push(Violation::FinalizingNotLast { step: t });
        }
    }

    let finalized = trace.steps[last].chosen == Action::Finalizing;
    if finalized != (trace.halted_by == HaltReason::Finalize) {
        violations.push(Violation::HaltReasonMismatch);
    }
    if trace.final_response.is_empty() {
        violations.push(Violation::EmptyFinalResponse);
    }

    ValidationReport { violations }
}
