//! Single-pathway episodes: an agent picks one cognitive action at a time,
//! an execution call performs it, and the growing state records everything.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{
    Action, Example, HaltReason, PathwayStep, PathwayTrace, ProfileEntry, SamplingParams,
};
use crate::llm::{Backend, CompletionRequest, LlmError};
use crate::prompts::{render_action_list, render_profile, PromptError, TemplateRegistry};

/// How pathways are diversified across a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Full profile everywhere; planning executions run hot.
    PlanningActionVariation,
    /// Each pathway sees a random profile subset; all sampling stays cool.
    InitialStateAlteration,
}

/// How surviving pathway responses are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    MixtureOfN,
    BestOfN,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().replace('-', "_").as_str() {
            "planning_action_variation" | "pav" => Ok(Strategy::PlanningActionVariation),
            "initial_state_alteration" | "isa" => Ok(Strategy::InitialStateAlteration),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

impl std::str::FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().replace('-', "_").as_str() {
            "mixture_of_n" | "mixture" => Ok(Aggregation::MixtureOfN),
            "best_of_n" | "best" => Ok(Aggregation::BestOfN),
            other => Err(format!("unknown aggregation `{other}`")),
        }
    }
}

/// Knobs for a multi-pathway run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PotConfig {
    /// Step budget per pathway (`T`).
    pub max_actions: usize,
    /// Number of pathways (`N`).
    pub pathways: usize,
    pub strategy: Strategy,
    /// Diversification parameter: planning temperature under
    /// [`Strategy::PlanningActionVariation`], profile subset fraction under
    /// [`Strategy::InitialStateAlteration`].
    pub tau: f64,
    pub base_sampling: SamplingParams,
    pub planning_sampling: SamplingParams,
    pub aggregation: Aggregation,
    pub seed: u64,
    /// Restrict hot planning to the first planning execution of an episode.
    pub first_planning_only: bool,
    /// Route single-candidate mixtures through the model anyway.
    pub literal_n1: bool,
    /// Total attempts when parsing a selection reply (including the first).
    pub parse_retry_max: u32,
    /// Render executions through the `action_execution` template instead of
    /// appending the bare action name.
    pub use_execution_template: bool,
    /// Worker threads for pathway fan-out (1 = sequential).
    pub parallelism: usize,
}

impl Default for PotConfig {
    fn default() -> Self {
        PotConfig {
            max_actions: 8,
            pathways: 16,
            strategy: Strategy::PlanningActionVariation,
            tau: 0.9,
            base_sampling: SamplingParams::base(),
            planning_sampling: SamplingParams::planning(),
            aggregation: Aggregation::MixtureOfN,
            seed: 0,
            first_planning_only: false,
            literal_n1: true,
            parse_retry_max: 3,
            use_execution_template: false,
            parallelism: 1,
        }
    }
}

impl PotConfig {
    pub fn validate(&self) -> Result<(), PathwayError> {
        if self.max_actions == 0 {
            return Err(PathwayError::InvalidConfig("max_actions must be at least 1".into()));
        }
        if self.pathways == 0 {
            return Err(PathwayError::InvalidConfig("pathways must be at least 1".into()));
        }
        if self.parse_retry_max == 0 {
            return Err(PathwayError::InvalidConfig("parse_retry_max must be at least 1".into()));
        }
        if self.parallelism == 0 {
            return Err(PathwayError::InvalidConfig("parallelism must be at least 1".into()));
        }
        match self.strategy {
            Strategy::InitialStateAlteration => {
                if !(self.tau > 0.0 && self.tau <= 1.0) {
                    return Err(PathwayError::InvalidConfig(format!(
                        "tau must be in (0, 1] for initial-state alteration, got {}",
                        self.tau
                    )));
                }
            }
            Strategy::PlanningActionVariation => {
                if !(self.tau >= 0.0 && self.tau <= 2.0) {
                    return Err(PathwayError::InvalidConfig(format!(
                        "tau must be in [0, 2] for planning-action variation, got {}",
                        self.tau
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PathwayError {
    #[error("no action could be parsed after {attempts} attempts; last reply: {last:?}")]
    UnparseableAction { attempts: u32, last: String },
    #[error("agent kept selecting disallowed actions after {attempts} attempts; last reply: {last:?}")]
    DisallowedAction { attempts: u32, last: String },
    #[error("action execution returned an empty output")]
    EmptyOutput,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

/// Derives a child seed from a base seed and a label path, stable across
/// platforms and releases of this crate.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

/// Actions selectable at step `t` given the executed prefix: exactly
/// planning at t=0, everything but revising until an answering step exists,
/// all nine after.
pub fn allowed_actions(prefix: &[PathwayStep], t: usize) -> BTreeSet<Action> {
    debug_assert_eq!(prefix.len(), t, "prefix length must equal the step index");
    if t == 0 {
        return [Action::Planning].into_iter().collect();
    }
    let mut allowed: BTreeSet<Action> = Action::ALL.into_iter().collect();
    if !prefix.iter().any(|s| s.chosen == Action::Answering) {
        allowed.remove(&Action::Revising);
    }
    allowed
}

fn join(state: &str, part: &str) -> String {
    format!("{state}\n\n{part}")
}

/// Renders the episode's initial state: question, profile view, and the
/// full action catalog.
pub fn initial_state(
    example: &Example,
    profile_view: &[ProfileEntry],
    registry: &TemplateRegistry,
) -> Result<String, PromptError> {
    registry.render(
        "init_state",
        &[
            ("question", example.question.as_str()),
            ("profile", &render_profile(profile_view)),
        ],
    )
}

fn selection_prompt(
    allowed: &BTreeSet<Action>,
    registry: &TemplateRegistry,
) -> Result<String, PromptError> {
    registry.render("action_selection", &[("actions", &render_action_list(allowed))])
}

fn action_text(
    chosen: Action,
    config: &PotConfig,
    registry: &TemplateRegistry,
) -> Result<String, PromptError> {
    if config.use_execution_template {
        registry.render("action_execution", &[("action", chosen.display_name())])
    } else {
        Ok(chosen.display_name().to_string())
    }
}

/// Re-renders the episode state after the given steps, from scratch.
///
/// The rendering is a fixed concatenation: the initial state, then for each
/// step the selection prompt (from its recorded allowed set), the action
/// text, and the execution output, all joined by blank lines. This is the
/// exact fold [`Episode`] maintains incrementally, so the state after any
/// step prefix is a strict prefix of the state after a longer one.
pub fn render_state(
    example: &Example,
    profile_view: &[ProfileEntry],
    steps: &[PathwayStep],
    config: &PotConfig,
    registry: &TemplateRegistry,
) -> Result<String, PathwayError> {
    let mut state = initial_state(example, profile_view, registry)?;
    for step in steps {
        state = join(&state, &selection_prompt(&step.allowed, registry)?);
        state = join(&state, &action_text(step.chosen, config, registry)?);
        state = join(&state, &step.agent_output);
    }
    Ok(state)
}

/// One in-flight pathway episode.
pub struct Episode<'a> {
    backend: &'a dyn Backend,
    registry: &'a TemplateRegistry,
    config: &'a PotConfig,
    profile_view: Vec<ProfileEntry>,
    tag_prefix: String,
    seed: u64,
    pathway_index: usize,
    state: String,
    steps: Vec<PathwayStep>,
}

impl<'a> Episode<'a> {
    /// Prepares an episode; renders the initial state but makes no backend
    /// calls. The episode seed is derived from the config seed, the
    /// question id, and the pathway index.
    pub fn new(
        example: &Example,
        profile_view: &[ProfileEntry],
        config: &'a PotConfig,
        backend: &'a dyn Backend,
        registry: &'a TemplateRegistry,
        pathway_index: usize,
    ) -> Result<Self, PathwayError> {
        config.validate()?;
        let seed = derive_seed(
            config.seed,
            &[example.question_id.as_str(), &pathway_index.to_string()],
        );
        Ok(Episode {
            backend,
            registry,
            config,
            profile_view: profile_view.to_vec(),
            tag_prefix: format!("{}/pw{}", example.question_id, pathway_index),
            seed,
            pathway_index,
            state: initial_state(example, profile_view, registry)?,
            steps: Vec::new(),
        })
    }

    pub fn state(&self) -> &str {
        &self.state
    }

    pub fn steps(&self) -> &[PathwayStep] {
        &self.steps
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn execution_sampling(&self, chosen: Action, t: usize) -> SamplingParams {
        let hot_planning = chosen == Action::Planning
            && self.config.strategy == Strategy::PlanningActionVariation
            && (!self.config.first_planning_only
                || !self.steps.iter().any(|s| s.chosen == Action::Planning));
        let params = if hot_planning {
            self.config.planning_sampling
        } else {
            self.config.base_sampling
        };
        params.with_seed(derive_seed(self.seed, &["exec", &t.to_string()]))
    }

    /// Runs one MDP step: a selection call, then an execution call. Exactly
    /// two backend calls unless the selection reply needs re-asking.
    pub fn step(&mut self) -> Result<Action, PathwayError> {
        let t = self.steps.len();
        let allowed = allowed_actions(&self.steps, t);
        let selection = selection_prompt(&allowed, self.registry)?;
        let base_request = join(&self.state, &selection);

        let mut chosen = None;
        let mut last_reply = String::new();
        let mut parse_failed = true;
        for attempt in 1..=self.config.parse_retry_max {
            let mut content = base_request.clone();
            if attempt > 1 {
                content = join(
                    &content,
                    &format!(
                        "Your previous reply was not a valid selection. Reply with exactly one of these action names on a single line:\n{}",
                        render_action_list(&allowed)
                    ),
                );
            }
            let sampling = self.config.base_sampling.with_seed(derive_seed(
                self.seed,
                &["select", &t.to_string(), &attempt.to_string()],
            ));
            let request =
                CompletionRequest::user(content, sampling, format!("{}/select", self.tag_prefix));
            let reply = self.backend.complete(&request)?.text;
            match Action::parse(&reply) {
                Some(action) if allowed.contains(&action) => {
                    chosen = Some((action, reply));
                    break;
                }
                Some(_) => {
                    parse_failed = false;
                    last_reply = reply;
                }
                None => {
                    parse_failed = true;
                    last_reply = reply;
                }
            }
        }
        let (chosen, selection_raw) = chosen.ok_or_else(|| {
            if parse_failed {
                PathwayError::UnparseableAction {
                    attempts: self.config.parse_retry_max,
                    last: last_reply.clone(),
                }
            } else {
                PathwayError::DisallowedAction {
                    attempts: self.config.parse_retry_max,
                    last: last_reply.clone(),
                }
            }
        })?;

        let action = action_text(chosen, self.config, self.registry)?;
        let sampling = self.execution_sampling(chosen, t);
        let request = CompletionRequest::user(
            join(&base_request, &action),
            sampling,
            format!("{}/exec", self.tag_prefix),
        );
        let output = self.backend.complete(&request)?.text;
        if output.trim().is_empty() {
            return Err(PathwayError::EmptyOutput);
        }

        self.state = join(&join(&base_request, &action), &output);
        self.steps.push(PathwayStep {
            index: t,
            allowed,
            chosen,
            agent_output: output,
            selection_raw,
            sampling,
        });
        Ok(chosen)
    }

    /// One extra execution that forces a final response when the step budget
    /// ran out without the agent finalizing. Not recorded as a step.
    fn forced_finalize(&mut self) -> Result<String, PathwayError> {
        let allowed: BTreeSet<Action> = [Action::Finalizing].into_iter().collect();
        let selection = selection_prompt(&allowed, self.registry)?;
        let action = action_text(Action::Finalizing, self.config, self.registry)?;
        let sampling = self
            .config
            .base_sampling
            .with_seed(derive_seed(self.seed, &["exec", "forced"]));
        let request = CompletionRequest::user(
            join(&join(&self.state, &selection), &action),
            sampling,
            format!("{}/exec", self.tag_prefix),
        );
        let output = self.backend.complete(&request)?.text;
        if output.trim().is_empty() {
            return Err(PathwayError::EmptyOutput);
        }
        Ok(output)
    }

    /// Runs the episode to completion: steps until the agent finalizes or
    /// the budget is exhausted (which forces a finalize).
    pub fn run(mut self) -> Result<PathwayTrace, PathwayError> {
        while self.steps.len() < self.config.max_actions {
            if self.step()? == Action::Finalizing {
                let final_response = self
                    .steps
                    .last()
                    .map(|s| s.agent_output.clone())
                    .unwrap_or_default();
                return Ok(PathwayTrace {
                    pathway_index: self.pathway_index,
                    steps: self.steps,
                    final_response,
                    profile_view: self.profile_view,
                    seed: self.seed,
                    halted_by: HaltReason::Finalize,
                });
            }
        }
        let final_response = self.forced_finalize()?;
        Ok(PathwayTrace {
            pathway_index: self.pathway_index,
            steps: self.steps,
            final_response,
            profile_view: self.profile_view,
            seed: self.seed,
            halted_by: HaltReason::BudgetExhausted,
        })
    }
}

/// Runs one full pathway episode for an example.
pub fn run_pathway(
    example: &Example,
    profile_view: &[ProfileEntry],
    config: &PotConfig,
    backend: &dyn Backend,
    registry: &TemplateRegistry,
    pathway_index: usize,
) -> Result<PathwayTrace, PathwayError> {
    Episode::new(example, profile_view, config, backend, registry, pathway_index)?.run()
}

/// Aggregate shape statistics over a set of traces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathwayStats {
    pub total_traces: usize,
    /// Number of distinct action sequences.
    pub unique_sequences: usize,
    /// Mean recorded steps per trace (forced finalizes are not steps).
    pub mean_actions: f64,
    /// How often each action was chosen, across all steps.
    pub action_histogram: BTreeMap<Action, usize>,
}

/// Summarizes trace shapes; an empty slice yields zeroed stats.
pub fn pathway_stats(traces: &[PathwayTrace]) -> PathwayStats {
    let mut sequences: BTreeSet<Vec<Action>> = BTreeSet::new();
    let mut histogram: BTreeMap<Action, usize> = BTreeMap::new();
    let mut total_steps = 0usize;
    for trace in traces {
        let sequence: Vec<Action> = trace.steps.iter().map(|s| s.chosen).collect();
        total_steps += sequence.len();
        for action in &sequence {
            *histogram.entry(*action).or_insert(0) += 1;
        }
        sequences.insert(sequence);
    }
    PathwayStats {
        total_traces: traces.len(),
        unique_sequences: sequences.len(),
        mean_actions: if traces.is_empty() {
            0.0
        } else {
            total_steps as f64 / traces.len() as f64
        },
        action_histogram: histogram,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{validate_trace, Category};
    use crate::llm::ScriptedBackend;

    fn example() -> Example {
        Example {
            question_id: "q1".into(),
            question: "What laptop should I buy?".into(),
            profile: vec![
                ProfileEntry::new("Is Linux hard to learn?", "Thinking of switching OS."),
                ProfileEntry::new("Best mechanical keyboard?", "I type all day."),
            ],
            narrative: "Shopping for a dev machine.".into(),
            aspects: vec![],
            category: Category::Other("tech".into()),
        }
    }

    fn config() -> PotConfig {
        PotConfig {
            pathways: 1,
            ..PotConfig::default()
        }
    }

    #[test]
    fn test_allowed_actions_gating() {
        let planning_only = allowed_actions(&[], 0);
        assert_eq!(
            planning_only,
            [Action::Planning].into_iter().collect::<BTreeSet<_>>()
        );

        let planned = vec![PathwayStep {
            index: 0,
            allowed: planning_only.clone(),
            chosen: Action::Planning,
            agent_output: "plan".into(),
            selection_raw: "planning".into(),
            sampling: SamplingParams::default(),
        }];
        let after_planning = allowed_actions(&planned, 1);
        assert_eq!(after_planning.len(), 8);
        assert!(!after_planning.contains(&Action::Revising));
        assert!(after_planning.contains(&Action::Finalizing));

        let mut answered = planned.clone();
        answered.push(PathwayStep {
            index: 1,
            allowed: after_planning.clone(),
            chosen: Action::Answering,
            agent_output: "answer".into(),
            selection_raw: "answering".into(),
            sampling: SamplingParams::default(),
        });
        let after_answering = allowed_actions(&answered, 2);
        assert_eq!(after_answering.len(), 9);
        assert!(after_answering.contains(&Action::Revising));
    }

    #[test]
    fn test_run_pathway_finalizes() {
        let backend = ScriptedBackend::global([
            "planning",
            "1. think 2. answer",
            "finalizing",
            "Buy the one with the good keyboard.",
        ]);
        let ex = example();
        let trace =
            run_pathway(&ex, &ex.profile, &config(), &backend, &TemplateRegistry::builtin(), 0)
                .unwrap();
        assert_eq!(trace.steps.len(), 2);
        assert_eq!(trace.halted_by, HaltReason::Finalize);
        assert_eq!(trace.final_response, "Buy the one with the good keyboard.");
        assert_eq!(trace.steps[0].chosen, Action::Planning);
        assert_eq!(
            trace.steps[0].allowed,
            [Action::Planning].into_iter().collect::<BTreeSet<_>>()
        );
        assert_eq!(backend.calls(), 4, "two calls per step");
        assert!(validate_trace(&trace, &config()).is_valid());
    }

    #[test]
    fn test_budget_exhaustion_forces_finalize() {
        let cfg = PotConfig {
            max_actions: 2,
            ..config()
        };
        let backend = ScriptedBackend::global([
            "planning",
            "the plan",
            "reasoning",
            "some reasoning",
            "forced final answer",
        ]);
        let ex = example();
        let trace =
            run_pathway(&ex, &ex.profile, &cfg, &backend, &TemplateRegistry::builtin(), 0).unwrap();
        assert_eq!(trace.steps.len(), 2);
        assert_eq!(trace.halted_by, HaltReason::BudgetExhausted);
        assert_eq!(trace.final_response, "forced final answer");
        assert_eq!(backend.calls(), 5, "2 steps x 2 calls + 1 forced finalize");
        assert!(validate_trace(&trace, &cfg).is_valid());
        // the forced call's prompt offers finalizing alone
        let requests = backend.requests();
        let forced = &requests[4];
        assert!(forced.messages[0].content.contains("- finalizing"));
        assert!(!forced.messages[0].content.ends_with("some reasoning"));
    }

    #[test]
    fn test_selection_retry_recovers() {
        let backend = ScriptedBackend::global([
            "planning",
            "the plan",
            "pondering", // not an action
            "revising",  // parseable but disallowed here
            "answering",
            "the answer",
            "finalizing",
            "done",
        ]);
        let ex = example();
        let trace =
            run_pathway(&ex, &ex.profile, &config(), &backend, &TemplateRegistry::builtin(), 0)
                .unwrap();
        assert_eq!(trace.steps.len(), 3);
        assert_eq!(trace.steps[1].chosen, Action::Answering);
        assert_eq!(backend.calls(), 8);
        let requests = backend.requests();
        // retries carry a corrective note; the following execution does not
        assert!(requests[3].messages[0].content.contains("not a valid selection"));
        assert!(requests[4].messages[0].content.contains("not a valid selection"));
        assert!(!requests[5].messages[0].content.contains("not a valid selection"));
        // retry attempts get distinct seeds
        assert_ne!(requests[2].sampling.seed, requests[3].sampling.seed);
    }

    #[test]
    fn test_selection_retry_exhausted() {
        let backend = ScriptedBackend::global(["nonsense", "more nonsense", "still nonsense"]);
        let ex = example();
        let err =
            run_pathway(&ex, &ex.profile, &config(), &backend, &TemplateRegistry::builtin(), 0)
                .unwrap_err();
        match err {
            PathwayError::UnparseableAction { attempts, last } => {
                assert_eq!(attempts, 3);
                assert_eq!(last, "still nonsense");
            }
            other => panic!("unexpected error: {other}"),
        }

        // a parseable but disallowed action reports the other variant
        let backend = ScriptedBackend::global(["revising", "revising", "revising"]);
        let err =
            run_pathway(&ex, &ex.profile, &config(), &backend, &TemplateRegistry::builtin(), 0)
                .unwrap_err();
        assert!(matches!(
            err,
            PathwayError::DisallowedAction { attempts: 3, .. }
        ));
    }

    #[test]
    fn test_planning_runs_hot_under_pav() {
        let backend = ScriptedBackend::global([
            "planning",
            "plan one",
            "planning",
            "plan two",
            "finalizing",
            "done",
        ]);
        let ex = example();
        let trace =
            run_pathway(&ex, &ex.profile, &config(), &backend, &TemplateRegistry::builtin(), 0)
                .unwrap();
        assert_eq!(trace.steps[0].sampling.temperature, 0.9);
        assert_eq!(trace.steps[1].sampling.temperature, 0.9);
        assert_eq!(trace.steps[2].sampling.temperature, 0.1);
        // selection calls always run cool
        for request in backend.requests() {
            if request.tag.ends_with("/select") {
                assert_eq!(request.sampling.temperature, 0.1);
            }
        }
    }

    #[test]
    fn test_first_planning_only_flag() {
        let cfg = PotConfig {
            first_planning_only: true,
            ..config()
        };
        let backend = ScriptedBackend::global([
            "planning",
            "plan one",
            "planning",
            "plan two",
            "finalizing",
            "done",
        ]);
        let ex = example();
        let trace =
            run_pathway(&ex, &ex.profile, &cfg, &backend, &TemplateRegistry::builtin(), 0).unwrap();
        assert_eq!(trace.steps[0].sampling.temperature, 0.9);
        assert_eq!(trace.steps[1].sampling.temperature, 0.1);
    }

    #[test]
    fn test_isa_keeps_everything_cool() {
        let cfg = PotConfig {
            strategy: Strategy::InitialStateAlteration,
            tau: 0.5,
            ..config()
        };
        let backend = ScriptedBackend::global(["planning", "plan", "finalizing", "done"]);
        let ex = example();
        let trace =
            run_pathway(&ex, &ex.profile[..1], &cfg, &backend, &TemplateRegistry::builtin(), 0)
                .unwrap();
        assert_eq!(trace.steps[0].sampling.temperature, 0.1);
        assert_eq!(trace.profile_view.len(), 1);
    }

    #[test]
    fn test_empty_execution_output_rejected() {
        let backend = ScriptedBackend::global(["planning", "   "]);
        let ex = example();
        let err =
            run_pathway(&ex, &ex.profile, &config(), &backend, &TemplateRegistry::builtin(), 0)
                .unwrap_err();
        assert!(matches!(err, PathwayError::EmptyOutput));
    }

    #[test]
    fn test_state_fold_matches_render_state() {
        let backend = ScriptedBackend::global([
            "planning",
            "plan text",
            "reasoning",
            "reasoning text",
        ]);
        let ex = example();
        let cfg = config();
        let registry = TemplateRegistry::builtin();
        let mut episode = Episode::new(&ex, &ex.profile, &cfg, &backend, &registry, 0).unwrap();
        let initial = episode.state().to_string();
        episode.step().unwrap();
        let after_one = episode.state().to_string();
        episode.step().unwrap();
        let after_two = episode.state().to_string();

        assert!(after_one.starts_with(&initial), "state only grows");
        assert!(after_two.starts_with(&after_one), "state only grows");
        assert_eq!(
            render_state(&ex, &ex.profile, episode.steps(), &cfg, &registry).unwrap(),
            after_two
        );
        assert_eq!(
            render_state(&ex, &ex.profile, &episode.steps()[..1], &cfg, &registry).unwrap(),
            after_one
        );
    }

    #[test]
    fn test_execution_request_extends_state_with_action_name() {
        let backend = ScriptedBackend::global(["planning", "plan text"]);
        let ex = example();
        let cfg = config();
        let registry = TemplateRegistry::builtin();
        let mut episode = Episode::new(&ex, &ex.profile, &cfg, &backend, &registry, 0).unwrap();
        episode.step().unwrap();
        let requests = backend.requests();
        let selection = &requests[0].messages[0].content;
        let execution = &requests[1].messages[0].content;
        assert_eq!(*execution, format!("{selection}\n\nplanning"));
        assert!(selection.starts_with(initial_state(&ex, &ex.profile, &registry).unwrap().as_str()));
    }

    #[test]
    fn test_seed_derivation() {
        assert_eq!(derive_seed(1, &["a", "b"]), derive_seed(1, &["a", "b"]));
        assert_ne!(derive_seed(1, &["a", "b"]), derive_seed(2, &["a", "b"]));
        assert_ne!(derive_seed(1, &["a", "b"]), derive_seed(1, &["ab"]));
        assert_ne!(derive_seed(1, &["a", "b"]), derive_seed(1, &["b", "a"]));
    }

    #[test]
    fn test_episode_seeds_differ_by_pathway() {
        let ex = example();
        let cfg = config();
        let registry = TemplateRegistry::builtin();
        let backend = ScriptedBackend::global::<[&str; 0], &str>([]);
        let e0 = Episode::new(&ex, &ex.profile, &cfg, &backend, &registry, 0).unwrap();
        let e1 = Episode::new(&ex, &ex.profile, &cfg, &backend, &registry, 1).unwrap();
        assert_ne!(e0.seed(), e1.seed());
        assert_eq!(
            e0.seed(),
            derive_seed(cfg.seed, &["q1", "0"]),
            "seed is hash(config.seed, question_id, pathway_index)"
        );
    }

    #[test]
    fn test_pathway_stats() {
        let mk = |actions: &[Action], outputs: &str| {
            let mut steps = Vec::new();
            for (i, &a) in actions.iter().enumerate() {
                steps.push(PathwayStep {
                    index: i,
                    allowed: allowed_actions(&steps, i),
                    chosen: a,
                    agent_output: outputs.to_string(),
                    selection_raw: a.display_name().into(),
                    sampling: SamplingParams::default(),
                });
            }
            PathwayTrace {
                pathway_index: 0,
                steps,
                final_response: "f".into(),
                profile_view: vec![],
                seed: 0,
                halted_by: HaltReason::Finalize,
            }
        };
        let traces = vec![
            mk(&[Action::Planning, Action::Finalizing], "x"),
            mk(&[Action::Planning, Action::Answering, Action::Finalizing], "y"),
            mk(&[Action::Planning, Action::Finalizing], "z"),
        ];
        let stats = pathway_stats(&traces);
        assert_eq!(stats.total_traces, 3);
        assert_eq!(stats.unique_sequences, 2, "identical sequences collapse");
        assert!((stats.mean_actions - 7.0 / 3.0).abs() < 1e-12);
        assert_eq!(stats.action_histogram[&Action::Planning], 3);
        assert_eq!(stats.action_histogram[&Action::Answering], 1);
        assert_eq!(stats.action_histogram[&Action::Finalizing], 3);

        let empty = pathway_stats(&[]);
        assert_eq!(empty.total_traces, 0);
        assert_eq!(empty.mean_actions, 0.0);
    }

    #[test]
    fn test_config_validation() {
        assert!(PotConfig::default().validate().is_ok());
        assert!(PotConfig { max_actions: 0, ..PotConfig::default() }.validate().is_err());
        assert!(PotConfig { pathways: 0, ..PotConfig::default() }.validate().is_err());
        assert!(PotConfig {
            strategy: Strategy::InitialStateAlteration,
            tau: 0.0,
            ..PotConfig::default()
        }
        .validate()
        .is_err());
        assert!(PotConfig {
            strategy: Strategy::InitialStateAlteration,
            tau: 1.0,
            ..PotConfig::default()
        }
        .validate()
        .is_ok());
        assert!(PotConfig { tau: 2.5, ..PotConfig::default() }.validate().is_err());
    }
}
